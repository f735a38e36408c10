use std::fs;
use std::path::{Path, PathBuf};

use aom::checkpoint;
use aom::config::RunConfig;
use aom::data::{load_dataset, load_lexicon, synth_dataset, synth_lexicon, write_dataset, Example, Lexicon, SynthConfig, Vocab};
use aom::dump::attention_dump;
use aom::error::DataError;
use aom::eval::evaluate;
use aom::model::AomModel;
use aom::train::{log_to_jsonl, pretrain_trc, train};
use aom::verify::run_gradcheck;
use aom::{Error, Result};
use log::info;

pub fn run(command: &str, cfg: &RunConfig) -> Result<()> {
    match command {
        "synth" => synth(cfg),
        "pretrain-trc" => pretrain(cfg),
        "train" => train_cmd(cfg),
        "eval" => eval(cfg),
        "predict" => predict(cfg),
        "gradcheck" => gradcheck(cfg),
        "dump-attention" => dump(cfg),
        other => Err(Error::Config(format!("unknown command {other:?}"))),
    }
}

fn require<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value.as_deref().ok_or_else(|| Error::Config(format!("`{key}` must be set")))
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }.into()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_error(dir))?;
    }
    fs::write(path, text).map_err(io_error(path))
}

/// Writes to `output` when set, otherwise to stdout.
fn emit(cfg: &RunConfig, text: &str) -> Result<()> {
    match &cfg.output {
        Some(path) => write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Loads a dataset whose visual features must be `dv` wide.
fn load(path: &Path, dv: usize) -> Result<Vec<Example>> {
    let data = load_dataset(path)?;
    if let Some((i, ex)) = data.iter().enumerate().find(|(_, ex)| ex.dv() != dv) {
        return Err(DataError::Invalid {
            line: i + 1,
            id: ex.id.clone(),
            field: "visual_features",
            message: format!("{} features per block, model expects dv={dv}", ex.dv()),
        }
        .into());
    }
    info!("{}: {} examples", path.display(), data.len());
    Ok(data)
}

fn lexicon(cfg: &RunConfig) -> Result<Lexicon> {
    Ok(match &cfg.lexicon_path {
        Some(p) => load_lexicon(p)?,
        None => Lexicon::new(),
    })
}

fn split_path(cfg: &RunConfig) -> Result<&Path> {
    match cfg.split.as_str() {
        "train" => require(&cfg.train_path, "train_path"),
        "dev" => require(&cfg.dev_path, "dev_path"),
        "test" => require(&cfg.test_path, "test_path"),
        other => Err(Error::Config(format!("split must be train, dev or test, got {other:?}"))),
    }
}

fn synth(cfg: &RunConfig) -> Result<()> {
    let out = require(&cfg.output, "output")?;
    fs::create_dir_all(out).map_err(io_error(out))?;
    let base = SynthConfig {
        seed: cfg.seed,
        count: cfg.synth_count,
        n_min: cfg.synth_n_min,
        n_max: cfg.synth_n_max,
        m: cfg.synth_m,
        dv: cfg.dv,
        heldout_words: false,
    };
    // Dev and test sentences use sentiment words never seen in training.
    let splits = [
        ("train", base.clone()),
        ("dev", SynthConfig { seed: cfg.seed + 1, count: cfg.synth_test_count, heldout_words: true, ..base.clone() }),
        ("test", SynthConfig { seed: cfg.seed + 2, count: cfg.synth_test_count, heldout_words: true, ..base.clone() }),
        ("trc", SynthConfig { seed: cfg.seed + 3, count: cfg.synth_trc_count, ..base }),
    ];
    let mut run = cfg.clone();
    run.output = None;
    for (name, sc) in splits {
        let path = out.join(format!("{name}.jsonl"));
        write_dataset(&path, &synth_dataset(&sc))?;
        info!("wrote {} ({} examples)", path.display(), sc.count);
        let slot = match name {
            "train" => &mut run.train_path,
            "dev" => &mut run.dev_path,
            "test" => &mut run.test_path,
            _ => &mut run.trc_path,
        };
        *slot = Some(path);
    }
    let lex_path = out.join("lexicon.tsv");
    write_text(&lex_path, &synth_lexicon().to_tsv())?;
    run.lexicon_path = Some(lex_path);
    run.trc_checkpoint = Some(out.join("trc.ckpt"));
    run.checkpoint = Some(out.join("model.ckpt"));
    run.metrics_log = Some(out.join("metrics.jsonl"));
    let conf = out.join("aom.conf");
    write_text(&conf, &run.to_text())?;
    info!("wrote {}", conf.display());
    Ok(())
}

fn pretrain(cfg: &RunConfig) -> Result<()> {
    let out = require(&cfg.trc_checkpoint, "trc_checkpoint")?;
    let trc = load(require(&cfg.trc_path, "trc_path")?, cfg.dv)?;
    let mut sets = vec![trc.clone()];
    if let Some(p) = &cfg.train_path {
        sets.push(load(p, cfg.dv)?);
    }
    let mut model = AomModel::new(cfg.model(), Vocab::build(sets.iter().map(Vec::as_slice)))?;
    let outcome = pretrain_trc(&mut model, &trc, &cfg.trc_options())?;
    checkpoint::save(out, &model, Some(&cfg.to_text()), Some(&outcome.rng))?;
    info!("wrote {}", out.display());
    if let Some(p) = &cfg.metrics_log {
        write_text(p, &log_to_jsonl(&outcome.log))?;
    }
    Ok(())
}

fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let out = require(&cfg.checkpoint, "checkpoint")?;
    let train_set = load(require(&cfg.train_path, "train_path")?, cfg.dv)?;
    let dev = cfg.dev_path.as_deref().map(|p| load(p, cfg.dv)).transpose()?;
    let lex = lexicon(cfg)?;
    let pretrained = match (&cfg.trc_checkpoint, cfg.no_trc_init) {
        (Some(p), false) if p.exists() => Some(checkpoint::load(p)?.model),
        (Some(p), false) => {
            return Err(Error::Config(format!("trc_checkpoint {} does not exist (set no_trc_init=true to skip)", p.display())))
        }
        _ => None,
    };
    let extra: Vec<String> = pretrained.iter().flat_map(|m| m.vocab.words().iter().skip(1).cloned()).collect();
    let words = train_set.iter().flat_map(|ex| ex.tokens.iter().cloned()).chain(extra);
    let mut model = AomModel::new(cfg.model(), Vocab::from_words(words))?;
    if let Some(pre) = &pretrained {
        let copied = model.init_from(pre);
        info!("initialised {} tensors from the relation checkpoint", copied.len());
    }
    let outcome = train(&mut model, &train_set, dev.as_deref(), &lex, &cfg.train_options())?;
    model.store = outcome.best;
    checkpoint::save(out, &model, Some(&cfg.to_text()), Some(&outcome.rng))?;
    info!("wrote {} (epoch {})", out.display(), outcome.best_epoch);
    if let Some(p) = &cfg.metrics_log {
        write_text(p, &log_to_jsonl(&outcome.log))?;
    }
    Ok(())
}

fn load_model(cfg: &RunConfig) -> Result<AomModel> {
    Ok(checkpoint::load(require(&cfg.checkpoint, "checkpoint")?)?.model)
}

fn eval(cfg: &RunConfig) -> Result<()> {
    let model = load_model(cfg)?;
    let data = load(split_path(cfg)?, model.config.dv)?;
    let report = evaluate(&model, &data, &lexicon(cfg)?)?;
    emit(cfg, &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))
}

fn predict(cfg: &RunConfig) -> Result<()> {
    let model = load_model(cfg)?;
    let input = match &cfg.input {
        Some(p) => p.as_path(),
        None => require(&cfg.test_path, "input")?,
    };
    let data = load(input, model.config.dv)?;
    let lex = lexicon(cfg)?;
    let mut text = String::new();
    for ex in &data {
        let triples = model.predict(ex, &lex)?;
        text += &serde_json::json!({ "id": ex.id, "triples": triples }).to_string();
        text.push('\n');
    }
    emit(cfg, &text)
}

fn gradcheck(cfg: &RunConfig) -> Result<()> {
    let rows = run_gradcheck(cfg.seed)?;
    println!("{:<10} {:>8} {:>12}  result", "module", "coords", "max rel err");
    for r in &rows {
        println!(
            "{:<10} {:>8} {:>12.3e}  {}",
            r.module,
            r.coordinates,
            r.max_rel_err,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    let failed: Vec<_> = rows.iter().filter(|r| !r.passed).map(|r| r.module).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn dump(cfg: &RunConfig) -> Result<()> {
    let model = load_model(cfg)?;
    let path = match &cfg.input {
        Some(p) => p.as_path(),
        None => split_path(cfg)?,
    };
    let data = load(path, model.config.dv)?;
    let example = match &cfg.example_id {
        Some(id) => data
            .iter()
            .find(|ex| &ex.id == id)
            .ok_or_else(|| Error::Config(format!("no example with id {id:?} in {}", path.display())))?,
        None => data.first().ok_or_else(|| Error::Config(format!("{} is empty", path.display())))?,
    };
    let d = attention_dump(&model, example, &lexicon(cfg)?)?;
    emit(cfg, &(serde_json::to_string_pretty(&d).expect("dump serializes") + "\n"))
}
