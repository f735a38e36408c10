//! `aom` command-line interface.
//!
//! Every configuration key is also a flag of the same name, applied on top
//! of `--config`. Exit codes: 0 success, 1 usage or configuration error,
//! 2 data or checkpoint error, 3 numeric failure.

mod commands;

use std::process::ExitCode;

use aom::config::RunConfig;
use aom::Error;
use clap::{Arg, ArgAction, ArgMatches, Command};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

const SUBCOMMANDS: [(&str, &str); 7] = [
    ("synth", "Write synthetic train/dev/test/relation splits, a lexicon and a matching config to `output`"),
    ("pretrain-trc", "Pretrain the encoder and attention module on image-text relation labels (`trc_path`)"),
    ("train", "Train the full model on `train_path`, keeping the best dev checkpoint"),
    ("eval", "Report MABSA, MATE and MASC metrics for `split` as JSON"),
    ("predict", "Write predicted triples for `input` (or `test_path`) as JSON lines"),
    ("gradcheck", "Finite-difference gradient check of every module and the whole pipeline"),
    ("dump-attention", "Export attention weights, gates and association matrices of one example as JSON"),
];

fn cli() -> Command {
    let mut app = Command::new("aom")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Aspect-oriented multimodal sentiment analysis")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .short('c')
                .global(true)
                .value_name("FILE")
                .help("Flat key=value configuration file"),
        );
    for (key, default) in RunConfig::default().entries() {
        let is_bool = default == "true" || default == "false";
        let mut arg = Arg::new(key.clone())
            .long(key.clone())
            .global(true)
            .value_name("VALUE")
            .action(ArgAction::Set)
            .help_heading("Configuration keys")
            .help(if default.is_empty() { "unset by default".to_string() } else { format!("default {default}") });
        if key.contains('_') {
            arg = arg.alias(key.replace('_', "-"));
        }
        if is_bool {
            arg = arg.num_args(0..=1).default_missing_value("true");
        }
        app = app.arg(arg);
    }
    for (name, about) in SUBCOMMANDS {
        app = app.subcommand(Command::new(name).about(about));
    }
    app
}

fn resolve(matches: &ArgMatches) -> aom::Result<RunConfig> {
    let mut cfg = match matches.get_one::<String>("config") {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for key in RunConfig::keys() {
        if let Some(value) = matches.get_one::<String>(&key) {
            cfg.set(&key, value)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Data(_) | Error::Checkpoint(_) | Error::Tensor(_) => EXIT_DATA,
        Error::Numeric(_) => EXIT_NUMERIC,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let result = resolve(sub).and_then(|cfg| commands::run(name, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        cli().debug_assert();
    }

    #[test]
    fn flags_override_the_config_file() {
        let m = cli().try_get_matches_from(["aom", "train", "--seed", "5", "--no_sentic", "--learning-rate", "0.01"]).unwrap();
        let cfg = resolve(m.subcommand().unwrap().1).unwrap();
        assert_eq!((cfg.seed, cfg.no_sentic, cfg.learning_rate), (5, true, 0.01));
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
        assert_eq!(exit_code(&Error::Numeric("x".into())), 3);
        assert_eq!(exit_code(&aom::error::CheckpointError::BadMagic.into()), 2);
    }
}
