//! Training loops for the relation pretraining task and the main
//! generation objective.

use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{seeded_rng, Adam, ParamStore, Rng, Tape};
use crate::data::{Example, Lexicon};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Evaluation};
use crate::model::AomModel;

const SHUFFLE_TAG: u64 = 0x5348_5546;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Teacher-forced sequence loss.
    Generation,
    /// Image-text relation cross-entropy.
    Relation,
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dev: Option<Evaluation>,
}

/// Mini-batch Adam over a seeded shuffle.
pub struct Trainer {
    pub adam: Adam,
    pub rng: Rng,
    pub batch_size: usize,
    pub objective: Objective,
}

impl Trainer {
    pub fn new(opts: &TrainOptions, objective: Objective) -> Self {
        Trainer {
            adam: Adam::new(opts.learning_rate),
            rng: seeded_rng(opts.seed ^ SHUFFLE_TAG),
            batch_size: opts.batch_size.max(1),
            objective,
        }
    }

    /// Mean loss of `batch` with gradients accumulated into the store.
    pub fn batch_gradient(&self, model: &mut AomModel, batch: &[Example], lexicon: &Lexicon) -> Result<f64> {
        let mut tape = Tape::new();
        let loss = match self.objective {
            Objective::Generation => model.batch_loss(&mut tape, batch, lexicon)?,
            Objective::Relation => {
                let mut total = None;
                for ex in batch {
                    let l = model.trc_loss(&mut tape, ex)?;
                    total = Some(match total {
                        Some(t) => tape.add(t, l)?,
                        None => l,
                    });
                }
                let total = total.ok_or_else(|| Error::Config("empty batch".into()))?;
                tape.scale(total, 1.0 / batch.len() as f64)
            }
        };
        let value = tape.item(loss);
        if !value.is_finite() {
            return Err(Error::Numeric(format!("loss became {value}")));
        }
        tape.backward(loss)?;
        tape.accumulate_param_grads(&mut model.store);
        if !model.store.grad_is_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        Ok(value)
    }

    /// One pass over `data`; returns the mean per-example loss.
    pub fn epoch(&mut self, model: &mut AomModel, data: &[Example], lexicon: &Lexicon) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for chunk in order.chunks(self.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| data[i].clone()).collect();
            let loss = self.batch_gradient(model, &batch, lexicon)?;
            self.adam.step(&mut model.store);
            total += loss * batch.len() as f64;
        }
        Ok(total / data.len() as f64)
    }
}

/// Mean loss over `data` without updating anything.
pub fn mean_loss(model: &AomModel, data: &[Example], lexicon: &Lexicon, objective: Objective) -> Result<f64> {
    let mut total = 0.0;
    for ex in data {
        let mut tape = Tape::new();
        let l = match objective {
            Objective::Generation => model.loss(&mut tape, ex, lexicon)?,
            Objective::Relation => model.trc_loss(&mut tape, ex)?,
        };
        total += tape.item(l);
    }
    Ok(total / data.len().max(1) as f64)
}

pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    /// Epoch and parameters with the best dev MABSA F1, or the last epoch
    /// when no dev set is given.
    pub best_epoch: usize,
    pub best: ParamStore,
    /// Shuffle generator state after the last epoch.
    pub rng: Rng,
}

/// Main-task training. With a dev set, every epoch is evaluated and the
/// best MABSA F1 parameters are kept.
pub fn train(
    model: &mut AomModel,
    train_set: &[Example],
    dev_set: Option<&[Example]>,
    lexicon: &Lexicon,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(opts, Objective::Generation);
    let mut log = Vec::with_capacity(opts.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    for epoch in 1..=opts.epochs {
        let loss = trainer.epoch(model, train_set, lexicon)?;
        let dev = dev_set.map(|d| evaluate(model, d, lexicon)).transpose()?;
        match &dev {
            Some(ev) => {
                info!("epoch {epoch}: loss {loss:.6}, dev MABSA F1 {:.4}", ev.mabsa.f1);
                if best.as_ref().is_none_or(|(f1, _, _)| ev.mabsa.f1 > *f1) {
                    best = Some((ev.mabsa.f1, epoch, model.store.clone()));
                }
            }
            None => info!("epoch {epoch}: loss {loss:.6}"),
        }
        log.push(EpochRecord { epoch, loss, dev });
    }
    let (best_epoch, best) = match best {
        Some((_, e, s)) => (e, s),
        None => (opts.epochs, model.store.clone()),
    };
    Ok(TrainOutcome { log, best_epoch, best, rng: trainer.rng })
}

/// Relation pretraining on examples carrying `image_related`. The outcome
/// holds the final parameters.
pub fn pretrain_trc(model: &mut AomModel, data: &[Example], opts: &TrainOptions) -> Result<TrainOutcome> {
    let lexicon = Lexicon::new();
    let mut trainer = Trainer::new(opts, Objective::Relation);
    let mut log = Vec::with_capacity(opts.epochs);
    for epoch in 1..=opts.epochs {
        let loss = trainer.epoch(model, data, &lexicon)?;
        info!("relation epoch {epoch}: cross-entropy {loss:.6}");
        log.push(EpochRecord { epoch, loss, dev: None });
    }
    Ok(TrainOutcome { log, best_epoch: opts.epochs, best: model.store.clone(), rng: trainer.rng })
}

/// JSON-lines rendering of a metrics log.
pub fn log_to_jsonl(log: &[EpochRecord]) -> String {
    log.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
}
