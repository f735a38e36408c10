//! Run configuration: a flat `key=value` file whose keys are the fields of
//! [`RunConfig`]. Blank lines and lines starting with `#` are ignored.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{DataError, Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub max_len: usize,
    pub dv: usize,
    pub gcn_layers: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub constrained_decoding: bool,
    pub max_decode_len: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub trc_learning_rate: f64,
    pub trc_batch_size: usize,
    pub trc_epochs: usize,
    pub no_a3m: bool,
    pub no_aggcn: bool,
    pub no_sentic: bool,
    pub no_trc_init: bool,
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub trc_path: Option<PathBuf>,
    pub lexicon_path: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub trc_checkpoint: Option<PathBuf>,
    pub metrics_log: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub split: String,
    pub example_id: Option<String>,
    pub synth_count: usize,
    pub synth_test_count: usize,
    pub synth_trc_count: usize,
    pub synth_n_min: usize,
    pub synth_n_max: usize,
    pub synth_m: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        RunConfig {
            seed: m.seed,
            d_model: m.d_model,
            n_heads: m.n_heads,
            d_ff: m.d_ff,
            encoder_layers: m.encoder_layers,
            decoder_layers: m.decoder_layers,
            max_len: m.max_len,
            dv: m.dv,
            gcn_layers: m.gcn_layers,
            lambda1: m.lambda1,
            lambda2: m.lambda2,
            constrained_decoding: m.constrained_decoding,
            max_decode_len: m.max_decode_len,
            learning_rate: 7e-5,
            batch_size: 16,
            epochs: 35,
            trc_learning_rate: 7e-5,
            trc_batch_size: 64,
            trc_epochs: 40,
            no_a3m: false,
            no_aggcn: false,
            no_sentic: false,
            no_trc_init: false,
            train_path: None,
            dev_path: None,
            test_path: None,
            trc_path: None,
            lexicon_path: None,
            checkpoint: None,
            trc_checkpoint: None,
            metrics_log: None,
            output: None,
            input: None,
            split: "test".into(),
            example_id: None,
            synth_count: 256,
            synth_test_count: 64,
            synth_trc_count: 128,
            synth_n_min: 4,
            synth_n_max: 10,
            synth_m: 4,
        }
    }
}

impl RunConfig {
    /// Parses `key=value` text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
            cfg.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", i + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    /// Overrides one field. The value is read according to the field's type;
    /// an empty value clears an optional path.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut map = match serde_json::to_value(&*self).expect("config serializes") {
            Value::Object(map) => map,
            _ => unreachable!("struct serializes to an object"),
        };
        let slot = map.get_mut(key).ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
        let bad = |kind: &str| Error::Config(format!("{key}: expected {kind}, got {value:?}"));
        *slot = match slot {
            Value::Bool(_) => Value::Bool(value.parse().map_err(|_| bad("true or false"))?),
            Value::Number(n) if n.is_u64() => Value::from(value.parse::<u64>().map_err(|_| bad("a non-negative integer"))?),
            Value::Number(_) => {
                let x: f64 = value.parse().map_err(|_| bad("a number"))?;
                serde_json::Number::from_f64(x).map(Value::Number).ok_or_else(|| bad("a finite number"))?
            }
            Value::Null | Value::String(_) if value.is_empty() && key != "split" => Value::Null,
            _ => Value::String(value.to_string()),
        };
        *self = serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }

    /// Every key with its current value, sorted by key.
    pub fn entries(&self) -> Vec<(String, String)> {
        let Value::Object(map) = serde_json::to_value(self).expect("config serializes") else {
            unreachable!("struct serializes to an object")
        };
        map.into_iter()
            .map(|(k, v)| {
                let v = match v {
                    Value::Null => String::new(),
                    Value::String(s) => s,
                    other => other.to_string(),
                };
                (k, v)
            })
            .collect()
    }

    /// All recognised keys.
    pub fn keys() -> Vec<String> {
        RunConfig::default().entries().into_iter().map(|(k, _)| k).collect()
    }

    /// Renders the configuration as `key=value` lines that [`RunConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_len", self.max_len),
            ("dv", self.dv),
            ("max_decode_len", self.max_decode_len),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("trc_batch_size", self.trc_batch_size),
            ("trc_epochs", self.trc_epochs),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads)));
        }
        for (k, v) in [("learning_rate", self.learning_rate), ("trc_learning_rate", self.trc_learning_rate)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be a positive number")));
            }
        }
        for (k, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be non-negative")));
            }
        }
        if self.synth_n_min == 0 || self.synth_n_min > self.synth_n_max {
            return Err(Error::Config("need 0 < synth_n_min <= synth_n_max".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            seed: self.seed,
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            max_len: self.max_len,
            dv: self.dv,
            gcn_layers: self.gcn_layers,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            constrained_decoding: self.constrained_decoding,
            max_decode_len: self.max_decode_len,
            no_a3m: self.no_a3m,
            no_aggcn: self.no_aggcn,
            no_sentic: self.no_sentic,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions { learning_rate: self.learning_rate, batch_size: self.batch_size, epochs: self.epochs, seed: self.seed }
    }

    pub fn trc_options(&self) -> TrainOptions {
        TrainOptions {
            learning_rate: self.trc_learning_rate,
            batch_size: self.trc_batch_size,
            epochs: self.trc_epochs,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_published_settings() {
        let c = RunConfig::default();
        assert_eq!((c.learning_rate, c.batch_size, c.epochs, c.trc_epochs), (7e-5, 16, 35, 40));
        assert_eq!((c.lambda1, c.lambda2), (1.0, 0.5));
        c.validate().unwrap();
    }

    #[test]
    fn parse_and_override() {
        let mut c = RunConfig::parse("# comment\nseed = 9\nlambda2=0.25\nno_sentic=true\ntrain_path=/tmp/x.jsonl\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.lambda2, 0.25);
        assert!(c.no_sentic);
        assert_eq!(c.train_path.as_deref(), Some(Path::new("/tmp/x.jsonl")));
        c.set("learning_rate", "0.001").unwrap();
        c.set("train_path", "").unwrap();
        assert_eq!(c.learning_rate, 1e-3);
        assert_eq!(c.train_path, None);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::parse("nonsense").is_err());
        assert!(RunConfig::parse("no_such_key=1").is_err());
        assert!(RunConfig::parse("epochs=1.5").is_err());
        assert!(RunConfig::parse("no_a3m=yes").is_err());
        let mut c = RunConfig::default();
        c.n_heads = 5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("checkpoint", "out/model.ckpt").unwrap();
        c.set("learning_rate", "0.003").unwrap();
        let back = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert!(RunConfig::keys().iter().any(|k| k == "no_trc_init"));
    }
}
