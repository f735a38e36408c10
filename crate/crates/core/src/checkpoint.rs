//! Binary checkpoint container.
//!
//! ```text
//! magic           8 bytes  "AOMCKPT\0"
//! format_version  u32 LE
//! metadata_len    u64 LE
//! metadata        JSON, metadata_len bytes
//! tensors         f64 LE, concatenated in the order listed in metadata.params
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Rng;
use crate::data::Vocab;
use crate::error::{CheckpointError, Result};
use crate::model::{AomModel, ModelConfig};

pub const MAGIC: &[u8; 8] = b"AOMCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub model: ModelConfig,
    pub vocab: Vec<String>,
    pub params: Vec<TensorEntry>,
    /// Free-form run settings, such as the `key=value` configuration.
    #[serde(default)]
    pub run: Option<String>,
    #[serde(default)]
    pub rng: Option<Rng>,
}

/// Loaded checkpoint.
pub struct Checkpoint {
    pub model: AomModel,
    pub run: Option<String>,
    pub rng: Option<Rng>,
}

pub fn to_bytes(model: &AomModel, run: Option<&str>, rng: Option<&Rng>) -> Vec<u8> {
    let meta = Metadata {
        model: model.config.clone(),
        vocab: model.vocab.words().to_vec(),
        params: model
            .store
            .iter()
            .map(|(_, p)| TensorEntry { name: p.name.clone(), shape: p.value.shape().to_vec() })
            .collect(),
        run: run.map(str::to_string),
        rng: rng.cloned(),
    };
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut out = Vec::with_capacity(20 + json.len() + 8 * model.store.scalar_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in model.store.iter() {
        for x in p.value.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = bytes;
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let mut word = [0u8; 4];
    read_exact(&mut r, &mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(version).into());
    }
    let mut len = [0u8; 8];
    read_exact(&mut r, &mut len)?;
    let len = usize::try_from(u64::from_le_bytes(len))
        .map_err(|_| CheckpointError::Corrupt("metadata length overflows".into()))?;
    if len > r.len() {
        return Err(CheckpointError::Corrupt("metadata block truncated".into()).into());
    }
    let meta: Metadata =
        serde_json::from_slice(&r[..len]).map_err(|e| CheckpointError::Corrupt(format!("metadata: {e}")))?;
    r = &r[len..];

    let mut model = AomModel::new(meta.model.clone(), Vocab::from_words(meta.vocab.iter().skip(1).cloned()))?;
    if model.vocab.words() != meta.vocab.as_slice() {
        return Err(CheckpointError::Corrupt("vocabulary does not start with the unknown word".into()).into());
    }
    let ids: Vec<_> = model.store.ids().collect();
    if ids.len() != meta.params.len() {
        return Err(CheckpointError::Mismatch(format!(
            "checkpoint lists {} tensors, configuration builds {}",
            meta.params.len(),
            ids.len()
        ))
        .into());
    }
    for (id, entry) in ids.into_iter().zip(&meta.params) {
        let (name, shape) = (model.store.name(id).to_string(), model.store.value(id).shape().to_vec());
        if name != entry.name || shape != entry.shape {
            return Err(CheckpointError::Mismatch(format!(
                "expected {name} {shape:?}, found {} {:?}",
                entry.name, entry.shape
            ))
            .into());
        }
        let data = model.store.value_mut(id).data_mut();
        let mut buf = [0u8; 8];
        for x in data.iter_mut() {
            read_exact(&mut r, &mut buf)?;
            *x = f64::from_le_bytes(buf);
        }
    }
    if !r.is_empty() {
        return Err(CheckpointError::Corrupt(format!("{} trailing bytes", r.len())).into());
    }
    Ok(Checkpoint { model, run: meta.run, rng: meta.rng })
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| CheckpointError::Corrupt("unexpected end of file".into()))?;
    Ok(())
}

pub fn save(path: impl AsRef<Path>, model: &AomModel, run: Option<&str>, rng: Option<&Rng>) -> Result<()> {
    let path = path.as_ref();
    let io = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(&to_bytes(model, run, rng)).map_err(io)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn model() -> AomModel {
        let vocab = Vocab::from_words(["the", "food", "good"].map(String::from));
        AomModel::new(ModelConfig { d_model: 8, n_heads: 2, d_ff: 16, ..ModelConfig::default() }, vocab).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = model();
        let id = m.store.ids().next().unwrap();
        m.store.value_mut(id).data_mut()[0] = 0.1 + 0.2;
        let bytes = to_bytes(&m, Some("seed=1\n"), None);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back.run.as_deref(), Some("seed=1\n"));
        for ((_, a), (_, b)) in m.store.iter().zip(back.model.store.iter()) {
            assert_eq!(a.name, b.name);
            assert!(a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back.model.vocab, m.vocab);
    }

    #[test]
    fn header_errors() {
        let bytes = to_bytes(&model(), None, None);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Checkpoint(CheckpointError::BadMagic))));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(from_bytes(&bad), Err(Error::Checkpoint(CheckpointError::Version(9)))));
        assert!(matches!(
            from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Checkpoint(CheckpointError::Corrupt(_)))
        ));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(from_bytes(&long), Err(Error::Checkpoint(CheckpointError::Corrupt(_)))));
    }

    #[test]
    fn rng_state_survives() {
        use rand::RngCore;
        let mut rng = crate::autodiff::seeded_rng(5);
        rng.next_u64();
        let back = from_bytes(&to_bytes(&model(), None, Some(&rng))).unwrap();
        let mut restored = back.rng.unwrap();
        assert_eq!(restored.next_u64(), rng.next_u64());
    }
}
