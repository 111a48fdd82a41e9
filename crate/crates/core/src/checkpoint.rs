//! Training checkpoints: parameters, optimizer moments, schedule and PRNG
//! position, enough to continue training bit-identically.
//!
//! File layout (all little-endian):
//!
//! ```text
//! "SLPCKPT1"
//! u32 version, u8 stage, u64 completed epochs, f64 learning rate
//! u32 length + UTF-8 TOML config blob ([model] and [train] tables)
//! PRNG: 32-byte seed, u64 stream, u128 word position
//! u64 Adam step count
//! u32 tensor count, then per tensor:
//!     u32 name length + UTF-8 name, u32 rank, rank × u32 dims, f64 values
//! ```
//!
//! Tensor names: `param/<name>`, `adam.m/<name>`, `adam.v/<name>`,
//! `sched.history`, `sched.last_decay`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ModelConfig, TrainConfig};
use crate::data::write_atomic;
use crate::model::Model;
use crate::scalar::Scalar;
use crate::train::{Adam, Plateau, TrainState};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SLPCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file: magic {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported checkpoint version {found} (expected {CHECKPOINT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("checkpoint truncated at byte offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint does not match the model: {0}")]
    Incompatible(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Serialize, Deserialize)]
struct ConfigBlob {
    model: ModelConfig,
    train: TrainConfig,
}

struct NamedTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, shape: &[usize], data: impl Iterator<Item = f64>) {
    put_u32(buf, name.len());
    buf.extend_from_slice(name.as_bytes());
    put_u32(buf, shape.len());
    shape.iter().for_each(|&d| put_u32(buf, d));
    data.for_each(|x| buf.extend_from_slice(&x.to_le_bytes()));
}

pub fn encode_checkpoint<S: Scalar>(state: &TrainState<S>) -> Result<Vec<u8>, CheckpointError> {
    let blob = toml::to_string(&ConfigBlob {
        model: state.model.config.clone(),
        train: state.config.clone(),
    })
    .map_err(|e| CheckpointError::Malformed(format!("config does not serialize: {e}")))?;

    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.push(state.stage);
    buf.extend_from_slice(&(state.epoch as u64).to_le_bytes());
    buf.extend_from_slice(&state.lr.to_le_bytes());
    put_u32(&mut buf, blob.len());
    buf.extend_from_slice(blob.as_bytes());
    buf.extend_from_slice(&state.rng.get_seed());
    buf.extend_from_slice(&state.rng.get_stream().to_le_bytes());
    buf.extend_from_slice(&state.rng.get_word_pos().to_le_bytes());
    buf.extend_from_slice(&state.adam.t.to_le_bytes());

    let entries = state.model.store.entries();
    put_u32(&mut buf, 3 * entries.len() + 2);
    let wide = |v: &[S]| v.iter().map(|x| x.to_f64_lossless()).collect::<Vec<_>>().into_iter();
    for e in entries {
        put_tensor(&mut buf, &format!("param/{}", e.name), e.tensor.shape(), wide(e.tensor.data()));
    }
    for (i, e) in entries.iter().enumerate() {
        put_tensor(&mut buf, &format!("adam.m/{}", e.name), e.tensor.shape(), wide(&state.adam.m[i]));
        put_tensor(&mut buf, &format!("adam.v/{}", e.name), e.tensor.shape(), wide(&state.adam.v[i]));
    }
    let history = &state.plateau.history;
    put_tensor(&mut buf, "sched.history", &[history.len()], history.iter().copied());
    put_tensor(&mut buf, "sched.last_decay", &[1], std::iter::once(state.plateau.last_decay as f64));
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        match self.pos.checked_add(n).filter(|&end| end <= self.bytes.len()) {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CheckpointError::Truncated {
                offset: self.bytes.len(),
                needed: self.pos.saturating_add(n) - self.bytes.len(),
            }),
        }
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.array()?) as usize)
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Malformed("non-UTF-8 string".into()))
    }
}

pub fn decode_checkpoint<S: Scalar>(bytes: &[u8]) -> Result<TrainState<S>, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(8).map_err(|_| CheckpointError::BadMagic {
        found: bytes[..bytes.len().min(8)].to_vec(),
    })?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic { found: magic.to_vec() });
    }
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion { found: version });
    }
    let stage = r.take(1)?[0];
    if stage > 3 {
        return Err(CheckpointError::Malformed(format!("stage {stage}")));
    }
    let epoch = r.u64()? as usize;
    let lr = r.f64()?;
    let blob: ConfigBlob =
        toml::from_str(&r.string()?).map_err(|e| CheckpointError::Malformed(format!("config blob: {e}")))?;
    let seed: [u8; 32] = r.array()?;
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.array()?);
    let adam_t = r.u64()?;

    let count = r.u32()?;
    let mut tensors: HashMap<String, NamedTensor> = HashMap::new();
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()?;
        if rank > 2 {
            return Err(CheckpointError::Malformed(format!("tensor {name} has rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        if tensors.insert(name.clone(), NamedTensor { shape, data }).is_some() {
            return Err(CheckpointError::Malformed(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let mut model: Model<S> =
        Model::new(&blob.model, 0).map_err(|e| CheckpointError::Incompatible(e.to_string()))?;
    let mut adam = Adam::new(&model.store);
    adam.t = adam_t;
    let mut take = |name: String, shape: &[usize]| -> Result<Vec<S>, CheckpointError> {
        let t = tensors
            .remove(&name)
            .ok_or_else(|| CheckpointError::Incompatible(format!("missing tensor {name}")))?;
        if t.shape != shape {
            return Err(CheckpointError::Incompatible(format!(
                "{name} has shape {:?}, model expects {shape:?}",
                t.shape
            )));
        }
        Ok(t.data.into_iter().map(S::of).collect())
    };
    for (i, e) in model.store.entries_mut().iter_mut().enumerate() {
        let shape = e.tensor.shape().to_vec();
        let values = take(format!("param/{}", e.name), &shape)?;
        e.tensor.data_mut().copy_from_slice(&values);
        adam.m[i] = take(format!("adam.m/{}", e.name), &shape)?;
        adam.v[i] = take(format!("adam.v/{}", e.name), &shape)?;
    }
    let last_decay = take("sched.last_decay".into(), &[1])?[0].to_f64_lossless() as usize;
    let history = tensors
        .remove("sched.history")
        .ok_or_else(|| CheckpointError::Incompatible("missing tensor sched.history".into()))?;
    if let Some(extra) = tensors.keys().next() {
        return Err(CheckpointError::Incompatible(format!("unexpected tensor {extra}")));
    }

    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    let mut plateau = Plateau::new(blob.train.plateau_window, blob.train.plateau_min_rel);
    plateau.history = history.data;
    plateau.last_decay = last_decay;
    Ok(TrainState {
        model,
        config: blob.train,
        stage,
        epoch,
        lr,
        adam,
        plateau,
        rng,
    })
}

pub fn save_checkpoint<S: Scalar>(path: impl AsRef<Path>, state: &TrainState<S>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    write_atomic(path, &encode_checkpoint(state)?).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint<S: Scalar>(path: impl AsRef<Path>) -> Result<TrainState<S>, CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{train_stage, train_stage1};

    fn values(state: &TrainState<f64>) -> Vec<(String, Vec<f64>)> {
        state.model.store.entries().iter().map(|e| (e.name.clone(), e.tensor.data().to_vec())).collect()
    }

    fn trained() -> (TrainState<f64>, Vec<crate::data::ExampleRecord>) {
        let (mut state, corpus) = crate::train::tests::tiny_setup(2);
        train_stage1(&mut state, &corpus).unwrap();
        state.config.epochs_stage2 = 2;
        train_stage(&mut state, 2, &corpus, |_, _| Ok(())).unwrap();
        (state, corpus)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (state, _) = trained();
        let bytes = encode_checkpoint(&state).unwrap();
        let back: TrainState<f64> = decode_checkpoint(&bytes).unwrap();
        assert_eq!(values(&back), values(&state));
        assert_eq!(back.adam, state.adam);
        assert_eq!(back.plateau, state.plateau);
        assert_eq!(back.rng, state.rng);
        assert_eq!((back.stage, back.epoch, back.lr), (state.stage, state.epoch, state.lr));
        assert_eq!(back.config, state.config);
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn resume_reproduces_next_epoch() {
        let (mut state, corpus) = crate::train::tests::tiny_setup(2);
        state.config.epochs_stage3 = 1;
        train_stage(&mut state, 3, &corpus, |_, _| Ok(())).unwrap();
        let saved = encode_checkpoint(&state).unwrap();

        state.config.epochs_stage3 = 2;
        let direct = train_stage(&mut state, 3, &corpus, |_, _| Ok(())).unwrap();
        let mut resumed: TrainState<f64> = decode_checkpoint(&saved).unwrap();
        resumed.config.epochs_stage3 = 2;
        let again = train_stage(&mut resumed, 3, &corpus, |_, _| Ok(())).unwrap();
        assert_eq!(direct.len(), 1);
        assert_eq!(direct[0].loss.total.to_bits(), again[0].loss.total.to_bits());
        assert_eq!(values(&state), values(&resumed));
    }

    #[test]
    fn corruption_is_classified() {
        let (state, _) = trained();
        let bytes = encode_checkpoint(&state).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint::<f64>(&bad), Err(CheckpointError::BadMagic { .. })));
        assert!(matches!(decode_checkpoint::<f64>(&bytes[..4]), Err(CheckpointError::BadMagic { .. })));

        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(
            decode_checkpoint::<f64>(&bad),
            Err(CheckpointError::UnsupportedVersion { found: 9 })
        ));

        let cut = bytes.len() - 100;
        match decode_checkpoint::<f64>(&bytes[..cut]) {
            Err(CheckpointError::Truncated { offset, .. }) => assert_eq!(offset, cut),
            other => panic!("expected truncation, got {:?}", other.err()),
        }

        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_checkpoint::<f64>(&long), Err(CheckpointError::Malformed(_))));

        let mut other = state.clone();
        other.model = Model::new(&ModelConfig { d_model: 16, ..state.model.config.clone() }, 1).unwrap();
        other.adam = Adam::new(&other.model.store);
        let mut wrong = encode_checkpoint(&other).unwrap();
        // Point the config blob back at the smaller model.
        let blob_at = 8 + 4 + 1 + 8 + 8;
        let len = u32::from_le_bytes(wrong[blob_at..blob_at + 4].try_into().unwrap()) as usize;
        let text = String::from_utf8(wrong[blob_at + 4..blob_at + 4 + len].to_vec()).unwrap();
        let patched = text.replace("d_model = 16", "d_model = 8");
        assert_eq!(patched.len(), text.len() - 1);
        wrong.splice(blob_at..blob_at + 4 + len, {
            let mut v = (patched.len() as u32).to_le_bytes().to_vec();
            v.extend_from_slice(patched.as_bytes());
            v
        });
        assert!(matches!(decode_checkpoint::<f64>(&wrong), Err(CheckpointError::Incompatible(_))));
    }

    #[test]
    fn file_round_trip() {
        let (state, _) = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ckpt");
        save_checkpoint(&path, &state).unwrap();
        let back: TrainState<f64> = load_checkpoint(&path).unwrap();
        assert_eq!(values(&back), values(&state));
        assert!(matches!(
            load_checkpoint::<f64>(dir.path().join("missing")),
            Err(CheckpointError::Io { .. })
        ));
    }
}
