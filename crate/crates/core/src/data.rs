//! Synthetic (features, query, ground-truth segment) corpora and their
//! binary file format.
//!
//! Every example is a pure function of `(seed, index)`: the generator seeds a
//! ChaCha8 stream cipher with `seed` and selects stream `index`, then draws in
//! a fixed order (activity, interval, frames, words). Gaussian noise comes
//! from `rand_distr::StandardNormal`; values are rounded to `f32` as they are
//! produced so the stored file is an exact image of the in-memory corpus.
//!
//! File layout (all little-endian):
//!
//! ```text
//! "SLPCORP1"
//! u32 version, u32 record count, u32 T, u32 N, u32 D_in
//! per record: u32 activity, u32 start, u32 end,
//!             T·D_in f32 features, N·D_in f32 query
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::CorpusConfig;
use crate::scalar::Scalar;
use crate::segment::Segment;
use crate::tensor::Tensor;

pub const CORPUS_MAGIC: &[u8; 8] = b"SLPCORP1";
pub const CORPUS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid corpus config: {0}")]
    InvalidConfig(String),
    #[error("not a corpus file: magic {found:?}")]
    MagicMismatch { found: Vec<u8> },
    #[error("malformed corpus header: {0}")]
    MalformedHeader(String),
    #[error("corpus truncated at byte offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("malformed corpus record {index}: {reason}")]
    MalformedRecord { index: usize, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// `T × D_in` per-frame features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub frames: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

/// `N × D_in` per-word embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryEmbedding {
    pub words: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureSequence {
    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.width..(t + 1) * self.width]
    }

    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        widen(self.frames, self.width, &self.data)
    }
}

impl QueryEmbedding {
    pub fn row(&self, n: usize) -> &[f32] {
        &self.data[n * self.width..(n + 1) * self.width]
    }

    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        widen(self.words, self.width, &self.data)
    }
}

fn widen<S: Scalar>(rows: usize, cols: usize, data: &[f32]) -> Tensor<S> {
    Tensor::matrix(rows, cols, data.iter().map(|&x| S::of(x as f64)).collect()).expect("consistent dims")
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExampleRecord {
    pub features: FeatureSequence,
    pub query: QueryEmbedding,
    pub gt: Segment,
    pub activity_id: u32,
}

impl ExampleRecord {
    pub fn frames(&self) -> usize {
        self.features.frames
    }

    /// 0/1 frame labels: 1 inside the ground-truth interval.
    pub fn labels<S: Scalar>(&self) -> Vec<S> {
        (0..self.frames())
            .map(|t| if self.gt.contains(t) { S::one() } else { S::zero() })
            .collect()
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidConfig(m));
        if self.frames == 0 || self.words == 0 || self.d_in == 0 {
            return bad("frames, words and d_in must be positive".into());
        }
        if !(1 <= self.min_len && self.min_len <= self.max_len && self.max_len <= self.frames) {
            return bad(format!(
                "segment length bounds must satisfy 1 <= min_len ({}) <= max_len ({}) <= frames ({})",
                self.min_len, self.max_len, self.frames
            ));
        }
        if self.vocab < 2 || self.vocab > self.d_in {
            return bad(format!("vocab {} must lie in [2, d_in = {}]", self.vocab, self.d_in));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and non-negative".into());
        }
        Ok(())
    }

    /// Number of valid `(start, length)` ground-truth placements.
    pub fn interval_count(&self) -> usize {
        (self.min_len..=self.max_len).map(|l| self.frames - l + 1).sum()
    }

    /// The `k`-th valid interval in (length, start) order.
    pub fn interval(&self, mut k: usize) -> Segment {
        for len in self.min_len..=self.max_len {
            let starts = self.frames - len + 1;
            if k < starts {
                return Segment::new(k, k + len - 1);
            }
            k -= starts;
        }
        panic!("interval index out of range")
    }
}

fn noisy_code<R: Rng>(rng: &mut R, code: usize, width: usize, sigma: f64, out: &mut Vec<f32>) {
    for j in 0..width {
        let base = if j == code { 1.0 } else { 0.0 };
        let noise: f64 = rng.sample(StandardNormal);
        out.push((base + sigma * noise) as f32);
    }
}

/// Deterministically generates example `index` of the corpus defined by `config`.
pub fn generate_example(config: &CorpusConfig, index: u64) -> Result<ExampleRecord, DataError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index);
    let activity = rng.random_range(0..config.vocab);
    let gt = config.interval(rng.random_range(0..config.interval_count()));
    let (t_len, width) = (config.frames, config.d_in);
    let mut features = Vec::with_capacity(t_len * width);
    for t in 0..t_len {
        let code = if gt.contains(t) {
            activity
        } else {
            let other = rng.random_range(0..config.vocab - 1);
            if other >= activity {
                other + 1
            } else {
                other
            }
        };
        noisy_code(&mut rng, code, width, config.noise_sigma, &mut features);
    }
    let mut query = Vec::with_capacity(config.words * width);
    for _ in 0..config.words {
        noisy_code(&mut rng, activity, width, config.noise_sigma, &mut query);
    }
    Ok(ExampleRecord {
        features: FeatureSequence {
            frames: t_len,
            width,
            data: features,
        },
        query: QueryEmbedding {
            words: config.words,
            width,
            data: query,
        },
        gt,
        activity_id: activity as u32,
    })
}

/// Examples `start_index .. start_index + count`, generated in parallel.
pub fn generate_corpus(config: &CorpusConfig, start_index: u64, count: usize) -> Result<Vec<ExampleRecord>, DataError> {
    config.validate()?;
    (0..count as u64)
        .into_par_iter()
        .map(|i| generate_example(config, start_index + i))
        .collect()
}

pub fn encode_corpus(records: &[ExampleRecord]) -> Result<Vec<u8>, DataError> {
    let (t_len, words, width) = records
        .first()
        .map_or((0, 0, 0), |r| (r.features.frames, r.query.words, r.features.width));
    let per_record = 12 + 4 * (t_len + words) * width;
    let mut buf = Vec::with_capacity(28 + records.len() * per_record);
    buf.extend_from_slice(CORPUS_MAGIC);
    for v in [CORPUS_VERSION, records.len() as u32, t_len as u32, words as u32, width as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for (i, r) in records.iter().enumerate() {
        if r.features.frames != t_len || r.query.words != words || r.features.width != width || r.query.width != width {
            return Err(DataError::MalformedRecord {
                index: i,
                reason: "all records in a corpus must share T, N and D_in".into(),
            });
        }
        for v in [r.activity_id, r.gt.start as u32, r.gt.end as u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for x in r.features.data.iter().chain(&r.query.data) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        if self.pos + n > self.bytes.len() {
            return Err(DataError::Truncated {
                offset: self.bytes.len(),
                needed: self.pos + n - self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, DataError> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_corpus(bytes: &[u8]) -> Result<Vec<ExampleRecord>, DataError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(8).map_err(|_| DataError::MagicMismatch {
        found: bytes[..bytes.len().min(8)].to_vec(),
    })?;
    if magic != CORPUS_MAGIC {
        return Err(DataError::MagicMismatch { found: magic.to_vec() });
    }
    let header = r.take(20).map_err(|_| {
        DataError::MalformedHeader(format!("header needs 20 bytes, file has {}", bytes.len() - 8))
    })?;
    let field = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (version, count, t_len, words, width) = (field(0), field(1), field(2), field(3), field(4));
    if version != CORPUS_VERSION as usize {
        return Err(DataError::MalformedHeader(format!("unsupported version {version}")));
    }
    if count > 0 && (t_len == 0 || words == 0 || width == 0) {
        return Err(DataError::MalformedHeader(format!(
            "zero dimension in T={t_len} N={words} D_in={width}"
        )));
    }
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for index in 0..count {
        let activity_id = r.u32()?;
        let (start, end) = (r.u32()? as usize, r.u32()? as usize);
        if start > end || end >= t_len {
            return Err(DataError::MalformedRecord {
                index,
                reason: format!("segment [{start}, {end}] outside 0..{t_len}"),
            });
        }
        let features = r.f32s(t_len * width)?;
        let query = r.f32s(words * width)?;
        records.push(ExampleRecord {
            features: FeatureSequence {
                frames: t_len,
                width,
                data: features,
            },
            query: QueryEmbedding { words, width, data: query },
            gt: Segment::new(start, end),
            activity_id,
        });
    }
    if r.pos != bytes.len() {
        return Err(DataError::MalformedRecord {
            index: count,
            reason: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(records)
}

/// Writes `bytes` to a sibling temp file, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub fn save_corpus(path: impl AsRef<Path>, records: &[ExampleRecord]) -> Result<(), DataError> {
    let path = path.as_ref();
    let bytes = encode_corpus(records)?;
    write_atomic(path, &bytes).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<ExampleRecord>, DataError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_corpus(&bytes)
}
