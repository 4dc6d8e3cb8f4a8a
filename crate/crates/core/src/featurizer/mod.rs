//! Fixed-length featurization of a case.
//!
//! Each of the first [`PAIR_CAP`] time-sorted event pairs occupies a
//! contiguous block of [`BLOCK_WIDTH`] = 33 entries: the 32-dimensional
//! projection of the event's 768-dimensional embedding followed by the
//! z-scored timestamp. Blocks past the case's last event are zero.

mod store;

pub use store::{hash_embedding, stable_hash, EmbeddingStore, FallbackPolicy};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::CaseRecord;

pub const EMBED_DIM: usize = 768;
pub const PROJECTED_DIM: usize = 32;
pub const BLOCK_WIDTH: usize = PROJECTED_DIM + 1;
pub const PAIR_CAP: usize = 150;
pub const FEATURE_DIM: usize = PAIR_CAP * BLOCK_WIDTH;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("unknown event `{0}` and no embedding fallback")]
    UnknownEvent(String),
    #[error("non-finite embedding for `{0}`")]
    NonFiniteEmbedding(String),
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding file line {line}: {message}")]
    EmbeddingFile { line: usize, message: String },
    #[error("no events to fit the time normalizer on")]
    InsufficientData,
    #[error("feature index {index} out of range 0..{FEATURE_DIM}")]
    OutOfRange { index: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    seed: u64,
}

impl ProjectionMatrix {
    /// Seeded standard-normal 32 × 768 matrix with unit-norm rows.
    pub fn build(seed: u64) -> Self {
        Self::with_shape(PROJECTED_DIM, EMBED_DIM, seed)
    }

    pub fn with_shape(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values: Vec<f64> = (0..rows * cols)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        for row in values.chunks_mut(cols) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            row.iter_mut().for_each(|x| *x /= norm);
        }
        Self {
            rows,
            cols,
            values,
            seed,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>, FeatureError> {
        if v.len() != self.cols {
            return Err(FeatureError::DimensionMismatch {
                expected: self.cols,
                found: v.len(),
            });
        }
        Ok(self
            .values
            .chunks(self.cols)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }
}

/// z-score for timestamps in hours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeNormalizer {
    pub mean: f64,
    pub std: f64,
}

impl TimeNormalizer {
    const STD_FLOOR: f64 = 1.0;

    /// Population mean and standard deviation over every event of every case.
    pub fn fit<'a>(cases: impl IntoIterator<Item = &'a CaseRecord>) -> Result<Self, FeatureError> {
        let times: Vec<f64> = cases
            .into_iter()
            .flat_map(|c| c.events.iter().map(|e| e.t_hours))
            .collect();
        if times.is_empty() {
            return Err(FeatureError::InsufficientData);
        }
        let n = times.len() as f64;
        let mean = times.iter().sum::<f64>() / n;
        let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let std = if std < 1e-9 { Self::STD_FLOOR } else { std };
        Ok(Self { mean, std })
    }

    pub fn apply(&self, t_hours: f64) -> f64 {
        (t_hours - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub case_id: String,
    pub n_real_pairs: usize,
    pub values: Vec<f64>,
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlotKind {
    EventDim(usize),
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSlot {
    pub pair_index: usize,
    pub kind: SlotKind,
}

impl FeatureSlot {
    pub fn flat_index(&self) -> usize {
        let offset = match self.kind {
            SlotKind::EventDim(d) => d,
            SlotKind::Time => PROJECTED_DIM,
        };
        self.pair_index * BLOCK_WIDTH + offset
    }
}

pub fn locate_feature(flat_index: usize) -> Result<FeatureSlot, FeatureError> {
    if flat_index >= FEATURE_DIM {
        return Err(FeatureError::OutOfRange { index: flat_index });
    }
    let offset = flat_index % BLOCK_WIDTH;
    Ok(FeatureSlot {
        pair_index: flat_index / BLOCK_WIDTH,
        kind: if offset == PROJECTED_DIM {
            SlotKind::Time
        } else {
            SlotKind::EventDim(offset)
        },
    })
}

pub fn embed_event(text: &str, store: &EmbeddingStore) -> Result<Vec<f64>, FeatureError> {
    store.embed(text)
}

pub fn featurize_case(
    record: &CaseRecord,
    store: &EmbeddingStore,
    proj: &ProjectionMatrix,
    norm: &TimeNormalizer,
) -> Result<FeatureVector, FeatureError> {
    let events = record.capped_events(PAIR_CAP);
    let mut values = vec![0.0; FEATURE_DIM];
    for (block, ev) in values.chunks_mut(BLOCK_WIDTH).zip(&events) {
        let projected = proj.project(&store.embed(&ev.event)?)?;
        block[..PROJECTED_DIM].copy_from_slice(&projected);
        block[PROJECTED_DIM] = norm.apply(ev.t_hours);
    }
    Ok(FeatureVector {
        case_id: record.id.clone(),
        n_real_pairs: events.len(),
        values,
    })
}

/// Identity of a featurization: two feature vectors are comparable only when
/// produced under equal fingerprints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturizerFingerprint {
    pub projection_seed: u64,
    pub store: u64,
    pub time_mean_bits: u64,
    pub time_std_bits: u64,
}

/// Store, projection and normalizer bundled for repeated use.
#[derive(Debug, Clone)]
pub struct Featurizer {
    pub store: EmbeddingStore,
    pub projection: ProjectionMatrix,
    pub normalizer: TimeNormalizer,
}

impl Featurizer {
    pub fn new(store: EmbeddingStore, projection_seed: u64, normalizer: TimeNormalizer) -> Self {
        Self {
            store,
            projection: ProjectionMatrix::build(projection_seed),
            normalizer,
        }
    }

    pub fn featurize(&self, record: &CaseRecord) -> Result<FeatureVector, FeatureError> {
        featurize_case(record, &self.store, &self.projection, &self.normalizer)
    }

    pub fn fingerprint(&self) -> FeaturizerFingerprint {
        FeaturizerFingerprint {
            projection_seed: self.projection.seed(),
            store: self.store.fingerprint(),
            time_mean_bits: self.normalizer.mean.to_bits(),
            time_std_bits: self.normalizer.std.to_bits(),
        }
    }
}
