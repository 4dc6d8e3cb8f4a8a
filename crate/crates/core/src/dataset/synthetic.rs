//! Seeded synthetic cohorts standing in for the annotated case-report cohort.
//!
//! Each case draws its events either from its class vocabulary (with
//! probability `class_signal`) or from a vocabulary shared by both classes,
//! so labels are learnable from event content but individual cases can be
//! ambiguous. [`synthetic_embedding_store`] gives the vocabulary embeddings a
//! per-class centroid, mimicking the semantic clustering of a sentence
//! embedding model.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{CaseRecord, DatasetError, EventTime};
use crate::featurizer::{EmbeddingStore, FallbackPolicy, EMBED_DIM};

const LOW_VOCAB: &[&str] = &[
    "mild depression",
    "mild brain fog",
    "mild anxiety",
    "fatigue",
    "insomnia",
    "loss of smell",
    "TBS sessions",
    "BDI score improved",
    "WMS score improved",
    "Pittsburgh Sleep Quality Index (PSQI)",
    "physical therapy",
    "outpatient follow-up",
    "myalgias",
    "poor concentration",
];

const HIGH_VOCAB: &[&str] = &[
    "moved into the ICU",
    "bilateral pneumonia",
    "leukocytosis",
    "SpO2 at 93% on room air",
    "intubated",
    "grade III edema",
    "IV thiamine 200 mg every 12 hours",
    "bronchoscopy",
    "extreme shortness of breath",
    "supplemental oxygen",
    "acute kidney injury",
    "admitted to intensive care",
    "Dexamethasone",
    "bronchiolar metaplasia",
];

const SHARED_VOCAB: &[&str] = &[
    "female",
    "male",
    "chest X-ray",
    "physical examination",
    "COVID-19 PCR positive",
    "3-month follow-up",
    "aspirin",
    "laboratory and biomarker testing",
    "vaccinated against COVID-19",
    "chest computed tomography",
    "Caucasian",
    "referred to our hospital",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub size: usize,
    /// Fraction of High-risk cases.
    pub balance: f64,
    pub min_events: usize,
    pub max_events: usize,
    /// Probability that an event is drawn from the case's class vocabulary.
    pub class_signal: f64,
    pub t_min_hours: i64,
    pub t_max_hours: i64,
    pub low_vocab: Vec<String>,
    pub high_vocab: Vec<String>,
    pub shared_vocab: Vec<String>,
    pub id_prefix: String,
}

impl Default for CohortSpec {
    /// The standard 40-case, balanced cohort.
    fn default() -> Self {
        let owned = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        Self {
            size: 40,
            balance: 0.5,
            min_events: 4,
            max_events: 10,
            class_signal: 0.5,
            t_min_hours: -720,
            t_max_hours: 1440,
            low_vocab: owned(LOW_VOCAB),
            high_vocab: owned(HIGH_VOCAB),
            shared_vocab: owned(SHARED_VOCAB),
            id_prefix: "SYN".into(),
        }
    }
}

impl CohortSpec {
    /// 18 cases, 8 High and 10 Low.
    pub fn compact() -> Self {
        Self {
            size: 18,
            balance: 4.0 / 9.0,
            ..Self::default()
        }
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.low_vocab
            .iter()
            .chain(&self.high_vocab)
            .chain(&self.shared_vocab)
            .map(String::as_str)
    }

    fn check(&self) -> Result<(), DatasetError> {
        if self.size == 0 {
            return Err(DatasetError::EmptyCohort);
        }
        let bad = |m: &str| Err(DatasetError::InvalidSpec(m.to_string()));
        if !(0.0..=1.0).contains(&self.balance) {
            return bad("balance must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.class_signal) {
            return bad("class_signal must lie in [0, 1]");
        }
        if self.min_events == 0 || self.max_events < self.min_events {
            return bad("need 1 <= min_events <= max_events");
        }
        if self.t_max_hours < self.t_min_hours {
            return bad("t_max_hours < t_min_hours");
        }
        if self.low_vocab.is_empty() || self.high_vocab.is_empty() || self.shared_vocab.is_empty() {
            return bad("vocabularies must be non-empty");
        }
        Ok(())
    }

    fn high_count(&self) -> usize {
        let n = (self.size as f64 * self.balance).round() as usize;
        if self.size >= 2 && self.balance > 0.0 && self.balance < 1.0 {
            n.clamp(1, self.size - 1)
        } else {
            n.min(self.size)
        }
    }
}

pub fn generate_synthetic_cohort(
    spec: &CohortSpec,
    seed: u64,
) -> Result<Vec<CaseRecord>, DatasetError> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let n_high = spec.high_count();
    let mut labels: Vec<u8> = (0..spec.size).map(|i| u8::from(i < n_high)).collect();
    labels.shuffle(&mut rng);

    let width = spec.size.to_string().len().max(3);
    let cases = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let class_vocab = if label == 1 {
                &spec.high_vocab
            } else {
                &spec.low_vocab
            };
            let n_events = rng.random_range(spec.min_events..=spec.max_events);
            let mut events: Vec<EventTime> = (0..n_events)
                .map(|_| {
                    let vocab = if rng.random::<f64>() < spec.class_signal {
                        class_vocab
                    } else {
                        &spec.shared_vocab
                    };
                    let event = vocab[rng.random_range(0..vocab.len())].clone();
                    let t = rng.random_range(spec.t_min_hours..=spec.t_max_hours);
                    EventTime::new(event, t as f64)
                })
                .collect();
            events.sort_by(|a, b| a.t_hours.total_cmp(&b.t_hours));
            CaseRecord::new(
                format!("{}{:0width$}", spec.id_prefix, i + 1),
                Some(label),
                events,
            )
        })
        .collect();
    Ok(cases)
}

/// Embeddings for a cohort spec's vocabulary: class words cluster around a random
/// per-class centroid, shared words are isotropic. Unseen text falls back to
/// hash embeddings.
pub fn synthetic_embedding_store(
    spec: &CohortSpec,
    seed: u64,
    cluster_strength: f64,
) -> EmbeddingStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussian = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..EMBED_DIM)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let unit = |mut v: Vec<f64>| {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        v
    };
    let low_centroid = unit(gaussian(&mut rng));
    let high_centroid = unit(gaussian(&mut rng));

    let mut entries = HashMap::new();
    let mut add = |words: &[String], centroid: Option<&[f64]>, rng: &mut ChaCha8Rng| {
        for w in words {
            let noise = unit(gaussian(rng));
            let v = match centroid {
                Some(c) => noise
                    .iter()
                    .zip(c)
                    .map(|(n, c)| n + cluster_strength * c)
                    .collect(),
                None => noise,
            };
            entries.insert(w.clone(), unit(v));
        }
    };
    add(&spec.low_vocab, Some(&low_centroid), &mut rng);
    add(&spec.high_vocab, Some(&high_centroid), &mut rng);
    add(&spec.shared_vocab, None, &mut rng);

    EmbeddingStore::from_entries(EMBED_DIM, entries, FallbackPolicy::Hash)
        .expect("generated vectors have the store dimension")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{serialize_cases, validate_case};

    #[test]
    fn compact_cohort_has_both_labels() {
        let cohort = generate_synthetic_cohort(&CohortSpec::compact(), 7).unwrap();
        assert_eq!(cohort.len(), 18);
        let high = cohort.iter().filter(|c| c.risk == Some(1)).count();
        assert_eq!(high, 8);
        assert!(cohort.iter().all(|c| validate_case(c, 150).is_admissible()));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = CohortSpec::default();
        let a = serialize_cases(&generate_synthetic_cohort(&spec, 3).unwrap());
        let b = serialize_cases(&generate_synthetic_cohort(&spec, 3).unwrap());
        assert_eq!(a, b);
        let c = serialize_cases(&generate_synthetic_cohort(&spec, 4).unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn both_classes_for_tiny_skewed_cohorts() {
        for (size, balance) in [(2, 0.01), (2, 0.99), (3, 0.9), (5, 0.05)] {
            let spec = CohortSpec {
                size,
                balance,
                ..CohortSpec::default()
            };
            let cohort = generate_synthetic_cohort(&spec, 0).unwrap();
            assert!(cohort.iter().any(|c| c.risk == Some(0)));
            assert!(cohort.iter().any(|c| c.risk == Some(1)));
        }
    }

    #[test]
    fn empty_cohort_rejected() {
        let spec = CohortSpec {
            size: 0,
            ..CohortSpec::default()
        };
        assert!(matches!(
            generate_synthetic_cohort(&spec, 0),
            Err(DatasetError::EmptyCohort)
        ));
    }

    #[test]
    fn embedding_store_clusters_class_words() {
        let spec = CohortSpec::default();
        let store = synthetic_embedding_store(&spec, 11, 1.0);
        let cos = |a: &str, b: &str| {
            let (x, y) = (store.get(a).unwrap(), store.get(b).unwrap());
            x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>()
        };
        assert!(cos("leukocytosis", "intubated") > 0.3);
        assert!(cos("leukocytosis", "fatigue").abs() < 0.2);
    }
}
