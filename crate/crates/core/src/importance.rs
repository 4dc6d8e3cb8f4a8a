//! Gated-input feature importance.
//!
//! A case's score vector is `|a ⊙ x|` with `a = sigmoid(W_attn x)` the
//! eval-mode attention gate. Ranked indices map back to the case's events
//! through the padded layout: a real pair's time slot is `"Time"`, its event
//! dims carry the event text, and any slot of a padded pair is `"Unknown"`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::CaseRecord;
use crate::featurizer::{
    locate_feature, FeatureError, Featurizer, SlotKind, FEATURE_DIM, PAIR_CAP,
};
use crate::network::{Model, NetworkError};

#[derive(Debug, Error)]
pub enum ImportanceError {
    #[error("expected {expected} scores, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("k = {k} exceeds the {max} available features")]
    Bounds { k: usize, max: usize },
    #[error("models were trained under different featurizer configs")]
    ConfigMismatch,
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NameKind {
    Event,
    Time,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedFeature {
    /// 1-based.
    pub rank: usize,
    /// Event text, `"Time"` or `"Unknown"`.
    pub name: String,
    pub kind: NameKind,
    pub score: f64,
    pub flat_index: usize,
    pub pair_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ImportanceOptions {
    /// Score `a ⊙ x` instead of its magnitude.
    pub signed: bool,
    /// Keep only the first occurrence of each name.
    pub dedup: bool,
}

/// Per-feature gated input for one case, `|a ⊙ x|` (or `a ⊙ x` when signed).
pub fn importance_scores(
    model: &Model,
    features: &[f64],
    signed: bool,
) -> Result<Vec<f64>, ImportanceError> {
    let gate = model.gate_values(features)?;
    Ok(gate
        .iter()
        .zip(features)
        .map(|(a, x)| if signed { a * x } else { (a * x).abs() })
        .collect())
}

/// Name of a flat index for a case with the given (time-sorted) events.
pub fn feature_name(
    flat_index: usize,
    events: &[&str],
) -> Result<(String, NameKind, usize), ImportanceError> {
    let slot = locate_feature(flat_index)?;
    let (name, kind) = match (events.get(slot.pair_index), slot.kind) {
        (None, _) => ("Unknown".to_string(), NameKind::Unknown),
        (Some(_), SlotKind::Time) => ("Time".to_string(), NameKind::Time),
        (Some(text), SlotKind::EventDim(_)) => (text.to_string(), NameKind::Event),
    };
    Ok((name, kind, slot.pair_index))
}

/// Top `k` features by descending score; ties go to the lower flat index.
pub fn top_features(
    scores: &[f64],
    record: &CaseRecord,
    k: usize,
    dedup: bool,
) -> Result<Vec<NamedFeature>, ImportanceError> {
    if scores.len() != FEATURE_DIM {
        return Err(ImportanceError::Shape {
            expected: FEATURE_DIM,
            found: scores.len(),
        });
    }
    if k > FEATURE_DIM {
        return Err(ImportanceError::Bounds {
            k,
            max: FEATURE_DIM,
        });
    }
    let events: Vec<&str> = record
        .capped_events(PAIR_CAP)
        .iter()
        .map(|e| e.event.as_str())
        .collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));

    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(k);
    for idx in order {
        if out.len() == k {
            break;
        }
        let (name, kind, pair_index) = feature_name(idx, &events)?;
        if dedup && !seen.insert(name.clone()) {
            continue;
        }
        out.push(NamedFeature {
            rank: out.len() + 1,
            name,
            kind,
            score: scores[idx],
            flat_index: idx,
            pair_index,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case_id: String,
    pub risk: Option<u8>,
    pub features: Vec<NamedFeature>,
}

pub fn case_report(
    model: &Model,
    featurizer: &Featurizer,
    record: &CaseRecord,
    k: usize,
    options: ImportanceOptions,
) -> Result<CaseReport, ImportanceError> {
    let fv = featurizer.featurize(record)?;
    let scores = importance_scores(model, &fv.values, options.signed)?;
    Ok(CaseReport {
        case_id: record.id.clone(),
        risk: record.risk,
        features: top_features(&scores, record, k, options.dedup)?,
    })
}

pub fn cohort_feature_report(
    model: &Model,
    featurizer: &Featurizer,
    cases: &[CaseRecord],
    k: usize,
    options: ImportanceOptions,
) -> Result<Vec<CaseReport>, ImportanceError> {
    cases
        .iter()
        .map(|c| case_report(model, featurizer, c, k, options))
        .collect()
}

/// Top-k names two models share for one case, and those only one has.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseComparison {
    pub case_id: String,
    pub risk: Option<u8>,
    pub common: Vec<String>,
    pub unique_first: Vec<String>,
    pub unique_second: Vec<String>,
}

fn distinct(names: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut seen = HashSet::new();
    names
        .into_iter()
        .filter(|n| seen.insert(n.clone()))
        .collect()
}

/// `(common, only in first, only in second)` over distinct names, each in
/// first-appearance order.
pub fn split_names(
    first: impl IntoIterator<Item = String>,
    second: impl IntoIterator<Item = String>,
) -> (Vec<String>, Vec<String>, Vec<String>) {
    let (a, b) = (distinct(first), distinct(second));
    (
        a.iter().filter(|n| b.contains(n)).cloned().collect(),
        a.iter().filter(|n| !b.contains(n)).cloned().collect(),
        b.iter().filter(|n| !a.contains(n)).cloned().collect(),
    )
}

/// Compares the top-k names of two models case by case. Both featurizers
/// must be identical, or the scores are not comparable.
pub fn compare_models(
    first: (&Model, &Featurizer),
    second: (&Model, &Featurizer),
    cases: &[CaseRecord],
    k: usize,
    options: ImportanceOptions,
) -> Result<Vec<CaseComparison>, ImportanceError> {
    if first.1.fingerprint() != second.1.fingerprint() {
        return Err(ImportanceError::ConfigMismatch);
    }
    cases
        .iter()
        .map(|c| {
            let a = case_report(first.0, first.1, c, k, options)?.features;
            let b = case_report(second.0, second.1, c, k, options)?.features;
            let (common, unique_first, unique_second) =
                split_names(a.into_iter().map(|f| f.name), b.into_iter().map(|f| f.name));
            Ok(CaseComparison {
                case_id: c.id.clone(),
                risk: c.risk,
                common,
                unique_first,
                unique_second,
            })
        })
        .collect()
}
