//! Repeated-split comparison of acquisition strategies.
//!
//! Each repeat draws a test set, an initial labeled set and an unlabeled
//! pool, trains one initial model on the labeled set, then runs every
//! strategy from a clone of that model so the curves of one repeat are
//! paired. Test accuracy is recorded after every acquisition.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::active_loop::{
    ActiveLoop, LabeledCase, LoopConfig, LoopError, LoopTrace, Pool, RetrainPolicy,
    SimulatedOracle, Strategy,
};
use crate::dataset::{serialize_cases, CaseRecord};
use crate::featurizer::{
    stable_hash, EmbeddingStore, FeatureError, FeatureVector, Featurizer, TimeNormalizer,
};
use crate::network::{Model, ModelConfig, NetworkError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),
    #[error("case {0} has no risk label")]
    MissingLabel(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("results file: {0}")]
    Format(String),
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_test: usize,
    pub n_train: usize,
    pub n_repeats: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            n_test: 5,
            n_train: 4,
            n_repeats: 5,
            seed: 0,
        }
    }
}

impl SplitSpec {
    fn check(&self, cohort_size: usize) -> Result<(), ExperimentError> {
        if self.n_test == 0 || self.n_train == 0 || self.n_repeats == 0 {
            return Err(ExperimentError::InfeasibleSplit(
                "n_test, n_train and n_repeats must be positive".into(),
            ));
        }
        if self.n_test + self.n_train > cohort_size {
            return Err(ExperimentError::InfeasibleSplit(format!(
                "n_test {} + n_train {} exceeds cohort size {cohort_size}",
                self.n_test, self.n_train
            )));
        }
        Ok(())
    }
}

/// Case ids of one repeat's partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub test: Vec<String>,
    pub train: Vec<String>,
    pub pool: Vec<String>,
}

/// Spreads `(base, repeat)` over the seed space so neighbouring repeats get
/// unrelated streams.
pub fn repeat_seed(base: u64, repeat: usize) -> u64 {
    let mut z = base ^ (repeat as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn make_splits(cohort: &[CaseRecord], spec: &SplitSpec) -> Result<Vec<Split>, ExperimentError> {
    spec.check(cohort.len())?;
    Ok((0..spec.n_repeats)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(r as u64);
            let mut ids: Vec<String> = cohort.iter().map(|c| c.id.clone()).collect();
            ids.shuffle(&mut rng);
            let pool = ids.split_off(spec.n_test + spec.n_train);
            let train = ids.split_off(spec.n_test);
            Split {
                test: ids,
                train,
                pool,
            }
        })
        .collect())
}

/// Centered moving average; windows shrink at the ends.
pub fn smooth_curve(values: &[f64], window: usize) -> Result<Vec<f64>, ExperimentError> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(ExperimentError::InvalidConfig(format!(
            "smoothing window must be odd and positive, got {window}"
        )));
    }
    let half = window / 2;
    Ok((0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(values.len() - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub strategies: Vec<Strategy>,
    pub retrain: RetrainPolicy,
    pub projection_seed: u64,
    pub smoothing_window: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            split: SplitSpec::default(),
            model: ModelConfig::default(),
            strategies: vec![Strategy::Margin, Strategy::Random],
            retrain: RetrainPolicy::Warm,
            projection_seed: 0,
            smoothing_window: 3,
        }
    }
}

/// Everything needed to reproduce a result: the run config plus
/// fingerprints of the inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub experiment: ExperimentConfig,
    pub cohort_size: usize,
    pub cohort_hash: u64,
    pub embedding_store: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// 1-based acquisition index.
    pub iteration: usize,
    pub n_labeled: usize,
    pub selected_case_id: String,
    pub margin: f64,
    pub accuracy_raw: f64,
    pub accuracy_smoothed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub repeat: usize,
    pub strategy: Strategy,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ConfigSnapshot,
    pub curves: Vec<Curve>,
}

/// One CSV data row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub repeat: usize,
    pub strategy: Strategy,
    pub iteration: usize,
    pub n_labeled: usize,
    pub selected_case_id: String,
    pub margin: f64,
    pub accuracy_raw: f64,
    pub accuracy_smoothed: f64,
}

impl ExperimentResult {
    pub fn rows(&self) -> Vec<ResultRow> {
        self.curves
            .iter()
            .flat_map(|c| {
                c.points.iter().map(|p| ResultRow {
                    repeat: c.repeat,
                    strategy: c.strategy,
                    iteration: p.iteration,
                    n_labeled: p.n_labeled,
                    selected_case_id: p.selected_case_id.clone(),
                    margin: p.margin,
                    accuracy_raw: p.accuracy_raw,
                    accuracy_smoothed: p.accuracy_smoothed,
                })
            })
            .collect()
    }

    pub fn curves_for(&self, strategy: Strategy) -> impl Iterator<Item = &Curve> {
        self.curves.iter().filter(move |c| c.strategy == strategy)
    }
}

/// Everything one repeat produced, including the per-strategy final models.
#[derive(Debug, Clone)]
pub struct RepeatOutcome {
    pub repeat: usize,
    pub split: Split,
    pub featurizer: Featurizer,
    pub initial_model: Model,
    pub traces: Vec<(Strategy, LoopTrace)>,
}

fn labeled(record: &CaseRecord) -> Result<u8, ExperimentError> {
    record
        .risk
        .ok_or_else(|| ExperimentError::MissingLabel(record.id.clone()))
}

fn check_config(cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    cfg.model.validate()?;
    if cfg.smoothing_window == 0 || cfg.smoothing_window.is_multiple_of(2) {
        return Err(ExperimentError::InvalidConfig(format!(
            "smoothing window must be odd and positive, got {}",
            cfg.smoothing_window
        )));
    }
    for (i, s) in cfg.strategies.iter().enumerate() {
        if cfg.strategies[..i].contains(s) {
            return Err(ExperimentError::InvalidConfig(format!(
                "strategy {} listed twice",
                s.as_str()
            )));
        }
    }
    Ok(())
}

/// Runs one repeat: split, fit the time normalizer on the initial labeled
/// cases, train the shared initial model, then one loop per strategy.
pub fn run_repeat(
    cohort: &[CaseRecord],
    store: &EmbeddingStore,
    cfg: &ExperimentConfig,
    repeat: usize,
    split: Split,
) -> Result<RepeatOutcome, ExperimentError> {
    let by_id: HashMap<&str, &CaseRecord> = cohort.iter().map(|c| (c.id.as_str(), c)).collect();
    let cases = |ids: &[String]| ids.iter().map(|id| by_id[id.as_str()]).collect::<Vec<_>>();
    let (test, train, pool) = (cases(&split.test), cases(&split.train), cases(&split.pool));

    let normalizer = TimeNormalizer::fit(train.iter().copied())?;
    let featurizer = Featurizer::new(store.clone(), cfg.projection_seed, normalizer);
    let with_labels = |recs: &[&CaseRecord]| -> Result<Vec<LabeledCase>, ExperimentError> {
        recs.iter()
            .map(|r| {
                Ok(LabeledCase {
                    features: featurizer.featurize(r)?,
                    label: labeled(r)?,
                })
            })
            .collect()
    };
    let test = with_labels(&test)?;
    let train = with_labels(&train)?;
    let pool_features: Vec<FeatureVector> = pool
        .iter()
        .map(|r| featurizer.featurize(r))
        .collect::<Result<_, _>>()?;

    let model_config = ModelConfig {
        seed: repeat_seed(cfg.model.seed, repeat),
        ..cfg.model.clone()
    };
    let mut initial_model = Model::init(model_config)?;
    let (feats, labels): (Vec<&FeatureVector>, Vec<u8>) =
        train.iter().map(|l| (&l.features, l.label)).unzip();
    initial_model.train(&feats, &labels)?;

    let oracle = SimulatedOracle::from_cases(cohort);
    let mut traces = Vec::with_capacity(cfg.strategies.len());
    for &strategy in &cfg.strategies {
        let loop_config = LoopConfig {
            iterations: None,
            strategy,
            retrain: cfg.retrain,
            random_seed: repeat_seed(cfg.split.seed ^ 0x5eed, repeat),
        };
        let pool = Pool::new(pool_features.clone(), train.clone())?;
        let mut lp = ActiveLoop::new(pool, initial_model.clone(), test.clone(), loop_config)?;
        lp.run(&mut oracle.clone())?;
        traces.push((strategy, lp.into_trace()));
    }
    Ok(RepeatOutcome {
        repeat,
        split,
        featurizer,
        initial_model,
        traces,
    })
}

pub fn config_snapshot(
    cohort: &[CaseRecord],
    store: &EmbeddingStore,
    cfg: &ExperimentConfig,
) -> ConfigSnapshot {
    ConfigSnapshot {
        experiment: cfg.clone(),
        cohort_size: cohort.len(),
        cohort_hash: stable_hash(serialize_cases(cohort).as_bytes()),
        embedding_store: store.fingerprint(),
    }
}

fn curve_from_trace(
    repeat: usize,
    strategy: Strategy,
    trace: &LoopTrace,
    window: usize,
) -> Result<Curve, ExperimentError> {
    let raw: Vec<f64> = trace
        .records
        .iter()
        .map(|r| {
            r.test_accuracy
                .expect("comparison loops always carry a test set")
        })
        .collect();
    let smoothed = smooth_curve(&raw, window)?;
    let points = trace
        .records
        .iter()
        .zip(raw.iter().zip(smoothed))
        .map(|(r, (&raw, smoothed))| CurvePoint {
            iteration: r.t,
            n_labeled: r.n_labeled,
            selected_case_id: r.case_id.clone(),
            margin: r.margin,
            accuracy_raw: raw,
            accuracy_smoothed: smoothed,
        })
        .collect();
    Ok(Curve {
        repeat,
        strategy,
        points,
    })
}

/// Runs every repeat and strategy; `on_repeat` sees each repeat's full
/// outcome (final models included) as it completes.
pub fn run_comparison_with(
    cohort: &[CaseRecord],
    store: &EmbeddingStore,
    cfg: &ExperimentConfig,
    mut on_repeat: impl FnMut(&RepeatOutcome),
) -> Result<ExperimentResult, ExperimentError> {
    check_config(cfg)?;
    for c in cohort {
        labeled(c)?;
    }
    let splits = make_splits(cohort, &cfg.split)?;
    let mut curves = Vec::new();
    for (repeat, split) in splits.into_iter().enumerate() {
        let outcome = run_repeat(cohort, store, cfg, repeat, split)?;
        for (strategy, trace) in &outcome.traces {
            curves.push(curve_from_trace(
                repeat,
                *strategy,
                trace,
                cfg.smoothing_window,
            )?);
        }
        on_repeat(&outcome);
    }
    Ok(ExperimentResult {
        config: config_snapshot(cohort, store, cfg),
        curves,
    })
}

pub fn run_comparison(
    cohort: &[CaseRecord],
    store: &EmbeddingStore,
    cfg: &ExperimentConfig,
) -> Result<ExperimentResult, ExperimentError> {
    run_comparison_with(cohort, store, cfg, |_| {})
}

pub const RESULTS_CSV: &str = "results.csv";
pub const CURVES_JSON: &str = "curves.json";
const CONFIG_PREFIX: &str = "# config: ";

/// CSV text: a `# config: {json}` comment line, the header, then one row per
/// curve point.
pub fn results_csv(result: &ExperimentResult) -> Result<String, ExperimentError> {
    let config = serde_json::to_string(&result.config)
        .map_err(|e| ExperimentError::Format(e.to_string()))?;
    let mut out = format!("{CONFIG_PREFIX}{config}\n");
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record([
        "repeat",
        "strategy",
        "iteration",
        "n_labeled",
        "selected_case_id",
        "margin",
        "accuracy_raw",
        "accuracy_smoothed",
    ])?;
    for row in result.rows() {
        w.serialize(row)?;
    }
    let body = w
        .into_inner()
        .map_err(|e| ExperimentError::Format(e.to_string()))?;
    out.push_str(std::str::from_utf8(&body).expect("csv output is UTF-8"));
    Ok(out)
}

#[derive(Debug, Serialize)]
struct SeriesFile<'a> {
    config: &'a ConfigSnapshot,
    curves: Vec<Series<'a>>,
}

#[derive(Debug, Serialize)]
struct Series<'a> {
    repeat: usize,
    strategy: Strategy,
    n_labeled: Vec<usize>,
    selected_case_id: Vec<&'a str>,
    accuracy_raw: Vec<f64>,
    accuracy_smoothed: Vec<f64>,
}

/// Writes `results.csv` and the per-curve `curves.json` into `dir`.
pub fn export_results(
    result: &ExperimentResult,
    dir: impl AsRef<Path>,
) -> Result<(PathBuf, PathBuf), ExperimentError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(RESULTS_CSV);
    fs::write(&csv_path, results_csv(result)?)?;

    let series = SeriesFile {
        config: &result.config,
        curves: result
            .curves
            .iter()
            .map(|c| Series {
                repeat: c.repeat,
                strategy: c.strategy,
                n_labeled: c.points.iter().map(|p| p.n_labeled).collect(),
                selected_case_id: c
                    .points
                    .iter()
                    .map(|p| p.selected_case_id.as_str())
                    .collect(),
                accuracy_raw: c.points.iter().map(|p| p.accuracy_raw).collect(),
                accuracy_smoothed: c.points.iter().map(|p| p.accuracy_smoothed).collect(),
            })
            .collect(),
    };
    let json_path = dir.join(CURVES_JSON);
    let json = serde_json::to_string_pretty(&series)
        .map_err(|e| ExperimentError::Format(e.to_string()))?;
    fs::write(&json_path, json + "\n")?;
    Ok((csv_path, json_path))
}

/// Parses a results CSV back into its config snapshot and rows.
pub fn parse_results_csv(text: &str) -> Result<(ConfigSnapshot, Vec<ResultRow>), ExperimentError> {
    let first = text.lines().next().unwrap_or_default();
    let json = first
        .strip_prefix(CONFIG_PREFIX)
        .ok_or_else(|| ExperimentError::Format("missing config comment line".into()))?;
    let config = serde_json::from_str(json).map_err(|e| ExperimentError::Format(e.to_string()))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let rows = reader
        .deserialize()
        .collect::<Result<Vec<ResultRow>, _>>()?;
    Ok((config, rows))
}

pub fn read_results_csv(
    path: impl AsRef<Path>,
) -> Result<(ConfigSnapshot, Vec<ResultRow>), ExperimentError> {
    parse_results_csv(&fs::read_to_string(path)?)
}

/// Labeled-set size at which the curve first reaches `threshold` raw
/// accuracy, if it ever does.
pub fn labels_to_reach(curve: &Curve, threshold: f64) -> Option<usize> {
    curve
        .points
        .iter()
        .find(|p| p.accuracy_raw >= threshold)
        .map(|p| p.n_labeled)
}

/// Mean raw accuracy across repeats at each labeled-set size.
pub fn mean_accuracy_by_budget(
    result: &ExperimentResult,
    strategy: Strategy,
) -> BTreeMap<usize, f64> {
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for c in result.curves_for(strategy) {
        for p in &c.points {
            let e = sums.entry(p.n_labeled).or_default();
            e.0 += p.accuracy_raw;
            e.1 += 1;
        }
    }
    sums.into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic_cohort, synthetic_embedding_store, CohortSpec};
    use crate::network::GateKind;
    use std::collections::HashSet;

    #[test]
    fn split_shapes_follow_the_protocol() {
        let cohort = generate_synthetic_cohort(&CohortSpec::compact(), 7).unwrap();
        for (n_test, pool) in [(5, 9), (7, 7), (14, 0)] {
            let spec = SplitSpec {
                n_test,
                n_train: 4,
                n_repeats: 5,
                seed: 3,
            };
            let splits = make_splits(&cohort, &spec).unwrap();
            assert_eq!(splits.len(), 5);
            for s in &splits {
                assert_eq!(
                    (s.test.len(), s.train.len(), s.pool.len()),
                    (n_test, 4, pool)
                );
                let all: HashSet<&String> = s.test.iter().chain(&s.train).chain(&s.pool).collect();
                assert_eq!(all.len(), 18);
            }
            assert_eq!(splits, make_splits(&cohort, &spec).unwrap());
            assert_ne!(splits[0], splits[1]);
        }
        let bad = SplitSpec {
            n_test: 15,
            n_train: 4,
            n_repeats: 1,
            seed: 0,
        };
        assert!(matches!(
            make_splits(&cohort, &bad),
            Err(ExperimentError::InfeasibleSplit(_))
        ));
    }

    #[test]
    fn smoothing_examples() {
        let s = smooth_curve(&[0.0, 1.0, 0.0], 3).unwrap();
        let expected = [0.5, 1.0 / 3.0, 0.5];
        assert!(s.iter().zip(expected).all(|(a, b)| (a - b).abs() < 1e-15));
        let v = [0.2, 0.9, 0.4, 0.4, 1.0];
        assert_eq!(smooth_curve(&v, 1).unwrap(), v);
        assert_eq!(smooth_curve(&[0.6; 7], 5).unwrap(), vec![0.6; 7]);
        assert!(smooth_curve(&v, 4).is_err());
        assert!(smooth_curve(&v, 0).is_err());
        assert!(smooth_curve(&[], 3).unwrap().is_empty());
    }

    fn quick_config(strategies: Vec<Strategy>) -> ExperimentConfig {
        ExperimentConfig {
            split: SplitSpec {
                n_test: 5,
                n_train: 4,
                n_repeats: 2,
                seed: 1,
            },
            model: ModelConfig {
                hidden1: 8,
                hidden2: 4,
                epochs: 10,
                gate: GateKind::Diagonal,
                ..ModelConfig::default()
            },
            strategies,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn comparison_shape_pairing_and_export_round_trip() {
        let spec = CohortSpec::compact();
        let cohort = generate_synthetic_cohort(&spec, 7).unwrap();
        let store = synthetic_embedding_store(&spec, 7, 1.0);
        let cfg = quick_config(vec![Strategy::Margin, Strategy::Random]);
        let mut initial = Vec::new();
        let result = run_comparison_with(&cohort, &store, &cfg, |o| {
            initial.push(o.initial_model.clone());
            assert_eq!(o.traces.len(), 2);
        })
        .unwrap();
        assert_eq!(result.curves.len(), 4);
        assert!(result.curves.iter().all(|c| c.points.len() == 9));
        for c in &result.curves {
            let n: Vec<usize> = c.points.iter().map(|p| p.n_labeled).collect();
            assert_eq!(n, (5..=13).collect::<Vec<_>>());
            assert!(c
                .points
                .iter()
                .all(|p| (0.0..=1.0).contains(&p.accuracy_raw)));
        }
        assert_ne!(initial[0], initial[1]);

        let dir = tempfile::tempdir().unwrap();
        let (csv_path, json_path) = export_results(&result, dir.path()).unwrap();
        let (config, rows) = read_results_csv(&csv_path).unwrap();
        assert_eq!(config, result.config);
        assert_eq!(rows, result.rows());
        assert_eq!(rows.len(), 36);
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(json_path).unwrap()).unwrap();
        assert_eq!(json["curves"].as_array().unwrap().len(), 4);

        let again = run_comparison(&cohort, &store, &cfg).unwrap();
        assert_eq!(results_csv(&again).unwrap(), results_csv(&result).unwrap());
    }

    #[test]
    fn random_only_has_no_margin_curves() {
        let spec = CohortSpec::compact();
        let cohort = generate_synthetic_cohort(&spec, 7).unwrap();
        let result = run_comparison(
            &cohort,
            &EmbeddingStore::hashed(768),
            &quick_config(vec![Strategy::Random]),
        )
        .unwrap();
        assert_eq!(result.curves_for(Strategy::Margin).count(), 0);
        assert_eq!(result.curves_for(Strategy::Random).count(), 2);
    }

    #[test]
    fn empty_result_exports_header_only() {
        let spec = CohortSpec::compact();
        let cohort = generate_synthetic_cohort(&spec, 7).unwrap();
        let result =
            run_comparison(&cohort, &EmbeddingStore::hashed(768), &quick_config(vec![])).unwrap();
        let text = results_csv(&result).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("repeat,strategy,iteration"));
        let (_, rows) = parse_results_csv(&text).unwrap();
        assert!(rows.is_empty());
    }

    #[test]
    fn unlabeled_member_rejected() {
        let spec = CohortSpec::compact();
        let mut cohort = generate_synthetic_cohort(&spec, 7).unwrap();
        cohort[3].risk = None;
        let err = run_comparison(
            &cohort,
            &EmbeddingStore::hashed(768),
            &quick_config(vec![Strategy::Margin]),
        )
        .unwrap_err();
        assert!(matches!(err, ExperimentError::MissingLabel(id) if id == cohort[3].id));
    }

    #[test]
    fn budget_helpers() {
        let point = |n, acc| CurvePoint {
            iteration: n - 4,
            n_labeled: n,
            selected_case_id: String::new(),
            margin: 0.0,
            accuracy_raw: acc,
            accuracy_smoothed: acc,
        };
        let curve = Curve {
            repeat: 0,
            strategy: Strategy::Margin,
            points: vec![point(5, 0.6), point(6, 0.9), point(7, 1.0)],
        };
        assert_eq!(labels_to_reach(&curve, 0.9), Some(6));
        assert_eq!(labels_to_reach(&curve, 1.01), None);
    }
}
