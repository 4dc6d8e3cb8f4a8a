//! Margin-uncertainty acquisition: scoring, query selection, label oracles
//! and the iterative select → label → retrain loop.
//!
//! A loop owns its [`Pool`] and [`Model`]. Each [`ActiveLoop::step`] scores
//! the unlabeled pool with an eval-mode forward, picks a case (lowest margin,
//! or uniformly at random for the baseline), asks the oracle for its label,
//! moves it into the labeled set and retrains. A refused query leaves the
//! loop exactly as it was, so the step can be retried later.

use std::collections::{HashMap, HashSet};
use std::sync::mpsc::{Receiver, Sender};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::CaseRecord;
use crate::featurizer::FeatureVector;
use crate::network::{predicted_class, Model, NetworkError};

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("unlabeled pool is empty")]
    EmptyPool,
    #[error("labeled set is empty")]
    NoLabeledData,
    #[error("case id {0} appears more than once")]
    DuplicateId(String),
    #[error("unknown case id {0}")]
    UnknownCase(String),
    #[error("case {0} has no label")]
    MissingLabel(String),
    #[error("label {label} for case {case_id} is not 0 or 1")]
    InvalidLabel { case_id: String, label: u8 },
    #[error("oracle gave no label for {case_id}; loop suspended")]
    Suspended { case_id: String },
    #[error("requested {requested} iterations but the pool holds {available}")]
    TooManyIterations { requested: usize, available: usize },
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Margin `|p0 - p1|`; 0 is maximally uncertain.
pub fn uncertainty_score(p: [f64; 2]) -> f64 {
    (p[0] - p[1]).abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCase {
    pub features: FeatureVector,
    pub label: u8,
}

/// Unlabeled cases in a fixed order plus the labeled set. Ids are unique
/// across both.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    unlabeled: Vec<FeatureVector>,
    labeled: Vec<LabeledCase>,
}

impl Pool {
    pub fn new(
        unlabeled: Vec<FeatureVector>,
        labeled: Vec<LabeledCase>,
    ) -> Result<Self, LoopError> {
        let mut seen = HashSet::new();
        for id in unlabeled
            .iter()
            .map(|f| &f.case_id)
            .chain(labeled.iter().map(|l| &l.features.case_id))
        {
            if !seen.insert(id.as_str()) {
                return Err(LoopError::DuplicateId(id.clone()));
            }
        }
        if let Some(bad) = labeled.iter().find(|l| l.label > 1) {
            return Err(LoopError::InvalidLabel {
                case_id: bad.features.case_id.clone(),
                label: bad.label,
            });
        }
        Ok(Self { unlabeled, labeled })
    }

    pub fn unlabeled(&self) -> &[FeatureVector] {
        &self.unlabeled
    }

    pub fn labeled(&self) -> &[LabeledCase] {
        &self.labeled
    }

    pub fn total(&self) -> usize {
        self.unlabeled.len() + self.labeled.len()
    }

    pub fn position(&self, case_id: &str) -> Option<usize> {
        self.unlabeled.iter().position(|f| f.case_id == case_id)
    }

    /// Moves an unlabeled case into the labeled set.
    pub fn label(&mut self, case_id: &str, label: u8) -> Result<(), LoopError> {
        if label > 1 {
            return Err(LoopError::InvalidLabel {
                case_id: case_id.to_string(),
                label,
            });
        }
        let pos = self
            .position(case_id)
            .ok_or_else(|| LoopError::UnknownCase(case_id.to_string()))?;
        let features = self.unlabeled.remove(pos);
        self.labeled.push(LabeledCase { features, label });
        Ok(())
    }

    fn training_set(&self) -> (Vec<&FeatureVector>, Vec<u8>) {
        self.labeled.iter().map(|l| (&l.features, l.label)).unzip()
    }
}

/// Margins of every unlabeled case, in pool order.
pub fn score_pool(model: &Model, pool: &Pool) -> Result<Vec<f64>, LoopError> {
    if pool.unlabeled.is_empty() {
        return Err(LoopError::EmptyPool);
    }
    Ok(model
        .predict_proba(&pool.unlabeled)?
        .into_iter()
        .map(uncertainty_score)
        .collect())
}

/// Lowest-margin case; ties go to the earliest pool position.
pub fn select_query(model: &Model, pool: &Pool) -> Result<(String, f64), LoopError> {
    let margins = score_pool(model, pool)?;
    let mut best = 0;
    for (i, &m) in margins.iter().enumerate().skip(1) {
        if m < margins[best] {
            best = i;
        }
    }
    Ok((pool.unlabeled[best].case_id.clone(), margins[best]))
}

/// Uniform draw from the unlabeled pool. Drawn cases leave the pool when
/// labeled, so repeated steps sample without replacement.
pub fn random_baseline_step(pool: &Pool, rng: &mut ChaCha8Rng) -> Result<String, LoopError> {
    if pool.unlabeled.is_empty() {
        return Err(LoopError::EmptyPool);
    }
    let i = rng.random_range(0..pool.unlabeled.len());
    Ok(pool.unlabeled[i].case_id.clone())
}

/// Fraction of `test` cases whose predicted class matches the label.
pub fn accuracy(model: &Model, test: &[LabeledCase]) -> Result<f64, LoopError> {
    if test.is_empty() {
        return Ok(0.0);
    }
    let feats: Vec<&FeatureVector> = test.iter().map(|t| &t.features).collect();
    let probs = model.predict_proba(&feats)?;
    let hits = probs
        .into_iter()
        .zip(test)
        .filter(|(p, t)| predicted_class(*p) == t.label)
        .count();
    Ok(hits as f64 / test.len() as f64)
}

/// Source of labels for queried cases. `None` means no answer (refusal or
/// timeout); the loop suspends without losing the iteration.
pub trait LabelOracle {
    fn query(&mut self, case_id: &str) -> Option<u8>;
}

/// Answers from held ground-truth labels.
#[derive(Debug, Clone, Default)]
pub struct SimulatedOracle {
    labels: HashMap<String, u8>,
}

impl SimulatedOracle {
    pub fn new(labels: HashMap<String, u8>) -> Self {
        Self { labels }
    }

    /// Oracle over every labeled record; unlabeled records are unknown to it.
    pub fn from_cases(cases: &[CaseRecord]) -> Self {
        Self::new(
            cases
                .iter()
                .filter_map(|c| Some((c.id.clone(), c.risk?)))
                .collect(),
        )
    }

    pub fn held_label(&self, case_id: &str) -> Option<u8> {
        self.labels.get(case_id).copied()
    }
}

impl LabelOracle for SimulatedOracle {
    fn query(&mut self, case_id: &str) -> Option<u8> {
        self.held_label(case_id)
    }
}

/// Sends each query id out over a channel and waits up to `timeout` for the
/// answer to come back.
#[derive(Debug)]
pub struct ChannelOracle {
    pub queries: Sender<String>,
    pub answers: Receiver<u8>,
    pub timeout: Duration,
}

impl LabelOracle for ChannelOracle {
    fn query(&mut self, case_id: &str) -> Option<u8> {
        self.queries.send(case_id.to_string()).ok()?;
        self.answers.recv_timeout(self.timeout).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Margin,
    Random,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Margin => "margin",
            Strategy::Random => "random",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "margin" => Ok(Strategy::Margin),
            "random" => Ok(Strategy::Random),
            other => Err(format!(
                "unknown strategy {other:?} (expected margin or random)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrainPolicy {
    /// Continue from the current weights.
    Warm,
    /// Re-initialize from the model config before every retrain.
    Cold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    /// Number of acquisitions; `None` runs until the pool is empty.
    pub iterations: Option<usize>,
    pub strategy: Strategy,
    pub retrain: RetrainPolicy,
    /// Seed of the random-acquisition stream.
    pub random_seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            iterations: None,
            strategy: Strategy::Margin,
            retrain: RetrainPolicy::Warm,
            random_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub t: usize,
    pub case_id: String,
    /// Margin of the selected case under the pre-retrain model.
    pub margin: f64,
    pub label: u8,
    pub n_labeled: usize,
    pub test_accuracy: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub wall_ms: f64,
}

impl IterationRecord {
    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        Self {
            wall_ms: 0.0,
            ..self.clone()
        } == Self {
            wall_ms: 0.0,
            ..other.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoopTrace {
    pub records: Vec<IterationRecord>,
    pub model: Model,
}

/// Serializable loop state. The model is stored separately as a checkpoint;
/// features are rebuilt from the case ids on resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopSnapshot {
    pub config: LoopConfig,
    pub unlabeled: Vec<String>,
    pub labeled: Vec<(String, u8)>,
    pub iteration: usize,
    pub target_iterations: usize,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    pub rng_word_pos: u128,
    pub records: Vec<IterationRecord>,
}

#[derive(Debug, Clone)]
pub struct ActiveLoop {
    config: LoopConfig,
    pool: Pool,
    model: Model,
    test: Vec<LabeledCase>,
    rng: ChaCha8Rng,
    target: usize,
    records: Vec<IterationRecord>,
}

/// Distinct stream so acquisition randomness never touches training randomness.
const ACQUISITION_STREAM: u64 = 7;

impl ActiveLoop {
    pub fn new(
        pool: Pool,
        model: Model,
        test: Vec<LabeledCase>,
        config: LoopConfig,
    ) -> Result<Self, LoopError> {
        if pool.labeled.is_empty() {
            return Err(LoopError::NoLabeledData);
        }
        let available = pool.unlabeled.len();
        let target = config.iterations.unwrap_or(available);
        if target > available {
            return Err(LoopError::TooManyIterations {
                requested: target,
                available,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.random_seed);
        rng.set_stream(ACQUISITION_STREAM);
        Ok(Self {
            config,
            pool,
            model,
            test,
            rng,
            target,
            records: Vec::new(),
        })
    }

    pub fn pool(&self) -> &Pool {
        &self.pool
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn iteration(&self) -> usize {
        self.records.len()
    }

    pub fn is_done(&self) -> bool {
        self.records.len() >= self.target
    }

    /// The case the next step would query, with its margin. Pure: the
    /// random stream is not advanced.
    pub fn peek_query(&self) -> Result<(String, f64), LoopError> {
        match self.config.strategy {
            Strategy::Margin => select_query(&self.model, &self.pool),
            Strategy::Random => {
                let id = random_baseline_step(&self.pool, &mut self.rng.clone())?;
                let margins = score_pool(&self.model, &self.pool)?;
                let pos = self.pool.position(&id).expect("drawn from the pool");
                Ok((id, margins[pos]))
            }
        }
    }

    /// One acquisition. Returns `Ok(None)` once the target is reached.
    pub fn step(
        &mut self,
        oracle: &mut dyn LabelOracle,
    ) -> Result<Option<&IterationRecord>, LoopError> {
        if self.is_done() {
            return Ok(None);
        }
        let (case_id, margin) = self.peek_query()?;
        let label = oracle.query(&case_id).ok_or_else(|| LoopError::Suspended {
            case_id: case_id.clone(),
        })?;
        self.apply_label(&case_id, label, margin).map(Some)
    }

    /// Applies a label for the case [`peek_query`](Self::peek_query) names;
    /// used directly by callers that obtain labels asynchronously.
    pub fn submit(&mut self, case_id: &str, label: u8) -> Result<&IterationRecord, LoopError> {
        if self.is_done() {
            return Err(LoopError::EmptyPool);
        }
        let (pending, margin) = self.peek_query()?;
        if pending != case_id {
            return Err(LoopError::UnknownCase(case_id.to_string()));
        }
        self.apply_label(case_id, label, margin)
    }

    fn apply_label(
        &mut self,
        case_id: &str,
        label: u8,
        margin: f64,
    ) -> Result<&IterationRecord, LoopError> {
        let start = Instant::now();
        let mut model = self.model.clone();
        let mut pool = self.pool.clone();
        pool.label(case_id, label)?;
        if self.config.retrain == RetrainPolicy::Cold {
            model = Model::init(model.config().clone())?;
        }
        let (features, labels) = pool.training_set();
        let history = model.train(&features, &labels)?;
        let test_accuracy = if self.test.is_empty() {
            None
        } else {
            Some(accuracy(&model, &self.test)?)
        };

        // Commit only once everything has succeeded.
        if self.config.strategy == Strategy::Random {
            random_baseline_step(&self.pool, &mut self.rng)?;
        }
        self.model = model;
        self.pool = pool;
        self.records.push(IterationRecord {
            t: self.records.len() + 1,
            case_id: case_id.to_string(),
            margin,
            label,
            n_labeled: self.pool.labeled.len(),
            test_accuracy,
            final_train_loss: history.last().copied(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn run(&mut self, oracle: &mut dyn LabelOracle) -> Result<(), LoopError> {
        while self.step(oracle)?.is_some() {}
        Ok(())
    }

    pub fn into_trace(self) -> LoopTrace {
        LoopTrace {
            records: self.records,
            model: self.model,
        }
    }

    pub fn snapshot(&self) -> LoopSnapshot {
        LoopSnapshot {
            config: self.config.clone(),
            unlabeled: self
                .pool
                .unlabeled
                .iter()
                .map(|f| f.case_id.clone())
                .collect(),
            labeled: self
                .pool
                .labeled
                .iter()
                .map(|l| (l.features.case_id.clone(), l.label))
                .collect(),
            iteration: self.records.len(),
            target_iterations: self.target,
            rng_seed: self.rng.get_seed(),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos(),
            records: self.records.clone(),
        }
    }

    /// Rebuilds a loop from a snapshot, its model checkpoint and the
    /// features of every case the snapshot names.
    pub fn resume(
        snapshot: &LoopSnapshot,
        model: Model,
        features: &HashMap<String, FeatureVector>,
        test: Vec<LabeledCase>,
    ) -> Result<Self, LoopError> {
        let lookup = |id: &String| {
            features
                .get(id)
                .cloned()
                .ok_or_else(|| LoopError::Snapshot(format!("no features for case {id}")))
        };
        let unlabeled = snapshot
            .unlabeled
            .iter()
            .map(lookup)
            .collect::<Result<Vec<_>, _>>()?;
        let labeled = snapshot
            .labeled
            .iter()
            .map(|(id, label)| {
                Ok(LabeledCase {
                    features: lookup(id)?,
                    label: *label,
                })
            })
            .collect::<Result<Vec<_>, LoopError>>()?;
        if snapshot.records.len() != snapshot.iteration
            || snapshot.iteration > snapshot.target_iterations
        {
            return Err(LoopError::Snapshot(
                "inconsistent iteration counters".into(),
            ));
        }
        if snapshot.target_iterations - snapshot.iteration > unlabeled.len() {
            return Err(LoopError::Snapshot("target exceeds remaining pool".into()));
        }
        let pool = Pool::new(unlabeled, labeled)?;
        let mut rng = ChaCha8Rng::from_seed(snapshot.rng_seed);
        rng.set_stream(snapshot.rng_stream);
        rng.set_word_pos(snapshot.rng_word_pos);
        Ok(Self {
            config: snapshot.config.clone(),
            pool,
            model,
            test,
            rng,
            target: snapshot.target_iterations,
            records: snapshot.records.clone(),
        })
    }
}

/// Runs the loop to completion with the given oracle.
pub fn run_al_loop(
    pool: Pool,
    oracle: &mut dyn LabelOracle,
    model: Model,
    test: Vec<LabeledCase>,
    config: LoopConfig,
) -> Result<LoopTrace, LoopError> {
    let mut lp = ActiveLoop::new(pool, model, test, config)?;
    lp.run(oracle)?;
    Ok(lp.into_trace())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{GateKind, ModelConfig};
    use proptest::prelude::{prop_assert_eq, proptest, ProptestConfig};
    use rand_distr::StandardNormal;

    fn config() -> ModelConfig {
        ModelConfig {
            input_dim: 6,
            hidden1: 4,
            hidden2: 3,
            epochs: 5,
            learning_rate: 1e-2,
            ..ModelConfig::default()
        }
    }

    fn fv(id: &str, values: Vec<f64>) -> FeatureVector {
        FeatureVector {
            case_id: id.into(),
            n_real_pairs: 1,
            values,
        }
    }

    fn random_pool(n_labeled: usize, n_unlabeled: usize, seed: u64) -> (Pool, SimulatedOracle) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |i: usize| {
            let label = (i % 2) as u8;
            let v: Vec<f64> = (0..6)
                .map(|_| rng.sample::<f64, _>(StandardNormal) + label as f64)
                .collect();
            (fv(&format!("c{i}"), v), label)
        };
        let cases: Vec<(FeatureVector, u8)> = (0..n_labeled + n_unlabeled).map(&mut draw).collect();
        let oracle =
            SimulatedOracle::new(cases.iter().map(|(f, l)| (f.case_id.clone(), *l)).collect());
        let labeled = cases[..n_labeled]
            .iter()
            .map(|(f, l)| LabeledCase {
                features: f.clone(),
                label: *l,
            })
            .collect();
        let unlabeled = cases[n_labeled..].iter().map(|(f, _)| f.clone()).collect();
        (Pool::new(unlabeled, labeled).unwrap(), oracle)
    }

    #[test]
    fn margin_examples() {
        assert_eq!(uncertainty_score([0.5, 0.5]), 0.0);
        assert_eq!(uncertainty_score([1.0, 0.0]), 1.0);
        assert!((uncertainty_score([0.7, 0.3]) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn empty_pool_is_an_error() {
        let (mut pool, _) = random_pool(2, 1, 0);
        pool.label("c2", 0).unwrap();
        let model = Model::init(config()).unwrap();
        assert!(matches!(
            select_query(&model, &pool),
            Err(LoopError::EmptyPool)
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            random_baseline_step(&pool, &mut rng),
            Err(LoopError::EmptyPool)
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let a = fv("x", vec![0.0; 6]);
        let err = Pool::new(
            vec![a.clone()],
            vec![LabeledCase {
                features: a,
                label: 0,
            }],
        )
        .unwrap_err();
        assert!(matches!(err, LoopError::DuplicateId(id) if id == "x"));
    }

    #[test]
    fn identical_cases_tie_to_first_position() {
        let (pool, _) = random_pool(2, 0, 1);
        let same = vec![0.3; 6];
        let pool = Pool::new(
            vec![fv("b", same.clone()), fv("a", same.clone()), fv("c", same)],
            pool.labeled().to_vec(),
        )
        .unwrap();
        let model = Model::init(config()).unwrap();
        assert_eq!(select_query(&model, &pool).unwrap().0, "b");
    }

    #[test]
    fn full_loop_exhausts_pool_and_conserves() {
        let (pool, mut oracle) = random_pool(4, 6, 2);
        let total = pool.total();
        let model = Model::init(config()).unwrap();
        let mut lp = ActiveLoop::new(pool, model, vec![], LoopConfig::default()).unwrap();
        let mut seen = HashSet::new();
        while let Some(r) = lp.step(&mut oracle).unwrap() {
            assert!(seen.insert(r.case_id.clone()));
            assert!((0.0..=1.0).contains(&r.margin));
            assert_eq!(r.label, oracle.held_label(&r.case_id).unwrap());
            assert_eq!(lp.pool().total(), total);
        }
        assert_eq!(lp.records().len(), 6);
        assert!(lp.pool().unlabeled().is_empty());
        let sizes: Vec<usize> = lp.records().iter().map(|r| r.n_labeled).collect();
        assert_eq!(sizes, (5..=10).collect::<Vec<_>>());
    }

    #[test]
    fn zero_iterations_leaves_model_unchanged() {
        let (pool, mut oracle) = random_pool(3, 4, 3);
        let model = Model::init(config()).unwrap();
        let cfg = LoopConfig {
            iterations: Some(0),
            ..LoopConfig::default()
        };
        let trace = run_al_loop(pool, &mut oracle, model.clone(), vec![], cfg).unwrap();
        assert!(trace.records.is_empty());
        assert_eq!(trace.model, model);
    }

    #[test]
    fn too_many_iterations_rejected() {
        let (pool, _) = random_pool(3, 4, 3);
        let cfg = LoopConfig {
            iterations: Some(5),
            ..LoopConfig::default()
        };
        assert!(matches!(
            ActiveLoop::new(pool, Model::init(config()).unwrap(), vec![], cfg),
            Err(LoopError::TooManyIterations {
                requested: 5,
                available: 4
            })
        ));
    }

    #[test]
    fn reruns_are_identical() {
        for strategy in [Strategy::Margin, Strategy::Random] {
            for retrain in [RetrainPolicy::Warm, RetrainPolicy::Cold] {
                let run = || {
                    let (pool, mut oracle) = random_pool(4, 5, 4);
                    let (test, _) = random_pool(4, 0, 40);
                    let cfg = LoopConfig {
                        strategy,
                        retrain,
                        random_seed: 9,
                        ..LoopConfig::default()
                    };
                    run_al_loop(
                        pool,
                        &mut oracle,
                        Model::init(config()).unwrap(),
                        test.labeled().to_vec(),
                        cfg,
                    )
                    .unwrap()
                };
                let (a, b) = (run(), run());
                assert!(a
                    .records
                    .iter()
                    .zip(&b.records)
                    .all(|(x, y)| x.same_outcome(y)));
                assert_eq!(a.model, b.model);
                assert!(a.records.iter().all(|r| r.test_accuracy.is_some()));
            }
        }
    }

    struct Refusing {
        inner: SimulatedOracle,
        refuse_next: bool,
    }

    impl LabelOracle for Refusing {
        fn query(&mut self, case_id: &str) -> Option<u8> {
            if std::mem::take(&mut self.refuse_next) {
                None
            } else {
                self.inner.query(case_id)
            }
        }
    }

    #[test]
    fn refusal_suspends_without_losing_the_iteration() {
        for strategy in [Strategy::Margin, Strategy::Random] {
            let cfg = LoopConfig {
                strategy,
                random_seed: 5,
                ..LoopConfig::default()
            };
            let (pool, oracle) = random_pool(3, 4, 6);
            let reference = run_al_loop(
                pool.clone(),
                &mut oracle.clone(),
                Model::init(config()).unwrap(),
                vec![],
                cfg.clone(),
            )
            .unwrap();

            let mut refusing = Refusing {
                inner: oracle,
                refuse_next: false,
            };
            let mut lp =
                ActiveLoop::new(pool, Model::init(config()).unwrap(), vec![], cfg).unwrap();
            lp.step(&mut refusing).unwrap();
            refusing.refuse_next = true;
            let before = lp.snapshot();
            assert!(matches!(
                lp.step(&mut refusing),
                Err(LoopError::Suspended { .. })
            ));
            assert_eq!(lp.snapshot(), before);
            lp.run(&mut refusing).unwrap();
            let trace = lp.into_trace();
            assert!(trace
                .records
                .iter()
                .zip(&reference.records)
                .all(|(x, y)| x.same_outcome(y)));
            assert_eq!(trace.model, reference.model);
        }
    }

    #[test]
    fn snapshot_resume_continues_identically() {
        let cfg = LoopConfig {
            strategy: Strategy::Random,
            random_seed: 11,
            ..LoopConfig::default()
        };
        let (pool, mut oracle) = random_pool(3, 5, 8);
        let features: HashMap<String, FeatureVector> = pool
            .unlabeled()
            .iter()
            .cloned()
            .chain(pool.labeled().iter().map(|l| l.features.clone()))
            .map(|f| (f.case_id.clone(), f))
            .collect();
        let mut straight = ActiveLoop::new(
            pool.clone(),
            Model::init(config()).unwrap(),
            vec![],
            cfg.clone(),
        )
        .unwrap();
        straight.run(&mut oracle).unwrap();

        let mut first = ActiveLoop::new(pool, Model::init(config()).unwrap(), vec![], cfg).unwrap();
        first.step(&mut oracle).unwrap();
        first.step(&mut oracle).unwrap();
        let json = serde_json::to_string(&first.snapshot()).unwrap();
        let snap: LoopSnapshot = serde_json::from_str(&json).unwrap();
        let mut resumed =
            ActiveLoop::resume(&snap, first.model().clone(), &features, vec![]).unwrap();
        resumed.run(&mut oracle).unwrap();
        assert!(resumed
            .records()
            .iter()
            .zip(straight.records())
            .all(|(x, y)| x.same_outcome(y)));
        assert_eq!(resumed.model(), straight.model());
    }

    #[test]
    fn channel_oracle_times_out_to_suspension() {
        let (qtx, qrx) = std::sync::mpsc::channel();
        let (atx, arx) = std::sync::mpsc::channel();
        let mut oracle = ChannelOracle {
            queries: qtx,
            answers: arx,
            timeout: Duration::from_millis(20),
        };
        assert_eq!(oracle.query("a"), None);
        assert_eq!(qrx.recv().unwrap(), "a");
        atx.send(1).unwrap();
        assert_eq!(oracle.query("b"), Some(1));
    }

    #[test]
    fn random_draws_are_roughly_uniform() {
        let (pool, _) = random_pool(1, 5, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts: HashMap<String, usize> = HashMap::new();
        for _ in 0..10_000 {
            *counts
                .entry(random_baseline_step(&pool, &mut rng).unwrap())
                .or_default() += 1;
        }
        assert_eq!(counts.len(), 5);
        for c in counts.values() {
            assert!((*c as f64 / 10_000.0 - 0.2).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn diagonal_gate_loop_runs() {
        let (pool, mut oracle) = random_pool(2, 3, 13);
        let model = Model::init(ModelConfig {
            gate: GateKind::Diagonal,
            ..config()
        })
        .unwrap();
        let trace = run_al_loop(pool, &mut oracle, model, vec![], LoopConfig::default()).unwrap();
        assert_eq!(trace.records.len(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn selection_matches_brute_force(seed in 0u64..10_000, n in 1usize..8) {
            let (pool, _) = random_pool(1, n, seed);
            let model = Model::init(ModelConfig { seed, ..config() }).unwrap();
            let (id, margin) = select_query(&model, &pool).unwrap();
            let mut best: Option<(usize, f64)> = None;
            for (i, f) in pool.unlabeled().iter().enumerate() {
                let m = uncertainty_score(model.predict_proba(&[f]).unwrap()[0]);
                if best.is_none_or(|(_, b)| m < b) {
                    best = Some((i, m));
                }
            }
            let (bi, bm) = best.unwrap();
            prop_assert_eq!(&id, &pool.unlabeled()[bi].case_id);
            prop_assert_eq!(margin, bm);
        }
    }
}
