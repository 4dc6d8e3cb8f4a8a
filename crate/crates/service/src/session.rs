//! Durable annotation sessions.
//!
//! A session directory holds an immutable copy of the case file and one
//! snapshot file with the JSON session state followed by the binary model
//! checkpoint. Snapshots are replaced atomically (write temp, fsync, rename),
//! so a reader or a restarted process always sees either the state before a
//! label or the state after it.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use aan_core::active_loop::{
    ActiveLoop, LabeledCase, LoopConfig, LoopSnapshot, Pool, RetrainPolicy, Strategy,
};
use aan_core::dataset::{parse_case_file, serialize_cases, CaseRecord, EventTime};
use aan_core::experiment::{make_splits, SplitSpec};
use aan_core::featurizer::{
    EmbeddingStore, FallbackPolicy, FeatureVector, Featurizer, TimeNormalizer, EMBED_DIM,
    FEATURE_DIM,
};
use aan_core::importance::{cohort_feature_report, CaseReport, ImportanceOptions};
use aan_core::network::{read_checkpoint, write_checkpoint, GateKind, Model, ModelConfig};

use crate::error::ServiceError;

pub const SNAPSHOT_FILE: &str = "session.snap";
pub const CASES_FILE: &str = "cases.jsonl";
const TEMP_FILE: &str = "session.snap.tmp";
const MAGIC: &[u8; 8] = b"AANSESS\0";

/// Accuracy values reported by `status`.
const RECENT_ACCURACY: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleMode {
    /// Labels come from the annotator.
    Interactive,
    /// Labels may be omitted and are then taken from the case file.
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub n_test: usize,
    pub n_train: usize,
    pub seed: u64,
    /// `"hash"` or a path to an embedding file.
    pub embeddings: String,
    pub embedding_fallback: FallbackPolicy,
    pub projection_seed: u64,
    pub model: ModelConfig,
    pub strategy: Strategy,
    pub retrain: RetrainPolicy,
    pub iterations: Option<usize>,
    pub oracle: OracleMode,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            n_test: 5,
            n_train: 4,
            seed: 0,
            embeddings: "hash".into(),
            embedding_fallback: FallbackPolicy::Error,
            projection_seed: 0,
            // Every label rewrites the checkpoint; a full gate would make
            // that a 200 MB write.
            model: ModelConfig {
                gate: GateKind::Diagonal,
                ..ModelConfig::default()
            },
            strategy: Strategy::Margin,
            retrain: RetrainPolicy::Warm,
            iterations: None,
            oracle: OracleMode::Interactive,
        }
    }
}

impl SessionConfig {
    fn load_store(&self) -> Result<EmbeddingStore, ServiceError> {
        if self.embeddings == "hash" {
            Ok(EmbeddingStore::hashed(EMBED_DIM))
        } else {
            Ok(EmbeddingStore::load(
                &self.embeddings,
                self.embedding_fallback,
            )?)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingQuery {
    pub case_id: String,
    pub margin: f64,
    pub probs: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub case_id: String,
    pub risk: u8,
    pub iteration: usize,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEvent {
    pub received_unix_ms: u64,
    pub ack: Ack,
}

/// Everything persisted besides the model weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub config: SessionConfig,
    pub store_fingerprint: u64,
    pub normalizer: TimeNormalizer,
    pub test_ids: Vec<String>,
    pub loop_state: LoopSnapshot,
    pub pending: Option<PendingQuery>,
    pub events: Vec<LabelEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum QueryResponse {
    Pending {
        case_id: String,
        /// Time-ordered, as the featurizer sees them.
        events: Vec<EventTime>,
        probs: [f64; 2],
        margin: f64,
        iteration: usize,
        /// Held label; present only in simulated sessions.
        #[serde(skip_serializing_if = "Option::is_none")]
        oracle_label: Option<u8>,
    },
    Done {
        iteration: usize,
        n_labeled: usize,
        test_accuracy: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusView {
    pub session_id: String,
    pub iteration: usize,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub done: bool,
    pub pending_case_id: Option<String>,
    /// Test accuracy after each of the last few labels.
    pub recent_accuracy: Vec<f64>,
    pub config: SessionConfig,
}

#[derive(Debug)]
pub enum Submission {
    Applied(Box<Session>, Ack),
    /// The label was already applied; nothing changes.
    Replayed(Ack),
}

/// In-memory session, rebuilt from disk on load.
#[derive(Debug, Clone)]
pub struct Session {
    state: SessionState,
    cases: HashMap<String, CaseRecord>,
    featurizer: Featurizer,
    lp: ActiveLoop,
}

fn labeled_case(
    featurizer: &Featurizer,
    record: &CaseRecord,
    role: &str,
) -> Result<LabeledCase, ServiceError> {
    let label = record.risk.filter(|r| *r <= 1).ok_or_else(|| {
        ServiceError::Validation(format!("{role} case {} needs a risk of 0 or 1", record.id))
    })?;
    Ok(LabeledCase {
        features: featurizer.featurize(record)?,
        label,
    })
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

impl Session {
    /// Splits the cases, trains the initial model on the labeled seed set and
    /// computes the first query. Nothing is written.
    pub fn create(
        session_id: &str,
        cases: Vec<CaseRecord>,
        config: SessionConfig,
    ) -> Result<Self, ServiceError> {
        config.model.validate()?;
        if config.model.input_dim != FEATURE_DIM {
            return Err(ServiceError::Validation(format!(
                "model input_dim must be {FEATURE_DIM}, got {}",
                config.model.input_dim
            )));
        }
        let spec = SplitSpec {
            n_test: config.n_test,
            n_train: config.n_train,
            n_repeats: 1,
            seed: config.seed,
        };
        let split = make_splits(&cases, &spec)?.remove(0);
        let by_id: HashMap<String, CaseRecord> =
            cases.into_iter().map(|c| (c.id.clone(), c)).collect();
        let store = config.load_store()?;
        let normalizer = TimeNormalizer::fit(split.train.iter().map(|id| &by_id[id]))?;
        let featurizer = Featurizer::new(store, config.projection_seed, normalizer);

        let test = split
            .test
            .iter()
            .map(|id| labeled_case(&featurizer, &by_id[id], "test"))
            .collect::<Result<Vec<_>, _>>()?;
        let train = split
            .train
            .iter()
            .map(|id| labeled_case(&featurizer, &by_id[id], "seed"))
            .collect::<Result<Vec<_>, _>>()?;
        let mut unlabeled = Vec::with_capacity(split.pool.len());
        for id in &split.pool {
            let record = &by_id[id];
            if config.oracle == OracleMode::Simulated && !matches!(record.risk, Some(0 | 1)) {
                return Err(ServiceError::Validation(format!(
                    "simulated session needs a risk for pool case {id}"
                )));
            }
            unlabeled.push(featurizer.featurize(record)?);
        }

        let mut model = Model::init(config.model.clone())?;
        let (feats, labels): (Vec<&FeatureVector>, Vec<u8>) =
            train.iter().map(|l| (&l.features, l.label)).unzip();
        model.train(&feats, &labels)?;
        let loop_config = LoopConfig {
            iterations: config.iterations,
            strategy: config.strategy,
            retrain: config.retrain,
            random_seed: config.seed,
        };
        let lp = ActiveLoop::new(Pool::new(unlabeled, train)?, model, test, loop_config)?;

        let mut session = Self {
            state: SessionState {
                session_id: session_id.to_string(),
                store_fingerprint: featurizer.store.fingerprint(),
                normalizer,
                test_ids: split.test,
                loop_state: lp.snapshot(),
                pending: None,
                events: Vec::new(),
                config,
            },
            cases: by_id,
            featurizer,
            lp,
        };
        session.state.pending = session.compute_pending()?;
        Ok(session)
    }

    fn compute_pending(&self) -> Result<Option<PendingQuery>, ServiceError> {
        if self.lp.is_done() {
            return Ok(None);
        }
        let (case_id, margin) = self.lp.peek_query()?;
        let pos = self
            .lp
            .pool()
            .position(&case_id)
            .expect("query comes from the pool");
        let probs = self
            .lp
            .model()
            .predict_proba(&[&self.lp.pool().unlabeled()[pos]])?[0];
        Ok(Some(PendingQuery {
            case_id,
            margin,
            probs,
        }))
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn model(&self) -> &Model {
        self.lp.model()
    }

    pub fn query_view(&self) -> QueryResponse {
        match &self.state.pending {
            Some(p) => {
                let record = &self.cases[&p.case_id];
                QueryResponse::Pending {
                    case_id: p.case_id.clone(),
                    events: record.canonical_events().into_iter().cloned().collect(),
                    probs: p.probs,
                    margin: p.margin,
                    iteration: self.lp.iteration(),
                    oracle_label: match self.state.config.oracle {
                        OracleMode::Simulated => record.risk,
                        OracleMode::Interactive => None,
                    },
                }
            }
            None => QueryResponse::Done {
                iteration: self.lp.iteration(),
                n_labeled: self.lp.pool().labeled().len(),
                test_accuracy: self.lp.records().last().and_then(|r| r.test_accuracy),
            },
        }
    }

    pub fn status_view(&self) -> StatusView {
        let accuracies: Vec<f64> = self
            .lp
            .records()
            .iter()
            .filter_map(|r| r.test_accuracy)
            .collect();
        StatusView {
            session_id: self.state.session_id.clone(),
            iteration: self.lp.iteration(),
            n_labeled: self.lp.pool().labeled().len(),
            n_unlabeled: self.lp.pool().unlabeled().len(),
            done: self.state.pending.is_none(),
            pending_case_id: self.state.pending.as_ref().map(|p| p.case_id.clone()),
            recent_accuracy: accuracies[accuracies.len().saturating_sub(RECENT_ACCURACY)..]
                .to_vec(),
            config: self.state.config.clone(),
        }
    }

    /// Top-`k` named features for every labeled case under the current model.
    pub fn importance(
        &self,
        k: usize,
        options: ImportanceOptions,
    ) -> Result<Vec<CaseReport>, ServiceError> {
        let cases: Vec<CaseRecord> = self
            .lp
            .pool()
            .labeled()
            .iter()
            .map(|l| self.cases[&l.features.case_id].clone())
            .collect();
        Ok(cohort_feature_report(
            self.lp.model(),
            &self.featurizer,
            &cases,
            k,
            options,
        )?)
    }

    /// Validates and applies one label on a copy of the session. A repeat of
    /// an already applied `(case_id, risk)` is answered from the event log.
    pub fn submit(&self, case_id: &str, risk: Option<i64>) -> Result<Submission, ServiceError> {
        let risk = match risk {
            Some(r) => u8::try_from(r)
                .ok()
                .filter(|r| *r <= 1)
                .ok_or_else(|| ServiceError::Validation(format!("risk must be 0 or 1, got {r}")))?,
            None if self.state.config.oracle == OracleMode::Simulated => self
                .cases
                .get(case_id)
                .and_then(|c| c.risk)
                .ok_or_else(|| ServiceError::Validation(format!("no held label for {case_id}")))?,
            None => return Err(ServiceError::Validation("risk is required".into())),
        };
        if let Some(event) = self.state.events.iter().find(|e| e.ack.case_id == case_id) {
            return if event.ack.risk == risk {
                Ok(Submission::Replayed(event.ack.clone()))
            } else {
                Err(ServiceError::Stale(format!(
                    "{case_id} was already labeled {}",
                    event.ack.risk
                )))
            };
        }
        match &self.state.pending {
            Some(p) if p.case_id == case_id => {}
            Some(p) => {
                return Err(ServiceError::Stale(format!(
                    "pending query is {}, not {case_id}",
                    p.case_id
                )))
            }
            None => return Err(ServiceError::Stale("session is done".into())),
        }

        let mut next = self.clone();
        let record = next.lp.submit(case_id, risk)?.clone();
        let ack = Ack {
            case_id: case_id.to_string(),
            risk,
            iteration: record.t,
            n_labeled: record.n_labeled,
            n_unlabeled: next.lp.pool().unlabeled().len(),
            test_accuracy: record.test_accuracy,
        };
        next.state.events.push(LabelEvent {
            received_unix_ms: unix_ms(),
            ack: ack.clone(),
        });
        next.state.loop_state = next.lp.snapshot();
        next.state.pending = next.compute_pending()?;
        Ok(Submission::Applied(Box::new(next), ack))
    }

    /// Atomically replaces the session's snapshot file.
    pub fn persist(&self, dir: &Path) -> Result<(), ServiceError> {
        let json =
            serde_json::to_vec(&self.state).map_err(|e| ServiceError::Storage(e.to_string()))?;
        let tmp = dir.join(TEMP_FILE);
        {
            let mut f = File::create(&tmp)?;
            f.write_all(MAGIC)?;
            f.write_all(&(json.len() as u64).to_le_bytes())?;
            f.write_all(&json)?;
            write_checkpoint(self.lp.model(), &mut f)
                .map_err(|e| ServiceError::Storage(e.to_string()))?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, dir.join(SNAPSHOT_FILE))?;
        File::open(dir)?.sync_all()?;
        Ok(())
    }

    /// Writes the case file copy; done once, before the first snapshot.
    pub fn write_cases(&self, dir: &Path) -> Result<(), ServiceError> {
        let mut records: Vec<CaseRecord> = self.cases.values().cloned().collect();
        records.sort_by(|a, b| a.id.cmp(&b.id));
        let tmp = dir.join("cases.tmp");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(serialize_cases(&records).as_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(tmp, dir.join(CASES_FILE))?;
        Ok(())
    }

    /// Rebuilds a session from its directory alone.
    pub fn load(dir: &Path) -> Result<Self, ServiceError> {
        let storage = |m: String| ServiceError::Storage(format!("{}: {m}", dir.display()));
        let mut f = File::open(dir.join(SNAPSHOT_FILE))?;
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(storage("not a session snapshot".into()));
        }
        let mut len = [0u8; 8];
        f.read_exact(&mut len)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        f.read_exact(&mut json)?;
        let state: SessionState =
            serde_json::from_slice(&json).map_err(|e| storage(e.to_string()))?;
        let model = read_checkpoint(f).map_err(|e| storage(e.to_string()))?;

        let cases = parse_case_file(&std::fs::read(dir.join(CASES_FILE))?)
            .map_err(|e| storage(e.to_string()))?;
        let store = state.config.load_store()?;
        if store.fingerprint() != state.store_fingerprint {
            return Err(storage(
                "embedding store changed since the session was created".into(),
            ));
        }
        let featurizer = Featurizer::new(store, state.config.projection_seed, state.normalizer);
        let by_id: HashMap<String, CaseRecord> =
            cases.into_iter().map(|c| (c.id.clone(), c)).collect();
        let features = by_id
            .iter()
            .map(|(id, c)| Ok((id.clone(), featurizer.featurize(c)?)))
            .collect::<Result<HashMap<_, _>, ServiceError>>()?;
        let test = state
            .test_ids
            .iter()
            .map(|id| {
                let record = by_id
                    .get(id)
                    .ok_or_else(|| storage(format!("missing test case {id}")))?;
                labeled_case(&featurizer, record, "test")
            })
            .collect::<Result<Vec<_>, _>>()?;
        let lp = ActiveLoop::resume(&state.loop_state, model, &features, test)?;
        Ok(Self {
            state,
            cases: by_id,
            featurizer,
            lp,
        })
    }
}
