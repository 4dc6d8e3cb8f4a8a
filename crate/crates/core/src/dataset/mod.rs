//! Clinical event-time case records.
//!
//! A case is an identifier, a list of `(event, hours since admission)` pairs
//! and an optional binary risk label. Cases are exchanged as one JSON object
//! per line:
//!
//! ```text
//! {"id":"PMC10077184","risk":0,"events":[{"event":"depression","t_hours":-672.0}, ...]}
//! ```
//!
//! `risk` is `0` (Low), `1` (High) or `null` (unlabeled). Blank lines are
//! ignored. Events are kept in file order here; [`CaseRecord::canonical_events`]
//! gives the time-sorted view every downstream stage uses.

mod filter;
mod synthetic;

pub use filter::{filter_case_report_text, normalize_text};
pub use synthetic::{generate_synthetic_cohort, synthetic_embedding_store, CohortSpec};

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: empty events")]
    EmptyEvents { line: usize },
    #[error("line {line}: duplicate case id `{id}`")]
    DuplicateId { id: String, line: usize },
    #[error("cohort size must be at least 1")]
    EmptyCohort,
    #[error("invalid cohort spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Binary risk level: Low is quality-of-life burden, High is hospitalization,
/// ICU stay or death.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RiskLevel {
    Low,
    High,
}

impl RiskLevel {
    pub fn as_label(self) -> u8 {
        match self {
            RiskLevel::Low => 0,
            RiskLevel::High => 1,
        }
    }
}

impl TryFrom<u8> for RiskLevel {
    type Error = u8;

    fn try_from(value: u8) -> Result<Self, u8> {
        match value {
            0 => Ok(RiskLevel::Low),
            1 => Ok(RiskLevel::High),
            other => Err(other),
        }
    }
}

impl fmt::Display for RiskLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RiskLevel::Low => f.write_str("Low"),
            RiskLevel::High => f.write_str("High"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTime {
    pub event: String,
    /// Hours relative to admission; negative values precede admission.
    pub t_hours: f64,
}

impl EventTime {
    pub fn new(event: impl Into<String>, t_hours: f64) -> Self {
        Self {
            event: event.into(),
            t_hours,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub id: String,
    /// Raw label as read. Only 0 and 1 pass validation.
    pub risk: Option<u8>,
    pub events: Vec<EventTime>,
}

impl CaseRecord {
    pub fn new(id: impl Into<String>, risk: Option<u8>, events: Vec<EventTime>) -> Self {
        Self {
            id: id.into(),
            risk,
            events,
        }
    }

    pub fn risk_level(&self) -> Option<RiskLevel> {
        self.risk.and_then(|r| RiskLevel::try_from(r).ok())
    }

    /// Events sorted by `t_hours` ascending; ties keep file order.
    pub fn canonical_events(&self) -> Vec<&EventTime> {
        let mut events: Vec<&EventTime> = self.events.iter().collect();
        events.sort_by(|a, b| {
            a.t_hours
                .partial_cmp(&b.t_hours)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        events
    }

    /// Canonical events truncated to the earliest `pair_cap`.
    pub fn capped_events(&self, pair_cap: usize) -> Vec<&EventTime> {
        let mut events = self.canonical_events();
        events.truncate(pair_cap);
        events
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("case records always serialize")
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCase {
    id: String,
    risk: Option<u8>,
    events: Vec<EventTime>,
}

/// Parses the line-delimited case format.
pub fn parse_case_file(bytes: &[u8]) -> Result<Vec<CaseRecord>, DatasetError> {
    let text = std::str::from_utf8(bytes).map_err(|e| DatasetError::Parse {
        line: 1 + bytes[..e.valid_up_to()]
            .iter()
            .filter(|&&b| b == b'\n')
            .count(),
        message: format!("invalid UTF-8: {e}"),
    })?;

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawCase = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if raw.events.is_empty() {
            return Err(DatasetError::EmptyEvents { line: line_no });
        }
        if !seen.insert(raw.id.clone()) {
            return Err(DatasetError::DuplicateId {
                id: raw.id,
                line: line_no,
            });
        }
        records.push(CaseRecord {
            id: raw.id,
            risk: raw.risk,
            events: raw.events,
        });
    }
    Ok(records)
}

pub fn read_case_file(path: impl AsRef<std::path::Path>) -> Result<Vec<CaseRecord>, DatasetError> {
    parse_case_file(&std::fs::read(path)?)
}

pub fn serialize_cases(records: &[CaseRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_json_line());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValidationIssue {
    EmptyId,
    EmptyEvents,
    BlankEvent { index: usize },
    NonFiniteTime { index: usize },
    RiskOutOfRange { value: u8 },
    Truncation { events: usize, pair_cap: usize },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::EmptyId => write!(f, "empty id"),
            ValidationIssue::EmptyEvents => write!(f, "empty events"),
            ValidationIssue::BlankEvent { index } => write!(f, "blank event at index {index}"),
            ValidationIssue::NonFiniteTime { index } => {
                write!(f, "non-finite timestamp at index {index}")
            }
            ValidationIssue::RiskOutOfRange { value } => write!(f, "risk out of range: {value}"),
            ValidationIssue::Truncation { events, pair_cap } => {
                write!(f, "truncation: {events} events exceed cap {pair_cap}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub case_id: String,
    pub errors: Vec<ValidationIssue>,
    pub warnings: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_admissible(&self) -> bool {
        self.errors.is_empty()
    }
}

pub fn validate_case(record: &CaseRecord, pair_cap: usize) -> ValidationReport {
    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    if record.id.trim().is_empty() {
        errors.push(ValidationIssue::EmptyId);
    }
    if record.events.is_empty() {
        errors.push(ValidationIssue::EmptyEvents);
    }
    for (index, ev) in record.events.iter().enumerate() {
        if ev.event.trim().is_empty() {
            errors.push(ValidationIssue::BlankEvent { index });
        }
        if !ev.t_hours.is_finite() {
            errors.push(ValidationIssue::NonFiniteTime { index });
        }
    }
    if let Some(value) = record.risk {
        if value > 1 {
            errors.push(ValidationIssue::RiskOutOfRange { value });
        }
    }
    if record.events.len() > pair_cap {
        warnings.push(ValidationIssue::Truncation {
            events: record.events.len(),
            pair_cap,
        });
    }
    ValidationReport {
        case_id: record.id.clone(),
        errors,
        warnings,
    }
}

/// A worked example case (PMC10077184, low risk) used throughout the tests.
pub fn example_case() -> CaseRecord {
    CaseRecord::new(
        "PMC10077184",
        Some(0),
        vec![
            EventTime::new("depression", -672.0),
            EventTime::new("mild cognitive impairment", -672.0),
            EventTime::new("mild depression", -240.0),
            EventTime::new("mild brain fog", -240.0),
            EventTime::new("female", 0.0),
            EventTime::new("TBS sessions", 24.0),
            EventTime::new("BDI score improved", 120.0),
            EventTime::new("3-month follow-up", 744.0),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EXAMPLE_LINE: &str = r#"{"id":"PMC10077184","risk":0,"events":[{"event":"depression","t_hours":-672},{"event":"mild cognitive impairment","t_hours":-672},{"event":"mild depression","t_hours":-240},{"event":"mild brain fog","t_hours":-240},{"event":"female","t_hours":0},{"event":"TBS sessions","t_hours":24},{"event":"BDI score improved","t_hours":120},{"event":"3-month follow-up","t_hours":744}]}"#;

    #[test]
    fn parses_example_line() {
        let cases = parse_case_file(EXAMPLE_LINE.as_bytes()).unwrap();
        assert_eq!(cases.len(), 1);
        assert_eq!(cases[0], example_case());
        assert_eq!(cases[0].events.len(), 8);
        assert_eq!(cases[0].risk_level(), Some(RiskLevel::Low));
    }

    #[test]
    fn empty_file_is_empty_cohort() {
        assert!(parse_case_file(b"").unwrap().is_empty());
        assert!(parse_case_file(b"\n  \n").unwrap().is_empty());
    }

    #[test]
    fn empty_events_is_a_parse_error() {
        let err = parse_case_file(b"{\"id\":\"a\",\"risk\":null,\"events\":[]}").unwrap_err();
        assert!(matches!(err, DatasetError::EmptyEvents { line: 1 }));
        assert!(err.to_string().contains("empty events"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let input = format!("{EXAMPLE_LINE}\n\n{{\"id\": 3}}\n");
        match parse_case_file(input.as_bytes()).unwrap_err() {
            DatasetError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_case_file(
            b"{\"id\":\"a\",\"risk\":-1,\"events\":[{\"event\":\"x\",\"t_hours\":0}]}"
        )
        .is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let input = format!("{EXAMPLE_LINE}\n{EXAMPLE_LINE}\n");
        assert!(matches!(
            parse_case_file(input.as_bytes()).unwrap_err(),
            DatasetError::DuplicateId { line: 2, .. }
        ));
    }

    #[test]
    fn validation_rules() {
        let report = validate_case(&example_case(), 150);
        assert!(report.errors.is_empty() && report.warnings.is_empty());

        let mut bad = example_case();
        bad.risk = Some(2);
        let report = validate_case(&bad, 150);
        assert_eq!(
            report.errors,
            vec![ValidationIssue::RiskOutOfRange { value: 2 }]
        );
        assert!(report.errors[0].to_string().contains("risk out of range"));

        let long = CaseRecord::new(
            "long",
            None,
            (0..151)
                .map(|i| EventTime::new(format!("e{i}"), i as f64))
                .collect(),
        );
        let report = validate_case(&long, 150);
        assert!(report.is_admissible());
        assert_eq!(
            report.warnings,
            vec![ValidationIssue::Truncation {
                events: 151,
                pair_cap: 150
            }]
        );
        assert!(report.warnings[0].to_string().starts_with("truncation"));

        let blank = CaseRecord::new(" ", None, vec![EventTime::new("  ", f64::NAN)]);
        let report = validate_case(&blank, 150);
        assert_eq!(
            report.errors,
            vec![
                ValidationIssue::EmptyId,
                ValidationIssue::BlankEvent { index: 0 },
                ValidationIssue::NonFiniteTime { index: 0 }
            ]
        );
    }

    #[test]
    fn canonical_order_is_stable_on_ties() {
        let rec = CaseRecord::new(
            "c",
            None,
            vec![
                EventTime::new("b", 5.0),
                EventTime::new("a", -1.0),
                EventTime::new("c", 5.0),
                EventTime::new("d", -1.0),
            ],
        );
        let names: Vec<_> = rec
            .canonical_events()
            .iter()
            .map(|e| e.event.as_str())
            .collect();
        assert_eq!(names, ["a", "d", "b", "c"]);
        let capped: Vec<_> = rec
            .capped_events(2)
            .iter()
            .map(|e| e.event.as_str())
            .collect();
        assert_eq!(capped, ["a", "d"]);
    }

    fn arb_record() -> impl Strategy<Value = CaseRecord> {
        (
            "[A-Za-z0-9]{1,12}",
            proptest::option::of(0u8..=1),
            proptest::collection::vec(("[ -~\t\\\\\"é]{1,20}", -1.0e6f64..1.0e6), 1..12),
        )
            .prop_map(|(id, risk, events)| {
                CaseRecord::new(
                    id,
                    risk,
                    events
                        .into_iter()
                        .map(|(e, t)| EventTime::new(e, t))
                        .collect(),
                )
            })
    }

    proptest! {
        #[test]
        fn parse_inverts_serialize(records in proptest::collection::vec(arb_record(), 0..6)) {
            let mut seen = HashSet::new();
            let records: Vec<_> = records.into_iter().filter(|r| seen.insert(r.id.clone())).collect();
            let text = serialize_cases(&records);
            prop_assert_eq!(parse_case_file(text.as_bytes()).unwrap(), records);
        }
    }
}
