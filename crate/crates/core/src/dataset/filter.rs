//! Corpus filter selecting long-COVID case reports from free text.

const REPORT_MARKERS: [&str; 2] = ["case report", "case presentation"];
const AGE_MARKERS: [&str; 2] = ["year-old", "year old"];
const CONDITION_MARKERS: [&str; 2] = ["long covid", "long-covid"];

/// Lowercases and collapses every whitespace run to a single space.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// True iff the text mentions a case report, a patient age and long COVID.
pub fn filter_case_report_text(text: &str) -> bool {
    let text = normalize_text(text);
    let any = |markers: &[&str]| markers.iter().any(|m| text.contains(m));
    any(&REPORT_MARKERS) && any(&AGE_MARKERS) && any(&CONDITION_MARKERS)
}
