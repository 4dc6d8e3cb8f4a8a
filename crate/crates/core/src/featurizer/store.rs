//! Precomputed sentence embeddings keyed by event text.
//!
//! File format: a `dim <n>` header line, then one entry per line: the event
//! text with `\\`, `\t`, `\n` and `\r` escaped, a tab, and `n`
//! space-separated decimal floats.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::FeatureError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FallbackPolicy {
    /// Unseen text is an error.
    Error,
    /// Unseen text gets a deterministic pseudorandom unit vector seeded by its hash.
    Hash,
}

#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
    fallback: FallbackPolicy,
}

/// FNV-1a, 64-bit. Stable across platforms and toolchains.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn hash_embedding(text: &str, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(text.as_bytes()));
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

impl EmbeddingStore {
    /// An empty store that embeds everything through the hash fallback.
    pub fn hashed(dim: usize) -> Self {
        Self {
            dim,
            entries: HashMap::new(),
            fallback: FallbackPolicy::Hash,
        }
    }

    pub fn from_entries(
        dim: usize,
        entries: HashMap<String, Vec<f64>>,
        fallback: FallbackPolicy,
    ) -> Result<Self, FeatureError> {
        for (text, v) in &entries {
            if v.len() != dim {
                return Err(FeatureError::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(FeatureError::NonFiniteEmbedding(text.clone()));
            }
        }
        Ok(Self {
            dim,
            entries,
            fallback,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn fallback(&self) -> FallbackPolicy {
        self.fallback
    }

    pub fn with_fallback(mut self, fallback: FallbackPolicy) -> Self {
        self.fallback = fallback;
        self
    }

    pub fn get(&self, text: &str) -> Option<&[f64]> {
        self.entries.get(text).map(Vec::as_slice)
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>, FeatureError> {
        match (self.entries.get(text), self.fallback) {
            (Some(v), _) => Ok(v.clone()),
            (None, FallbackPolicy::Hash) => Ok(hash_embedding(text, self.dim)),
            (None, FallbackPolicy::Error) => Err(FeatureError::UnknownEvent(text.to_string())),
        }
    }

    /// Order-independent digest of the contents and policy.
    pub fn fingerprint(&self) -> u64 {
        let mut keys: Vec<&String> = self.entries.keys().collect();
        keys.sort();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&(self.dim as u64).to_le_bytes());
        bytes.push(matches!(self.fallback, FallbackPolicy::Hash) as u8);
        for k in keys {
            bytes.extend_from_slice(k.as_bytes());
            bytes.push(0);
            for x in &self.entries[k] {
                bytes.extend_from_slice(&x.to_bits().to_le_bytes());
            }
        }
        stable_hash(&bytes)
    }

    pub fn parse(text: &str, fallback: FallbackPolicy) -> Result<Self, FeatureError> {
        let bad = |line: usize, message: String| FeatureError::EmbeddingFile { line, message };
        let mut lines = text.lines().enumerate();
        let dim = match lines.next() {
            Some((_, header)) => header
                .strip_prefix("dim ")
                .and_then(|d| d.trim().parse::<usize>().ok())
                .filter(|&d| d > 0)
                .ok_or_else(|| bad(1, format!("expected `dim <n>` header, found `{header}`")))?,
            None => return Err(bad(1, "missing `dim <n>` header".into())),
        };

        let mut entries = HashMap::new();
        for (i, line) in lines {
            let line_no = i + 1;
            if line.is_empty() {
                continue;
            }
            let (key, floats) = line
                .split_once('\t')
                .ok_or_else(|| bad(line_no, "missing tab separator".into()))?;
            let values = floats
                .split(' ')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad(line_no, e.to_string()))?;
            if values.len() != dim {
                return Err(bad(
                    line_no,
                    format!("expected {dim} values, found {}", values.len()),
                ));
            }
            if values.iter().any(|x| !x.is_finite()) {
                return Err(bad(line_no, "non-finite value".into()));
            }
            let key = unescape(key).map_err(|m| bad(line_no, m))?;
            entries.insert(key, values);
        }
        Ok(Self {
            dim,
            entries,
            fallback,
        })
    }

    pub fn load(path: impl AsRef<Path>, fallback: FallbackPolicy) -> Result<Self, FeatureError> {
        Self::parse(&std::fs::read_to_string(path)?, fallback)
    }

    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "dim {}", self.dim)?;
        let mut keys: Vec<&String> = self.entries.keys().collect();
        keys.sort();
        for k in keys {
            let values: Vec<String> = self.entries[k].iter().map(|x| x.to_string()).collect();
            writeln!(out, "{}\t{}", escape(k), values.join(" "))?;
        }
        Ok(())
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => {
                return Err(format!(
                    "bad escape sequence `\\{}`",
                    other.map(String::from).unwrap_or_default()
                ))
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_returns_stored_vector() {
        let v: Vec<f64> = (0..4).map(f64::from).collect();
        let store = EmbeddingStore::from_entries(
            4,
            HashMap::from([("fever".to_string(), v.clone())]),
            FallbackPolicy::Error,
        )
        .unwrap();
        assert_eq!(store.embed("fever").unwrap(), v);
        assert!(matches!(store.embed("cough"), Err(FeatureError::UnknownEvent(t)) if t == "cough"));
    }

    #[test]
    fn hash_fallback_is_deterministic_unit_norm() {
        let store = EmbeddingStore::hashed(768);
        let a = store.embed("never seen before").unwrap();
        let b = store.embed("never seen before").unwrap();
        assert_eq!(a, b);
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        assert_ne!(a, store.embed("never seen before!").unwrap());
    }

    #[test]
    fn file_round_trip_with_escapes() {
        let entries = HashMap::from([
            ("tab\there".to_string(), vec![0.1, -2.5, 3.0]),
            ("back\\slash\nnewline".to_string(), vec![1e-300, 0.0, -0.0]),
        ]);
        let store = EmbeddingStore::from_entries(3, entries, FallbackPolicy::Error).unwrap();
        let mut buf = Vec::new();
        store.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let back = EmbeddingStore::parse(&text, FallbackPolicy::Error).unwrap();
        assert_eq!(back.entries, store.entries);
        assert_eq!(back.fingerprint(), store.fingerprint());
    }

    #[test]
    fn loader_rejects_wrong_arity_with_line_number() {
        let text = "dim 3\nok\t1 2 3\nbad\t1 2\n";
        match EmbeddingStore::parse(text, FallbackPolicy::Error) {
            Err(FeatureError::EmbeddingFile { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("expected 3"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(EmbeddingStore::parse("768\n", FallbackPolicy::Error).is_err());
        assert!(matches!(
            EmbeddingStore::parse("dim 2\nnotab 1 2\n", FallbackPolicy::Error),
            Err(FeatureError::EmbeddingFile { line: 2, .. })
        ));
    }
}
