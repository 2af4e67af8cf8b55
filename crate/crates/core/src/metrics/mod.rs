//! Translation metrics, bootstrap standard errors, perplexity and results
//! tables.

pub mod bleu;
pub mod bootstrap;
pub mod chrf;
pub mod perplexity;
pub mod report;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use bleu::{bleu, bleu_tokenize, BleuStats};
pub use bootstrap::{bootstrap_stderr, MetricScore, DEFAULT_RESAMPLES};
pub use chrf::{chrf, ChrfStats};
pub use perplexity::{normalize_ppl, ppl_from_nll, PerplexityError, PerplexityRecord};
pub use report::{render_report, CellValue, ReportFormat, ReportLayout, ReportRow, ReportStyle, ScoreTable};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub hypothesis: String,
    pub reference: String,
    #[serde(default)]
    pub direction: String,
}

impl SentencePair {
    pub fn new(hypothesis: impl Into<String>, reference: impl Into<String>) -> Self {
        Self { hypothesis: hypothesis.into(), reference: reference.into(), direction: String::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Bleu,
    Chrf,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Bleu => "bleu",
            Metric::Chrf => "chrf",
        }
    }

    pub fn score(self, pairs: &[SentencePair]) -> Result<f64, MetricError> {
        match self {
            Metric::Bleu => bleu(pairs),
            Metric::Chrf => chrf(pairs),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bleu" => Ok(Metric::Bleu),
            "chrf" => Ok(Metric::Chrf),
            other => Err(MetricError::UnknownMetric(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("no sentence pairs")]
    NoPairs,
    #[error("pair {0}: reference is empty")]
    EmptyReference(usize),
    #[error("at least 2 resamples required, got {0}")]
    TooFewResamples(usize),
    #[error("report needs at least one direction and one model")]
    EmptyTable,
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
}

/// Checks the shared preconditions of the corpus metrics.
pub(crate) fn validate_pairs(pairs: &[SentencePair]) -> Result<(), MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::NoPairs);
    }
    match pairs.iter().position(|p| p.reference.trim().is_empty()) {
        Some(i) => Err(MetricError::EmptyReference(i)),
        None => Ok(()),
    }
}

/// Counts of every n-gram of `items`.
pub(crate) fn ngram_counts<T: Eq + std::hash::Hash>(items: &[T], n: usize) -> std::collections::HashMap<&[T], usize> {
    let mut out = std::collections::HashMap::new();
    if n > 0 && items.len() >= n {
        for w in items.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Clipped matches of hypothesis n-grams against reference n-grams.
pub(crate) fn clipped_matches<T: Eq + std::hash::Hash>(hyp: &[T], reference: &[T], n: usize) -> usize {
    let r = ngram_counts(reference, n);
    ngram_counts(hyp, n).iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum()
}
