//! Corpus BLEU over orders 1..4 with clipped precisions and brevity penalty.
//!
//! Tokenization isolates every Unicode punctuation codepoint (general
//! category P*) as its own token and then splits on Unicode whitespace.
//! Matching is case-sensitive. There is no smoothing: a pooled precision of
//! zero yields a score of zero. Orders for which the pooled hypothesis has no
//! n-grams at all (every hypothesis shorter than `n`) are left out of the
//! geometric mean rather than counted as zero.

use rayon::prelude::*;
use unicode_general_category::{get_general_category, GeneralCategory};

use super::{clipped_matches, validate_pairs, MetricError, SentencePair};

pub const MAX_ORDER: usize = 4;

fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

pub fn bleu_tokenize(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() + 8);
    for c in text.chars() {
        if is_punctuation(c) {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
    }
    spaced.split_whitespace().map(str::to_string).collect()
}

/// Sufficient statistics of one pair or a pooled corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn from_pair(pair: &SentencePair) -> Self {
        let hyp = bleu_tokenize(&pair.hypothesis);
        let reference = bleu_tokenize(&pair.reference);
        let mut s = BleuStats { hyp_len: hyp.len() as u64, ref_len: reference.len() as u64, ..Default::default() };
        for n in 1..=MAX_ORDER {
            s.totals[n - 1] = hyp.len().saturating_sub(n - 1) as u64;
            s.matches[n - 1] = clipped_matches(&hyp, &reference, n) as u64;
        }
        s
    }

    pub fn add(&mut self, other: &Self) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        let mut orders = 0;
        for n in 0..MAX_ORDER {
            if self.totals[n] == 0 {
                continue;
            }
            if self.matches[n] == 0 {
                return 0.0;
            }
            log_sum += (self.matches[n] as f64 / self.totals[n] as f64).ln();
            orders += 1;
        }
        let bp = if self.hyp_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        } else {
            1.0
        };
        100.0 * bp * (log_sum / orders as f64).exp()
    }
}

pub fn pair_stats(pairs: &[SentencePair]) -> Vec<BleuStats> {
    pairs.par_iter().map(BleuStats::from_pair).collect()
}

pub fn bleu(pairs: &[SentencePair]) -> Result<f64, MetricError> {
    validate_pairs(pairs)?;
    let mut total = BleuStats::default();
    for s in pair_stats(pairs) {
        total.add(&s);
    }
    Ok(total.score())
}
