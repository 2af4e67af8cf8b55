//! Corpus chrF: character n-grams of orders 1..6 over whitespace-stripped
//! text, β = 2, no word n-grams.

use rayon::prelude::*;

use super::{clipped_matches, validate_pairs, MetricError, SentencePair};

pub const MAX_ORDER: usize = 6;
pub const BETA: f64 = 2.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChrfStats {
    pub matches: [u64; MAX_ORDER],
    pub hyp: [u64; MAX_ORDER],
    pub reference: [u64; MAX_ORDER],
}

fn stripped(text: &str) -> Vec<char> {
    text.chars().filter(|c| !c.is_whitespace()).collect()
}

impl ChrfStats {
    pub fn from_pair(pair: &SentencePair) -> Self {
        let h = stripped(&pair.hypothesis);
        let r = stripped(&pair.reference);
        let mut s = ChrfStats::default();
        for n in 1..=MAX_ORDER {
            s.hyp[n - 1] = h.len().saturating_sub(n - 1) as u64;
            s.reference[n - 1] = r.len().saturating_sub(n - 1) as u64;
            s.matches[n - 1] = clipped_matches(&h, &r, n) as u64;
        }
        s
    }

    pub fn add(&mut self, other: &Self) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.hyp[n] += other.hyp[n];
            self.reference[n] += other.reference[n];
        }
    }

    pub fn score(&self) -> f64 {
        let mut p = 0.0;
        let mut r = 0.0;
        let mut orders = 0usize;
        for n in 0..MAX_ORDER {
            if self.reference[n] == 0 {
                continue;
            }
            orders += 1;
            if self.hyp[n] > 0 {
                p += self.matches[n] as f64 / self.hyp[n] as f64;
            }
            r += self.matches[n] as f64 / self.reference[n] as f64;
        }
        if orders == 0 {
            return 0.0;
        }
        let p = p / orders as f64;
        let r = r / orders as f64;
        if p + r == 0.0 {
            return 0.0;
        }
        let b2 = BETA * BETA;
        100.0 * (1.0 + b2) * p * r / (b2 * p + r)
    }
}

pub fn pair_stats(pairs: &[SentencePair]) -> Vec<ChrfStats> {
    pairs.par_iter().map(ChrfStats::from_pair).collect()
}

pub fn chrf(pairs: &[SentencePair]) -> Result<f64, MetricError> {
    validate_pairs(pairs)?;
    let mut total = ChrfStats::default();
    for s in pair_stats(pairs) {
        total.add(&s);
    }
    Ok(total.score())
}
