//! Bootstrap standard errors for corpus metrics.
//!
//! Resample `i` draws its indices from the `i`-th jump stream of the seeded
//! generator, so the scores do not depend on how resamples are scheduled
//! across threads. Each resample re-pools per-pair sufficient statistics
//! rather than re-tokenizing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bleu::{self, BleuStats};
use super::chrf::{self, ChrfStats};
use super::{validate_pairs, Metric, MetricError, SentencePair};
use crate::rng::Xoshiro256StarStar;

pub const DEFAULT_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub metric: Metric,
    pub value: f64,
    /// Population standard deviation of the resample scores.
    pub stderr: f64,
    pub n_resamples: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

trait Pooled: Copy + Default + Send + Sync {
    fn add(&mut self, other: &Self);
    fn score(&self) -> f64;
}

impl Pooled for BleuStats {
    fn add(&mut self, other: &Self) {
        BleuStats::add(self, other)
    }
    fn score(&self) -> f64 {
        BleuStats::score(self)
    }
}

impl Pooled for ChrfStats {
    fn add(&mut self, other: &Self) {
        ChrfStats::add(self, other)
    }
    fn score(&self) -> f64 {
        ChrfStats::score(self)
    }
}

fn pooled<S: Pooled>(stats: &[S]) -> S {
    let mut acc = S::default();
    stats.iter().for_each(|s| acc.add(s));
    acc
}

fn resample_scores<S: Pooled>(stats: &[S], n_resamples: usize, seed: u64) -> Vec<f64> {
    let n = stats.len();
    Xoshiro256StarStar::streams(seed, n_resamples)
        .into_par_iter()
        .map(|mut g| {
            let mut acc = S::default();
            for _ in 0..n {
                acc.add(&stats[g.next_index(n)]);
            }
            acc.score()
        })
        .collect()
}

fn population_sd(xs: &[f64]) -> f64 {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Scores of every resample, in resample order.
pub fn resample_metric(pairs: &[SentencePair], metric: Metric, n_resamples: usize, seed: u64) -> Result<Vec<f64>, MetricError> {
    validate_pairs(pairs)?;
    Ok(match metric {
        Metric::Bleu => resample_scores(&bleu::pair_stats(pairs), n_resamples, seed),
        Metric::Chrf => resample_scores(&chrf::pair_stats(pairs), n_resamples, seed),
    })
}

pub fn bootstrap_stderr(pairs: &[SentencePair], metric: Metric, n_resamples: usize, seed: u64) -> Result<MetricScore, MetricError> {
    if n_resamples < 2 {
        return Err(MetricError::TooFewResamples(n_resamples));
    }
    validate_pairs(pairs)?;
    let (value, scores) = match metric {
        Metric::Bleu => {
            let stats = bleu::pair_stats(pairs);
            (pooled(&stats).score(), (pairs.len() >= 2).then(|| resample_scores(&stats, n_resamples, seed)))
        }
        Metric::Chrf => {
            let stats = chrf::pair_stats(pairs);
            (pooled(&stats).score(), (pairs.len() >= 2).then(|| resample_scores(&stats, n_resamples, seed)))
        }
    };
    let (stderr, warning) = match scores {
        Some(s) => (population_sd(&s), None),
        None => (0.0, Some(format!("{} pair(s): standard error not estimable", pairs.len()))),
    };
    Ok(MetricScore { metric, value, stderr, n_resamples, seed, warning })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs() -> Vec<SentencePair> {
        [
            ("su sole est caente", "su sole est caente oe"),
            ("deo so andende a domo", "deo so andende a domo mia"),
            ("sa die est longa", "sa dii est longa"),
            ("unu pitzinnu", "unu pitzinnu mannu"),
        ]
        .into_iter()
        .map(|(h, r)| SentencePair::new(h, r))
        .collect()
    }

    #[test]
    fn identical_pairs_have_zero_stderr() {
        let p: Vec<_> = (0..5).map(|i| SentencePair::new(format!("frase {i}"), format!("frase {i}"))).collect();
        for m in [Metric::Bleu, Metric::Chrf] {
            let s = bootstrap_stderr(&p, m, 200, 42).unwrap();
            assert_eq!((s.value, s.stderr), (100.0, 0.0));
        }
    }

    #[test]
    fn point_estimate_ignores_resampling() {
        let p = pairs();
        let a = bootstrap_stderr(&p, Metric::Bleu, 50, 1).unwrap();
        let b = bootstrap_stderr(&p, Metric::Bleu, 300, 9).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.value, bleu::bleu(&p).unwrap());
        assert!(a.stderr > 0.0);
    }

    #[test]
    fn single_pair_warns() {
        let s = bootstrap_stderr(&pairs()[..1], Metric::Chrf, 100, 42).unwrap();
        assert_eq!(s.stderr, 0.0);
        assert!(s.warning.is_some());
    }

    #[test]
    fn resample_count_checked() {
        assert_eq!(bootstrap_stderr(&pairs(), Metric::Bleu, 1, 42), Err(MetricError::TooFewResamples(1)));
    }

    #[test]
    fn thread_count_does_not_matter() {
        let p = pairs();
        let run = |t| {
            rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap().install(|| bootstrap_stderr(&p, Metric::Chrf, 500, 42).unwrap())
        };
        assert_eq!(run(1), run(4));
    }
}
