use std::collections::HashMap;

use approx::assert_relative_eq;
use langadapt_core::metrics::bootstrap::resample_metric;
use langadapt_core::metrics::{bleu, bootstrap_stderr, chrf, normalize_ppl, Metric, PerplexityRecord, SentencePair};
use proptest::prelude::*;
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

const WORDS: [&str; 14] = ["sa", "domo", "est", "manna", "su", "cane", "curret", "in", "bidda", "cun", "issu", ".", ",", "?"];

fn tokens(s: &str) -> Vec<String> {
    let mut spaced = String::new();
    for c in s.chars() {
        if c.is_ascii_punctuation() {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
    }
    spaced.split_whitespace().map(str::to_string).collect()
}

fn grams(toks: &[String], n: usize) -> HashMap<Vec<String>, usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w.to_vec()).or_default() += 1;
        }
    }
    m
}

/// Corpus BLEU recomputed from the raw pairs of one resample.
fn oracle_bleu(pairs: &[&SentencePair]) -> f64 {
    let (mut matches, mut totals) = ([0usize; 4], [0usize; 4]);
    let (mut hyp_len, mut ref_len) = (0, 0);
    for p in pairs {
        let (h, r) = (tokens(&p.hypothesis), tokens(&p.reference));
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let (hg, rg) = (grams(&h, n), grams(&r, n));
            totals[n - 1] += hg.values().sum::<usize>();
            matches[n - 1] += hg.iter().map(|(g, c)| (*c).min(*rg.get(g).unwrap_or(&0))).sum::<usize>();
        }
    }
    if hyp_len == 0 {
        return 0.0;
    }
    let mut logs = Vec::new();
    for n in 0..4 {
        if totals[n] == 0 {
            continue;
        }
        if matches[n] == 0 {
            return 0.0;
        }
        logs.push((matches[n] as f64 / totals[n] as f64).ln());
    }
    let bp = if hyp_len < ref_len { (1.0 - ref_len as f64 / hyp_len as f64).exp() } else { 1.0 };
    100.0 * bp * (logs.iter().sum::<f64>() / logs.len() as f64).exp()
}

fn index(rng: &mut Xoshiro256StarStar, n: usize) -> usize {
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

fn corpus(n: usize, seed: u64) -> Vec<SentencePair> {
    let mut g = Xoshiro256StarStar::seed_from_u64(seed);
    let mut sentence = |len: usize| (0..len).map(|_| WORDS[index(&mut g, WORDS.len())]).collect::<Vec<_>>().join(" ");
    (0..n)
        .map(|i| {
            let reference = sentence(6 + i % 9);
            let hypothesis = if i % 3 == 0 { reference.clone() } else { sentence(5 + i % 7) };
            SentencePair::new(hypothesis, reference)
        })
        .collect()
}

fn sd(xs: &[f64]) -> f64 {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

#[test]
fn bootstrap_matches_independent_resampler() {
    let pairs = corpus(20, 17);
    let (seed, n) = (42, 1000);
    let mut stream = Xoshiro256StarStar::seed_from_u64(seed);
    let mut expected = Vec::with_capacity(n);
    for _ in 0..n {
        let mut g = stream.clone();
        let sample: Vec<&SentencePair> = (0..pairs.len()).map(|_| &pairs[index(&mut g, pairs.len())]).collect();
        expected.push(oracle_bleu(&sample));
        stream.jump();
    }
    let got = resample_metric(&pairs, Metric::Bleu, n, seed).unwrap();
    assert_eq!(got.len(), n);
    for (g, e) in got.iter().zip(&expected) {
        assert_relative_eq!(*g, *e, max_relative = 1e-9, epsilon = 1e-12);
    }
    let score = bootstrap_stderr(&pairs, Metric::Bleu, n, seed).unwrap();
    let oracle_sd = sd(&expected);
    assert!(oracle_sd > 0.0);
    assert!((score.stderr - oracle_sd).abs() <= 0.1 * oracle_sd);
    let all: Vec<&SentencePair> = pairs.iter().collect();
    assert_relative_eq!(score.value, oracle_bleu(&all), max_relative = 1e-12);
}

#[test]
fn bootstrap_seed_changes_resamples_not_point_estimate() {
    let pairs = corpus(15, 3);
    let a = bootstrap_stderr(&pairs, Metric::Chrf, 200, 1).unwrap();
    let b = bootstrap_stderr(&pairs, Metric::Chrf, 200, 2).unwrap();
    assert_eq!(a.value, b.value);
    assert_ne!(a.stderr, b.stderr);
    assert_eq!(a, bootstrap_stderr(&pairs, Metric::Chrf, 200, 1).unwrap());
}

#[test]
fn perplexity_examples() {
    assert_relative_eq!(normalize_ppl(1.54f64, 3.0).unwrap(), 3.652264, max_relative = 1e-12);
    let r = PerplexityRecord::from_totals(1000, 250.0f64, 2.0).unwrap();
    assert_relative_eq!(r.ppl_token, 0.25f64.exp(), max_relative = 1e-15);
    assert_relative_eq!(r.ppl_info, 0.5f64.exp(), max_relative = 1e-12);
    let r32 = PerplexityRecord::from_totals(1000, 250.0f32, 2.0).unwrap();
    assert_relative_eq!(r32.ppl_info as f64, r.ppl_info, max_relative = 1e-6);
}

fn text() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS.to_vec()), 0..12).prop_map(|w| w.join(" "))
}

fn any_text() -> impl Strategy<Value = String> {
    "\\PC{0,40}"
}

proptest! {
    #[test]
    fn scores_stay_in_range(hyps in prop::collection::vec(any_text(), 1..6), refs in prop::collection::vec(any_text(), 1..6)) {
        let pairs: Vec<SentencePair> = hyps
            .iter()
            .zip(&refs)
            .filter(|(_, r)| !r.trim().is_empty())
            .map(|(h, r)| SentencePair::new(h.clone(), r.clone()))
            .collect();
        prop_assume!(!pairs.is_empty());
        for s in [bleu(&pairs).unwrap(), chrf(&pairs).unwrap()] {
            prop_assert!((0.0..=100.0).contains(&s), "{}", s);
        }
    }

    #[test]
    fn identical_text_scores_hundred(refs in prop::collection::vec(text(), 1..6)) {
        let pairs: Vec<SentencePair> = refs
            .iter()
            .filter(|r| !r.trim().is_empty())
            .map(|r| SentencePair::new(r.clone(), r.clone()))
            .collect();
        prop_assume!(!pairs.is_empty());
        prop_assert!((chrf(&pairs).unwrap() - 100.0).abs() < 1e-9);
        prop_assert!((bleu(&pairs).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn bleu_matches_oracle(hyps in prop::collection::vec(text(), 1..6), refs in prop::collection::vec(text(), 1..6)) {
        let pairs: Vec<SentencePair> = hyps
            .iter()
            .zip(&refs)
            .filter(|(_, r)| !r.trim().is_empty())
            .map(|(h, r)| SentencePair::new(h.clone(), r.clone()))
            .collect();
        prop_assume!(!pairs.is_empty());
        let all: Vec<&SentencePair> = pairs.iter().collect();
        let (got, want) = (bleu(&pairs).unwrap(), oracle_bleu(&all));
        prop_assert!((got - want).abs() <= 1e-9 * want.max(1.0), "{} vs {}", got, want);
    }
}
