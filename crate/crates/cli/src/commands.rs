//! Subcommand bodies. Each reads its inputs, writes its outputs under
//! `out`, and returns a short human-readable summary for stdout.

use std::path::{Path, PathBuf};

use langadapt_core::adapter::{initial_b_grad_norm, scaling_factor, toy_train, Method, ToyTask, ToyTrainConfig, TrainError};
use langadapt_core::corpus::{prepare_corpus, Document, MarkerClassifier, PrepOptions};
use langadapt_core::metrics::{
    bootstrap_stderr, render_report, Metric, PerplexityRecord, ReportRow, ScoreTable, SentencePair,
};
use langadapt_core::sft::{assemble_pool, AssemblyOptions, ChatTemplate, InstructionPair};
use langadapt_core::tokenize::Tokenizer;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::io::{read_jsonl, read_jsonl_numbered, read_text, write_json, write_jsonl, write_text};

fn required<'a>(value: &'a Option<String>, what: &str) -> Result<&'a Path, CliError> {
    value
        .as_deref()
        .map(Path::new)
        .ok_or_else(|| CliError::Validation(format!("missing {what} (pass --{what} or set `{what}` in the config file)")))
}

pub fn load_tokenizer(spec: &str) -> Result<Tokenizer, CliError> {
    if spec == "byte" {
        return Ok(Tokenizer::byte_level());
    }
    let path = Path::new(spec);
    Ok(Tokenizer::from_vocab_json(&read_text(path)?)?)
}

pub fn prep_corpus(cfg: &PipelineConfig, out: &Path) -> Result<String, CliError> {
    let docs: Vec<Document> = read_jsonl(required(&cfg.input, "input")?)?;
    let tokenizer = load_tokenizer(&cfg.tokenizer)?;
    let opts = PrepOptions { window: cfg.window, overlap: cfg.overlap, dedup: cfg.dedup, seed: cfg.seed };
    let prepared = prepare_corpus(docs, &MarkerClassifier::default(), &tokenizer, &opts)?;
    write_jsonl(&out.join("chunks.jsonl"), &prepared.chunks)?;
    write_jsonl(&out.join("drop_log.jsonl"), &prepared.drop_log)?;
    write_jsonl(&out.join("warnings.jsonl"), &prepared.warnings)?;
    write_json(&out.join("manifest.json"), &prepared.manifest)?;
    Ok(format!(
        "kept {} documents, dropped {}, wrote {} chunks",
        prepared.documents.len(),
        prepared.drop_log.len(),
        prepared.chunks.len()
    ))
}

pub fn assemble_sft(cfg: &PipelineConfig, out: &Path) -> Result<String, CliError> {
    let raw: Vec<InstructionPair> = read_jsonl(required(&cfg.input, "input")?)?;
    let tokenizer = load_tokenizer(&cfg.tokenizer)?;
    let opts = AssemblyOptions {
        upsample: cfg.upsample.clone(),
        prompts: cfg.prompt_plan(),
        seed: cfg.seed,
        template: ChatTemplate { marker_mode: cfg.marker_mode, ..ChatTemplate::default() },
    };
    let pool = assemble_pool(raw, &tokenizer, &opts)?;
    write_jsonl(&out.join("pairs.jsonl"), &pool.pairs)?;
    write_jsonl(&out.join("examples.jsonl"), &pool.serialized)?;
    write_jsonl(&out.join("drop_log.jsonl"), &pool.drop_log)?;
    write_json(&out.join("manifest.json"), &pool.manifest)?;
    let m = &pool.manifest;
    Ok(format!(
        "raw {} pairs, deduped {}, upsampled additions {}, final {}",
        m.raw_pairs, m.deduped_pairs, m.upsampled_additions, m.final_pairs
    ))
}

fn load_pairs(cfg: &PipelineConfig) -> Result<Vec<SentencePair>, CliError> {
    let mut pairs = match (&cfg.input, &cfg.hyp, &cfg.reference) {
        (Some(p), None, None) => read_jsonl::<SentencePair>(Path::new(p))?,
        (None, Some(h), Some(r)) => {
            let hyp = read_text(Path::new(h))?;
            let reference = read_text(Path::new(r))?;
            let (hyp, reference): (Vec<&str>, Vec<&str>) = (hyp.lines().collect(), reference.lines().collect());
            if hyp.len() != reference.len() {
                return Err(CliError::Validation(format!(
                    "{} hypothesis lines but {} reference lines",
                    hyp.len(),
                    reference.len()
                )));
            }
            hyp.iter().zip(&reference).map(|(h, r)| SentencePair::new(*h, *r)).collect()
        }
        _ => {
            return Err(CliError::Validation(
                "give either --input (JSONL pairs) or both --hyp and --ref".into(),
            ))
        }
    };
    for p in &mut pairs {
        if p.direction.is_empty() {
            p.direction = cfg.direction.clone();
        }
    }
    Ok(pairs)
}

pub fn eval_translate(cfg: &PipelineConfig, out: &Path) -> Result<String, CliError> {
    let pairs = load_pairs(cfg)?;
    let mut directions: Vec<String> = Vec::new();
    for p in &pairs {
        if !directions.contains(&p.direction) {
            directions.push(p.direction.clone());
        }
    }
    let mut rows = Vec::new();
    for d in &directions {
        let subset: Vec<SentencePair> = pairs.iter().filter(|p| &p.direction == d).cloned().collect();
        for metric in [Metric::Bleu, Metric::Chrf] {
            let s = bootstrap_stderr(&subset, metric, cfg.n_resamples, cfg.seed)?;
            rows.push(ReportRow {
                model: cfg.model.clone(),
                direction: d.clone(),
                metric,
                value: s.value,
                stderr: Some(s.stderr),
                n_resamples: Some(s.n_resamples),
                seed: Some(s.seed),
                warning: s.warning,
            });
        }
    }
    let table = render_report(&ScoreTable::from_rows(&rows), &cfg.report_style()?)?;
    write_jsonl(&out.join("scores.jsonl"), &rows)?;
    write_text(&out.join(table_name(cfg)), &table)?;
    Ok(table)
}

fn table_name(cfg: &PipelineConfig) -> String {
    match cfg.report.format.as_str() {
        "plain" => "table.txt".into(),
        ext => format!("table.{ext}"),
    }
}

pub fn report(cfg: &PipelineConfig, out: &Path) -> Result<String, CliError> {
    let rows: Vec<ReportRow> = read_jsonl(required(&cfg.input, "input")?)?;
    let table = render_report(&ScoreTable::from_rows(&rows), &cfg.report_style()?)?;
    write_text(&out.join(table_name(cfg)), &table)?;
    Ok(table)
}

/// One perplexity input line. Either totals, a mean NLL, or a token-level
/// perplexity must be present; `k` falls back to the configured value.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PplInput {
    token_count: Option<u64>,
    total_nll_nats: Option<f64>,
    mean_nll: Option<f64>,
    ppl_token: Option<f64>,
    k: Option<f64>,
}

impl PplInput {
    fn record(&self, default_k: f64) -> Result<PerplexityRecord<f64>, CliError> {
        let k = self.k.unwrap_or(default_k);
        let r = match (self.token_count, self.total_nll_nats, self.mean_nll, self.ppl_token) {
            (Some(n), Some(total), None, None) => PerplexityRecord::from_totals(n, total, k)?,
            (None, None, Some(nll), None) => PerplexityRecord::from_nll(nll, k)?,
            (None, None, None, Some(p)) => PerplexityRecord::from_ppl(p, k)?,
            _ => {
                return Err(CliError::Validation(
                    "record needs exactly one of {token_count, total_nll_nats}, mean_nll or ppl_token".into(),
                ))
            }
        };
        Ok(r)
    }
}

pub fn ppl_normalize(cfg: &PipelineConfig, out: &Path) -> Result<String, CliError> {
    let records = match (&cfg.input, cfg.ppl.ppl_token) {
        (None, Some(p)) => vec![PerplexityRecord::from_ppl(p, cfg.ppl.k)?],
        (Some(path), None) => {
            let path = Path::new(path);
            let inputs: Vec<(usize, PplInput)> = read_jsonl_numbered(path)?;
            let mut records = Vec::with_capacity(inputs.len());
            for (line, input) in inputs {
                records.push(input.record(cfg.ppl.k).map_err(|e| CliError::Parse {
                    path: path.display().to_string(),
                    line,
                    message: e.to_string(),
                })?);
            }
            records
        }
        _ => return Err(CliError::Validation("give either --input or --ppl".into())),
    };
    write_jsonl(&out.join("perplexity.jsonl"), &records)?;
    Ok(records
        .iter()
        .map(|r| format!("ppl_token {:.4}  k {:.4}  ppl_info {:.4}", r.ppl_token, r.k, r.ppl_info))
        .collect::<Vec<_>>()
        .join("\n"))
}

#[derive(Debug, Clone, Serialize)]
struct DemoCell {
    method: Method,
    rank: usize,
    alpha: f64,
    scale: f64,
    step0_b_grad_norm: f64,
    final_train_loss: Option<f64>,
    final_eval_loss: Option<f64>,
    diverged_at: Option<usize>,
    telemetry: String,
}

#[derive(Debug, Clone, Serialize)]
struct RatioCheck {
    rank: usize,
    /// Step-0 B-gradient norm under `α/r` divided by that under `α/√r`.
    lora_over_rslora: f64,
    expected: f64,
    relative_error: f64,
    pass: bool,
}

#[derive(Debug, Clone, Serialize)]
struct RankGrowth {
    method: Method,
    low_rank: usize,
    high_rank: usize,
    /// Step-0 B-gradient norm at the high rank over that at the low rank.
    ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
struct DemoSummary {
    cells: Vec<DemoCell>,
    ratio_checks: Vec<RatioCheck>,
    rank_growth: Vec<RankGrowth>,
}

pub const RATIO_TOLERANCE: f64 = 1e-9;

pub fn adapter_demo(cfg: &PipelineConfig, out: &Path) -> Result<String, CliError> {
    let d = &cfg.demo;
    let task: ToyTask<f64> = ToyTask::default();
    let grid: Vec<(Method, usize)> = d.methods.iter().flat_map(|&m| d.ranks.iter().map(move |&r| (m, r))).collect();

    let runs: Vec<_> = grid
        .par_iter()
        .map(|&(method, rank)| {
            let mut tc = ToyTrainConfig::new(method, rank, d.alpha, d.steps, cfg.seed);
            tc.learning_rate = d.learning_rate;
            tc.dropout = d.dropout;
            let b0 = initial_b_grad_norm(&task, method, rank, d.alpha, cfg.seed);
            (method, rank, b0, toy_train(&task, &tc))
        })
        .collect();

    let mut cells = Vec::new();
    let mut diverged = Vec::new();
    for (method, rank, b0, result) in runs {
        let name = format!("telemetry/{method}-r{rank}.jsonl");
        let (telemetry, final_eval, diverged_at) = match result {
            Ok(t) => {
                let eval = t.final_eval_loss;
                (t, Some(eval), None)
            }
            Err(TrainError::Diverged { step, partial }) => {
                diverged.push(format!("{method} r{rank} at step {step}"));
                (partial, None, Some(step))
            }
            Err(e) => return Err(e.into()),
        };
        let records: Vec<_> = telemetry.records().collect();
        write_jsonl(&out.join(&name), &records)?;
        cells.push(DemoCell {
            method,
            rank,
            alpha: d.alpha,
            scale: scaling_factor(method, d.alpha, rank)?,
            step0_b_grad_norm: b0?,
            final_train_loss: telemetry.loss.last().copied(),
            final_eval_loss: final_eval,
            diverged_at,
            telemetry: name,
        });
    }

    let norm = |m: Method, r: usize| cells.iter().find(|c| c.method == m && c.rank == r).map(|c| c.step0_b_grad_norm);
    let ratio_checks: Vec<RatioCheck> = d
        .ranks
        .iter()
        .filter_map(|&r| {
            let ratio = norm(Method::Lora, r)? / norm(Method::Rslora, r)?;
            let expected = 1.0 / (r as f64).sqrt();
            let relative_error = (ratio - expected).abs() / expected;
            Some(RatioCheck { rank: r, lora_over_rslora: ratio, expected, relative_error, pass: relative_error <= RATIO_TOLERANCE })
        })
        .collect();
    let (lo, hi) = (*d.ranks.iter().min().expect("validated"), *d.ranks.iter().max().expect("validated"));
    let rank_growth: Vec<RankGrowth> = if lo < hi {
        d.methods
            .iter()
            .filter_map(|&m| Some(RankGrowth { method: m, low_rank: lo, high_rank: hi, ratio: norm(m, hi)? / norm(m, lo)? }))
            .collect()
    } else {
        Vec::new()
    };

    let summary = DemoSummary { cells, ratio_checks, rank_growth };
    write_json(&out.join("summary.json"), &summary)?;
    if !diverged.is_empty() {
        return Err(CliError::Validation(format!("training diverged: {}", diverged.join(", "))));
    }
    let mut lines: Vec<String> = summary
        .cells
        .iter()
        .map(|c| format!("{} r{}: step-0 |dB| {:.6e}, eval loss {:.6}", c.method, c.rank, c.step0_b_grad_norm, c.final_eval_loss.unwrap_or(f64::NAN)))
        .collect();
    lines.extend(summary.ratio_checks.iter().map(|r| {
        format!("r{}: lora/rslora {:.9} expected {:.9} {}", r.rank, r.lora_over_rslora, r.expected, if r.pass { "ok" } else { "MISMATCH" })
    }));
    Ok(lines.join("\n"))
}

/// Output directory for a command: explicit flag, then `$LANGADAPT_OUT/<command>`,
/// then `langadapt-out/<command>`.
pub fn output_dir(explicit: Option<PathBuf>, env_root: Option<String>, command: &str) -> PathBuf {
    explicit.unwrap_or_else(|| PathBuf::from(env_root.unwrap_or_else(|| "langadapt-out".into())).join(command))
}
