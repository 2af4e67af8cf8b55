//! `langadapt` command-line driver.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use langadapt_core::kv::KvMap;
use serde::Serialize;

use crate::config::{resolve, PipelineConfig};
use crate::error::{CliError, EXIT_VALIDATION};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "LANGADAPT_OUT";

#[derive(Debug, Parser)]
#[command(name = "langadapt", version, about = "Corpus, instruction-data, adapter and evaluation tooling")]
pub struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice [default: 42].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses all cores. Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Named training preset.
    #[arg(long, global = true, value_name = "NAME")]
    pub preset: Option<String>,
    /// Output directory [default: $LANGADAPT_OUT/<command> or langadapt-out/<command>].
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override any config key.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize, filter, deduplicate, interleave, tokenize and chunk documents.
    PrepCorpus {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        tokenizer: Option<String>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        overlap: Option<usize>,
        #[arg(long)]
        no_dedup: bool,
    },
    /// Deduplicate, upsample, assign system prompts and serialize instruction pairs.
    AssembleSft {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        tokenizer: Option<String>,
        /// Per-bucket factor, repeatable.
        #[arg(long, value_name = "BUCKET=N")]
        upsample: Vec<String>,
        /// `special` or `literal`.
        #[arg(long)]
        marker_mode: Option<String>,
    },
    /// Corpus BLEU and chrF with bootstrap standard errors.
    EvalTranslate {
        /// JSONL of {hypothesis, reference, direction}.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        hyp: Option<PathBuf>,
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        #[arg(long)]
        direction: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        resamples: Option<usize>,
        /// `plain`, `tsv` or `csv`.
        #[arg(long)]
        format: Option<String>,
        #[arg(long)]
        stderr: bool,
    },
    /// Token perplexity and its byte-fallback correction.
    PplNormalize {
        /// JSONL of {token_count, total_nll_nats[, k]}, {mean_nll[, k]} or {ppl_token[, k]}.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        ppl: Option<f64>,
        #[arg(long)]
        k: Option<f64>,
    },
    /// Train toy adapters over a method × rank grid and record telemetry.
    AdapterDemo {
        /// Comma-separated, e.g. `lora,rslora`.
        #[arg(long)]
        methods: Option<String>,
        /// Comma-separated, e.g. `4,64`.
        #[arg(long)]
        ranks: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        dropout: Option<f64>,
    },
    /// Render a results table from score rows.
    Report {
        /// JSONL of {model, direction, metric, value[, stderr]}.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        format: Option<String>,
        /// `combined`, `bleu` or `chrf`.
        #[arg(long)]
        layout: Option<String>,
        #[arg(long)]
        stderr: bool,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::PrepCorpus { .. } => "prep-corpus",
            Command::AssembleSft { .. } => "assemble-sft",
            Command::EvalTranslate { .. } => "eval-translate",
            Command::PplNormalize { .. } => "ppl-normalize",
            Command::AdapterDemo { .. } => "adapter-demo",
            Command::Report { .. } => "report",
        }
    }

    /// Subcommand flags as config keys.
    fn flag_values(&self, kv: &mut KvMap) {
        fn put<T: ToString>(kv: &mut KvMap, key: &str, v: &Option<T>) {
            if let Some(v) = v {
                kv.insert(key, v.to_string());
            }
        }
        fn put_path(kv: &mut KvMap, key: &str, v: &Option<PathBuf>) {
            put(kv, key, &v.as_ref().map(|p| p.display().to_string()));
        }
        match self {
            Command::PrepCorpus { input, tokenizer, window, overlap, no_dedup } => {
                put_path(kv, "input", input);
                put(kv, "tokenizer", tokenizer);
                put(kv, "window", window);
                put(kv, "overlap", overlap);
                if *no_dedup {
                    kv.insert("dedup", "false");
                }
            }
            Command::AssembleSft { input, tokenizer, upsample: _, marker_mode } => {
                put_path(kv, "input", input);
                put(kv, "tokenizer", tokenizer);
                put(kv, "marker_mode", marker_mode);
            }
            Command::EvalTranslate { input, hyp, reference, direction, model, resamples, format, stderr } => {
                put_path(kv, "input", input);
                put_path(kv, "hyp", hyp);
                put_path(kv, "ref", reference);
                put(kv, "direction", direction);
                put(kv, "model", model);
                put(kv, "n_resamples", resamples);
                put(kv, "report.format", format);
                if *stderr {
                    kv.insert("report.stderr", "true");
                }
            }
            Command::PplNormalize { input, ppl, k } => {
                put_path(kv, "input", input);
                put(kv, "ppl.ppl_token", ppl);
                put(kv, "ppl.k", k);
            }
            Command::AdapterDemo { methods, ranks, alpha, steps, learning_rate, dropout } => {
                put(kv, "demo.methods", methods);
                put(kv, "demo.ranks", ranks);
                put(kv, "demo.alpha", alpha);
                put(kv, "demo.steps", steps);
                put(kv, "demo.learning_rate", learning_rate);
                put(kv, "demo.dropout", dropout);
            }
            Command::Report { input, format, layout, stderr } => {
                put_path(kv, "input", input);
                put(kv, "report.format", format);
                put(kv, "report.layout", layout);
                if *stderr {
                    kv.insert("report.stderr", "true");
                }
            }
        }
    }
}

fn split_assignment(s: &str) -> Result<(&str, &str), CliError> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| CliError::Validation(format!("expected KEY=VALUE, got {s:?}")))
}

/// Flags converted to config keys, `--set` last.
pub fn flag_kv(cli: &Cli) -> Result<KvMap, CliError> {
    let mut kv = KvMap::default();
    if let Some(s) = cli.seed {
        kv.insert("seed", s.to_string());
    }
    if let Some(p) = &cli.preset {
        kv.insert("preset", p.clone());
    }
    cli.command.flag_values(&mut kv);
    if let Command::AssembleSft { upsample, .. } = &cli.command {
        for u in upsample {
            let (bucket, factor) = split_assignment(u)?;
            kv.insert(format!("upsample.{bucket}"), factor);
        }
    }
    for s in &cli.set {
        let (k, v) = split_assignment(s)?;
        kv.insert(k, v);
    }
    Ok(kv)
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    config: &'a PipelineConfig,
    tool: ToolInfo,
}

#[derive(Serialize)]
struct ToolInfo {
    name: &'static str,
    version: &'static str,
}

/// Resolves the configuration, runs the command inside a pool of the
/// requested size, and writes `run.json` beside the outputs.
pub fn execute(cli: &Cli, env_out: Option<String>) -> Result<String, CliError> {
    let file = match &cli.config {
        Some(p) => Some(KvMap::parse(&io::read_text(p)?)?),
        None => None,
    };
    let cfg = resolve(file.as_ref(), &flag_kv(cli)?)?;
    let name = cli.command.name();
    let out = commands::output_dir(cli.out.clone(), env_out, name);
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build()
        .map_err(|e| CliError::Validation(format!("cannot start {} workers: {e}", cli.workers)))?;
    let run = |f: fn(&PipelineConfig, &Path) -> Result<String, CliError>| pool.install(|| f(&cfg, &out));
    let summary = match &cli.command {
        Command::PrepCorpus { .. } => run(commands::prep_corpus),
        Command::AssembleSft { .. } => run(commands::assemble_sft),
        Command::EvalTranslate { .. } => run(commands::eval_translate),
        Command::PplNormalize { .. } => run(commands::ppl_normalize),
        Command::AdapterDemo { .. } => run(commands::adapter_demo),
        Command::Report { .. } => run(commands::report),
    };
    // the run record is written even when the command fails part-way
    let record = RunRecord {
        command: name,
        config: &cfg,
        tool: ToolInfo { name: "langadapt", version: env!("CARGO_PKG_VERSION") },
    };
    io::write_json(&out.join("run.json"), &record)?;
    summary
}

/// Entry point shared by the binary and the tests. Returns the exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = if code == 0 { write!(stdout, "{e}") } else { write!(stderr, "{e}") };
            return code;
        }
    };
    match execute(&cli, std::env::var(OUT_ENV).ok()) {
        Ok(summary) => {
            let _ = writeln!(stdout, "{}", summary.trim_end());
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "{}", e.report());
            e.exit_code()
        }
    }
}
