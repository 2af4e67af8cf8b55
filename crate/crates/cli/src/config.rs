//! Resolved pipeline configuration.
//!
//! Layers are applied in order: built-in defaults, then the preset, then the
//! config file, then command-line flags. Each later layer overrides the
//! earlier ones key by key.

use std::collections::BTreeMap;
use std::str::FromStr;

use langadapt_core::adapter::{preset, AdapterConfig, Method, TrainConfig, PRESET_NAMES};
use langadapt_core::corpus::{DEFAULT_OVERLAP, DEFAULT_WINDOW};
use langadapt_core::kv::{KvError, KvMap};
use langadapt_core::metrics::{Metric, ReportFormat, ReportLayout, ReportStyle, DEFAULT_RESAMPLES};
use langadapt_core::rng::DEFAULT_SEED;
use langadapt_core::sft::{Bucket, MarkerMode, PromptLang, PromptPlan};
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSettings {
    /// `plain`, `tsv` or `csv`.
    pub format: String,
    /// `combined`, `bleu` or `chrf`.
    pub layout: String,
    pub stderr: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PplSettings {
    /// Single value given on the command line instead of an input file.
    pub ppl_token: Option<f64>,
    /// Tokens per codepoint applied to records that do not carry their own.
    pub k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoSettings {
    pub methods: Vec<Method>,
    pub ranks: Vec<usize>,
    pub alpha: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub preset: Option<String>,
    pub seed: u64,
    pub input: Option<String>,
    pub hyp: Option<String>,
    #[serde(rename = "ref")]
    pub reference: Option<String>,
    /// `byte` or the path of a vocabulary file.
    pub tokenizer: String,
    pub window: usize,
    pub overlap: usize,
    pub dedup: bool,
    pub upsample: BTreeMap<Bucket, usize>,
    pub prompt_targets: BTreeMap<PromptLang, usize>,
    pub no_prompt_share: f64,
    pub marker_mode: MarkerMode,
    pub n_resamples: usize,
    pub model: String,
    pub direction: String,
    pub report: ReportSettings,
    pub ppl: PplSettings,
    pub demo: DemoSettings,
    pub train: TrainConfig,
    pub adapter: Option<AdapterConfig>,
    pub learning_rate: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let plan = PromptPlan::default();
        Self {
            preset: None,
            seed: DEFAULT_SEED,
            input: None,
            hyp: None,
            reference: None,
            tokenizer: "byte".into(),
            window: DEFAULT_WINDOW,
            overlap: DEFAULT_OVERLAP,
            dedup: true,
            upsample: Bucket::ALL.iter().map(|&b| (b, if b == Bucket::Synthesized { 5 } else { 1 })).collect(),
            prompt_targets: plan.targets,
            no_prompt_share: plan.no_prompt_share,
            marker_mode: MarkerMode::Special,
            n_resamples: DEFAULT_RESAMPLES,
            model: "model".into(),
            direction: "all".into(),
            report: ReportSettings { format: "plain".into(), layout: "combined".into(), stderr: false },
            ppl: PplSettings { ppl_token: None, k: 1.0 },
            demo: DemoSettings {
                methods: vec![Method::Lora, Method::Rslora],
                ranks: vec![4, 64],
                alpha: 16.0,
                steps: 100,
                learning_rate: 0.05,
                dropout: 0.0,
            },
            train: TrainConfig::cpt(),
            adapter: None,
            learning_rate: None,
        }
    }
}

const PLAIN_KEYS: [&str; 26] = [
    "preset",
    "seed",
    "input",
    "hyp",
    "ref",
    "tokenizer",
    "window",
    "overlap",
    "dedup",
    "no_prompt_share",
    "marker_mode",
    "n_resamples",
    "model",
    "direction",
    "report.format",
    "report.layout",
    "report.stderr",
    "ppl.ppl_token",
    "ppl.k",
    "demo.methods",
    "demo.ranks",
    "demo.alpha",
    "demo.steps",
    "demo.learning_rate",
    "demo.dropout",
    "learning_rate",
];

fn key_known(key: &str) -> bool {
    if PLAIN_KEYS.contains(&key) {
        return true;
    }
    if let Some(b) = key.strip_prefix("upsample.") {
        return b.parse::<Bucket>().is_ok();
    }
    if let Some(l) = key.strip_prefix("prompt.") {
        return l.parse::<PromptLang>().is_ok_and(|l| !matches!(l, PromptLang::Sardinian | PromptLang::None));
    }
    if let Some(k) = key.strip_prefix("train.") {
        return TrainConfig::KEYS.contains(&k);
    }
    if let Some(k) = key.strip_prefix("adapter.") {
        return AdapterConfig::KEYS.contains(&k);
    }
    false
}

fn parse_list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>, KvError>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>().map_err(|e| KvError::Value { key: key.into(), value: raw.into(), reason: e.to_string() })
        })
        .collect()
}

impl PipelineConfig {
    pub fn apply_preset(&mut self, name: &str) -> Result<(), CliError> {
        let p = preset(name).ok_or_else(|| {
            CliError::Validation(format!("unknown preset {name:?} (expected one of {})", PRESET_NAMES.join(", ")))
        })?;
        self.preset = Some(p.name.to_string());
        self.seed = p.train.seed;
        self.train = p.train;
        self.adapter = p.adapter;
        self.learning_rate = Some(p.learning_rate);
        Ok(())
    }

    pub fn apply_kv(&mut self, kv: &KvMap) -> Result<(), CliError> {
        if let Some(bad) = kv.keys().find(|k| !key_known(k)) {
            return Err(KvError::UnknownKey(bad.to_string()).into());
        }
        macro_rules! set {
            ($key:literal, $field:expr, $ty:ty) => {
                if let Some(v) = kv.get::<$ty>($key)? {
                    $field = v;
                }
            };
        }
        macro_rules! set_opt {
            ($key:literal, $field:expr, $ty:ty) => {
                if let Some(v) = kv.get::<$ty>($key)? {
                    $field = Some(v);
                }
            };
        }
        set!("seed", self.seed, u64);
        set_opt!("input", self.input, String);
        set_opt!("hyp", self.hyp, String);
        set_opt!("ref", self.reference, String);
        set!("tokenizer", self.tokenizer, String);
        set!("window", self.window, usize);
        set!("overlap", self.overlap, usize);
        set!("dedup", self.dedup, bool);
        set!("no_prompt_share", self.no_prompt_share, f64);
        set!("marker_mode", self.marker_mode, MarkerMode);
        set!("n_resamples", self.n_resamples, usize);
        set!("model", self.model, String);
        set!("direction", self.direction, String);
        set!("report.format", self.report.format, String);
        set!("report.layout", self.report.layout, String);
        set!("report.stderr", self.report.stderr, bool);
        set_opt!("ppl.ppl_token", self.ppl.ppl_token, f64);
        set!("ppl.k", self.ppl.k, f64);
        set!("demo.alpha", self.demo.alpha, f64);
        set!("demo.steps", self.demo.steps, usize);
        set!("demo.learning_rate", self.demo.learning_rate, f64);
        set!("demo.dropout", self.demo.dropout, f64);
        set_opt!("learning_rate", self.learning_rate, f64);
        if let Some(raw) = kv.get_str("demo.methods") {
            self.demo.methods = parse_list("demo.methods", raw)?;
        }
        if let Some(raw) = kv.get_str("demo.ranks") {
            self.demo.ranks = parse_list("demo.ranks", raw)?;
        }
        for (k, _) in kv.section("upsample.").iter() {
            let bucket: Bucket = k.parse().map_err(CliError::Validation)?;
            let key = format!("upsample.{k}");
            self.upsample.insert(bucket, kv.get::<usize>(&key)?.expect("present"));
        }
        for (k, _) in kv.section("prompt.").iter() {
            let lang: PromptLang = k.parse().map_err(CliError::Validation)?;
            let key = format!("prompt.{k}");
            self.prompt_targets.insert(lang, kv.get::<usize>(&key)?.expect("present"));
        }
        self.train = self.train.clone().apply_kv(&kv.section("train."))?;
        let adapter_kv = kv.section("adapter.");
        if adapter_kv.keys().next().is_some() {
            let base = self.adapter.clone().unwrap_or_else(|| {
                preset("sft-lora-r64").and_then(|p| p.adapter).expect("built-in preset has an adapter")
            });
            self.adapter = Some(base.apply_kv(&adapter_kv)?);
        }
        if kv.get_str("train.seed").is_some() && kv.get_str("seed").is_none() {
            self.seed = self.train.seed;
        }
        Ok(())
    }

    /// Checks every cross-field constraint.
    pub fn validate(&self) -> Result<(), CliError> {
        if let Err(violations) = self.train.validate() {
            let msgs: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return Err(CliError::Validation(format!("training config: {}", msgs.join("; "))));
        }
        if let Some(a) = &self.adapter {
            a.validate()?;
        }
        if self.window == 0 || self.overlap >= self.window {
            return Err(CliError::Validation(format!(
                "window {} must exceed overlap {}",
                self.window, self.overlap
            )));
        }
        if self.n_resamples < 2 {
            return Err(CliError::Validation(format!("n_resamples must be at least 2, got {}", self.n_resamples)));
        }
        if !(0.0..=1.0).contains(&self.no_prompt_share) {
            return Err(CliError::Validation(format!("no_prompt_share {} outside [0, 1]", self.no_prompt_share)));
        }
        if let Some((b, _)) = self.upsample.iter().find(|(_, &f)| f == 0) {
            return Err(CliError::Validation(format!("upsample factor for {} must be at least 1", b.as_str())));
        }
        self.report_style()?;
        let d = &self.demo;
        if d.methods.is_empty() || d.ranks.is_empty() || d.steps == 0 {
            return Err(CliError::Validation("demo needs at least one method, one rank and one step".into()));
        }
        if d.methods.contains(&Method::Full) {
            return Err(CliError::Validation("demo methods must be adapters".into()));
        }
        if d.ranks.contains(&0) {
            return Err(CliError::Validation("demo ranks must be positive".into()));
        }
        Ok(())
    }

    pub fn report_style(&self) -> Result<ReportStyle, CliError> {
        let format = match self.report.format.as_str() {
            "plain" => ReportFormat::Plain,
            "tsv" => ReportFormat::Delimited('\t'),
            "csv" => ReportFormat::Delimited(','),
            other => return Err(CliError::Validation(format!("unknown report format {other:?}"))),
        };
        let layout = match self.report.layout.as_str() {
            "combined" => ReportLayout::Combined,
            other => ReportLayout::Single(other.parse::<Metric>()?),
        };
        Ok(ReportStyle { layout, format, stderr: self.report.stderr })
    }

    pub fn prompt_plan(&self) -> PromptPlan {
        PromptPlan { targets: self.prompt_targets.clone(), no_prompt_share: self.no_prompt_share }
    }
}

/// Resolves the layered configuration. `flags` holds command-line values
/// already converted to config keys.
pub fn resolve(file: Option<&KvMap>, flags: &KvMap) -> Result<PipelineConfig, CliError> {
    let mut cfg = PipelineConfig::default();
    let preset_name = flags.get_str("preset").or_else(|| file.and_then(|f| f.get_str("preset")));
    if let Some(name) = preset_name {
        cfg.apply_preset(name)?;
    }
    if let Some(f) = file {
        cfg.apply_kv(f)?;
    }
    cfg.apply_kv(flags)?;
    cfg.train.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(s: &str) -> KvMap {
        KvMap::parse(s).unwrap()
    }

    #[test]
    fn defaults() {
        let c = resolve(None, &KvMap::default()).unwrap();
        assert_eq!((c.window, c.overlap, c.seed, c.n_resamples), (4096, 128, 42, 1000));
        assert_eq!(c.upsample[&Bucket::Synthesized], 5);
        assert_eq!(c.prompt_targets[&PromptLang::Italian], 300);
    }

    #[test]
    fn precedence() {
        let file = kv("preset = sft-lora-r64\nseed = 7\nwindow = 512\nadapter.rank = 32");
        let c = resolve(Some(&file), &KvMap::default()).unwrap();
        assert_eq!((c.seed, c.window), (7, 512));
        let a = c.adapter.as_ref().unwrap();
        assert_eq!((a.method, a.rank, a.alpha), (Method::Lora, Some(32), Some(128.0)));

        let flags = kv("seed = 9\npreset = sft-rslora-r256");
        let c = resolve(Some(&file), &flags).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.preset.as_deref(), Some("sft-rslora-r256"));
        assert_eq!(c.adapter.unwrap().method, Method::Rslora);
    }

    #[test]
    fn rejections() {
        assert!(matches!(resolve(Some(&kv("bogus = 1")), &KvMap::default()), Err(CliError::Validation(_))));
        assert!(resolve(None, &kv("preset = nope")).is_err());
        assert!(resolve(None, &kv("overlap = 4096")).is_err());
        assert!(resolve(None, &kv("train.effective_batch = 15")).is_err());
        assert!(resolve(None, &kv("prompt.sardinian = 3")).is_err());
        assert!(resolve(None, &kv("upsample.song = 0")).is_err());
        assert!(resolve(None, &kv("report.format = html")).is_err());
    }

    #[test]
    fn sections_apply() {
        let c = resolve(None, &kv("upsample.song = 2\nprompt.it = 10\ndemo.ranks = 4, 16\nmarker_mode = literal")).unwrap();
        assert_eq!(c.upsample[&Bucket::Song], 2);
        assert_eq!(c.prompt_targets[&PromptLang::Italian], 10);
        assert_eq!(c.demo.ranks, vec![4, 16]);
        assert_eq!(c.marker_mode, MarkerMode::Literal);
    }
}
