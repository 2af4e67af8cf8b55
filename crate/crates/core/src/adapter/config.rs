//! Adapter and training configurations with the named presets.

use serde::{Deserialize, Serialize};

use super::layer::{scaling_factor, Method};
use super::AdapterError;
use crate::kv::{KvError, KvMap};

pub const DEFAULT_TARGETS: [&str; 7] = ["q", "k", "v", "o", "gate", "up", "down"];
pub const DEFAULT_DROPOUT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub method: Method,
    /// Absent for full fine-tuning.
    pub rank: Option<usize>,
    /// Absent for full fine-tuning.
    pub alpha: Option<f64>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub targets: Vec<String>,
}

impl AdapterConfig {
    pub fn adapter(method: Method, rank: usize, alpha: f64, learning_rate: f64) -> Self {
        Self {
            method,
            rank: Some(rank),
            alpha: Some(alpha),
            dropout: DEFAULT_DROPOUT,
            learning_rate,
            targets: DEFAULT_TARGETS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn full(learning_rate: f64) -> Self {
        Self {
            method: Method::Full,
            rank: None,
            alpha: None,
            dropout: 0.0,
            learning_rate,
            targets: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), AdapterError> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(AdapterError::BadDropout(self.dropout));
        }
        if !(self.learning_rate > 0.0) {
            return Err(AdapterError::BadLearningRate(self.learning_rate));
        }
        if self.method.is_adapter() {
            self.scaling()?;
        }
        Ok(())
    }

    /// `γ` for adapter methods.
    pub fn scaling(&self) -> Result<f64, AdapterError> {
        let rank = self.rank.ok_or(AdapterError::ZeroRank)?;
        let alpha = self.alpha.ok_or(AdapterError::BadAlpha(f64::NAN))?;
        scaling_factor(self.method, alpha, rank)
    }

    pub const KEYS: [&'static str; 6] = ["method", "rank", "alpha", "dropout", "learning_rate", "targets"];

    /// Overlays any of [`AdapterConfig::KEYS`] present in `kv`.
    pub fn apply_kv(mut self, kv: &KvMap) -> Result<Self, KvError> {
        if let Some(m) = kv.get::<Method>("method")? {
            self.method = m;
        }
        if let Some(r) = kv.get::<usize>("rank")? {
            self.rank = Some(r);
        }
        if let Some(a) = kv.get::<f64>("alpha")? {
            self.alpha = Some(a);
        }
        if let Some(d) = kv.get::<f64>("dropout")? {
            self.dropout = d;
        }
        if let Some(lr) = kv.get::<f64>("learning_rate")? {
            self.learning_rate = lr;
        }
        if let Some(t) = kv.get_str("targets") {
            self.targets = t.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub per_device_batch: usize,
    pub grad_accum_steps: usize,
    pub effective_batch: usize,
    pub seq_len: usize,
    pub warmup_steps: usize,
    pub epochs: usize,
    pub eval_split: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigViolation {
    #[error("effective batch {effective} != per-device batch {per_device} × accumulation {accum}")]
    EffectiveBatch { effective: usize, per_device: usize, accum: usize },
    #[error("eval split {0} must lie strictly between 0 and 1")]
    EvalSplit(String),
    #[error("{0} must be positive")]
    Zero(&'static str),
}

impl TrainConfig {
    /// Continued-pretraining configuration.
    pub fn cpt() -> Self {
        Self {
            per_device_batch: 1,
            grad_accum_steps: 16,
            effective_batch: 16,
            seq_len: 4096,
            warmup_steps: 50,
            epochs: 2,
            eval_split: 0.025,
            seed: crate::rng::DEFAULT_SEED,
        }
    }

    /// Shared fine-tuning configuration; only the held-out split differs.
    pub fn sft() -> Self {
        Self { eval_split: 0.05, ..Self::cpt() }
    }

    /// Every violated invariant, not just the first.
    pub fn validate(&self) -> Result<(), Vec<ConfigViolation>> {
        let mut errs = Vec::new();
        for (v, name) in [
            (self.per_device_batch, "per_device_batch"),
            (self.grad_accum_steps, "grad_accum_steps"),
            (self.seq_len, "seq_len"),
            (self.epochs, "epochs"),
        ] {
            if v == 0 {
                errs.push(ConfigViolation::Zero(name));
            }
        }
        if self.per_device_batch.checked_mul(self.grad_accum_steps) != Some(self.effective_batch) {
            errs.push(ConfigViolation::EffectiveBatch {
                effective: self.effective_batch,
                per_device: self.per_device_batch,
                accum: self.grad_accum_steps,
            });
        }
        if !(self.eval_split > 0.0 && self.eval_split < 1.0) {
            errs.push(ConfigViolation::EvalSplit(self.eval_split.to_string()));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    pub const KEYS: [&'static str; 8] = [
        "per_device_batch",
        "grad_accum_steps",
        "effective_batch",
        "seq_len",
        "warmup_steps",
        "epochs",
        "eval_split",
        "seed",
    ];

    pub fn apply_kv(mut self, kv: &KvMap) -> Result<Self, KvError> {
        macro_rules! set {
            ($field:ident, $ty:ty) => {
                if let Some(v) = kv.get::<$ty>(stringify!($field))? {
                    self.$field = v;
                }
            };
        }
        set!(per_device_batch, usize);
        set!(grad_accum_steps, usize);
        set!(effective_batch, usize);
        set!(seq_len, usize);
        set!(warmup_steps, usize);
        set!(epochs, usize);
        set!(eval_split, f64);
        set!(seed, u64);
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Preset {
    pub name: &'static str,
    pub train: TrainConfig,
    /// `None` for continued pretraining, which updates every parameter.
    pub adapter: Option<AdapterConfig>,
    pub learning_rate: f64,
}

pub const PRESET_NAMES: [&str; 6] =
    ["cpt-table3", "sft-full", "sft-lora-r64", "sft-rslora-r128", "sft-rslora-r256", "sft-dora-r256"];

pub fn preset(name: &str) -> Option<Preset> {
    let sft = |name, adapter: AdapterConfig| Preset {
        name,
        train: TrainConfig::sft(),
        learning_rate: adapter.learning_rate,
        adapter: Some(adapter),
    };
    Some(match name {
        "cpt-table3" => Preset { name: "cpt-table3", train: TrainConfig::cpt(), adapter: None, learning_rate: 5e-5 },
        "sft-full" => sft("sft-full", AdapterConfig::full(1e-5)),
        "sft-lora-r64" => sft("sft-lora-r64", AdapterConfig::adapter(Method::Lora, 64, 128.0, 2e-4)),
        "sft-rslora-r128" => sft("sft-rslora-r128", AdapterConfig::adapter(Method::Rslora, 128, 128.0, 2e-5)),
        "sft-rslora-r256" => sft("sft-rslora-r256", AdapterConfig::adapter(Method::Rslora, 256, 256.0, 2e-5)),
        "sft-dora-r256" => sft("sft-dora-r256", AdapterConfig::adapter(Method::Dora, 256, 256.0, 2e-5)),
        _ => return None,
    })
}
