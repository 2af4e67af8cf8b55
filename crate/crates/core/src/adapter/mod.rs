//! Low-rank adapters: layers, gradient verification, configurations and a
//! toy trainer.

pub mod config;
pub mod gradcheck;
pub mod layer;
pub mod matrix;
pub mod train;

pub use config::{AdapterConfig, ConfigViolation, Preset, TrainConfig, preset, PRESET_NAMES};
pub use gradcheck::gradient_check;
pub use layer::{param_count, probe_objective, scaling_factor, AdapterGrads, AdapterLayer, Method};
pub use matrix::Matrix;
pub use train::{initial_b_grad_norm, toy_train, TelemetryRecord, ToyTask, ToyTrainConfig, TrainError, TrainTelemetry};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdapterError {
    #[error("unknown adapter method {0:?} (expected lora, rslora, dora or full)")]
    UnknownMethod(String),
    #[error("rank must be at least 1")]
    ZeroRank,
    #[error("alpha must be positive and finite, got {0}")]
    BadAlpha(f64),
    #[error("full fine-tuning has no adapter scaling")]
    NotAnAdapter,
    #[error("{what}: expected {expected}, got {got}")]
    Shape { what: &'static str, expected: usize, got: usize },
    #[error("DoRA layer is missing its magnitude vector")]
    MissingMagnitude,
    #[error("magnitude vector given for a non-DoRA layer")]
    UnexpectedMagnitude,
    #[error("weight vector for output {0} has zero norm")]
    ZeroNorm(usize),
    #[error("finite-difference step {0} outside (0, 1e-2]")]
    BadStep(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dropout {0} outside [0, 1)")]
    BadDropout(f64),
    #[error("learning rate must be positive, got {0}")]
    BadLearningRate(f64),
}
