//! Desk-scale training on a fixed linear-regression task, used to show how
//! the adapter scaling rule changes gradient magnitudes across ranks.
//!
//! The task: inputs `x ∈ R^32`, frozen base `W0`, targets `(W0 + Δ)·x` where
//! `Δ` is a hidden rank-8 perturbation. The adapter is trained by plain
//! gradient descent on mean squared error over a fixed training set; a
//! separate held-out set gives the final evaluation loss.

use serde::{Deserialize, Serialize};

use super::layer::{AdapterGrads, AdapterLayer, Method};
use super::matrix::Matrix;
use super::AdapterError;
use crate::rng::Xoshiro256StarStar;
use crate::scalar::Scalar;

pub const TOY_DIM: usize = 32;
pub const TOY_TRAIN_SAMPLES: usize = 64;
pub const TOY_EVAL_SAMPLES: usize = 32;
pub const TOY_HIDDEN_RANK: usize = 8;
pub const TOY_TASK_SEED: u64 = 42;

#[derive(Debug, Clone)]
pub struct ToyTask<T> {
    pub base: Matrix<T>,
    pub train_x: Vec<Vec<T>>,
    pub train_y: Vec<Vec<T>>,
    pub eval_x: Vec<Vec<T>>,
    pub eval_y: Vec<Vec<T>>,
}

impl<T: Scalar> ToyTask<T> {
    pub fn new(seed: u64) -> Self {
        let d = TOY_DIM;
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let mut uniform = |scale: f64| T::from_f64_lossy((2.0 * rng.next_f64() - 1.0) * scale);
        let w_scale = 1.0 / (d as f64).sqrt();
        let base = Matrix::from_fn(d, d, |_, _| uniform(w_scale));
        let p_scale = 0.5 / (TOY_HIDDEN_RANK as f64).sqrt();
        let p = Matrix::from_fn(d, TOY_HIDDEN_RANK, |_, _| uniform(p_scale));
        let q = Matrix::from_fn(TOY_HIDDEN_RANK, d, |_, _| uniform(w_scale));
        let mut target = base.clone();
        target.axpy(T::one(), &p.matmul(&q));
        // unit-variance inputs
        let x_scale = 3f64.sqrt();
        let mut sample = |n: usize| -> Vec<Vec<T>> { (0..n).map(|_| (0..d).map(|_| uniform(x_scale)).collect()).collect() };
        let train_x = sample(TOY_TRAIN_SAMPLES);
        let eval_x = sample(TOY_EVAL_SAMPLES);
        let train_y = train_x.iter().map(|x| target.matvec(x)).collect();
        let eval_y = eval_x.iter().map(|x| target.matvec(x)).collect();
        Self { base, train_x, train_y, eval_x, eval_y }
    }
}

impl<T: Scalar> Default for ToyTask<T> {
    fn default() -> Self {
        Self::new(TOY_TASK_SEED)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTrainConfig {
    pub method: Method,
    pub rank: usize,
    pub alpha: f64,
    pub steps: usize,
    pub seed: u64,
    pub learning_rate: f64,
    /// Bernoulli dropout on `A·x` during training only.
    pub dropout: f64,
}

impl ToyTrainConfig {
    pub fn new(method: Method, rank: usize, alpha: f64, steps: usize, seed: u64) -> Self {
        Self { method, rank, alpha, steps, seed, learning_rate: 0.05, dropout: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTelemetry {
    pub loss: Vec<f64>,
    pub grad_norm: Vec<f64>,
    pub final_eval_loss: f64,
}

/// One line of the telemetry JSONL export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

impl TrainTelemetry {
    pub fn records(&self) -> impl Iterator<Item = TelemetryRecord> + '_ {
        self.loss
            .iter()
            .zip(&self.grad_norm)
            .enumerate()
            .map(|(step, (&loss, &grad_norm))| TelemetryRecord { step, loss, grad_norm })
    }

    pub fn steps(&self) -> usize {
        self.loss.len()
    }

    /// Mean of the last `window` losses is below the mean of the first `window`.
    pub fn loss_trend_decreasing(&self, window: usize) -> bool {
        let w = window.min(self.loss.len());
        if w == 0 {
            return false;
        }
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        mean(&self.loss[self.loss.len() - w..]) < mean(&self.loss[..w])
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training diverged at step {step}")]
    Diverged { step: usize, partial: TrainTelemetry },
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error("steps must be at least 1")]
    NoSteps,
}

fn dropout_mask<T: Scalar>(rank: usize, p: f64, rng: &mut Xoshiro256StarStar) -> Vec<T> {
    let keep = T::from_f64_lossy(1.0 / (1.0 - p));
    (0..rank).map(|_| if rng.next_f64() < p { T::zero() } else { keep }).collect()
}

/// Mean squared error over a sample set, evaluation mode.
pub fn mse<T: Scalar>(layer: &AdapterLayer<T>, xs: &[Vec<T>], ys: &[Vec<T>]) -> Result<T, AdapterError> {
    let mut total = T::zero();
    for (x, y) in xs.iter().zip(ys) {
        let out = layer.forward(x)?;
        total += out.iter().zip(y).map(|(&o, &t)| (o - t) * (o - t)).sum::<T>();
    }
    Ok(total / T::from_count(xs.len() * TOY_DIM))
}

/// Loss and summed gradients over the training set, with optional per-sample
/// dropout masks.
fn loss_and_grads<T: Scalar>(
    layer: &AdapterLayer<T>,
    task: &ToyTask<T>,
    dropout: f64,
    rng: &mut Xoshiro256StarStar,
) -> Result<(T, AdapterGrads<T>), AdapterError> {
    let denom = T::from_count(task.train_x.len() * TOY_DIM);
    let two = T::one() + T::one();
    let mut loss = T::zero();
    let mut total: Option<AdapterGrads<T>> = None;
    for (x, t) in task.train_x.iter().zip(&task.train_y) {
        let mask: Option<Vec<T>> = (dropout > 0.0).then(|| dropout_mask(layer.rank(), dropout, rng));
        let y = layer.forward_masked(x, mask.as_deref())?;
        let resid: Vec<T> = y.iter().zip(t).map(|(&a, &b)| a - b).collect();
        loss += resid.iter().map(|&r| r * r).sum::<T>();
        let upstream: Vec<T> = resid.iter().map(|&r| two * r / denom).collect();
        let g = layer.grads_masked(x, &upstream, mask.as_deref())?;
        match total.as_mut() {
            Some(acc) => acc.accumulate(&g),
            None => total = Some(g),
        }
    }
    Ok((loss / denom, total.expect("toy task has samples")))
}

fn init_layer<T: Scalar>(task: &ToyTask<T>, method: Method, rank: usize, alpha: f64, seed: u64) -> Result<AdapterLayer<T>, AdapterError> {
    AdapterLayer::init(method, task.base.clone(), rank, T::from_f64_lossy(alpha), seed)
}

/// Frobenius norm of the B gradient at initialization, without dropout.
pub fn initial_b_grad_norm<T: Scalar>(
    task: &ToyTask<T>,
    method: Method,
    rank: usize,
    alpha: f64,
    seed: u64,
) -> Result<T, AdapterError> {
    let layer = init_layer(task, method, rank, alpha, seed)?;
    let mut unused = Xoshiro256StarStar::seed_from_u64(seed);
    let (_, g) = loss_and_grads(&layer, task, 0.0, &mut unused)?;
    Ok(g.b_norm())
}

/// Gradient descent on the toy task. Deterministic for a fixed config.
pub fn toy_train<T: Scalar>(task: &ToyTask<T>, cfg: &ToyTrainConfig) -> Result<TrainTelemetry, TrainError> {
    if cfg.steps == 0 {
        return Err(TrainError::NoSteps);
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(AdapterError::BadDropout(cfg.dropout).into());
    }
    let mut layer = init_layer(task, cfg.method, cfg.rank, cfg.alpha, cfg.seed)?;
    let mut dropout_rng = Xoshiro256StarStar::seed_from_u64(cfg.seed);
    dropout_rng.jump();
    let lr = T::from_f64_lossy(cfg.learning_rate);

    let mut tel = TrainTelemetry {
        loss: Vec::with_capacity(cfg.steps),
        grad_norm: Vec::with_capacity(cfg.steps),
        final_eval_loss: f64::NAN,
    };
    for step in 0..cfg.steps {
        let (loss, grads) = loss_and_grads(&layer, task, cfg.dropout, &mut dropout_rng)?;
        let norm = grads.norm();
        if !loss.is_finite() || !norm.is_finite() {
            return Err(TrainError::Diverged { step, partial: tel });
        }
        tel.loss.push(loss.to_f64_lossy());
        tel.grad_norm.push(norm.to_f64_lossy());
        layer.apply_update(&grads, lr);
    }
    let eval = mse(&layer, &task.eval_x, &task.eval_y).map_err(TrainError::from)?;
    if !eval.is_finite() {
        return Err(TrainError::Diverged { step: cfg.steps, partial: tel });
    }
    tel.final_eval_loss = eval.to_f64_lossy();
    Ok(tel)
}

/// Trains like [`toy_train`] and also returns the final layer.
pub fn toy_train_layer<T: Scalar>(task: &ToyTask<T>, cfg: &ToyTrainConfig) -> Result<(TrainTelemetry, AdapterLayer<T>), TrainError> {
    let tel = toy_train(task, cfg)?;
    // replay the run to recover the layer; the run is deterministic
    let mut layer = init_layer(task, cfg.method, cfg.rank, cfg.alpha, cfg.seed)?;
    let mut dropout_rng = Xoshiro256StarStar::seed_from_u64(cfg.seed);
    dropout_rng.jump();
    let lr = T::from_f64_lossy(cfg.learning_rate);
    for _ in 0..cfg.steps {
        let (_, grads) = loss_and_grads(&layer, task, cfg.dropout, &mut dropout_rng)?;
        layer.apply_update(&grads, lr);
    }
    Ok((tel, layer))
}
