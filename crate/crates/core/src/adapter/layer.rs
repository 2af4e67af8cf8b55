//! LoRA, rsLoRA and DoRA layers on a dense base matrix.
//!
//! For a base matrix `W0` (d_out × d_in), down-projection `A` (r × d_in),
//! up-projection `B` (d_out × r) and scaling `γ`:
//!
//! * LoRA / rsLoRA: `y = W0·x + γ·B·(A·x)`
//! * DoRA: with `V = W0 + γ·B·A`, output unit `i` is
//!   `y_i = m_i · (V_i · x) / ‖V_i‖₂`, where `V_i` is the weight vector
//!   feeding output `i` (a row here, a column in the `x·W` convention).
//!
//! LoRA scales by `α/r`; rsLoRA and DoRA by `α/√r`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::matrix::{dot, Matrix};
use super::AdapterError;
use crate::rng::Xoshiro256StarStar;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lora,
    Rslora,
    Dora,
    Full,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Lora => "lora",
            Method::Rslora => "rslora",
            Method::Dora => "dora",
            Method::Full => "full",
        }
    }

    pub fn is_adapter(self) -> bool {
        self != Method::Full
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = AdapterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lora" => Ok(Method::Lora),
            "rslora" => Ok(Method::Rslora),
            "dora" => Ok(Method::Dora),
            "full" => Ok(Method::Full),
            other => Err(AdapterError::UnknownMethod(other.to_string())),
        }
    }
}

/// Effective adapter scaling `γ`.
///
/// `α/r` for LoRA, `α/√r` for rsLoRA. DoRA uses the rsLoRA rule. Full
/// fine-tuning has no adapter and is rejected.
pub fn scaling_factor<T: Scalar>(method: Method, alpha: T, rank: usize) -> Result<T, AdapterError> {
    if rank == 0 {
        return Err(AdapterError::ZeroRank);
    }
    if !(alpha > T::zero()) || !alpha.is_finite() {
        return Err(AdapterError::BadAlpha(alpha.to_f64_lossy()));
    }
    let r = T::from_count(rank);
    match method {
        Method::Lora => Ok(alpha / r),
        Method::Rslora | Method::Dora => Ok(alpha / r.sqrt()),
        Method::Full => Err(AdapterError::NotAnAdapter),
    }
}

/// Trainable parameter count for one `d_out × d_in` projection.
pub fn param_count(method: Method, d_in: usize, d_out: usize, rank: usize) -> usize {
    match method {
        Method::Lora | Method::Rslora => rank * (d_in + d_out),
        Method::Dora => rank * (d_in + d_out) + d_out,
        Method::Full => d_in * d_out,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterLayer<T> {
    pub method: Method,
    pub base: Matrix<T>,
    pub a: Matrix<T>,
    pub b: Matrix<T>,
    pub scale: T,
    /// Per-output magnitudes, DoRA only.
    pub magnitude: Option<Vec<T>>,
}

/// Gradients of a scalar objective with respect to the trainable factors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrads<T> {
    pub a: Matrix<T>,
    pub b: Matrix<T>,
    pub magnitude: Option<Vec<T>>,
}

impl<T: Scalar> AdapterGrads<T> {
    pub fn norm_sq(&self) -> T {
        let m: T = self.magnitude.iter().flatten().map(|&v| v * v).sum();
        self.a.frobenius_sq() + self.b.frobenius_sq() + m
    }

    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    pub fn b_norm(&self) -> T {
        self.b.frobenius_sq().sqrt()
    }

    pub fn accumulate(&mut self, other: &AdapterGrads<T>) {
        self.a.axpy(T::one(), &other.a);
        self.b.axpy(T::one(), &other.b);
        if let (Some(m), Some(o)) = (self.magnitude.as_mut(), other.magnitude.as_ref()) {
            for (x, &y) in m.iter_mut().zip(o) {
                *x += y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.a.all_finite() && self.b.all_finite() && self.magnitude.iter().flatten().all(|v| v.is_finite())
    }
}

impl<T: Scalar> AdapterLayer<T> {
    /// Fresh layer: `A` uniform in `±1/√d_in` from `seed`, `B = 0`, and for
    /// DoRA `m` set to the per-output norms of `W0`.
    pub fn init(method: Method, base: Matrix<T>, rank: usize, alpha: T, seed: u64) -> Result<Self, AdapterError> {
        let scale = scaling_factor(method, alpha, rank)?;
        let (d_out, d_in) = base.shape();
        let bound = 1.0 / (d_in.max(1) as f64).sqrt();
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let a = Matrix::from_fn(rank, d_in, |_, _| T::from_f64_lossy((2.0 * rng.next_f64() - 1.0) * bound));
        let b = Matrix::zeros(d_out, rank);
        let magnitude = (method == Method::Dora).then(|| base.row_norms());
        Ok(Self { method, base, a, b, scale, magnitude })
    }

    /// Assembles a layer from explicit factors, checking shapes.
    pub fn from_parts(
        method: Method,
        base: Matrix<T>,
        a: Matrix<T>,
        b: Matrix<T>,
        scale: T,
        magnitude: Option<Vec<T>>,
    ) -> Result<Self, AdapterError> {
        if method == Method::Full {
            return Err(AdapterError::NotAnAdapter);
        }
        let (d_out, d_in) = base.shape();
        let rank = a.rows();
        if a.cols() != d_in {
            return Err(AdapterError::Shape { what: "A columns", expected: d_in, got: a.cols() });
        }
        if b.shape() != (d_out, rank) {
            return Err(AdapterError::Shape { what: "B shape", expected: d_out * rank, got: b.rows() * b.cols() });
        }
        match (&magnitude, method) {
            (Some(m), Method::Dora) if m.len() == d_out => {}
            (Some(m), Method::Dora) => {
                return Err(AdapterError::Shape { what: "magnitude length", expected: d_out, got: m.len() })
            }
            (None, Method::Dora) => return Err(AdapterError::MissingMagnitude),
            (None, _) => {}
            (Some(_), _) => return Err(AdapterError::UnexpectedMagnitude),
        }
        Ok(Self { method, base, a, b, scale, magnitude })
    }

    pub fn d_in(&self) -> usize {
        self.base.cols()
    }

    pub fn d_out(&self) -> usize {
        self.base.rows()
    }

    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    pub fn trainable_params(&self) -> usize {
        param_count(self.method, self.d_in(), self.d_out(), self.rank())
    }

    /// `V = W0 + γ·B·A`
    pub fn composed(&self) -> Matrix<T> {
        let mut v = self.base.clone();
        v.axpy(self.scale, &self.b.matmul(&self.a));
        v
    }

    fn check_input(&self, x: &[T]) -> Result<(), AdapterError> {
        if x.len() != self.d_in() {
            return Err(AdapterError::Shape { what: "input length", expected: self.d_in(), got: x.len() });
        }
        Ok(())
    }

    fn check_mask(&self, mask: Option<&[T]>) -> Result<(), AdapterError> {
        match mask {
            Some(m) if m.len() != self.rank() => {
                Err(AdapterError::Shape { what: "dropout mask length", expected: self.rank(), got: m.len() })
            }
            _ => Ok(()),
        }
    }

    /// Low-rank intermediate `h = mask ⊙ (A·x)`.
    fn hidden(&self, x: &[T], mask: Option<&[T]>) -> Vec<T> {
        let mut h = self.a.matvec(x);
        if let Some(m) = mask {
            for (v, &k) in h.iter_mut().zip(m) {
                *v *= k;
            }
        }
        h
    }

    /// Pre-normalization output `s = W0·x + γ·B·h`.
    fn pre_activation(&self, x: &[T], h: &[T]) -> Vec<T> {
        let mut s = self.base.matvec(x);
        for (si, bh) in s.iter_mut().zip(self.b.matvec(h)) {
            *si += self.scale * bh;
        }
        s
    }

    fn composed_norms(&self) -> Result<Vec<T>, AdapterError> {
        let norms = self.composed().row_norms();
        match norms.iter().position(|n| n.is_zero()) {
            Some(i) => Err(AdapterError::ZeroNorm(i)),
            None => Ok(norms),
        }
    }

    /// Evaluation-mode forward pass.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>, AdapterError> {
        self.forward_masked(x, None)
    }

    /// Forward pass with an optional dropout mask on `A·x` (already scaled
    /// by `1/(1-p)` where kept).
    pub fn forward_masked(&self, x: &[T], mask: Option<&[T]>) -> Result<Vec<T>, AdapterError> {
        self.check_input(x)?;
        self.check_mask(mask)?;
        let h = self.hidden(x, mask);
        let s = self.pre_activation(x, &h);
        match self.method {
            Method::Dora => {
                let m = self.magnitude.as_ref().ok_or(AdapterError::MissingMagnitude)?;
                let n = self.composed_norms()?;
                Ok(s.iter().zip(m).zip(&n).map(|((&si, &mi), &ni)| mi * si / ni).collect())
            }
            _ => Ok(s),
        }
    }

    /// Gradients of `⟨upstream, forward(x)⟩`.
    pub fn grads(&self, x: &[T], upstream: &[T]) -> Result<AdapterGrads<T>, AdapterError> {
        self.grads_masked(x, upstream, None)
    }

    pub fn grads_masked(&self, x: &[T], upstream: &[T], mask: Option<&[T]>) -> Result<AdapterGrads<T>, AdapterError> {
        self.check_input(x)?;
        self.check_mask(mask)?;
        if upstream.len() != self.d_out() {
            return Err(AdapterError::Shape { what: "upstream length", expected: self.d_out(), got: upstream.len() });
        }
        let h = self.hidden(x, mask);
        let (grad_a, grad_b, grad_m) = match self.method {
            Method::Dora => {
                let m = self.magnitude.as_ref().ok_or(AdapterError::MissingMagnitude)?;
                let v = self.composed();
                let n = self.composed_norms()?;
                let s = self.pre_activation(x, &h);
                // output path: y_i = c_i s_i with c_i = m_i / n_i
                let w: Vec<T> = (0..self.d_out()).map(|i| upstream[i] * m[i] / n[i]).collect();
                let (mut ga, mut gb) = self.linear_path_grads(x, &h, &w, mask);
                // norm path: ∂L/∂V_i = -u_i m_i s_i V_i / n_i³, then V = W0 + γBA
                let coef: Vec<T> = (0..self.d_out()).map(|i| -upstream[i] * m[i] * s[i] / (n[i] * n[i] * n[i])).collect();
                let mut g_norm = Matrix::zeros(self.d_out(), self.d_in());
                for (i, &c) in coef.iter().enumerate() {
                    for j in 0..self.d_in() {
                        g_norm.set(i, j, c * v.get(i, j));
                    }
                }
                // γ·Bᵀ·G and γ·G·Aᵀ
                ga.axpy(self.scale, &transpose(&self.b).matmul(&g_norm));
                gb.axpy(self.scale, &g_norm.matmul(&transpose(&self.a)));
                let gm: Vec<T> = (0..self.d_out()).map(|i| upstream[i] * s[i] / n[i]).collect();
                (ga, gb, Some(gm))
            }
            _ => {
                let (ga, gb) = self.linear_path_grads(x, &h, upstream, mask);
                (ga, gb, None)
            }
        };
        Ok(AdapterGrads { a: grad_a, b: grad_b, magnitude: grad_m })
    }

    /// Gradients through `γ·B·h` for output weights `w`:
    /// `∂B = γ·w·hᵀ`, `∂A = γ·(mask ⊙ Bᵀw)·xᵀ`.
    fn linear_path_grads(&self, x: &[T], h: &[T], w: &[T], mask: Option<&[T]>) -> (Matrix<T>, Matrix<T>) {
        let mut gb = Matrix::zeros(self.d_out(), self.rank());
        gb.add_outer(self.scale, w, h);
        let mut bt_w = self.b.t_matvec(w);
        if let Some(m) = mask {
            for (v, &k) in bt_w.iter_mut().zip(m) {
                *v *= k;
            }
        }
        let mut ga = Matrix::zeros(self.rank(), self.d_in());
        ga.add_outer(self.scale, &bt_w, x);
        (ga, gb)
    }

    /// Calls `f` with a mutable reference to every trainable scalar in the
    /// order A, B, m.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut T)) {
        self.a.as_mut_slice().iter_mut().for_each(&mut f);
        self.b.as_mut_slice().iter_mut().for_each(&mut f);
        if let Some(m) = self.magnitude.as_mut() {
            m.iter_mut().for_each(&mut f);
        }
    }

    pub fn param_len(&self) -> usize {
        self.a.as_slice().len() + self.b.as_slice().len() + self.magnitude.as_ref().map_or(0, Vec::len)
    }

    /// Gradient-descent update `θ -= lr·∇θ`.
    pub fn apply_update(&mut self, grads: &AdapterGrads<T>, lr: T) {
        self.a.axpy(-lr, &grads.a);
        self.b.axpy(-lr, &grads.b);
        if let (Some(m), Some(g)) = (self.magnitude.as_mut(), grads.magnitude.as_ref()) {
            for (x, &d) in m.iter_mut().zip(g) {
                *x -= lr * d;
            }
        }
    }
}

impl<T: Scalar> AdapterGrads<T> {
    /// Flattened in the same order as [`AdapterLayer::for_each_param_mut`].
    pub fn flatten(&self) -> Vec<T> {
        let mut out = self.a.as_slice().to_vec();
        out.extend_from_slice(self.b.as_slice());
        if let Some(m) = &self.magnitude {
            out.extend_from_slice(m);
        }
        out
    }
}

fn transpose<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    Matrix::from_fn(m.cols(), m.rows(), |i, j| m.get(j, i))
}

/// `⟨upstream, layer.forward(x)⟩`
pub fn probe_objective<T: Scalar>(layer: &AdapterLayer<T>, x: &[T], upstream: &[T]) -> Result<T, AdapterError> {
    Ok(dot(upstream, &layer.forward(x)?))
}
