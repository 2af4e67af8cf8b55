//! Central-difference verification of [`AdapterLayer::grads`].

use super::layer::{probe_objective, AdapterLayer};
use super::AdapterError;
use crate::scalar::Scalar;

/// Denominator floor for the relative error.
pub const RELATIVE_FLOOR: f64 = 1e-12;

/// Largest relative discrepancy between analytic gradients and central
/// differences of `⟨upstream, forward(x)⟩`, over every entry of A, B and m:
/// `|g − d| / max(|g|, |d|, 1e-12)` with `d = (f(θ+ε) − f(θ−ε)) / 2ε`.
pub fn gradient_check<T: Scalar>(
    layer: &AdapterLayer<T>,
    x: &[T],
    upstream: &[T],
    eps: T,
) -> Result<T, AdapterError> {
    if !(eps > T::zero() && eps <= T::from_f64_lossy(1e-2)) {
        return Err(AdapterError::BadStep(eps.to_f64_lossy()));
    }
    let analytic = layer.grads(x, upstream)?;
    if !analytic.all_finite() {
        return Err(AdapterError::NonFinite("analytic gradient"));
    }
    let analytic = analytic.flatten();
    let floor = T::from_f64_lossy(RELATIVE_FLOOR);
    let two = T::one() + T::one();

    let mut probe = layer.clone();
    let mut worst = T::zero();
    for (k, &g) in analytic.iter().enumerate() {
        let original = nth_param(&mut probe, k);
        set_nth_param(&mut probe, k, original + eps);
        let plus = probe_objective(&probe, x, upstream)?;
        set_nth_param(&mut probe, k, original - eps);
        let minus = probe_objective(&probe, x, upstream)?;
        set_nth_param(&mut probe, k, original);
        if !plus.is_finite() || !minus.is_finite() {
            return Err(AdapterError::NonFinite("perturbed objective"));
        }
        let numeric = (plus - minus) / (two * eps);
        let denom = g.abs().max(numeric.abs()).max(floor);
        let err = (g - numeric).abs() / denom;
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}

fn nth_param<T: Scalar>(layer: &mut AdapterLayer<T>, n: usize) -> T {
    let mut out = T::zero();
    let mut k = 0;
    layer.for_each_param_mut(|p| {
        if k == n {
            out = *p;
        }
        k += 1;
    });
    out
}

fn set_nth_param<T: Scalar>(layer: &mut AdapterLayer<T>, n: usize, v: T) {
    let mut k = 0;
    layer.for_each_param_mut(|p| {
        if k == n {
            *p = v;
        }
        k += 1;
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::{Matrix, Method};
    use crate::rng::Xoshiro256StarStar;

    fn random_layer(method: Method, d_in: usize, d_out: usize, r: usize, seed: u64) -> (AdapterLayer<f64>, Vec<f64>, Vec<f64>) {
        let mut g = Xoshiro256StarStar::seed_from_u64(seed);
        let mut u = || 2.0 * g.next_f64() - 1.0;
        let base = Matrix::from_fn(d_out, d_in, |_, _| u());
        let mut layer = AdapterLayer::init(method, base, r, 8.0, seed).unwrap();
        layer.b = Matrix::from_fn(d_out, r, |_, _| 0.5 * u());
        if let Some(m) = layer.magnitude.as_mut() {
            m.iter_mut().for_each(|v| *v *= 1.0 + 0.5 * u());
        }
        let x = (0..d_in).map(|_| u()).collect();
        let up = (0..d_out).map(|_| u()).collect();
        (layer, x, up)
    }

    #[test]
    fn zero_layer_is_exact() {
        let layer = AdapterLayer::init(Method::Lora, Matrix::<f64>::zeros(3, 3), 2, 1.0, 0).unwrap();
        let mut zero = layer.clone();
        zero.a = Matrix::zeros(2, 3);
        assert_eq!(gradient_check(&zero, &[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0], 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn lora_and_dora_pass() {
        let (lora, x, u) = random_layer(Method::Lora, 4, 4, 2, 11);
        assert!(gradient_check(&lora, &x, &u, 1e-5).unwrap() < 1e-6);
        let (dora, x, u) = random_layer(Method::Dora, 4, 4, 2, 12);
        assert!(gradient_check(&dora, &x, &u, 1e-5).unwrap() < 1e-5);
    }

    #[test]
    fn single_precision_runs() {
        let (layer, x, u) = random_layer(Method::Rslora, 3, 3, 2, 5);
        let layer32 = AdapterLayer::from_parts(
            layer.method,
            layer.base.map(|v| v as f32),
            layer.a.map(|v| v as f32),
            layer.b.map(|v| v as f32),
            layer.scale as f32,
            None,
        )
        .unwrap();
        let x32: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let u32_: Vec<f32> = u.iter().map(|&v| v as f32).collect();
        // single precision round-off at eps = 1e-2 is around 1e-5 relative
        assert!(gradient_check(&layer32, &x32, &u32_, 1e-2).unwrap() < 1e-2);
    }

    #[test]
    fn step_validation() {
        let (layer, x, u) = random_layer(Method::Lora, 2, 2, 1, 1);
        assert!(matches!(gradient_check(&layer, &x, &u, 0.0), Err(AdapterError::BadStep(_))));
        assert!(matches!(gradient_check(&layer, &x, &u, 0.1), Err(AdapterError::BadStep(_))));
    }

    #[test]
    fn non_finite_reported() {
        let (mut layer, x, u) = random_layer(Method::Lora, 2, 2, 1, 1);
        layer.b.set(0, 0, f64::NAN);
        assert!(matches!(gradient_check(&layer, &x, &u, 1e-5), Err(AdapterError::NonFinite(_))));
    }
}
