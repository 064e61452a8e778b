use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{RngState, Tensor};
use crate::error::{invalid, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Standard logistic draw `log U - log(1 - U)` with `U` uniform on (0, 1).
pub fn logistic_noise<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u.ln() - (-u).ln_1p();
        }
    }
}

/// `mean + std * eps` with `eps` standard normal, for scalar moments.
pub fn gauss_sample(state: &RngState, shape: &[usize], mean: f64, std: f64) -> Result<Tensor> {
    if !(std >= 0.0) {
        return Err(invalid(format!("std must be nonnegative, got {std}")));
    }
    let mut rng = state.generator();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| mean + std * standard_normal(&mut rng)).collect();
    Ok(ArrayD::from_shape_vec(IxDyn(shape), data).expect("length matches shape"))
}

/// Elementwise `mean + std * eps` for tensor-valued moments of equal shape.
pub fn gauss_sample_like(state: &RngState, mean: &Tensor, std: &Tensor) -> Result<Tensor> {
    if mean.shape() != std.shape() {
        return Err(crate::Error::ShapeMismatch {
            expected: mean.shape().to_vec(),
            got: std.shape().to_vec(),
        });
    }
    if let Some(s) = std.iter().find(|s| !(**s >= 0.0)) {
        return Err(invalid(format!("std must be nonnegative, got {s}")));
    }
    let mut rng = state.generator();
    let mut out = mean.clone();
    for (o, s) in out.iter_mut().zip(std.iter()) {
        *o += s * standard_normal(&mut rng);
    }
    Ok(out)
}

/// Relaxed Bernoulli sample `sigmoid((logit + L) / tau)` for a fixed logistic draw `L`.
pub fn gumbel_sigmoid_with_noise(logit: f64, noise: f64, tau: f64) -> f64 {
    sigmoid((logit + noise) / tau)
}

/// Relaxed Bernoulli sample with logistic noise drawn from `state`.
pub fn gumbel_sigmoid(state: &RngState, logit: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(invalid(format!("temperature must be positive, got {tau}")));
    }
    let mut rng = state.generator();
    Ok(gumbel_sigmoid_with_noise(logit, logistic_noise(&mut rng), tau))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_gaussian() {
        let t = gauss_sample(&RngState::new(1), &[4, 3], 3.5, 0.0).unwrap();
        assert!(t.iter().all(|v| *v == 3.5));
        assert_eq!(t.shape(), &[4, 3]);
    }

    #[test]
    fn gaussian_is_deterministic() {
        let s = RngState::new(11).substream(2);
        assert_eq!(
            gauss_sample(&s, &[10], 0.0, 1.0).unwrap(),
            gauss_sample(&s, &[10], 0.0, 1.0).unwrap()
        );
    }

    #[test]
    fn gaussian_moments() {
        let t = gauss_sample(&RngState::new(5), &[100_000], 0.0, 1.0).unwrap();
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let var = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 0.02, "mean {mean}");
        assert!((0.98..=1.02).contains(&var), "var {var}");
    }

    #[test]
    fn negative_std_rejected() {
        assert!(gauss_sample(&RngState::new(1), &[2], 0.0, -1.0).is_err());
        let mean = Tensor::zeros(IxDyn(&[2]));
        let std = Tensor::from_elem(IxDyn(&[2]), -0.5);
        assert!(gauss_sample_like(&RngState::new(1), &mean, &std).is_err());
    }

    #[test]
    fn reparameterized_in_mean_and_std() {
        let s = RngState::new(3);
        let base = gauss_sample(&s, &[5], 0.0, 1.0).unwrap();
        let mean = Tensor::from_elem(IxDyn(&[5]), 2.0);
        let std = Tensor::from_elem(IxDyn(&[5]), 0.5);
        let t = gauss_sample_like(&s, &mean, &std).unwrap();
        for (a, b) in t.iter().zip(base.iter()) {
            assert!((a - (2.0 + 0.5 * b)).abs() < 1e-15);
        }
    }

    #[test]
    fn gumbel_sigmoid_saturates() {
        for tau in [0.01, 0.1, 0.5, 1.0] {
            for i in 0..20 {
                let v = gumbel_sigmoid(&RngState::new(i), 50.0, tau).unwrap();
                assert!(v > 0.999);
            }
        }
    }

    #[test]
    fn gumbel_sigmoid_zero_temperature_limit() {
        for (logit, noise) in [(0.3, -0.1), (-0.3, 0.1), (1.0, -2.0)] {
            let v = gumbel_sigmoid_with_noise(logit, noise, 1e-4);
            let hard = if logit + noise > 0.0 { 1.0 } else { 0.0 };
            assert!((v - hard).abs() < 1e-6);
        }
    }

    #[test]
    fn gumbel_sigmoid_rejects_bad_temperature() {
        assert!(gumbel_sigmoid(&RngState::new(0), 0.0, 0.0).is_err());
        assert!(gumbel_sigmoid(&RngState::new(0), 0.0, -1.0).is_err());
    }

    #[test]
    fn hard_threshold_frequency_matches_sigmoid() {
        let n = 100_000;
        let mut rng = RngState::new(21).generator();
        let hits = (0..n)
            .filter(|_| gumbel_sigmoid_with_noise(0.8, logistic_noise(&mut rng), 1.0) > 0.5)
            .count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.6900).abs() <= 0.01, "freq {freq}");
        assert!((sigmoid(0.8) - 0.6900).abs() < 1e-4);
    }

    #[test]
    fn hard_threshold_within_three_standard_errors() {
        let n = 20_000;
        for (idx, logit) in [-2.0f64, 0.0, 2.0].into_iter().enumerate() {
            let mut rng = RngState::new(99).substream(idx as u64).generator();
            let hits = (0..n)
                .filter(|_| gumbel_sigmoid_with_noise(logit, logistic_noise(&mut rng), 1.0) > 0.5)
                .count();
            let p = sigmoid(logit);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let freq = hits as f64 / n as f64;
            assert!((freq - p).abs() <= 3.0 * se, "logit {logit}: {freq} vs {p}");
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
