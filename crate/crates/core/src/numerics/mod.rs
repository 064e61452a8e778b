//! Numerical building blocks shared by every other module: seeded random
//! streams, reparameterized samplers, Adam, PCA, a small batched MLP and a
//! central finite-difference gradient checker.

mod adam;
mod finite_diff;
mod mlp;
mod pca;
mod rng;
mod sample;

pub use adam::{adam_step, AdamState};
pub use finite_diff::finite_diff_grad;
pub use mlp::{Mlp, MlpCache};
pub use pca::{pca_fit, PcaModel};
pub use rng::RngState;
pub use sample::{
    gauss_sample, gauss_sample_like, gumbel_sigmoid, gumbel_sigmoid_with_noise, logistic_noise,
    sigmoid, standard_normal,
};

/// Dense real tensor in row-major order.
pub type Tensor = ndarray::ArrayD<f64>;

/// Numerically stable `log(sum(exp(values)))`. Returns `-inf` for an empty slice.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Softmax weights `exp(v_i - logsumexp(v))`.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let lse = logsumexp(values);
    values.iter().map(|v| (v - lse).exp()).collect()
}
