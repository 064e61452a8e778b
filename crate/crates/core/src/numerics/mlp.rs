use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::standard_normal;
use crate::error::{Error, Result};

/// Fully connected network with tanh hidden layers and a linear output layer.
///
/// Parameters live in one flat vector (per layer: the `in x out` weight matrix
/// row-major, then the bias) so optimizers and gradient checkers can treat the
/// network as a single block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Layer activations kept from a forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct MlpCache {
    activations: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("at least input")
    }

    pub fn input(&self) -> &Array2<f64> {
        &self.activations[0]
    }
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an mlp needs input and output sizes");
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Self { sizes: sizes.to_vec(), params: vec![0.0; n] }
    }

    /// Glorot-normal weights (`std = sqrt(2 / (fan_in + fan_out))`), zero biases.
    pub fn glorot_normal<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut mlp = Self::zeros(sizes);
        let mut off = 0;
        for w in sizes.windows(2) {
            let std = (2.0 / (w[0] + w[1]) as f64).sqrt();
            for p in &mut mlp.params[off..off + w[0] * w[1]] {
                *p = std * standard_normal(rng);
            }
            off += w[0] * w[1] + w[1];
        }
        mlp
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn offset(&self, layer: usize) -> usize {
        self.sizes[..=layer].windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn weight(&self, layer: usize) -> ArrayView2<'_, f64> {
        let (i, o) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.offset(layer);
        ArrayView2::from_shape((i, o), &self.params[off..off + i * o]).expect("layout")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let (i, o) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.offset(layer) + i * o;
        ArrayView1::from(&self.params[off..off + o])
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut a = x.to_owned();
        for l in 0..self.n_layers() {
            a = self.affine(l, a.view());
            if l + 1 < self.n_layers() {
                a.mapv_inplace(f64::tanh);
            }
        }
        Ok(a)
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<MlpCache> {
        self.check_input(x.ncols())?;
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(x.to_owned());
        for l in 0..self.n_layers() {
            let mut a = self.affine(l, activations[l].view());
            if l + 1 < self.n_layers() {
                a.mapv_inplace(f64::tanh);
            }
            activations.push(a);
        }
        Ok(MlpCache { activations })
    }

    /// Backpropagate `d_out` (gradient w.r.t. the outputs of the cached pass).
    /// Returns the parameter gradient in the flat layout and the input gradient.
    pub fn backward(&self, cache: &MlpCache, d_out: ArrayView2<f64>) -> (Vec<f64>, Array2<f64>) {
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = d_out.to_owned();
        for l in (0..self.n_layers()).rev() {
            let a_in = &cache.activations[l];
            let off = self.offset(l);
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let dw = a_in.t().dot(&delta);
            grads[off..off + i * o].copy_from_slice(dw.as_standard_layout().as_slice().unwrap());
            let db = delta.sum_axis(Axis(0));
            grads[off + i * o..off + i * o + o].copy_from_slice(db.as_slice().unwrap());
            let mut d_in = delta.dot(&self.weight(l).t());
            if l > 0 {
                d_in.zip_mut_with(a_in, |d, a| *d *= 1.0 - a * a);
            }
            delta = d_in;
        }
        (grads, delta)
    }

    fn affine(&self, layer: usize, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.dot(&self.weight(layer));
        out += &self.bias(layer);
        out
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_dim() {
            return Err(Error::ShapeMismatch { expected: vec![self.input_dim()], got: vec![width] });
        }
        Ok(())
    }
}
