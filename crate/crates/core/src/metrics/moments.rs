use ndarray::{Array1, ArrayView2, Axis};

use crate::error::{invalid, Error, Result};

fn means(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
    if x.ncols() != y.ncols() {
        return Err(Error::ShapeMismatch { expected: vec![y.ncols()], got: vec![x.ncols()] });
    }
    match (x.mean_axis(Axis(0)), y.mean_axis(Axis(0))) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(invalid("empirical means need at least one row")),
    }
}

/// Euclidean distance between the empirical means.
pub fn mean_distance(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<f64> {
    let (a, b) = means(x, y)?;
    Ok((&a - &b).mapv(|v| v * v).sum().sqrt())
}

/// Pearson correlation across coordinates of the two mean vectors; 0 when
/// either mean vector is constant.
pub fn pearson_means(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<f64> {
    let (a, b) = means(x, y)?;
    let (ma, mb) = (a.mean().unwrap_or(0.0), b.mean().unwrap_or(0.0));
    let (ca, cb) = (a - ma, b - mb);
    let den = (ca.dot(&ca) * cb.dot(&cb)).sqrt();
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok((ca.dot(&cb) / den).clamp(-1.0, 1.0))
}
