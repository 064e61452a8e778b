use super::Tensor;
use crate::error::{Error, Result};

/// Central-difference gradient `(f(x + h e_i) - f(x - h e_i)) / 2h` of a scalar function.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let mut probe = x.as_standard_layout().into_owned();
    let mut grad = Tensor::zeros(x.raw_dim());
    let n = probe.len();
    for i in 0..n {
        let orig = probe.as_slice().unwrap()[i];
        probe.as_slice_mut().unwrap()[i] = orig + h;
        let up = f(&probe);
        probe.as_slice_mut().unwrap()[i] = orig - h;
        let down = f(&probe);
        probe.as_slice_mut().unwrap()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective not finite around coordinate {i} (f(x+h)={up}, f(x-h)={down})"
            )));
        }
        grad.as_slice_mut().unwrap()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};
    use std::f64::consts::FRAC_PI_2;

    fn t(v: &[f64]) -> Tensor {
        ArrayD::from_shape_vec(IxDyn(&[v.len()]), v.to_vec()).unwrap()
    }

    #[test]
    fn square() {
        let g = finite_diff_grad(|x| x[[0]] * x[[0]], &t(&[3.0]), 1e-4).unwrap();
        assert!((g[[0]] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = finite_diff_grad(|_| 4.2, &t(&[1.0, 2.0, 3.0]), 1e-4).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sum_of_sines() {
        let g = finite_diff_grad(|x| x.iter().map(|v| v.sin()).sum(), &t(&[0.0, FRAC_PI_2]), 1e-4)
            .unwrap();
        assert!((g[[0]] - 1.0).abs() < 1e-6);
        assert!(g[[1]].abs() < 1e-6);
    }

    #[test]
    fn non_finite_names_coordinate() {
        let err = finite_diff_grad(
            |x| if x[[1]] > 0.5 { f64::NAN } else { 0.0 },
            &t(&[0.0, 0.5]),
            1e-3,
        )
        .unwrap_err();
        assert!(err.to_string().contains("coordinate 1"), "{err}");
    }
}
