//! Central finite differences, the independent oracle for [`Tape::backward`].
//!
//! [`Tape::backward`]: super::Tape::backward

use super::Tensor;

/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every element `i`.
pub fn finite_difference_gradient(f: impl Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    assert!(h > 0.0, "finite difference step must be positive");
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    Tensor::new(x.shape().to_vec(), grad).expect("shape preserved")
}

/// Smallest magnitude used as the denominator of [`relative_error`]; below it
/// the comparison is effectively absolute.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Largest element-wise [`relative_error`] between two equally shaped tensors.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &b)| relative_error(a, b))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let g = finite_difference_gradient(|t| t.data().iter().map(|v| v * v).sum(), &Tensor::scalar(3.0), 1e-5);
        assert!((g.item() - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_function() {
        let x = Tensor::from_vec(vec![1.0, -4.0, 2.5]);
        let g = finite_difference_gradient(|_| 7.0, &x, 1e-5);
        assert!(g.max_abs() < 1e-8);
    }

    #[test]
    fn linear_function() {
        let x = Tensor::from_vec(vec![0.5, -1.5, 3.0, 10.0]);
        let g = finite_difference_gradient(|t| 2.0 * t.sum(), &x, 1e-5);
        for v in g.data() {
            assert!((v - 2.0).abs() < 1e-8);
        }
    }
}
