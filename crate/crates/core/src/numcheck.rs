//! Central finite-difference machinery for validating analytic gradients.
//!
//! The checks here treat the function under test as a black box: they perturb
//! one input coordinate at a time and difference the scalar output. Keeping
//! this module independent of how any backward pass is implemented is the
//! point; a backward bug cannot hide in its own oracle.

use crate::tensor::Scalar;

/// Default step for central differences. With f64 this balances truncation
/// (`~h^2`) against roundoff (`~eps/h`) for O(1) values.
pub const FD_STEP: Scalar = 1e-5;

/// `|a - b| / (max(|a|, |b|) + 1e-6)`. The additive floor keeps the measure
/// meaningful when both sides are near zero.
pub fn relative_error(a: Scalar, b: Scalar) -> Scalar {
    (a - b).abs() / (a.abs().max(b.abs()) + 1e-6)
}

/// Numeric gradient of `f` at `x` by central differences with step `h`.
pub fn numeric_gradient(f: &mut dyn FnMut(&[Scalar]) -> Scalar, x: &[Scalar], h: Scalar) -> Vec<Scalar> {
    let mut xs = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = xs[i];
        xs[i] = orig + h;
        let fp = f(&xs);
        xs[i] = orig - h;
        let fm = f(&xs);
        xs[i] = orig;
        grad.push((fp - fm) / (2.0 * h));
    }
    grad
}

/// Largest relative error between an analytic gradient and the central
/// finite-difference gradient of `f` at `x`.
pub fn max_gradient_error(
    f: &mut dyn FnMut(&[Scalar]) -> Scalar,
    x: &[Scalar],
    analytic: &[Scalar],
    h: Scalar,
) -> Scalar {
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let numeric = numeric_gradient(f, x, h);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, Scalar::max)
}

/// Same as [`max_gradient_error`] but only over the listed coordinates.
/// Used when a full sweep would be too slow (e.g. whole-model checks).
pub fn max_gradient_error_at(
    f: &mut dyn FnMut(&[Scalar]) -> Scalar,
    x: &[Scalar],
    analytic: &[Scalar],
    coords: &[usize],
    h: Scalar,
) -> Scalar {
    let mut xs = x.to_vec();
    let mut worst: Scalar = 0.0;
    for &i in coords {
        let orig = xs[i];
        xs[i] = orig + h;
        let fp = f(&xs);
        xs[i] = orig - h;
        let fm = f(&xs);
        xs[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_gradient_matches_quadratic() {
        // f(x) = sum(x_i^2) has gradient 2x; central differences are exact for
        // quadratics up to roundoff.
        let x = [0.5, -1.25, 2.0];
        let grad = numeric_gradient(&mut |v| v.iter().map(|a| a * a).sum(), &x, FD_STEP);
        for (g, xi) in grad.iter().zip(&x) {
            assert!(relative_error(*g, 2.0 * xi) < 1e-9);
        }
    }

    #[test]
    fn relative_error_handles_zeros() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1.0, 1.0 + 1e-9) < 1e-8);
        assert!(relative_error(1.0, 2.0) > 0.3);
    }
}
