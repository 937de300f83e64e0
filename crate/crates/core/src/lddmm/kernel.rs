//! Scalar Gaussian reproducing kernel `k(x, y) = exp(−|x − y|²/σ²)`, acting
//! on vectors as `k · I₃`.

use crate::error::{Error, Result};
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianKernel {
    sigma: f64,
    inv_s2: f64,
}

impl GaussianKernel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("kernel width must be positive, got {sigma}")));
        }
        Ok(GaussianKernel { sigma, inv_s2: 1.0 / (sigma * sigma) })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    #[inline]
    pub fn value(&self, a: [f64; 3], b: [f64; 3]) -> f64 {
        (-dist2(a, b) * self.inv_s2).exp()
    }

    /// Kernel value and `∇_a k(a, b) = −2(a − b)/σ² · k`.
    #[inline]
    pub fn value_and_grad(&self, a: [f64; 3], b: [f64; 3]) -> (f64, [f64; 3]) {
        let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        let k = (-(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) * self.inv_s2).exp();
        let c = -2.0 * self.inv_s2 * k;
        (k, [c * d[0], c * d[1], c * d[2]])
    }

    /// `Σ_j k(a_i, b_j) v_j` for every `a_i`.
    pub fn apply(&self, points_a: &[[f64; 3]], points_b: &[[f64; 3]], vectors_b: &[[f64; 3]]) -> Vec<[f64; 3]> {
        assert_eq!(points_b.len(), vectors_b.len());
        points_a
            .par_iter()
            .map(|&a| {
                let mut acc = [0.0; 3];
                for (&b, v) in points_b.iter().zip(vectors_b) {
                    let k = self.value(a, b);
                    acc[0] += k * v[0];
                    acc[1] += k * v[1];
                    acc[2] += k * v[2];
                }
                acc
            })
            .collect()
    }
}

#[inline]
pub(crate) fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// `Σ_j k(a_i, b_j) v_j` with a Gaussian of width `sigma`.
pub fn kernel_apply(
    points_a: &[[f64; 3]],
    points_b: &[[f64; 3]],
    vectors_b: &[[f64; 3]],
    sigma: f64,
) -> Result<Vec<[f64; 3]>> {
    if points_b.len() != vectors_b.len() {
        return Err(Error::Dimension { expected: points_b.len(), got: vectors_b.len() });
    }
    Ok(GaussianKernel::new(sigma)?.apply(points_a, points_b, vectors_b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_at_zero_distance_and_e_inverse_at_sigma() {
        let v = kernel_apply(&[[1.0, 2.0, 3.0]], &[[1.0, 2.0, 3.0]], &[[0.5, -1.0, 2.0]], 2.0).unwrap();
        assert_eq!(v[0], [0.5, -1.0, 2.0]);
        let v = kernel_apply(&[[0.0; 3]], &[[0.0, 2.0, 0.0]], &[[1.0, 0.0, 0.0]], 2.0).unwrap();
        assert!((v[0][0] - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_difference_quotient() {
        let k = GaussianKernel::new(1.7).unwrap();
        let a = [0.3, -0.4, 1.1];
        let b = [1.0, 0.2, -0.5];
        let (_, g) = k.value_and_grad(a, b);
        for i in 0..3 {
            let mut p = a;
            let mut m = a;
            p[i] += 1e-6;
            m[i] -= 1e-6;
            let fd = (k.value(p, b) - k.value(m, b)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-9);
        }
    }
}
