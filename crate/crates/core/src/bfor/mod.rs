//! The BFOR q-space basis: spherical Bessel radial functions times
//! symmetric spherical harmonics, supported on the ball `|q| < tau`.
//!
//! Coefficient vectors are ordered radial-index major: entry
//! `(n - 1) * N_Y + j` holds `c_{n j}`.

mod bessel;
pub mod eap;

pub use bessel::{bessel_half_integer, bessel_root, spherical_bessel};
pub use crate::field::l2_norm;
pub use eap::{eap_grid, generalized_fa, scalar_features, EapGrid, EapPlan, ScalarFeatures};

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre_interval;
use crate::sphharm::{self, ShIndex, ShTable, MAX_ORDER};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

static BASIS_EVALUATIONS: AtomicU64 = AtomicU64::new(0);

/// Total number of single basis-function evaluations performed by this
/// process so far.
pub fn basis_evaluation_count() -> u64 {
    BASIS_EVALUATIONS.load(Ordering::Relaxed)
}

/// Diffusivity of free water at body temperature, mm²/s.
pub const FREE_WATER_DIFFUSIVITY: f64 = 3e-3;

/// Diffusion time implied by the reference HYDI scheme (`b = 4π²q²t`,
/// first shell b = 300 s/mm² at q = 15.79 mm⁻¹).
pub fn reference_diffusion_time() -> f64 {
    300.0 / (4.0 * PI * PI * 15.79 * 15.79)
}

/// Truncation orders, support radius and precomputed root table.
#[derive(Clone, Debug)]
pub struct BforBasisSpec {
    order: usize,
    radial: usize,
    tau: f64,
    // indexed [(n - 1) * (order / 2 + 1) + l / 2]
    roots: Vec<f64>,
    prefactor: Vec<f64>,
    table: ShTable,
}

impl PartialEq for BforBasisSpec {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order && self.radial == other.radial && self.tau == other.tau
    }
}

impl BforBasisSpec {
    /// `order` is the even SH truncation `L`, `radial` the number of radial
    /// functions `N_b`, `tau` the support radius in mm⁻¹.
    pub fn new(order: i64, radial: usize, tau: f64) -> Result<Self> {
        sphharm::sh_count(order)?;
        if radial == 0 {
            return Err(Error::InvalidArgument("radial order must be at least 1".into()));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
        }
        let order = order as usize;
        let nl = order / 2 + 1;
        let mut roots = Vec::with_capacity(radial * nl);
        let mut prefactor = Vec::with_capacity(radial * nl);
        for n in 1..=radial {
            for l in (0..=order).step_by(2) {
                let a = bessel_root(n, l);
                let j = bessel_half_integer(l + 1, a);
                roots.push(a);
                prefactor.push(2.0 * a.sqrt() / ((PI * tau.powi(3)).sqrt() * j));
            }
        }
        Ok(BforBasisSpec {
            order,
            radial,
            tau,
            roots,
            prefactor,
            table: ShTable::new(order),
        })
    }

    /// Default truncation (L = 4, N_b = 6) with `tau = 1.25 · q_max`.
    pub fn for_max_q(q_max: f64) -> Result<Self> {
        Self::new(4, 6, 1.25 * q_max)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn radial(&self) -> usize {
        self.radial
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Number of angular functions `N_Y`.
    pub fn sh_len(&self) -> usize {
        self.table.len()
    }

    /// Length of a coefficient vector, `N_b · N_Y`.
    pub fn len(&self) -> usize {
        self.radial * self.sh_len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `α_{n,l}`, the `n`-th root of `j_l`.
    pub fn root(&self, n: usize, l: usize) -> f64 {
        self.roots[self.slot(n, l)]
    }

    fn slot(&self, n: usize, l: usize) -> usize {
        assert!(n >= 1 && n <= self.radial && l % 2 == 0 && l <= self.order);
        (n - 1) * (self.order / 2 + 1) + l / 2
    }

    /// `(n, index)` of every coefficient slot, `n` counted from 1.
    pub fn channels(&self) -> Vec<(usize, ShIndex)> {
        let sh = sphharm::indices(self.order);
        (1..=self.radial)
            .flat_map(|n| sh.iter().map(move |&i| (n, i)))
            .collect()
    }

    /// Degree `l` of every coefficient slot.
    pub fn channel_degrees(&self) -> Vec<usize> {
        self.channels().into_iter().map(|(_, i)| i.l).collect()
    }

    fn check_q(&self, q: [f64; 3]) -> Result<f64> {
        let r = norm3(q);
        if !r.is_finite() || r >= self.tau {
            return Err(Error::Domain(format!("|q| = {r} outside support radius {}", self.tau)));
        }
        Ok(r)
    }

    /// `Ψ_{n j}(q)`.
    pub fn basis_eval(&self, n: usize, index: ShIndex, q: [f64; 3]) -> Result<f64> {
        if n == 0 || n > self.radial {
            return Err(Error::InvalidArgument(format!("radial index {n} outside 1..={}", self.radial)));
        }
        if index.l > self.order || index.l % 2 != 0 || index.m.unsigned_abs() as usize > index.l {
            return Err(Error::InvalidOrder(index.l as i64));
        }
        let r = self.check_q(q)?;
        BASIS_EVALUATIONS.fetch_add(1, Ordering::Relaxed);
        let s = self.slot(n, index.l);
        let radial = self.prefactor[s] * spherical_bessel(index.l, self.roots[s] * r / self.tau);
        let y = self.table.eval(direction(q, r));
        Ok(radial * y[index.linear()])
    }

    /// Every basis function at `q`, in coefficient order.
    pub fn eval_all(&self, q: [f64; 3]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        self.eval_all_into(q, &mut out)?;
        Ok(out)
    }

    pub fn eval_all_into(&self, q: [f64; 3], out: &mut [f64]) -> Result<()> {
        if out.len() != self.len() {
            return Err(Error::Dimension { expected: self.len(), got: out.len() });
        }
        let r = self.check_q(q)?;
        BASIS_EVALUATIONS.fetch_add(self.len() as u64, Ordering::Relaxed);
        let mut y = [0.0; (MAX_ORDER + 1) * (MAX_ORDER + 2) / 2];
        let ny = self.sh_len();
        self.table.eval_into(direction(q, r), &mut y[..ny]);
        for n in 1..=self.radial {
            for l in (0..=self.order).step_by(2) {
                let s = self.slot(n, l);
                let radial = self.prefactor[s] * spherical_bessel(l, self.roots[s] * r / self.tau);
                let base = (n - 1) * ny;
                for j in sphharm::degree_range(l) {
                    out[base + j] = radial * y[j];
                }
            }
        }
        Ok(())
    }

    /// Signal `Σ c_{nj} Ψ_{nj}(q)`.
    pub fn reconstruct(&self, c: &[f64], q: [f64; 3]) -> Result<f64> {
        if c.len() != self.len() {
            return Err(Error::Dimension { expected: self.len(), got: c.len() });
        }
        let psi = self.eval_all(q)?;
        Ok(dot(&psi, c))
    }

    /// Coefficients of the isotropic signal `exp(-4π²|q|²·t·d)` obtained by
    /// projecting it onto the basis over the support ball. Only `l = 0`
    /// entries are non-zero.
    pub fn isotropic_coefficients(&self, diffusivity: f64, diffusion_time: f64) -> Vec<f64> {
        let (r, w) = gauss_legendre_interval(96, 0.0, self.tau);
        let y00 = 1.0 / (4.0 * PI).sqrt();
        let mut c = vec![0.0; self.len()];
        for n in 1..=self.radial {
            let s = self.slot(n, 0);
            let mut acc = 0.0;
            for (ri, wi) in r.iter().zip(&w) {
                let e = (-4.0 * PI * PI * ri * ri * diffusion_time * diffusivity).exp();
                acc += wi * ri * ri * e * spherical_bessel(0, self.roots[s] * ri / self.tau);
            }
            // ∫ Y_00 dΩ = 4π · Y_00
            c[(n - 1) * self.sh_len()] = self.prefactor[s] * 4.0 * PI * y00 * acc;
        }
        c
    }

    /// Free-water coefficients at the reference diffusion time; the value
    /// fields take outside their grid.
    pub fn free_water(&self) -> Vec<f64> {
        self.isotropic_coefficients(FREE_WATER_DIFFUSIVITY, reference_diffusion_time())
    }
}

fn direction(q: [f64; 3], r: f64) -> [f64; 3] {
    if r > 0.0 {
        [q[0] / r, q[1] / r, q[2] / r]
    } else {
        [0.0, 0.0, 1.0]
    }
}

pub(crate) fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Result of fitting one voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct Fit {
    pub coefficients: Vec<f64>,
    /// Root-mean-square residual over the samples.
    pub residual_rms: f64,
}

/// Ridge-regularised least squares fit for a fixed set of q-vectors.
///
/// The penalty is `ridge · s · Σ l²(l+1)² c²`, where `s` is the mean
/// diagonal of `AᵀA`; scaling by `s` makes `ridge` dimensionless.
#[derive(Clone, Debug)]
pub struct Fitter {
    spec: BforBasisSpec,
    design: DMatrix<f64>,
    // (AᵀA + ridge·s·Λ)⁻¹ Aᵀ
    solve: DMatrix<f64>,
}

impl Fitter {
    pub fn new(spec: &BforBasisSpec, qs: &[[f64; 3]], ridge: f64) -> Result<Self> {
        if qs.is_empty() {
            return Err(Error::Empty("sample list"));
        }
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::InvalidArgument(format!("ridge must be non-negative, got {ridge}")));
        }
        let p = spec.len();
        let mut design = DMatrix::zeros(qs.len(), p);
        let mut row = vec![0.0; p];
        for (k, q) in qs.iter().enumerate() {
            spec.eval_all_into(*q, &mut row)?;
            for (i, v) in row.iter().enumerate() {
                design[(k, i)] = *v;
            }
        }
        let mut normal = design.transpose() * &design;
        let scale = normal.trace() / p as f64;
        for (i, l) in spec.channel_degrees().into_iter().enumerate() {
            let lf = l as f64;
            normal[(i, i)] += ridge * scale * lf * lf * (lf + 1.0) * (lf + 1.0);
        }
        let eig = SymmetricEigen::new(normal.clone());
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if !(max > 0.0) || min <= 1e-12 * max {
            return Err(Error::RankDeficient(min));
        }
        let chol = normal
            .cholesky()
            .ok_or(Error::RankDeficient(min))?;
        let solve = chol.solve(&design.transpose());
        Ok(Fitter { spec: spec.clone(), design, solve })
    }

    pub fn spec(&self) -> &BforBasisSpec {
        &self.spec
    }

    pub fn sample_count(&self) -> usize {
        self.design.nrows()
    }

    pub fn fit(&self, values: &[f64]) -> Result<Fit> {
        if values.len() != self.design.nrows() {
            return Err(Error::Dimension { expected: self.design.nrows(), got: values.len() });
        }
        let e = DVector::from_column_slice(values);
        let c = &self.solve * &e;
        let resid = &self.design * &c - e;
        Ok(Fit {
            coefficients: c.as_slice().to_vec(),
            residual_rms: (resid.norm_squared() / values.len() as f64).sqrt(),
        })
    }
}

/// Fit one set of `(q, E)` samples.
pub fn fit_coefficients(samples: &[([f64; 3], f64)], spec: &BforBasisSpec, ridge: f64) -> Result<Fit> {
    if samples.is_empty() {
        return Err(Error::Empty("sample list"));
    }
    let qs: Vec<[f64; 3]> = samples.iter().map(|s| s.0).collect();
    let values: Vec<f64> = samples.iter().map(|s| s.1).collect();
    Fitter::new(spec, &qs, ridge)?.fit(&values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::SphereRule;

    #[test]
    fn zero_at_origin_for_anisotropic_terms() {
        let spec = BforBasisSpec::new(4, 3, 50.0).unwrap();
        let psi = spec.eval_all([0.0; 3]).unwrap();
        for (v, l) in psi.iter().zip(spec.channel_degrees()) {
            if l > 0 {
                assert_eq!(*v, 0.0);
            } else {
                assert!(v.abs() > 0.0);
            }
        }
    }

    #[test]
    fn domain_is_open_ball() {
        let spec = BforBasisSpec::new(2, 2, 10.0).unwrap();
        assert!(matches!(spec.eval_all([10.0, 0.0, 0.0]), Err(Error::Domain(_))));
        assert!(spec.reconstruct(&vec![0.0; spec.len()], [0.0, 9.99, 0.0]).is_ok());
    }

    #[test]
    fn vanishes_at_support_radius() {
        let spec = BforBasisSpec::new(4, 4, 20.0).unwrap();
        let psi = spec.eval_all([0.0, 0.0, 20.0 * (1.0 - 1e-12)]).unwrap();
        assert!(psi.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn gram_small() {
        let spec = BforBasisSpec::new(2, 2, 5.0).unwrap();
        let (r, wr) = gauss_legendre_interval(40, 0.0, 5.0);
        let rule = SphereRule::exact_for_degree(8);
        let p = spec.len();
        let mut g = vec![0.0; p * p];
        for (ri, wi) in r.iter().zip(&wr) {
            for (u, wu) in rule.points.iter().zip(&rule.weights) {
                let psi = spec.eval_all([u[0] * ri, u[1] * ri, u[2] * ri]).unwrap();
                for a in 0..p {
                    for b in 0..p {
                        g[a * p + b] += wi * wu * ri * ri * psi[a] * psi[b];
                    }
                }
            }
        }
        for a in 0..p {
            for b in 0..p {
                let e = if a == b { 1.0 } else { 0.0 };
                assert!((g[a * p + b] - e).abs() < 1e-8, "({a},{b}) {}", g[a * p + b]);
            }
        }
    }

    #[test]
    fn free_water_is_isotropic_projection() {
        let spec = BforBasisSpec::for_max_q(78.95).unwrap();
        let c = spec.free_water();
        for (v, l) in c.iter().zip(spec.channel_degrees()) {
            if l > 0 {
                assert_eq!(*v, 0.0);
            }
        }
        // with enough radial functions the projection converges to the signal
        let fine = BforBasisSpec::new(0, 16, spec.tau()).unwrap();
        let c = fine.free_water();
        let t = reference_diffusion_time();
        for q in [0.0, 10.0, 30.0] {
            let e = (-4.0 * PI * PI * q * q * t * FREE_WATER_DIFFUSIVITY).exp();
            let s = fine.reconstruct(&c, [q, 0.0, 0.0]).unwrap();
            assert!((s - e).abs() < 1e-3, "q={q}: {s} vs {e}");
        }
    }

    #[test]
    fn fit_rejects_empty_and_singular() {
        let spec = BforBasisSpec::new(4, 2, 10.0).unwrap();
        assert!(matches!(fit_coefficients(&[], &spec, 0.0), Err(Error::Empty(_))));
        let few = [([1.0, 0.0, 0.0], 1.0), ([0.0, 1.0, 0.0], 0.5)];
        assert!(matches!(fit_coefficients(&few, &spec, 0.0), Err(Error::RankDeficient(_))));
    }
}
