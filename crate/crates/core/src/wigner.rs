//! Rotation of coefficient vectors, finite-strain rotations of deformation
//! Jacobians and their derivatives.
//!
//! `M(R)` acts on SH coefficients so that the rotated function is
//! `u ↦ S(R⁻¹u)`: if `S(u) = Σ c_j Y_j(u)` then `S(R⁻¹u) = Σ (M(R)c)_j Y_j(u)`.
//! With this convention `M(R₁R₂) = M(R₁)M(R₂)`.

use crate::error::{Error, Result};
use crate::quadrature::SphereRule;
use crate::sphharm::{degree_range, ShTable, MAX_ORDER};
use nalgebra::{Matrix3, SymmetricEigen, Vector3};

/// Block-diagonal rotation operator for even-degree SH coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct WignerBlock {
    rotation: Matrix3<f64>,
    order: usize,
    // one row-major (2l+1)² block per even degree
    blocks: Vec<Vec<f64>>,
}

impl WignerBlock {
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Dense `(2l+1)×(2l+1)` block of degree `l`, row-major.
    pub fn block(&self, l: usize) -> &[f64] {
        &self.blocks[l / 2]
    }

    /// Number of SH coefficients the operator acts on.
    pub fn sh_len(&self) -> usize {
        (self.order + 1) * (self.order + 2) / 2
    }

    /// Apply to one SH block of length `N_Y`.
    pub fn apply_sh(&self, c: &[f64], out: &mut [f64]) {
        for l in (0..=self.order).step_by(2) {
            let r = degree_range(l);
            let d = 2 * l + 1;
            let b = &self.blocks[l / 2];
            for a in 0..d {
                let row = &b[a * d..(a + 1) * d];
                out[r.start + a] = row.iter().zip(&c[r.clone()]).map(|(x, y)| x * y).sum();
            }
        }
    }

    /// Full `N_Y × N_Y` matrix, row-major.
    pub fn dense(&self) -> Vec<f64> {
        let n = self.sh_len();
        let mut m = vec![0.0; n * n];
        for l in (0..=self.order).step_by(2) {
            let r = degree_range(l);
            let d = 2 * l + 1;
            for a in 0..d {
                for b in 0..d {
                    m[(r.start + a) * n + r.start + b] = self.blocks[l / 2][a * d + b];
                }
            }
        }
        m
    }
}

/// Precomputed quadrature and harmonic samples for building many
/// [`WignerBlock`]s of one order.
#[derive(Clone, Debug)]
pub struct WignerBuilder {
    order: usize,
    table: ShTable,
    rule: SphereRule,
    // weight-scaled Y_j(u_k), node-major
    weighted: Vec<f64>,
}

impl WignerBuilder {
    pub fn new(order: usize) -> Result<Self> {
        if order % 2 != 0 || order > MAX_ORDER {
            return Err(Error::InvalidOrder(order as i64));
        }
        let table = ShTable::new(order);
        let rule = SphereRule::exact_for_degree(2 * order);
        let n = table.len();
        let mut weighted = Vec::with_capacity(rule.len() * n);
        for (u, w) in rule.points.iter().zip(&rule.weights) {
            weighted.extend(table.eval(*u).into_iter().map(|y| y * w));
        }
        Ok(WignerBuilder { order, table, rule, weighted })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Validating constructor.
    pub fn build(&self, r: &Matrix3<f64>) -> Result<WignerBlock> {
        check_rotation(r)?;
        Ok(self.build_unchecked(r))
    }

    /// `M_{jj'} = ∫ Y_j(u) Y_{j'}(R⁻¹u) dΩ`, exact under the product rule.
    pub fn build_unchecked(&self, r: &Matrix3<f64>) -> WignerBlock {
        let n = self.table.len();
        let rt = r.transpose();
        let mut blocks: Vec<Vec<f64>> = (0..=self.order)
            .step_by(2)
            .map(|l| vec![0.0; (2 * l + 1) * (2 * l + 1)])
            .collect();
        let mut yr = [0.0; (MAX_ORDER + 1) * (MAX_ORDER + 2) / 2];
        for (k, u) in self.rule.points.iter().enumerate() {
            let v = rt * Vector3::new(u[0], u[1], u[2]);
            self.table.eval_into([v[0], v[1], v[2]], &mut yr[..n]);
            let wy = &self.weighted[k * n..(k + 1) * n];
            for l in (0..=self.order).step_by(2) {
                let range = degree_range(l);
                let d = 2 * l + 1;
                let b = &mut blocks[l / 2];
                for a in 0..d {
                    let ya = wy[range.start + a];
                    for c in 0..d {
                        b[a * d + c] += ya * yr[range.start + c];
                    }
                }
            }
        }
        WignerBlock { rotation: *r, order: self.order, blocks }
    }
}

fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if !(err <= 1e-8) {
        return Err(Error::InvalidRotation(format!("‖RᵀR − I‖ = {err:e}")));
    }
    let det = r.determinant();
    if det <= 0.0 {
        return Err(Error::InvalidRotation(format!("determinant {det}")));
    }
    Ok(())
}

/// One-off construction of `M(R)` for truncation order `order`.
pub fn wigner_from_rotation(r: &Matrix3<f64>, order: usize) -> Result<WignerBlock> {
    WignerBuilder::new(order)?.build(r)
}

/// Apply `M(R)` to every radial block of a BFOR coefficient vector.
pub fn reorient(c: &[f64], w: &WignerBlock) -> Result<Vec<f64>> {
    let mut out = vec![0.0; c.len()];
    reorient_into(c, w, &mut out)?;
    Ok(out)
}

pub fn reorient_into(c: &[f64], w: &WignerBlock, out: &mut [f64]) -> Result<()> {
    let ny = w.sh_len();
    if c.len() % ny != 0 || c.is_empty() {
        return Err(Error::Dimension { expected: ny, got: c.len() });
    }
    if out.len() != c.len() {
        return Err(Error::Dimension { expected: c.len(), got: out.len() });
    }
    for (src, dst) in c.chunks_exact(ny).zip(out.chunks_exact_mut(ny)) {
        w.apply_sh(src, dst);
    }
    Ok(())
}

/// Rotation by `angle` about coordinate axis `axis`.
pub fn axis_rotation(axis: usize, angle: f64) -> Matrix3<f64> {
    let mut v = Vector3::zeros();
    v[axis] = angle;
    rodrigues(&v)
}

/// `exp([v]×)`.
pub fn rodrigues(v: &Vector3<f64>) -> Matrix3<f64> {
    let theta = v.norm();
    let k = skew(v);
    if theta < 1e-12 {
        return Matrix3::identity() + k;
    }
    Matrix3::identity() + k * (theta.sin() / theta) + k * k * ((1.0 - theta.cos()) / (theta * theta))
}

/// `[v]×`, so that `[v]× w = v × w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// Rotations about the coordinate axes by `delta` and their Wigner blocks;
/// shared by every voxel of a gradient evaluation.
#[derive(Clone, Debug)]
pub struct PerturbationBlocks {
    delta: f64,
    blocks: [WignerBlock; 3],
}

impl PerturbationBlocks {
    pub fn new(builder: &WignerBuilder, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
        }
        let b = |a| builder.build_unchecked(&axis_rotation(a, delta));
        Ok(PerturbationBlocks { delta, blocks: [b(0), b(1), b(2)] })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Rows `(M(e^{δU_i})ĉ − ĉ)/δ`, i = x, y, z.
    pub fn rotated_coeff_gradient(&self, c_hat: &[f64]) -> Result<[Vec<f64>; 3]> {
        let mut rows: [Vec<f64>; 3] = Default::default();
        for (i, row) in rows.iter_mut().enumerate() {
            let mut r = reorient(c_hat, &self.blocks[i])?;
            for (x, c) in r.iter_mut().zip(c_hat) {
                *x = (*x - c) / self.delta;
            }
            *row = r;
        }
        Ok(rows)
    }

    /// `G ρ` for `G` the gradient above, without materialising `G`.
    pub fn contract(&self, c_hat: &[f64], rho: &[f64], scratch: &mut [f64]) -> Vector3<f64> {
        let ny = self.blocks[0].sh_len();
        let mut s = Vector3::zeros();
        for i in 0..3 {
            for (src, dst) in c_hat.chunks_exact(ny).zip(scratch.chunks_exact_mut(ny)) {
                self.blocks[i].apply_sh(src, dst);
            }
            let mut acc = 0.0;
            for ((x, c), r) in scratch.iter().zip(c_hat).zip(rho) {
                acc += (x - c) * r;
            }
            s[i] = acc / self.delta;
        }
        s
    }
}

/// `rotated_coeff_gradient` for a one-off call.
pub fn rotated_coeff_gradient(c_hat: &[f64], order: usize, delta: f64) -> Result<[Vec<f64>; 3]> {
    let builder = WignerBuilder::new(order)?;
    PerturbationBlocks::new(&builder, delta)?.rotated_coeff_gradient(c_hat)
}

/// Orthogonal polar factor `R = (JJᵀ)^{-1/2} J`.
pub fn finite_strain_rotation(jac: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let det = jac.determinant();
    if !(det > 0.0) || !det.is_finite() {
        return Err(Error::Folding(format!("jacobian determinant {det}")));
    }
    let svd = jac.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        // only reachable through round-off on near-degenerate input
        let mut u = u;
        let k = svd.singular_values.imin();
        u.column_mut(k).neg_mut();
        r = u * vt;
    }
    Ok(r)
}

/// Symmetric positive square root of a symmetric positive semidefinite matrix.
pub fn sym_sqrt(a: &Matrix3<f64>) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(*a);
    let d = Matrix3::from_diagonal(&eig.eigenvalues.map(|x| x.max(0.0).sqrt()));
    eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// `F = −Rᵀ (tr(S)I − S)⁻¹ R` with `S = (JJᵀ)^{1/2}`.
///
/// Combined with [`rotation_variation`] it gives the derivative of
/// [`finite_strain_rotation`].
pub fn finite_strain_differential(jac: &Matrix3<f64>, r: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let s = sym_sqrt(&(jac * jac.transpose()));
    let a = Matrix3::identity() * s.trace() - s;
    let scale = s.trace().powi(3);
    let det = a.determinant();
    if !(det > 1e-14 * scale) {
        return Err(Error::DegenerateJacobian(format!("tr(S)I − S has determinant {det:e}")));
    }
    let inv = a.try_inverse().ok_or_else(|| Error::DegenerateJacobian("tr(S)I − S is singular".into()))?;
    Ok(-(r.transpose() * inv * r))
}

/// `Σ_i r_i × h_i`, where `r_i` are the rows of `R` and `h_i` the rows of
/// a Jacobian perturbation `H`.
pub fn row_cross_sum(r: &Matrix3<f64>, h: &Matrix3<f64>) -> Vector3<f64> {
    let mut s = Vector3::zeros();
    for i in 0..3 {
        let ri = r.row(i).transpose();
        let hi = h.row(i).transpose();
        s += ri.cross(&hi);
    }
    s
}

/// Angular velocity `ω` of the polar factor when the Jacobian moves along
/// `H`: `dR = [ω]× R` with `ω = R F Σ_i r_i × h_i`.
pub fn rotation_variation(r: &Matrix3<f64>, f: &Matrix3<f64>, h: &Matrix3<f64>) -> Vector3<f64> {
    r * (f * row_cross_sum(r, h))
}
