//! Matching energy between a deformed atlas and a target, and its exact
//! gradient with respect to the endpoint map `φ_1`.
//!
//! With `ĉ(y) = M(R_y) c(y)` the reoriented atlas and `ψ = φ_1⁻¹`, the
//! energy is `E = Σ_x w(x) ‖ĉ̃(ψ(x)) − c^s(x)‖² ΔV` where `ĉ̃` is the
//! trilinear interpolant. Its derivative has two parts: the transport
//! term (moving `ψ(x)`) and the reorientation term (changing `R_y`).

use crate::error::{Error, Result};
use crate::field::{
    accumulate, diff_stencil, inverse_points, reorient_voxels, stencil, voxel_rotations, Boundary,
    CoefficientField, DeformationField,
};
use crate::wigner::{finite_strain_differential, PerturbationBlocks, WignerBuilder};
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

/// Default step of the forward difference used for `∇_R ĉ`.
pub const ROTATION_DELTA: f64 = 1e-4;

/// Atlas/target pair with optional per-voxel weights.
#[derive(Clone, Debug)]
pub struct MatchingProblem {
    atlas: CoefficientField,
    target: CoefficientField,
    weights: Option<Vec<f64>>,
    builder: WignerBuilder,
    perturb: PerturbationBlocks,
}

/// Everything from one energy evaluation that the gradient reuses.
#[derive(Clone, Debug)]
pub struct MatchEval {
    pub energy: f64,
    phi: DeformationField,
    rotations: Vec<Matrix3<f64>>,
    rotated: Vec<f64>,
    pre: Vec<[f64; 3]>,
    residual: Vec<f64>,
}

impl MatchEval {
    pub fn rotations(&self) -> &[Matrix3<f64>] {
        &self.rotations
    }

    pub fn phi(&self) -> &DeformationField {
        &self.phi
    }
}

impl MatchingProblem {
    pub fn new(atlas: CoefficientField, target: CoefficientField, weights: Option<Vec<f64>>) -> Result<Self> {
        if atlas.grid() != target.grid() {
            return Err(Error::InvalidArgument("atlas and target grids differ".into()));
        }
        if atlas.spec() != target.spec() {
            return Err(Error::InvalidArgument("atlas and target use different BFOR specs".into()));
        }
        if let Some(w) = &weights {
            if w.len() != atlas.grid().len() {
                return Err(Error::Dimension { expected: atlas.grid().len(), got: w.len() });
            }
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidArgument("matching weights must be finite and non-negative".into()));
            }
        }
        let builder = WignerBuilder::new(atlas.spec().order())?;
        let perturb = PerturbationBlocks::new(&builder, ROTATION_DELTA)?;
        Ok(MatchingProblem { atlas, target, weights, builder, perturb })
    }

    pub fn atlas(&self) -> &CoefficientField {
        &self.atlas
    }

    pub fn target(&self) -> &CoefficientField {
        &self.target
    }

    fn weight(&self, x: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[x])
    }

    pub fn evaluate(&self, phi: &DeformationField) -> Result<MatchEval> {
        let rotations = voxel_rotations(phi)?;
        self.evaluate_with_rotations(phi, rotations)
    }

    /// Energy with the reorientation fixed to `rotations` instead of the
    /// finite-strain rotations of `φ`.
    pub fn evaluate_with_rotations(&self, phi: &DeformationField, rotations: Vec<Matrix3<f64>>) -> Result<MatchEval> {
        let grid = *self.atlas.grid();
        if phi.grid() != &grid {
            return Err(Error::InvalidArgument("deformation grid differs from the atlas grid".into()));
        }
        if rotations.len() != grid.len() {
            return Err(Error::Dimension { expected: grid.len(), got: rotations.len() });
        }
        let p = self.atlas.channels();
        let rotated = reorient_voxels(self.atlas.data(), p, &rotations, &self.builder)?;
        let (pre, report) = inverse_points(phi, &grid.points(), 0.01 * grid.min_spacing());
        if report.failed > 0 {
            return Err(Error::InversionQuality { failed: report.failed, total: report.total });
        }
        let mut residual = vec![0.0; self.atlas.data().len()];
        let background = self.atlas.background();
        let target = self.target.data();
        let sum: f64 = residual
            .par_chunks_mut(p)
            .enumerate()
            .map(|(x, r)| {
                let s = stencil(&grid, pre[x], Boundary::Background);
                accumulate(&s, &rotated, background, r);
                let mut acc = 0.0;
                for (ri, t) in r.iter_mut().zip(&target[x * p..(x + 1) * p]) {
                    *ri -= t;
                    acc += *ri * *ri;
                }
                self.weight(x) * acc
            })
            .sum();
        Ok(MatchEval {
            energy: sum * grid.voxel_volume(),
            phi: phi.clone(),
            rotations,
            rotated,
            pre,
            residual,
        })
    }

    /// `∂E/∂φ_1(y)` at every grid voxel `y`.
    pub fn gradient(&self, eval: &MatchEval, term_b: bool) -> Result<Vec<[f64; 3]>> {
        let grid = *self.atlas.grid();
        let n = grid.len();
        let p = self.atlas.channels();
        let dv = grid.voxel_volume();
        let background = self.atlas.background();

        // transport term, and ρ_j = Σ_x 2 w ΔV (∂ĉ̃(ψ_x)/∂ĉ_j) r(x) for the
        // reorientation term
        let init = || (vec![[0.0; 3]; n], if term_b { vec![0.0; n * p] } else { Vec::new() });
        let (mut grad, rho) = (0..n)
            .into_par_iter()
            .try_fold(init, |(mut g, mut rho), x| -> Result<_> {
                let wgt = self.weight(x);
                if wgt == 0.0 {
                    return Ok((g, rho));
                }
                let r = &eval.residual[x * p..(x + 1) * p];
                let y = eval.pre[x];
                let sc = stencil(&grid, y, Boundary::Background);
                let mut gy = Vector3::zeros();
                for c in 0..8 {
                    let src = match sc.voxel[c] {
                        Some(v) => &eval.rotated[v * p..(v + 1) * p],
                        None => background,
                    };
                    let proj: f64 = src.iter().zip(r).map(|(a, b)| a * b).sum();
                    for a in 0..3 {
                        gy[a] += sc.dweight[c][a] * proj;
                    }
                    if term_b && sc.weight[c] != 0.0 {
                        if let Some(v) = sc.voxel[c] {
                            let f = 2.0 * wgt * dv * sc.weight[c];
                            for (dst, ri) in rho[v * p..(v + 1) * p].iter_mut().zip(r) {
                                *dst += f * ri;
                            }
                        }
                    }
                }
                let (_, jac) = eval.phi.eval_with_jacobian(y);
                let inv = jac
                    .try_inverse()
                    .ok_or_else(|| Error::Folding("singular interpolated jacobian".into()))?;
                let v = inv.transpose() * gy * (-2.0 * wgt * dv);
                let sp = stencil(&grid, y, Boundary::Clamp);
                for c in 0..8 {
                    if sp.weight[c] == 0.0 {
                        continue;
                    }
                    let t = sp.voxel[c].expect("clamped stencil");
                    for a in 0..3 {
                        g[t][a] += sp.weight[c] * v[a];
                    }
                }
                Ok((g, rho))
            })
            .try_reduce(init, |(mut g1, mut r1), (g2, r2)| {
                for (a, b) in g1.iter_mut().zip(&g2) {
                    for d in 0..3 {
                        a[d] += b[d];
                    }
                }
                for (a, b) in r1.iter_mut().zip(&r2) {
                    *a += b;
                }
                Ok((g1, r1))
            })?;

        if term_b {
            // ω_j = R F Σ_i r_i × (row i of δDφ); the energy change is
            // ⟨G_j ρ_j, ω_j⟩ = Σ_i ⟨(FᵀRᵀ G_j ρ_j) × r_i, row i of δDφ⟩
            let contrib: Vec<Option<(usize, [Vector3<f64>; 3])>> = (0..n)
                .into_par_iter()
                .map(|j| -> Result<_> {
                    let rj = &rho[j * p..(j + 1) * p];
                    if rj.iter().all(|v| *v == 0.0) {
                        return Ok(None);
                    }
                    let jac = eval.phi.jacobian(j);
                    let rot = eval.rotations[j];
                    let f = finite_strain_differential(&jac, &rot)?;
                    let mut scratch = vec![0.0; p];
                    let s = self.perturb.contract(&eval.rotated[j * p..(j + 1) * p], rj, &mut scratch);
                    let w = f.transpose() * rot.transpose() * s;
                    let rows = [0, 1, 2].map(|i| w.cross(&rot.row(i).transpose()));
                    Ok(Some((j, rows)))
                })
                .collect::<Result<_>>()?;
            for (j, rows) in contrib.into_iter().flatten() {
                for d in 0..3 {
                    let (st, cnt) = diff_stencil(&grid, j, d);
                    for &(nbr, coeff) in &st[..cnt] {
                        for i in 0..3 {
                            grad[nbr][i] += rows[i][d] * coeff;
                        }
                    }
                }
            }
        }
        Ok(grad)
    }
}

/// `Σ_x ‖(φ·atlas)(x) − subject(x)‖² ΔV`.
pub fn matching_energy(atlas: &CoefficientField, subject: &CoefficientField, phi: &DeformationField) -> Result<f64> {
    Ok(MatchingProblem::new(atlas.clone(), subject.clone(), None)?.evaluate(phi)?.energy)
}

/// `∂E/∂φ_1` at every voxel, optionally without the reorientation term.
pub fn gradient_e(
    atlas: &CoefficientField,
    subject: &CoefficientField,
    phi: &DeformationField,
    with_term_b: bool,
) -> Result<Vec<[f64; 3]>> {
    let problem = MatchingProblem::new(atlas.clone(), subject.clone(), None)?;
    let eval = problem.evaluate(phi)?;
    problem.gradient(&eval, with_term_b)
}
