//! Forward Euler integration of particle trajectories and the backward
//! adjoint sweep.

use super::kernel::GaussianKernel;
use super::MomentumTrajectory;
use crate::error::{Error, Result};
use crate::field::DeformationField;
use rayon::prelude::*;

/// Positions of every grid particle at each time sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Flow {
    grid: crate::field::Grid,
    positions: Vec<Vec<[f64; 3]>>,
}

impl Flow {
    pub fn time_samples(&self) -> usize {
        self.positions.len()
    }

    /// Particle positions at time sample `k`.
    pub fn positions(&self, k: usize) -> &[[f64; 3]] {
        &self.positions[k]
    }

    /// `φ_{t_k}` as a deformation field.
    pub fn phi(&self, k: usize) -> Result<DeformationField> {
        DeformationField::new(self.grid, self.positions[k].clone())
    }

    /// `φ_1`.
    pub fn endpoint(&self) -> Result<DeformationField> {
        self.phi(self.positions.len() - 1)
    }
}

/// `x_{k+1} = x_k + dt · Σ_c k(x_k, x_{k,c}) α_{k,c}` for every particle.
pub fn flow_forward(m: &MomentumTrajectory) -> Result<Flow> {
    let grid = *m.grid();
    let kernel = GaussianKernel::new(m.sigma())?;
    let dt = m.dt();
    let mut positions = Vec::with_capacity(m.time_samples());
    positions.push(grid.points());
    for k in 0..m.steps() {
        let cur = &positions[k];
        let ctrl: Vec<[f64; 3]> = m.control().iter().map(|&c| cur[c]).collect();
        let v = kernel.apply(cur, &ctrl, m.slice(k));
        let next: Vec<[f64; 3]> = cur
            .iter()
            .zip(&v)
            .map(|(x, v)| [x[0] + dt * v[0], x[1] + dt * v[1], x[2] + dt * v[2]])
            .collect();
        if next.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Divergence(format!("non-finite particle position after step {}", k + 1)));
        }
        positions.push(next);
    }
    Ok(Flow { grid, positions })
}

/// `⟨α_k, K(x_k) α_k⟩` at every step.
pub fn metric_per_step(m: &MomentumTrajectory, flow: &Flow) -> Result<Vec<f64>> {
    let kernel = GaussianKernel::new(m.sigma())?;
    Ok((0..m.steps())
        .map(|k| {
            let pos = flow.positions(k);
            let ctrl: Vec<[f64; 3]> = m.control().iter().map(|&c| pos[c]).collect();
            let a = m.slice(k);
            let ka = kernel.apply(&ctrl, &ctrl, a);
            a.iter().zip(&ka).map(|(x, y)| x[0] * y[0] + x[1] * y[1] + x[2] * y[2]).sum()
        })
        .collect())
}

/// `Σ_k dt ⟨α_k, K α_k⟩`, the discrete kinetic energy of the path.
pub fn kinetic_energy(m: &MomentumTrajectory, flow: &Flow) -> Result<f64> {
    Ok(metric_per_step(m, flow)?.iter().sum::<f64>() * m.dt())
}

/// Adjoint trajectory and the derivatives of
/// `J = Σ_k dt⟨α_k, Kα_k⟩ + ⟨η-terminal, φ_1⟩` with respect to the momenta.
#[derive(Clone, Debug)]
pub struct Adjoint {
    /// `η_k` per particle for every time sample.
    pub eta: Vec<Vec<[f64; 3]>>,
    /// `∂J/∂α_k`, flattened like the momentum.
    pub gradient: Vec<[f64; 3]>,
    /// `2α_k + η_{k+1}` at the control points: the gradient in the kernel
    /// metric when every particle is a control point.
    pub kernel_gradient: Vec<[f64; 3]>,
}

/// Backward sweep from `η_{T-1} = terminal` (the gradient of the data term
/// with respect to `φ_1`, including its weight).
///
/// Discrete adjoint of the forward Euler scheme:
/// `η_k = η_{k+1} + dt ∂_x[Σ_c k(x,x_c)α_c]ᵀ η_{k+1} + dt ∂_x(metric)`,
/// where the kernel derivative acts on every particle and on every
/// control point as a kernel centre.
pub fn adjoint_backward(m: &MomentumTrajectory, flow: &Flow, terminal: &[[f64; 3]]) -> Result<Adjoint> {
    let n = flow.positions(0).len();
    if terminal.len() != n {
        return Err(Error::Dimension { expected: n, got: terminal.len() });
    }
    let kernel = GaussianKernel::new(m.sigma())?;
    let dt = m.dt();
    let steps = m.steps();
    let nc = m.control().len();
    let mut eta = vec![Vec::new(); steps + 1];
    eta[steps] = terminal.to_vec();
    let mut gradient = vec![[0.0; 3]; steps * nc];
    let mut kernel_gradient = vec![[0.0; 3]; steps * nc];
    for k in (0..steps).rev() {
        let pos = flow.positions(k);
        let alpha = m.slice(k);
        let next = &eta[k + 1];
        let ctrl: Vec<[f64; 3]> = m.control().iter().map(|&c| pos[c]).collect();

        // particle as evaluation point: Σ_c (η_a·α_c) ∇_1 k(x_a, x_c)
        let own: Vec<[f64; 3]> = pos
            .par_iter()
            .zip(next.par_iter())
            .map(|(&x, e)| {
                let mut acc = [0.0; 3];
                for (&xc, a) in ctrl.iter().zip(alpha) {
                    let s = e[0] * a[0] + e[1] * a[1] + e[2] * a[2];
                    if s == 0.0 {
                        continue;
                    }
                    let (_, g) = kernel.value_and_grad(x, xc);
                    acc[0] += s * g[0];
                    acc[1] += s * g[1];
                    acc[2] += s * g[2];
                }
                acc
            })
            .collect();

        // control point as kernel centre, plus the metric and the momentum
        // derivatives
        struct Centre {
            force: [f64; 3],
            k_eta: [f64; 3],
            k_alpha: [f64; 3],
        }
        let centre: Vec<Centre> = ctrl
            .par_iter()
            .zip(alpha.par_iter())
            .map(|(&xc, ac)| {
                let mut force = [0.0; 3];
                let mut k_eta = [0.0; 3];
                for (&xa, e) in pos.iter().zip(next) {
                    let (kv, g) = kernel.value_and_grad(xc, xa);
                    let s = e[0] * ac[0] + e[1] * ac[1] + e[2] * ac[2];
                    for d in 0..3 {
                        force[d] += s * g[d];
                        k_eta[d] += kv * e[d];
                    }
                }
                let mut k_alpha = [0.0; 3];
                for (&xb, ab) in ctrl.iter().zip(alpha) {
                    let (kv, g) = kernel.value_and_grad(xc, xb);
                    let s = 2.0 * (ac[0] * ab[0] + ac[1] * ab[1] + ac[2] * ab[2]);
                    for d in 0..3 {
                        force[d] += s * g[d];
                        k_alpha[d] += kv * ab[d];
                    }
                }
                Centre { force, k_eta, k_alpha }
            })
            .collect();

        let mut cur: Vec<[f64; 3]> = next
            .iter()
            .zip(&own)
            .map(|(e, o)| [e[0] + dt * o[0], e[1] + dt * o[1], e[2] + dt * o[2]])
            .collect();
        for (ci, (&c, ce)) in m.control().iter().zip(&centre).enumerate() {
            for d in 0..3 {
                cur[c][d] += dt * ce.force[d];
                gradient[k * nc + ci][d] = dt * (2.0 * ce.k_alpha[d] + ce.k_eta[d]);
                kernel_gradient[k * nc + ci][d] = 2.0 * alpha[ci][d] + next[c][d];
            }
        }
        if cur.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Divergence(format!("non-finite adjoint at step {k}")));
        }
        eta[k] = cur;
    }
    Ok(Adjoint { eta, gradient, kernel_gradient })
}
