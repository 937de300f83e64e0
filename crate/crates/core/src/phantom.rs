//! Synthetic ground truth: the reference multi-shell scheme, multi-tensor
//! signals, crossing-bundle templates and randomly warped ensembles.

use crate::bfor::{BforBasisSpec, Fitter};
use crate::error::{Error, Result};
use crate::field::{group_action_with, invert_deformation, CoefficientField, DeformationField, Grid};
use crate::lddmm::{flow_forward, MomentumTrajectory};
use crate::wigner::{rodrigues, WignerBuilder};
use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

/// One shell of a q-space scheme.
#[derive(Clone, Debug, PartialEq)]
pub struct Shell {
    /// s/mm².
    pub b: f64,
    /// mm⁻¹.
    pub q: f64,
    pub directions: Vec<[f64; 3]>,
}

/// A single q-space sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub q: [f64; 3],
    pub b: f64,
    pub shell: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodingScheme {
    shells: Vec<Shell>,
}

impl EncodingScheme {
    pub fn new(shells: Vec<Shell>) -> Result<Self> {
        if shells.is_empty() {
            return Err(Error::Empty("shell list"));
        }
        for s in &shells {
            if !(s.b >= 0.0 && s.q >= 0.0 && s.b.is_finite() && s.q.is_finite()) {
                return Err(Error::InvalidArgument(format!("invalid shell b={} q={}", s.b, s.q)));
            }
            if s.directions.is_empty() {
                return Err(Error::Empty("shell directions"));
            }
            for d in &s.directions {
                let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                if (n - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidArgument(format!("direction {d:?} is not unit length")));
                }
            }
        }
        Ok(EncodingScheme { shells })
    }

    /// Group explicit `(q vector, b)` rows into shells of equal b.
    pub fn from_rows(rows: &[([f64; 3], f64)]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("scheme rows"));
        }
        let mut shells: Vec<Shell> = Vec::new();
        for &(q, b) in rows {
            let r = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
            let u = if r > 0.0 { [q[0] / r, q[1] / r, q[2] / r] } else { [0.0, 0.0, 1.0] };
            match shells.iter_mut().find(|s| (s.b - b).abs() <= 1e-6 * b.max(1.0)) {
                Some(s) => {
                    if (s.q - r).abs() > 1e-6 * r.max(1.0) {
                        return Err(Error::Format(format!("shell b={b} has inconsistent |q| ({} vs {r})", s.q)));
                    }
                    s.directions.push(u)
                }
                None => shells.push(Shell { b, q: r, directions: vec![u] }),
            }
        }
        Self::new(shells)
    }

    pub fn shells(&self) -> &[Shell] {
        &self.shells
    }

    /// Samples in shell order.
    pub fn samples(&self) -> Vec<Sample> {
        let mut out = Vec::new();
        for (i, s) in self.shells.iter().enumerate() {
            for d in &s.directions {
                out.push(Sample { q: [d[0] * s.q, d[1] * s.q, d[2] * s.q], b: s.b, shell: i });
            }
        }
        out
    }

    pub fn q_vectors(&self) -> Vec<[f64; 3]> {
        self.samples().into_iter().map(|s| s.q).collect()
    }

    pub fn len(&self) -> usize {
        self.shells.iter().map(|s| s.directions.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_q(&self) -> f64 {
        self.shells.iter().map(|s| s.q).fold(0.0, f64::max)
    }

    /// Diffusion time `b / (4π²q²)` of the first shell with `q > 0`.
    pub fn diffusion_time(&self) -> Option<f64> {
        self.shells
            .iter()
            .find(|s| s.q > 0.0 && s.b > 0.0)
            .map(|s| s.b / (4.0 * PI * PI * s.q * s.q))
    }

    /// Default basis for this scheme: L = 4, N_b = 6, tau = 1.25 · max |q|.
    pub fn default_spec(&self) -> Result<BforBasisSpec> {
        BforBasisSpec::for_max_q(self.max_q())
    }
}

/// Directions on the sphere from antipodally symmetric electrostatic
/// repulsion, starting from a seeded random configuration.
pub fn electrostatic_directions(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts: Vec<Vector3<f64>> = (0..n)
        .map(|_| {
            let v = Vector3::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            );
            v.normalize()
        })
        .collect();
    if n < 2 {
        return pts.iter().map(|v| [v[0], v[1], v[2]]).collect();
    }
    let energy = |p: &[Vector3<f64>]| {
        let mut e = 0.0;
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                e += 1.0 / (p[i] - p[j]).norm() + 1.0 / (p[i] + p[j]).norm();
            }
        }
        e
    };
    let mut step = 0.1 / n as f64;
    let mut e = energy(&pts);
    for _ in 0..500 {
        let mut grad = vec![Vector3::zeros(); n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let d1 = pts[i] - pts[j];
                let d2 = pts[i] + pts[j];
                grad[i] -= d1 / d1.norm().powi(3) + d2 / d2.norm().powi(3);
            }
        }
        let trial: Vec<Vector3<f64>> = pts
            .iter()
            .zip(&grad)
            .map(|(p, g)| {
                let tangent = g - p * p.dot(g);
                (p - tangent * step).normalize()
            })
            .collect();
        let et = energy(&trial);
        if et < e {
            pts = trial;
            e = et;
            step *= 1.2;
        } else {
            step *= 0.5;
            if step < 1e-12 {
                break;
            }
        }
    }
    pts.iter().map(|v| [v[0], v[1], v[2]]).collect()
}

/// Reference HYDI scheme: 7 b=0 images and shells of 6, 21, 24, 24 and 50
/// directions at b = 300, 1200, 2700, 4800, 7500 s/mm².
pub fn hydi_scheme() -> EncodingScheme {
    let counts = [(7usize, 0.0), (6, 300.0), (21, 1200.0), (24, 2700.0), (24, 4800.0), (50, 7500.0)];
    let shells = counts
        .iter()
        .enumerate()
        .map(|(i, &(n, b))| {
            let q = 15.79 * i as f64;
            let directions = if b == 0.0 { vec![[0.0, 0.0, 1.0]; n] } else { electrostatic_directions(n, 1000 + i as u64) };
            Shell { b, q, directions }
        })
        .collect();
    EncodingScheme::new(shells).expect("reference scheme is valid")
}

/// Axially symmetric tensor with principal direction `dir`.
pub fn fiber_tensor(dir: [f64; 3], lambda_par: f64, lambda_perp: f64) -> Matrix3<f64> {
    let u = Vector3::new(dir[0], dir[1], dir[2]).normalize();
    Matrix3::identity() * lambda_perp + u * u.transpose() * (lambda_par - lambda_perp)
}

/// `E = Σ_k f_k exp(−b uᵀD_k u)` at every sample of `scheme`.
pub fn tensor_mixture_signal(scheme: &EncodingScheme, tensors: &[(Matrix3<f64>, f64)]) -> Result<Vec<f64>> {
    check_mixture(tensors)?;
    Ok(scheme.samples().iter().map(|s| mixture_at(s.q, s.b, tensors)).collect())
}

fn check_mixture(tensors: &[(Matrix3<f64>, f64)]) -> Result<()> {
    if tensors.is_empty() {
        return Err(Error::Empty("tensor list"));
    }
    let total: f64 = tensors.iter().map(|t| t.1).sum();
    if (total - 1.0).abs() > 1e-9 || tensors.iter().any(|t| !(t.1 >= 0.0)) {
        return Err(Error::InvalidArgument(format!("fractions must be non-negative and sum to 1, got {total}")));
    }
    for (d, _) in tensors {
        if (d - d.transpose()).abs().max() > 1e-12 * d.abs().max().max(1.0) {
            return Err(Error::InvalidArgument("diffusion tensor is not symmetric".into()));
        }
        if SymmetricEigen::new(*d).eigenvalues.min() <= 0.0 {
            return Err(Error::InvalidArgument("diffusion tensor is not positive definite".into()));
        }
    }
    Ok(())
}

fn mixture_at(q: [f64; 3], b: f64, tensors: &[(Matrix3<f64>, f64)]) -> f64 {
    let r = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
    if r == 0.0 || b == 0.0 {
        return 1.0;
    }
    let u = Vector3::new(q[0] / r, q[1] / r, q[2] / r);
    tensors.iter().map(|(d, f)| f * (-b * (u.transpose() * d * u)[0]).exp()).sum()
}

/// Phantom geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhantomKind {
    /// One bundle along x.
    Single,
    /// Bundles along x and y crossing at right angles in the grid centre.
    Crossing,
}

/// Template volume with its tissue layout.
#[derive(Clone, Debug)]
pub struct Phantom {
    pub field: CoefficientField,
    /// Voxels where fibre fraction exceeds one half.
    pub fiber_mask: Vec<bool>,
}

impl Phantom {
    pub fn fiber_voxels(&self) -> Vec<usize> {
        self.fiber_mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i).collect()
    }
}

/// Axial and radial diffusivities of the fibre compartments (mm²/s).
pub const FIBER_DIFFUSIVITIES: (f64, f64) = (1.7e-3, 0.3e-3);
/// Diffusivity of the isotropic tissue between bundles (mm²/s).
pub const TISSUE_DIFFUSIVITY: f64 = 0.9e-3;

/// Template of tubes of fibres embedded in isotropic tissue, surrounded by
/// a margin of free water equal to the out-of-grid background. Voxel
/// coefficients are fraction-weighted sums of fitted single-compartment
/// coefficients; all edges are smoothed over one voxel.
pub fn phantom_template(kind: PhantomKind, grid: Grid, scheme: &EncodingScheme, spec: &BforBasisSpec, ridge: f64) -> Result<Phantom> {
    let fitter = Fitter::new(spec, &scheme.q_vectors(), ridge)?;
    let (lp, lr) = FIBER_DIFFUSIVITIES;
    let fit = |tensors: &[(Matrix3<f64>, f64)]| -> Result<Vec<f64>> {
        Ok(fitter.fit(&tensor_mixture_signal(scheme, tensors)?)?.coefficients)
    };
    let tissue = fit(&[(Matrix3::identity() * TISSUE_DIFFUSIVITY, 1.0)])?;
    let along_x = fit(&[(fiber_tensor([1.0, 0.0, 0.0], lp, lr), 1.0)])?;
    let along_y = fit(&[(fiber_tensor([0.0, 1.0, 0.0], lp, lr), 1.0)])?;

    let c = grid.center();
    let extent = (0..3).map(|a| (grid.dims[a] - 1) as f64 * grid.spacing[a]).fold(f64::INFINITY, f64::min);
    let radius = 0.22 * extent;
    let h = grid.min_spacing();
    let smooth = |r: f64| ((radius + h - r) / (2.0 * h)).clamp(0.0, 1.0);
    let margin = 0.2 * extent;
    let water = spec.free_water();
    let p = spec.len();
    let mut data = Vec::with_capacity(grid.len() * p);
    let mut fiber_mask = Vec::with_capacity(grid.len());
    for v in 0..grid.len() {
        let x = grid.point(v);
        let dx = [x[0] - c[0], x[1] - c[1], x[2] - c[2]];
        let fa = smooth((dx[1] * dx[1] + dx[2] * dx[2]).sqrt());
        let fb = match kind {
            PhantomKind::Single => 0.0,
            PhantomKind::Crossing => smooth((dx[0] * dx[0] + dx[2] * dx[2]).sqrt()),
        };
        let total = (fa + fb).min(1.0);
        let (wa, wb) = if fa + fb > 0.0 { (total * fa / (fa + fb), total * fb / (fa + fb)) } else { (0.0, 0.0) };
        let wt = 1.0 - total;
        let ijk = grid.coords(v);
        let face = (0..3)
            .map(|a| ijk[a].min(grid.dims[a] - 1 - ijk[a]) as f64 * grid.spacing[a])
            .fold(f64::INFINITY, f64::min);
        let inside = ((face - margin) / h).clamp(0.0, 1.0);
        for i in 0..p {
            let t = wt * tissue[i] + wa * along_x[i] + wb * along_y[i];
            data.push(inside * t + (1.0 - inside) * water[i]);
        }
        fiber_mask.push(total * inside > 0.5);
    }
    Ok(Phantom { field: CoefficientField::new(grid, spec.clone(), data)?, fiber_mask })
}

/// Random smooth diffeomorphism with maximum displacement close to
/// `amplitude` voxels, from Gaussian random momenta on a coarse control
/// lattice flowed through the same Euler scheme as registration.
pub fn random_warp(grid: Grid, amplitude: f64, seed: u64) -> Result<DeformationField> {
    if amplitude == 0.0 {
        return Ok(DeformationField::identity(grid));
    }
    if !(amplitude > 0.0 && amplitude.is_finite()) {
        return Err(Error::InvalidArgument(format!("warp amplitude must be non-negative, got {amplitude}")));
    }
    let extent = (0..3).map(|a| (grid.dims[a] - 1) as f64 * grid.spacing[a]).fold(0.0, f64::max);
    let sigma = (0.3 * extent).max(2.0 * grid.min_spacing());
    let stride = (grid.dims.iter().cloned().max().unwrap_or(1) / 4).max(1);
    let mut m = MomentumTrajectory::strided(grid, stride, sigma, 6)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = m.control().len();
    let base: Vec<[f64; 3]> = (0..c)
        .map(|_| [0, 1, 2].map(|_| rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let target = amplitude * grid.min_spacing();
    let mut scale = 1.0;
    for _ in 0..4 {
        for k in 0..m.steps() {
            for (i, b) in base.iter().enumerate() {
                m.alpha_mut()[k * c + i] = [b[0] * scale, b[1] * scale, b[2] * scale];
            }
        }
        let phi = flow_forward(&m)?.endpoint()?;
        let maxd = max_displacement(&phi);
        if maxd == 0.0 {
            break;
        }
        scale *= target / maxd;
    }
    flow_forward(&m)?.endpoint()
}

/// Largest `|φ(x) − x|` over the grid, in mm.
pub fn max_displacement(phi: &DeformationField) -> f64 {
    phi.map()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let x = phi.grid().point(i);
            ((p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2) + (p[2] - x[2]).powi(2)).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Rotation-dominated warp: a swirl about the z axis through the grid
/// centre whose angle decays as a Gaussian of the distance to the axis.
pub fn swirl_warp(grid: Grid, angle: f64, width: f64) -> Result<DeformationField> {
    let c = grid.center();
    DeformationField::from_fn(grid, |x| {
        let d = Vector3::new(x[0] - c[0], x[1] - c[1], x[2] - c[2]);
        let r2 = d[0] * d[0] + d[1] * d[1];
        let theta = angle * (-r2 / (width * width)).exp();
        let y = rodrigues(&Vector3::new(0.0, 0.0, theta)) * d;
        [c[0] + y[0], c[1] + y[1], c[2] + y[2]]
    })
}

/// `n` warped copies of `template` with their ground-truth deformations.
/// A warp that folds is regenerated at half the amplitude, at most three
/// times. `noise` is the standard deviation of additive coefficient noise.
pub fn synthetic_ensemble(
    template: &CoefficientField,
    n: usize,
    warp_amplitude: f64,
    seed: u64,
    noise: f64,
) -> Result<Vec<(CoefficientField, DeformationField)>> {
    if n == 0 {
        return Err(Error::InvalidArgument("ensemble size must be at least 1".into()));
    }
    if !(noise >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise must be non-negative, got {noise}")));
    }
    let grid = *template.grid();
    let builder = WignerBuilder::new(template.spec().order())?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let member_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64);
        let mut amplitude = warp_amplitude;
        let mut phi = None;
        for _ in 0..4 {
            let candidate = random_warp(grid, amplitude, member_seed)?;
            if candidate.min_jacobian_determinant() > 0.0 && invert_deformation(&candidate).is_ok() {
                phi = Some(candidate);
                break;
            }
            amplitude *= 0.5;
        }
        let phi = phi.ok_or_else(|| Error::Folding(format!("ensemble member {i} folds after 3 retries")))?;
        let mut subject = group_action_with(template, &phi, &builder)?;
        if noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(member_seed ^ 0xA5A5_A5A5);
            for v in subject.data_mut() {
                *v += noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
        out.push((subject, phi));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_scheme_counts() {
        let s = hydi_scheme();
        assert_eq!(s.len(), 132);
        assert_eq!(s.shells().len(), 6);
        assert!((s.shells()[5].q - 78.95).abs() < 1e-12);
        let qs: Vec<f64> = s.shells().iter().map(|s| s.q).collect();
        let mean_dq = (1..qs.len()).map(|i| qs[i] - qs[i - 1]).sum::<f64>() / (qs.len() - 1) as f64;
        assert!((mean_dq - 15.79).abs() < 1e-9);
        // b ∝ q² with one diffusion time
        let t = s.diffusion_time().unwrap();
        for sh in &s.shells()[1..] {
            assert!((sh.b - 4.0 * PI * PI * sh.q * sh.q * t).abs() < 1e-9 * sh.b);
        }
    }

    #[test]
    fn repulsion_spreads_directions() {
        let d = electrostatic_directions(24, 7);
        let mut min_angle = f64::INFINITY;
        for i in 0..d.len() {
            for j in i + 1..d.len() {
                let c: f64 = (0..3).map(|k| d[i][k] * d[j][k]).sum::<f64>().abs();
                min_angle = min_angle.min(c.min(1.0).acos());
            }
        }
        // 24 antipodal pairs: optimal minimum angle is about 28°
        assert!(min_angle > 20f64.to_radians(), "{}", min_angle.to_degrees());
    }

    #[test]
    fn mixture_validation() {
        let s = hydi_scheme();
        let d = Matrix3::identity() * 1e-3;
        assert!(tensor_mixture_signal(&s, &[(d, 0.5)]).is_err());
        assert!(tensor_mixture_signal(&s, &[(-d, 1.0)]).is_err());
        let e = tensor_mixture_signal(&s, &[(d, 1.0)]).unwrap();
        for (v, smp) in e.iter().zip(s.samples()) {
            assert!((v - (-smp.b * 1e-3).exp()).abs() < 1e-15);
        }
    }
}
