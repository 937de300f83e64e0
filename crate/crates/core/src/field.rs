//! Coefficient volumes and deformation fields on regular 3D grids.

use crate::bfor::BforBasisSpec;
use crate::error::{Error, Result};
use crate::wigner::{finite_strain_rotation, reorient_into, WignerBuilder};
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

/// Regular grid: voxel `(i, j, k)` sits at `origin + (i, j, k) ∘ spacing` (mm).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("grid dimensions must be positive: {dims:?}")));
        }
        if spacing.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::InvalidArgument(format!("grid spacing must be positive: {spacing:?}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidArgument(format!("grid origin must be finite: {origin:?}")));
        }
        Ok(Grid { dims, spacing, origin })
    }

    /// Cubic grid of `n³` voxels with isotropic spacing `h`, origin at 0.
    pub fn cube(n: usize, h: f64) -> Result<Self> {
        Self::new([n; 3], [h; 3], [0.0; 3])
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    /// Physical position of voxel `idx`.
    pub fn point(&self, idx: usize) -> [f64; 3] {
        let c = self.coords(idx);
        [
            self.origin[0] + c[0] as f64 * self.spacing[0],
            self.origin[1] + c[1] as f64 * self.spacing[1],
            self.origin[2] + c[2] as f64 * self.spacing[2],
        ]
    }

    pub fn points(&self) -> Vec<[f64; 3]> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Geometric centre of the voxel lattice.
    pub fn center(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for a in 0..3 {
            c[a] = self.origin[a] + 0.5 * (self.dims[a] - 1) as f64 * self.spacing[a];
        }
        c
    }

    /// Voxels whose linear index is a multiple of `stride` along every axis.
    pub fn strided(&self, stride: usize) -> Vec<usize> {
        let stride = stride.max(1);
        let mut out = Vec::new();
        for k in (0..self.dims[2]).step_by(stride) {
            for j in (0..self.dims[1]).step_by(stride) {
                for i in (0..self.dims[0]).step_by(stride) {
                    out.push(self.index(i, j, k));
                }
            }
        }
        out
    }

    fn same_as(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::InvalidArgument(format!("grid mismatch: {self:?} vs {other:?}")));
        }
        Ok(())
    }
}

/// How trilinear interpolation treats points near or outside the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Boundary {
    /// A virtual ring of background voxels surrounds the grid; beyond it the
    /// value is the background.
    Background,
    /// Values are held constant beyond the outermost voxels.
    Clamp,
}

/// Eight trilinear corners with weights and weight gradients (per mm).
#[derive(Clone, Copy, Debug)]
pub(crate) struct Stencil {
    /// `None` marks a background corner.
    pub voxel: [Option<usize>; 8],
    pub weight: [f64; 8],
    pub dweight: [[f64; 3]; 8],
}

pub(crate) fn stencil(grid: &Grid, p: [f64; 3], mode: Boundary) -> Stencil {
    let mut lo = [0i64; 3];
    let mut frac = [0.0; 3];
    let mut live = [true; 3];
    for a in 0..3 {
        let n = grid.dims[a] as i64;
        let t = (p[a] - grid.origin[a]) / grid.spacing[a];
        let (min, max) = match mode {
            Boundary::Background => (-1.0, n as f64),
            Boundary::Clamp => (0.0, (n - 1) as f64),
        };
        let tc = if t.is_nan() { min } else { t.clamp(min, max) };
        live[a] = tc == t && max > min;
        let top = match mode {
            Boundary::Background => n - 1,
            Boundary::Clamp => (n - 2).max(0),
        };
        let i0 = (tc.floor() as i64).min(top);
        lo[a] = i0;
        frac[a] = if max > min { tc - i0 as f64 } else { 0.0 };
    }
    let mut s = Stencil { voxel: [None; 8], weight: [0.0; 8], dweight: [[0.0; 3]; 8] };
    for corner in 0..8 {
        let mut idx = [0usize; 3];
        let mut valid = true;
        let mut w1 = [0.0; 3];
        let mut sgn = [0.0; 3];
        for a in 0..3 {
            let up = (corner >> a) & 1 == 1;
            let mut i = lo[a] + up as i64;
            if mode == Boundary::Clamp {
                i = i.min(grid.dims[a] as i64 - 1);
            }
            if i < 0 || i >= grid.dims[a] as i64 {
                valid = false;
            } else {
                idx[a] = i as usize;
            }
            w1[a] = if up { frac[a] } else { 1.0 - frac[a] };
            sgn[a] = if up { 1.0 } else { -1.0 };
        }
        s.weight[corner] = w1[0] * w1[1] * w1[2];
        for a in 0..3 {
            if live[a] {
                let others: f64 = (0..3).filter(|&b| b != a).map(|b| w1[b]).product();
                s.dweight[corner][a] = sgn[a] * others / grid.spacing[a];
            }
        }
        if valid {
            s.voxel[corner] = Some(grid.index(idx[0], idx[1], idx[2]));
        }
    }
    s
}

/// Coefficients of the central (interior) or one-sided (boundary) first
/// difference along `axis` at voxel `idx`.
pub(crate) fn diff_stencil(grid: &Grid, idx: usize, axis: usize) -> ([(usize, f64); 2], usize) {
    let n = grid.dims[axis];
    let h = grid.spacing[axis];
    let c = grid.coords(idx);
    let at = |v: usize| {
        let mut cc = c;
        cc[axis] = v;
        grid.index(cc[0], cc[1], cc[2])
    };
    if n == 1 {
        return ([(idx, 0.0); 2], 0);
    }
    let i = c[axis];
    if i == 0 {
        ([(at(0), -1.0 / h), (at(1), 1.0 / h)], 2)
    } else if i == n - 1 {
        ([(at(n - 2), -1.0 / h), (at(n - 1), 1.0 / h)], 2)
    } else {
        ([(at(i - 1), -0.5 / h), (at(i + 1), 0.5 / h)], 2)
    }
}

/// A volume of BFOR coefficient vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField {
    grid: Grid,
    spec: BforBasisSpec,
    data: Vec<f64>,
    background: Vec<f64>,
}

impl CoefficientField {
    /// `data` holds `grid.len()` vectors of `spec.len()` entries, voxel-major.
    pub fn new(grid: Grid, spec: BforBasisSpec, data: Vec<f64>) -> Result<Self> {
        let expected = grid.len() * spec.len();
        if data.len() != expected {
            return Err(Error::Dimension { expected, got: data.len() });
        }
        let background = spec.free_water();
        Ok(CoefficientField { grid, spec, data, background })
    }

    pub fn zeros(grid: Grid, spec: BforBasisSpec) -> Self {
        let n = grid.len() * spec.len();
        Self::new(grid, spec, vec![0.0; n]).expect("sizes agree by construction")
    }

    /// Same vector at every voxel.
    pub fn constant(grid: Grid, spec: BforBasisSpec, c: &[f64]) -> Result<Self> {
        if c.len() != spec.len() {
            return Err(Error::Dimension { expected: spec.len(), got: c.len() });
        }
        let data = c.repeat(grid.len());
        Self::new(grid, spec, data)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn spec(&self) -> &BforBasisSpec {
        &self.spec
    }

    pub fn channels(&self) -> usize {
        self.spec.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn voxel(&self, idx: usize) -> &[f64] {
        let p = self.channels();
        &self.data[idx * p..(idx + 1) * p]
    }

    pub fn voxel_mut(&mut self, idx: usize) -> &mut [f64] {
        let p = self.channels();
        &mut self.data[idx * p..(idx + 1) * p]
    }

    /// Value taken outside the grid (free water unless overridden).
    pub fn background(&self) -> &[f64] {
        &self.background
    }

    pub fn set_background(&mut self, background: Vec<f64>) -> Result<()> {
        if background.len() != self.channels() {
            return Err(Error::Dimension { expected: self.channels(), got: background.len() });
        }
        self.background = background;
        Ok(())
    }

    /// Trilinear interpolation at `p` (mm), blending into the background
    /// over one voxel beyond the grid.
    pub fn interpolate(&self, p: [f64; 3]) -> Vec<f64> {
        let mut out = vec![0.0; self.channels()];
        let s = stencil(&self.grid, p, Boundary::Background);
        accumulate(&s, &self.data, &self.background, &mut out);
        out
    }

    pub(crate) fn with_data(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        CoefficientField {
            grid: self.grid,
            spec: self.spec.clone(),
            data,
            background: self.background.clone(),
        }
    }

    fn compatible(&self, other: &CoefficientField) -> Result<()> {
        self.grid.same_as(&other.grid)?;
        if self.spec != other.spec {
            return Err(Error::InvalidArgument("fields use different BFOR specs".into()));
        }
        Ok(())
    }
}

pub(crate) fn accumulate(s: &Stencil, data: &[f64], background: &[f64], out: &mut [f64]) {
    let p = out.len();
    out.iter_mut().for_each(|v| *v = 0.0);
    for c in 0..8 {
        let w = s.weight[c];
        if w == 0.0 {
            continue;
        }
        let src = match s.voxel[c] {
            Some(v) => &data[v * p..(v + 1) * p],
            None => background,
        };
        for (o, x) in out.iter_mut().zip(src) {
            *o += w * x;
        }
    }
}

/// `sqrt(Σ_x Σ c(x)² · voxel volume)`; by orthonormality of the basis this
/// is the L² norm of the represented signal over space × q-space.
pub fn l2_norm(field: &CoefficientField) -> f64 {
    (field.data.iter().map(|v| v * v).sum::<f64>() * field.grid.voxel_volume()).sqrt()
}

/// `Σ_x ‖a(x) − b(x)‖² · voxel volume`.
pub fn squared_distance(a: &CoefficientField, b: &CoefficientField) -> Result<f64> {
    a.compatible(b)?;
    let s: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s * a.grid.voxel_volume())
}

/// A map `φ` sampled at the voxels of a grid (positions in mm).
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationField {
    grid: Grid,
    map: Vec<[f64; 3]>,
}

impl DeformationField {
    pub fn new(grid: Grid, map: Vec<[f64; 3]>) -> Result<Self> {
        if map.len() != grid.len() {
            return Err(Error::Dimension { expected: grid.len(), got: map.len() });
        }
        if map.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("deformation contains non-finite positions".into()));
        }
        Ok(DeformationField { grid, map })
    }

    pub fn identity(grid: Grid) -> Self {
        DeformationField { grid, map: grid.points() }
    }

    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> [f64; 3]) -> Result<Self> {
        Self::new(grid, grid.points().into_iter().map(f).collect())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn map(&self) -> &[[f64; 3]] {
        &self.map
    }

    pub fn into_map(self) -> Vec<[f64; 3]> {
        self.map
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, p)| *p == self.grid.point(i))
    }

    fn displacement(&self, idx: usize) -> Vector3<f64> {
        let x = self.grid.point(idx);
        let p = self.map[idx];
        Vector3::new(p[0] - x[0], p[1] - x[1], p[2] - x[2])
    }

    /// `Dφ` at voxel `idx` by central differences (one-sided at the
    /// boundary; exact identity along single-voxel axes).
    pub fn jacobian(&self, idx: usize) -> Matrix3<f64> {
        let mut j = Matrix3::identity();
        for d in 0..3 {
            let (st, n) = diff_stencil(&self.grid, idx, d);
            for &(v, c) in &st[..n] {
                let u = self.displacement(v);
                for i in 0..3 {
                    j[(i, d)] += c * u[i];
                }
            }
        }
        j
    }

    pub fn jacobian_determinants(&self) -> Vec<f64> {
        (0..self.grid.len()).map(|i| self.jacobian(i).determinant()).collect()
    }

    pub fn min_jacobian_determinant(&self) -> f64 {
        self.jacobian_determinants().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Trilinear interpolant of `φ` with the displacement held constant
    /// beyond the grid.
    pub fn eval(&self, p: [f64; 3]) -> [f64; 3] {
        self.eval_with_jacobian(p).0
    }

    /// Interpolated `φ(p)` together with its derivative.
    pub fn eval_with_jacobian(&self, p: [f64; 3]) -> ([f64; 3], Matrix3<f64>) {
        let s = stencil(&self.grid, p, Boundary::Clamp);
        let mut u = Vector3::zeros();
        let mut j = Matrix3::identity();
        for c in 0..8 {
            let v = s.voxel[c].expect("clamped stencils never leave the grid");
            let d = self.displacement(v);
            u += d * s.weight[c];
            for a in 0..3 {
                for i in 0..3 {
                    j[(i, a)] += s.dweight[c][a] * d[i];
                }
            }
        }
        ([p[0] + u[0], p[1] + u[1], p[2] + u[2]], j)
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &DeformationField) -> Result<DeformationField> {
        self.grid.same_as(&inner.grid)?;
        let map = inner.map.iter().map(|p| self.eval(*p)).collect();
        DeformationField::new(self.grid, map)
    }

    /// RMS of `|φ(x) − ψ(x)|` over `voxels`, in mm.
    pub fn rms_difference(&self, other: &DeformationField, voxels: &[usize]) -> Result<f64> {
        self.grid.same_as(&other.grid)?;
        if voxels.is_empty() {
            return Err(Error::Empty("voxel list"));
        }
        let s: f64 = voxels
            .iter()
            .map(|&v| {
                let (a, b) = (self.map[v], other.map[v]);
                (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>()
            })
            .sum();
        Ok((s / voxels.len() as f64).sqrt())
    }
}

/// Outcome of a pointwise inversion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InversionReport {
    pub max_residual: f64,
    pub failed: usize,
    pub total: usize,
}

/// Newton iterations on the trilinear interpolant from `y`, falling back to
/// fixed-point steps where the local Jacobian is unusable.
fn newton_inverse(phi: &DeformationField, x: [f64; 3], mut y: [f64; 3], tight: f64) -> ([f64; 3], f64) {
    let mut res = f64::INFINITY;
    for _ in 0..50 {
        let (py, j) = phi.eval_with_jacobian(y);
        let r = Vector3::new(py[0] - x[0], py[1] - x[1], py[2] - x[2]);
        res = r.norm();
        if res <= tight {
            break;
        }
        let step = match j.try_inverse() {
            Some(inv) if j.determinant() > 0.0 => inv * r,
            _ => r,
        };
        for a in 0..3 {
            y[a] -= step[a];
        }
    }
    (y, res)
}

/// Solve `φ(y) = x` for every target. Beyond the grid the clamped extension
/// of `φ` need not be injective, so a solution outside the grid is only
/// kept if a restart from the voxel whose image lies nearest to `x` does
/// not find one inside. A point counts as failed if its residual stays at
/// or above `tol`.
pub fn inverse_points(phi: &DeformationField, targets: &[[f64; 3]], tol: f64) -> (Vec<[f64; 3]>, InversionReport) {
    let tight = 1e-10 * phi.grid.min_spacing();
    let slack = 1e-6 * phi.grid.min_spacing();
    let inside = |y: [f64; 3]| {
        (0..3).all(|a| {
            let t = y[a] - phi.grid.origin[a];
            t >= -slack && t <= (phi.grid.dims[a] - 1) as f64 * phi.grid.spacing[a] + slack
        })
    };
    let solved: Vec<([f64; 3], f64)> = targets
        .par_iter()
        .map(|&x| {
            let fx = phi.eval(x);
            let first = newton_inverse(phi, x, [2.0 * x[0] - fx[0], 2.0 * x[1] - fx[1], 2.0 * x[2] - fx[2]], tight);
            if first.1 < tol && inside(first.0) {
                return first;
            }
            let nearest = phi
                .map
                .iter()
                .enumerate()
                .map(|(v, p)| (v, (0..3).map(|a| (p[a] - x[a]).powi(2)).sum::<f64>()))
                .fold((0, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best })
                .0;
            let second = newton_inverse(phi, x, phi.grid.point(nearest), tight);
            let rank = |s: &([f64; 3], f64)| (!(s.1 < tol), !inside(s.0), s.1);
            if rank(&second).partial_cmp(&rank(&first)) == Some(std::cmp::Ordering::Less) {
                second
            } else {
                first
            }
        })
        .collect();
    let mut report = InversionReport { max_residual: 0.0, failed: 0, total: targets.len() };
    let mut out = Vec::with_capacity(solved.len());
    for (y, res) in solved {
        if !(res < tol) {
            report.failed += 1;
        }
        if res.is_finite() {
            report.max_residual = report.max_residual.max(res);
        } else {
            report.max_residual = f64::INFINITY;
        }
        out.push(y);
    }
    (out, report)
}

fn check_inversion(report: &InversionReport) -> Result<()> {
    if report.failed as f64 > 1e-3 * report.total as f64 {
        return Err(Error::InversionQuality { failed: report.failed, total: report.total });
    }
    Ok(())
}

/// `φ⁻¹` sampled on the grid of `φ`.
pub fn invert_deformation(phi: &DeformationField) -> Result<(DeformationField, InversionReport)> {
    if phi.min_jacobian_determinant() <= 0.0 {
        return Err(Error::Folding("non-positive jacobian determinant".into()));
    }
    let (pts, report) = inverse_points(phi, &phi.grid.points(), 0.01 * phi.grid.min_spacing());
    check_inversion(&report)?;
    Ok((DeformationField::new(phi.grid, pts)?, report))
}

/// Finite-strain rotation at every voxel of `φ`.
pub fn voxel_rotations(phi: &DeformationField) -> Result<Vec<Matrix3<f64>>> {
    (0..phi.grid.len())
        .into_par_iter()
        .map(|i| {
            let j = phi.jacobian(i);
            if j == Matrix3::identity() {
                Ok(Matrix3::identity())
            } else {
                finite_strain_rotation(&j)
            }
        })
        .collect()
}

/// Apply `M(R_i)` to voxel `i` of `data` for every voxel.
pub fn reorient_voxels(
    data: &[f64],
    channels: usize,
    rotations: &[Matrix3<f64>],
    builder: &WignerBuilder,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; data.len()];
    out.par_chunks_mut(channels)
        .zip(data.par_chunks(channels))
        .zip(rotations.par_iter())
        .try_for_each(|((dst, src), r)| {
            if *r == Matrix3::identity() {
                dst.copy_from_slice(src);
                Ok(())
            } else {
                reorient_into(src, &builder.build_unchecked(r), dst)
            }
        })?;
    Ok(out)
}

/// `φ · c`: reorient every voxel by the finite-strain rotation of `Dφ`,
/// then resample at `φ⁻¹(x)`.
pub fn group_action(atlas: &CoefficientField, phi: &DeformationField) -> Result<CoefficientField> {
    let builder = WignerBuilder::new(atlas.spec.order())?;
    group_action_with(atlas, phi, &builder)
}

pub fn group_action_with(
    atlas: &CoefficientField,
    phi: &DeformationField,
    builder: &WignerBuilder,
) -> Result<CoefficientField> {
    atlas.grid.same_as(&phi.grid)?;
    if phi.is_identity() {
        return Ok(atlas.clone());
    }
    let rotations = voxel_rotations(phi)?;
    let rotated = reorient_voxels(&atlas.data, atlas.channels(), &rotations, builder)?;
    let (pre, report) = inverse_points(phi, &atlas.grid.points(), 0.01 * atlas.grid.min_spacing());
    check_inversion(&report)?;
    let p = atlas.channels();
    let mut out = vec![0.0; atlas.data.len()];
    out.par_chunks_mut(p).zip(pre.par_iter()).for_each(|(dst, y)| {
        let s = stencil(&atlas.grid, *y, Boundary::Background);
        accumulate(&s, &rotated, &atlas.background, dst);
    });
    Ok(atlas.with_data(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> BforBasisSpec {
        BforBasisSpec::new(2, 2, 50.0).unwrap()
    }

    #[test]
    fn stencil_weights_partition_unity() {
        let g = Grid::new([4, 3, 5], [1.0, 2.0, 0.5], [1.0, -1.0, 0.0]).unwrap();
        for p in [[1.3, 0.2, 1.7], [-5.0, 0.0, 0.0], [4.9, 3.1, 2.3]] {
            for mode in [Boundary::Background, Boundary::Clamp] {
                let s = stencil(&g, p, mode);
                let sum: f64 = s.weight.iter().sum();
                assert!((sum - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn interpolation_hits_voxels_and_midpoints() {
        let g = Grid::cube(3, 2.0).unwrap();
        let s = spec();
        let p = s.len();
        let data: Vec<f64> = (0..g.len() * p).map(|i| (i as f64 * 0.37).sin()).collect();
        let f = CoefficientField::new(g, s, data).unwrap();
        let v = g.index(1, 2, 0);
        assert_eq!(f.interpolate(g.point(v)), f.voxel(v));
        let a = g.index(0, 1, 1);
        let b = g.index(1, 1, 1);
        let mid = f.interpolate([1.0, 2.0, 2.0]);
        for c in 0..p {
            assert!((mid[c] - 0.5 * (f.voxel(a)[c] + f.voxel(b)[c])).abs() < 1e-14);
        }
        // far outside: background
        let out = f.interpolate([-10.0, 0.0, 0.0]);
        assert_eq!(out, f.background());
    }

    #[test]
    fn affine_jacobian_is_exact() {
        let g = Grid::new([4, 5, 3], [1.0, 1.5, 2.0], [0.0; 3]).unwrap();
        let a = Matrix3::new(1.1, 0.2, 0.0, -0.1, 0.9, 0.3, 0.05, 0.0, 1.2);
        let phi = DeformationField::from_fn(g, |x| {
            let y = a * Vector3::new(x[0], x[1], x[2]);
            [y[0] + 1.0, y[1], y[2] - 2.0]
        })
        .unwrap();
        for i in 0..g.len() {
            assert!((phi.jacobian(i) - a).abs().max() < 1e-10);
        }
    }

    #[test]
    fn inverse_of_translation() {
        let g = Grid::cube(5, 1.0).unwrap();
        let phi = DeformationField::from_fn(g, |x| [x[0] + 0.3, x[1] - 0.2, x[2]]).unwrap();
        let (inv, rep) = invert_deformation(&phi).unwrap();
        assert_eq!(rep.failed, 0);
        for (i, p) in inv.map().iter().enumerate() {
            let x = g.point(i);
            assert!((p[0] - (x[0] - 0.3)).abs() < 1e-9 && (p[1] - (x[1] + 0.2)).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_action_is_exact() {
        let g = Grid::cube(3, 1.0).unwrap();
        let s = spec();
        let data: Vec<f64> = (0..g.len() * s.len()).map(|i| i as f64).collect();
        let f = CoefficientField::new(g, s, data).unwrap();
        let out = group_action(&f, &DeformationField::identity(g)).unwrap();
        assert_eq!(out, f);
    }
}
