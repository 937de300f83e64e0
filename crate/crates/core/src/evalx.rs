//! Alignment metrics between coefficient volumes: per-shell squared signal
//! differences and symmetrised KL divergence between propagators.

use crate::bfor::EapPlan;
use crate::error::{Error, Result};
use crate::field::CoefficientField;
use crate::phantom::EncodingScheme;
use rayon::prelude::*;

/// Probability floor applied before the KL sums.
pub const PDF_FLOOR: f64 = 1e-12;
/// Default EAP grid edge used for sKL.
pub const DEFAULT_SKL_GRID: usize = 17;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShellDiff {
    pub b: f64,
    pub q: f64,
    pub value: f64,
}

fn check_pair(a: &CoefficientField, b: &CoefficientField) -> Result<()> {
    if a.grid() != b.grid() || a.spec() != b.spec() {
        return Err(Error::InvalidArgument("fields must share one grid and spec".into()));
    }
    Ok(())
}

fn masked_voxels(mask: Option<&[bool]>, n: usize) -> Result<Vec<usize>> {
    let voxels: Vec<usize> = match mask {
        None => (0..n).collect(),
        Some(m) => {
            if m.len() != n {
                return Err(Error::Dimension { expected: n, got: m.len() });
            }
            m.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect()
        }
    };
    if voxels.is_empty() {
        return Err(Error::Empty("mask"));
    }
    Ok(voxels)
}

/// `Σ_{x ∈ mask} Σ_{u ∈ shell} (S_a(x, q u) − S_b(x, q u))²` for every
/// shell with `q > 0`. `None` selects every voxel.
pub fn shell_sq_diff(
    a: &CoefficientField,
    b: &CoefficientField,
    scheme: &EncodingScheme,
    mask: Option<&[bool]>,
) -> Result<Vec<ShellDiff>> {
    check_pair(a, b)?;
    let voxels = masked_voxels(mask, a.grid().len())?;
    let spec = a.spec();
    let mut out = Vec::new();
    for shell in scheme.shells().iter().filter(|s| s.q > 0.0) {
        let rows = shell
            .directions
            .iter()
            .map(|d| spec.eval_all([d[0] * shell.q, d[1] * shell.q, d[2] * shell.q]))
            .collect::<Result<Vec<_>>>()?;
        let value: f64 = voxels
            .par_iter()
            .map(|&v| {
                let (ca, cb) = (a.voxel(v), b.voxel(v));
                rows.iter()
                    .map(|row| {
                        let d: f64 = row.iter().zip(ca.iter().zip(cb)).map(|(r, (x, y))| r * (x - y)).sum();
                        d * d
                    })
                    .sum::<f64>()
            })
            .sum();
        out.push(ShellDiff { b: shell.b, q: shell.q, value });
    }
    Ok(out)
}

/// `KL(p‖q) + KL(q‖p)` after flooring both at [`PDF_FLOOR`] and
/// renormalising.
pub fn symmetric_kl(p: &[f64], q: &[f64]) -> f64 {
    let floor = |v: &[f64]| {
        let f: Vec<f64> = v.iter().map(|x| x.max(PDF_FLOOR)).collect();
        let s: f64 = f.iter().sum();
        f.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let (p, q) = (floor(p), floor(q));
    p.iter().zip(&q).map(|(a, b)| (a - b) * (a.ln() - b.ln())).sum()
}

/// Mean over masked voxels of the symmetrised KL divergence between the
/// EAPs of `a` and `b` on a `grid_size`³ displacement grid.
pub fn skl_divergence(a: &CoefficientField, b: &CoefficientField, mask: Option<&[bool]>, grid_size: usize) -> Result<f64> {
    check_pair(a, b)?;
    let voxels = masked_voxels(mask, a.grid().len())?;
    let plan = EapPlan::new(a.spec(), grid_size, a.spec().tau())?;
    let total = voxels
        .par_iter()
        .map(|&v| {
            let p = plan.eap(a.voxel(v))?;
            let q = plan.eap(b.voxel(v))?;
            Ok(symmetric_kl(p.values(), q.values()))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .sum::<f64>();
    Ok(total / voxels.len() as f64)
}
