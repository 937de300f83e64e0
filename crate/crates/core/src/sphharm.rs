//! Real, antipodally symmetric spherical harmonics.
//!
//! Only even degrees are kept. Within degree `l` the orders run
//! `m = -l..=l`; the real functions are built from the complex harmonics
//! (Condon–Shortley phase) as
//!
//! * `m < 0`: `√2 · Im Y_l^{|m|}`
//! * `m = 0`: `Y_l^0`
//! * `m > 0`: `√2 · Re Y_l^m`
//!
//! The linear index is `j = l(l+1)/2 + m`, so degree `l` owns the contiguous
//! range `[l(l-1)/2, (l+1)(l+2)/2)`.

use crate::error::{Error, Result};
use std::f64::consts::PI;

/// Highest supported truncation order.
pub const MAX_ORDER: usize = 16;

/// Degree/order pair of one basis function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ShIndex {
    pub l: usize,
    pub m: i64,
}

impl ShIndex {
    pub fn new(l: usize, m: i64) -> Result<Self> {
        if l % 2 != 0 || l > MAX_ORDER {
            return Err(Error::InvalidOrder(l as i64));
        }
        if m.unsigned_abs() as usize > l {
            return Err(Error::InvalidArgument(format!("order {m} outside degree {l}")));
        }
        Ok(ShIndex { l, m })
    }

    /// 0-based linear index.
    pub fn linear(self) -> usize {
        ((self.l * (self.l + 1) / 2) as i64 + self.m) as usize
    }

    /// Inverse of [`ShIndex::linear`].
    pub fn from_linear(j: usize) -> Self {
        let mut l = 0;
        while (l + 1) * (l + 2) / 2 <= j {
            l += 2;
        }
        let m = j as i64 - (l * (l + 1) / 2) as i64;
        ShIndex { l, m }
    }
}

/// Range of linear indices owned by degree `l`.
pub fn degree_range(l: usize) -> std::ops::Range<usize> {
    let start = if l == 0 { 0 } else { l * (l - 1) / 2 };
    start..(l + 1) * (l + 2) / 2
}

fn check_order(order: i64) -> Result<usize> {
    if order < 0 || order % 2 != 0 || order as usize > MAX_ORDER {
        return Err(Error::InvalidOrder(order));
    }
    Ok(order as usize)
}

/// Number of even-degree harmonics up to truncation order `order`.
pub fn sh_count(order: i64) -> Result<usize> {
    let l = check_order(order)?;
    Ok((l + 1) * (l + 2) / 2)
}

/// All indices up to `order`, in linear order.
pub fn indices(order: usize) -> Vec<ShIndex> {
    let n = (order + 1) * (order + 2) / 2;
    (0..n).map(ShIndex::from_linear).collect()
}

/// Degree of each linear index up to `order`.
pub fn degrees(order: usize) -> Vec<usize> {
    indices(order).into_iter().map(|i| i.l).collect()
}

/// Evaluate one basis function at a unit vector.
pub fn sh_eval(index: ShIndex, u: [f64; 3]) -> Result<f64> {
    let norm = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::Domain(format!("direction has norm {norm}, expected 1")));
    }
    if index.l > MAX_ORDER || index.l % 2 != 0 {
        return Err(Error::InvalidOrder(index.l as i64));
    }
    let mut out = vec![0.0; (index.l + 1) * (index.l + 2) / 2];
    ShTable::new(index.l).eval_into(u, &mut out);
    Ok(out[index.linear()])
}

/// Precomputed normalisation constants for fast evaluation of every
/// harmonic up to a fixed order.
#[derive(Clone, Debug)]
pub struct ShTable {
    order: usize,
    // norm[l][m] for 0 <= m <= l, including the √2 for m > 0
    norm: Vec<Vec<f64>>,
}

impl ShTable {
    pub fn new(order: usize) -> Self {
        assert!(order % 2 == 0 && order <= MAX_ORDER, "unsupported order {order}");
        let mut norm = Vec::with_capacity(order + 1);
        for l in 0..=order {
            let mut row = Vec::with_capacity(l + 1);
            for m in 0..=l {
                // (l-m)!/(l+m)! accumulated as a product to stay in range
                let mut ratio = 1.0;
                for k in (l - m + 1)..=(l + m) {
                    ratio /= k as f64;
                }
                let mut c = ((2 * l + 1) as f64 / (4.0 * PI) * ratio).sqrt();
                if m > 0 {
                    c *= std::f64::consts::SQRT_2;
                }
                row.push(c);
            }
            norm.push(row);
        }
        ShTable { order, norm }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        (self.order + 1) * (self.order + 2) / 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Write `Y_j(u)` for every `j` into `out` (length [`ShTable::len`]).
    /// `u` is assumed to be a unit vector.
    pub fn eval_into(&self, u: [f64; 3], out: &mut [f64]) {
        let order = self.order;
        debug_assert_eq!(out.len(), self.len());
        let x = u[2].clamp(-1.0, 1.0);
        let s = (1.0 - x * x).max(0.0).sqrt();
        let phi = u[1].atan2(u[0]);

        // plm[l][m], Condon–Shortley phase, upward recurrence in l.
        let mut plm = [[0.0f64; MAX_ORDER + 1]; MAX_ORDER + 1];
        let mut pmm = 1.0;
        for m in 0..=order {
            if m > 0 {
                pmm *= -((2 * m - 1) as f64) * s;
            }
            plm[m][m] = pmm;
            if m < order {
                plm[m + 1][m] = x * (2 * m + 1) as f64 * pmm;
            }
            for l in (m + 2)..=order {
                plm[l][m] = (x * (2 * l - 1) as f64 * plm[l - 1][m]
                    - (l + m - 1) as f64 * plm[l - 2][m])
                    / (l - m) as f64;
            }
        }

        for l in (0..=order).step_by(2) {
            let base = l * (l + 1) / 2;
            out[base] = self.norm[l][0] * plm[l][0];
            for m in 1..=l {
                let a = self.norm[l][m] * plm[l][m];
                let mf = m as f64 * phi;
                out[base + m] = a * mf.cos();
                out[base - m] = a * mf.sin();
            }
        }
    }

    pub fn eval(&self, u: [f64; 3]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(u, &mut out);
        out
    }
}
