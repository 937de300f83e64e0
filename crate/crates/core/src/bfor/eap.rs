//! Ensemble average propagator by discrete Fourier transform of the
//! reconstructed q-space signal, and scalar maps derived from it.

use super::{BforBasisSpec, BASIS_EVALUATIONS};
use crate::error::{Error, Result};
use crate::quadrature::SphereRule;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::atomic::Ordering;
use std::f64::consts::PI;
use std::sync::Arc;

/// Displacement PDF on a centred cubic grid.
#[derive(Clone, Debug, PartialEq)]
pub struct EapGrid {
    size: usize,
    /// Displacement spacing in mm.
    spacing: f64,
    values: Vec<f64>,
}

impl EapGrid {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Values with x fastest; offset `(i, j, k)` from the corner, centre at
    /// `size / 2` on every axis.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at integer offsets from the centre.
    pub fn at(&self, dx: i64, dy: i64, dz: i64) -> f64 {
        let h = (self.size / 2) as i64;
        let n = self.size as i64;
        let (i, j, k) = (dx + h, dy + h, dz + h);
        assert!((0..n).contains(&i) && (0..n).contains(&j) && (0..n).contains(&k));
        self.values[((k * n + j) * n + i) as usize]
    }

    /// Largest displacement (mm) reachable along an axis.
    pub fn extent(&self) -> f64 {
        (self.size / 2) as f64 * self.spacing
    }

    /// Trilinear interpolation at displacement `p` (mm); zero outside.
    pub fn interpolate(&self, p: [f64; 3]) -> f64 {
        let h = (self.size / 2) as f64;
        let n = self.size;
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let t = p[a] / self.spacing + h;
            if t < 0.0 || t > (n - 1) as f64 {
                return 0.0;
            }
            let i = (t.floor() as usize).min(n - 2);
            base[a] = i;
            frac[a] = t - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..8 {
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            for a in 0..3 {
                let up = (corner >> a) & 1 == 1;
                idx[a] = base[a] + up as usize;
                w *= if up { frac[a] } else { 1.0 - frac[a] };
            }
            acc += w * self.values[(idx[2] * n + idx[1]) * n + idx[0]];
        }
        acc
    }
}

/// Precomputed basis samples and FFT for repeated EAP evaluation with one
/// spec and grid.
pub struct EapPlan {
    spec: BforBasisSpec,
    size: usize,
    spacing: f64,
    // grid slot and basis row of every q-sample inside the support
    slots: Vec<usize>,
    qpts: Vec<[f64; 3]>,
    basis: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl EapPlan {
    /// `size` odd; q-grid spans `[-q_extent, q_extent]` on every axis.
    pub fn new(spec: &BforBasisSpec, size: usize, q_extent: f64) -> Result<Self> {
        if size % 2 == 0 || size < 3 {
            return Err(Error::InvalidArgument(format!("EAP grid size must be odd and >= 3, got {size}")));
        }
        if !(q_extent > 0.0 && q_extent <= spec.tau()) {
            return Err(Error::InvalidArgument(format!(
                "q extent {q_extent} must lie in (0, tau = {}]",
                spec.tau()
            )));
        }
        let h = (size / 2) as i64;
        let dq = q_extent / h as f64;
        let p = spec.len();
        let mut slots = Vec::new();
        let mut qpts = Vec::new();
        let mut basis = Vec::new();
        let mut row = vec![0.0; p];
        for k in -h..=h {
            for j in -h..=h {
                for i in -h..=h {
                    let q = [i as f64 * dq, j as f64 * dq, k as f64 * dq];
                    if super::norm3(q) >= spec.tau() {
                        continue;
                    }
                    spec.eval_all_into(q, &mut row)?;
                    slots.push(fft_slot(i, j, k, size));
                    qpts.push(q);
                    basis.extend_from_slice(&row);
                }
            }
        }
        let fft = FftPlanner::new().plan_fft_forward(size);
        Ok(EapPlan {
            spec: spec.clone(),
            size,
            spacing: 1.0 / (size as f64 * dq),
            slots,
            qpts,
            basis,
            fft,
        })
    }

    /// Default plan: 35³ grid spanning the full support.
    pub fn default_for(spec: &BforBasisSpec) -> Result<Self> {
        Self::new(spec, 35, spec.tau())
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Signal at every q-grid point inside the support.
    fn signal(&self, c: &[f64]) -> Result<Vec<f64>> {
        let p = self.spec.len();
        if c.len() != p {
            return Err(Error::Dimension { expected: p, got: c.len() });
        }
        BASIS_EVALUATIONS.fetch_add(self.basis.len() as u64, Ordering::Relaxed);
        Ok(self.basis.chunks_exact(p).map(|row| super::dot(row, c)).collect())
    }

    pub fn eap(&self, c: &[f64]) -> Result<EapGrid> {
        let signal = self.signal(c)?;
        self.transform(&signal)
    }

    fn transform(&self, signal: &[f64]) -> Result<EapGrid> {
        let n = self.size;
        let mut data = vec![Complex::new(0.0, 0.0); n * n * n];
        for (slot, v) in self.slots.iter().zip(signal) {
            data[*slot] = Complex::new(*v, 0.0);
        }
        fft3(&*self.fft, &mut data, n);
        let h = (n / 2) as i64;
        let mut values = vec![0.0; n * n * n];
        let mut total = 0.0;
        for k in -h..=h {
            for j in -h..=h {
                for i in -h..=h {
                    let v = data[fft_slot(i, j, k, n)].re.max(0.0);
                    let out = (((k + h) as usize * n) + (j + h) as usize) * n + (i + h) as usize;
                    values[out] = v;
                    total += v;
                }
            }
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::DegeneratePdf);
        }
        values.iter_mut().for_each(|v| *v /= total);
        Ok(EapGrid { size: n, spacing: self.spacing, values })
    }

    /// Po, MSD (mm²) and GFA at each radius (μm). Po and MSD come from
    /// the FFT grid; spherical samples for GFA are evaluated directly from
    /// the same discrete Fourier sum, avoiding grid interpolation.
    pub fn features(&self, c: &[f64], radii_um: &[f64]) -> Result<ScalarFeatures> {
        let signal = self.signal(c)?;
        let eap = self.transform(&signal)?;
        let mut msd = 0.0;
        let h = (eap.size / 2) as i64;
        for k in -h..=h {
            for j in -h..=h {
                for i in -h..=h {
                    let r2 = ((i * i + j * j + k * k) as f64) * eap.spacing * eap.spacing;
                    msd += r2 * eap.at(i, j, k);
                }
            }
        }
        let rule = SphereRule::exact_for_degree(12);
        let mut gfa = Vec::with_capacity(radii_um.len());
        for &r_um in radii_um {
            let r = r_um * 1e-3;
            if !(r >= 0.0) || r > eap.extent() {
                return Err(Error::InvalidArgument(format!(
                    "radius {r_um} μm outside EAP extent {} μm",
                    eap.extent() * 1e3
                )));
            }
            let values: Vec<f64> = rule
                .points
                .iter()
                .map(|u| {
                    let x = [u[0] * r, u[1] * r, u[2] * r];
                    let v: f64 = self
                        .qpts
                        .iter()
                        .zip(&signal)
                        .map(|(q, e)| e * (2.0 * PI * (q[0] * x[0] + q[1] * x[1] + q[2] * x[2])).cos())
                        .sum();
                    v.max(0.0)
                })
                .collect();
            gfa.push(generalized_fa(&values, &rule.weights));
        }
        Ok(ScalarFeatures { po: eap.at(0, 0, 0), msd, gfa })
    }
}

fn fft_slot(i: i64, j: i64, k: i64, n: usize) -> usize {
    let n = n as i64;
    let w = |v: i64| v.rem_euclid(n) as usize;
    (w(k) * n as usize + w(j)) * n as usize + w(i)
}

fn fft3(fft: &dyn Fft<f64>, data: &mut [Complex<f64>], n: usize) {
    // x lines are contiguous
    fft.process(data);
    let mut line = vec![Complex::new(0.0, 0.0); n];
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                line[j] = data[(k * n + j) * n + i];
            }
            fft.process(&mut line);
            for j in 0..n {
                data[(k * n + j) * n + i] = line[j];
            }
        }
    }
    for j in 0..n {
        for i in 0..n {
            for k in 0..n {
                line[k] = data[(k * n + j) * n + i];
            }
            fft.process(&mut line);
            for k in 0..n {
                data[(k * n + j) * n + i] = line[k];
            }
        }
    }
}

/// EAP of one coefficient vector on an odd `size`³ grid.
pub fn eap_grid(c: &[f64], spec: &BforBasisSpec, size: usize, q_extent: f64) -> Result<EapGrid> {
    EapPlan::new(spec, size, q_extent)?.eap(c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarFeatures {
    /// Probability at zero displacement.
    pub po: f64,
    /// Mean squared displacement, mm².
    pub msd: f64,
    /// Generalised fractional anisotropy per requested radius.
    pub gfa: Vec<f64>,
}

/// Po, MSD and GFA with the default 35³ plan.
pub fn scalar_features(c: &[f64], spec: &BforBasisSpec, radii_um: &[f64]) -> Result<ScalarFeatures> {
    EapPlan::default_for(spec)?.features(c, radii_um)
}

/// `std / rms` of a spherical function given by quadrature samples.
pub fn generalized_fa(values: &[f64], weights: &[f64]) -> f64 {
    let wsum: f64 = weights.iter().sum();
    let mean = values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / wsum;
    let ms = values.iter().zip(weights).map(|(v, w)| v * v * w).sum::<f64>() / wsum;
    if ms <= 0.0 {
        return 0.0;
    }
    ((ms - mean * mean).max(0.0) / ms).sqrt()
}
