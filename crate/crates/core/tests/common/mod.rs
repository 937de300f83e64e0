#![allow(dead_code)]

use qflow::bfor::BforBasisSpec;
use qflow::field::{CoefficientField, Grid};
use qflow::lddmm::MomentumTrajectory;
use qflow::quadrature::{gauss_legendre_interval, SphereRule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Smooth random field: a few random plane waves per channel plus an
/// isotropic offset.
pub fn smooth_field(grid: Grid, spec: &BforBasisSpec, seed: u64) -> CoefficientField {
    let mut r = rng(seed);
    let p = spec.len();
    let waves: Vec<([f64; 3], f64, f64)> = (0..3 * p)
        .map(|_| {
            let k = [r.gen_range(-0.4..0.4), r.gen_range(-0.4..0.4), r.gen_range(-0.4..0.4)];
            (k, r.gen_range(0.0..6.3), r.gen_range(-1.0..1.0))
        })
        .collect();
    let mut data = Vec::with_capacity(grid.len() * p);
    for v in 0..grid.len() {
        let x = grid.point(v);
        for c in 0..p {
            let mut s = if c == 0 { 2.0 } else { 0.0 };
            for (k, ph, a) in &waves[3 * c..3 * c + 3] {
                s += a * (k[0] * x[0] + k[1] * x[1] + k[2] * x[2] + ph).sin();
            }
            data.push(s);
        }
    }
    CoefficientField::new(grid, spec.clone(), data).unwrap()
}

pub fn random_momentum(grid: Grid, sigma: f64, t: usize, scale: f64, seed: u64) -> MomentumTrajectory {
    let mut m = MomentumTrajectory::strided(grid, 1, sigma, t).unwrap();
    let mut r = rng(seed);
    for a in m.alpha_mut() {
        for x in a.iter_mut() {
            *x = scale * r.gen_range(-1.0..1.0);
        }
    }
    m
}

pub fn random_direction(len: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut r = rng(seed);
    (0..len)
        .map(|_| [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)])
        .collect()
}

pub fn random_unit(r: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

pub fn random_rotation(r: &mut ChaCha8Rng) -> nalgebra::Matrix3<f64> {
    let axis = random_unit(r);
    let angle = r.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    qflow::wigner::rodrigues(&nalgebra::Vector3::new(axis[0] * angle, axis[1] * angle, axis[2] * angle))
}

/// Random matrix with positive determinant.
pub fn random_jacobian(r: &mut ChaCha8Rng) -> nalgebra::Matrix3<f64> {
    loop {
        let m = nalgebra::Matrix3::from_fn(|i, j| if i == j { 1.0 } else { 0.0 } + r.gen_range(-0.6..0.6));
        if m.determinant() > 0.2 {
            return m;
        }
    }
}

pub fn random_vec(len: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..len).map(|_| r.gen_range(-1.0..1.0)).collect()
}

/// Product Gauss–Legendre (radius) × sphere rule over the ball `|q| < tau`.
pub fn ball_rule(tau: f64, radial: usize, degree: usize) -> Vec<([f64; 3], f64)> {
    let (rs, rw) = gauss_legendre_interval(radial, 0.0, tau);
    let sphere = SphereRule::exact_for_degree(degree);
    let mut out = Vec::new();
    for (r, w) in rs.iter().zip(&rw) {
        for (u, v) in sphere.points.iter().zip(&sphere.weights) {
            out.push(([u[0] * r, u[1] * r, u[2] * r], w * v * r * r));
        }
    }
    out
}
