mod common;

use common::*;
use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use proptest::prelude::*;
use qflow::bfor::BforBasisSpec;
use qflow::sphharm::{indices, ShTable};
use qflow::wigner::*;
use qflow::Error;
use rand::Rng;

fn rot_from(v: [f64; 3]) -> Matrix3<f64> {
    rodrigues(&Vector3::new(v[0], v[1], v[2]))
}

fn apply(r: &Matrix3<f64>, u: [f64; 3]) -> [f64; 3] {
    let v = r * Vector3::new(u[0], u[1], u[2]);
    [v[0], v[1], v[2]]
}

#[test]
fn rotated_harmonics_expand_in_the_same_degree() {
    // Y(Rᵀu) = Mᵀ Y(u): column j' of M holds the expansion of Y_{j'}(Rᵀ·)
    let table = ShTable::new(4);
    let mut r = rng(1);
    for _ in 0..20 {
        let rot = random_rotation(&mut r);
        let w = wigner_from_rotation(&rot, 4).unwrap();
        let m = w.dense();
        let n = w.sh_len();
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let u = random_unit(&mut r);
            let y = table.eval(u);
            let yr = table.eval(apply(&rot.transpose(), u));
            for jp in 0..n {
                let pred: f64 = (0..n).map(|j| m[j * n + jp] * y[j]).sum();
                worst = worst.max((pred - yr[jp]).abs());
            }
        }
        assert!(worst < 1e-8, "{worst}");
    }
}

#[test]
fn couplings_only_within_a_degree() {
    let mut r = rng(2);
    let w = wigner_from_rotation(&random_rotation(&mut r), 6).unwrap();
    let m = w.dense();
    let idx = indices(6);
    let n = idx.len();
    for (a, ia) in idx.iter().enumerate() {
        for (b, ib) in idx.iter().enumerate() {
            if ia.l != ib.l {
                assert_eq!(m[a * n + b], 0.0);
            }
        }
    }
}

#[test]
fn half_turn_about_z_flips_odd_orders() {
    let w = wigner_from_rotation(&axis_rotation(2, std::f64::consts::PI), 4).unwrap();
    let m = w.dense();
    let idx = indices(4);
    let n = idx.len();
    for (a, ia) in idx.iter().enumerate() {
        for b in 0..n {
            let expected = if a == b { if ia.m.rem_euclid(2) == 0 { 1.0 } else { -1.0 } } else { 0.0 };
            assert!((m[a * n + b] - expected).abs() < 1e-10, "({a},{b}) {}", m[a * n + b]);
        }
    }
}

#[test]
fn reorientation_matches_rotated_reconstruction() {
    let spec = BforBasisSpec::new(4, 6, 100.0).unwrap();
    let mut r = rng(3);
    for k in 0..20 {
        let rot = random_rotation(&mut r);
        let c = random_vec(spec.len(), 10 + k);
        let rc = reorient(&c, &wigner_from_rotation(&rot, 4).unwrap()).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let u = random_unit(&mut r);
            let s = r.gen_range(0.0..95.0);
            let q = [u[0] * s, u[1] * s, u[2] * s];
            let lhs = spec.reconstruct(&rc, q).unwrap();
            let rhs = spec.reconstruct(&c, apply(&rot.transpose(), q)).unwrap();
            worst = worst.max((lhs - rhs).abs());
        }
        assert!(worst < 1e-8, "{worst}");
    }
}

#[test]
fn representation_property() {
    let mut r = rng(4);
    for _ in 0..20 {
        let (a, b) = (random_rotation(&mut r), random_rotation(&mut r));
        let mab = wigner_from_rotation(&(a * b), 4).unwrap().dense();
        let ma = wigner_from_rotation(&a, 4).unwrap().dense();
        let mb = wigner_from_rotation(&b, 4).unwrap().dense();
        let n = 15;
        for i in 0..n {
            for j in 0..n {
                let prod: f64 = (0..n).map(|k| ma[i * n + k] * mb[k * n + j]).sum();
                assert!((prod - mab[i * n + j]).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn rejects_non_orthogonal_and_reflections() {
    let m = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
    assert!(matches!(wigner_from_rotation(&m, 4), Err(Error::InvalidRotation(_))));
    let refl = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
    assert!(matches!(wigner_from_rotation(&refl, 4), Err(Error::InvalidRotation(_))));
}

#[test]
fn reorient_rejects_length_mismatch() {
    let w = wigner_from_rotation(&Matrix3::identity(), 4).unwrap();
    assert!(matches!(reorient(&[1.0; 14], &w), Err(Error::Dimension { .. })));
}

fn polar_oracle(j: &Matrix3<f64>) -> Matrix3<f64> {
    // R = J (JᵀJ)^{-1/2} from an eigendecomposition
    let e = SymmetricEigen::new(j.transpose() * j);
    let d = Matrix3::from_diagonal(&e.eigenvalues.map(|x| 1.0 / x.sqrt()));
    j * e.eigenvectors * d * e.eigenvectors.transpose()
}

#[test]
fn polar_factor_matches_eigen_oracle() {
    let mut r = rng(5);
    for _ in 0..50 {
        let j = random_jacobian(&mut r);
        let rot = finite_strain_rotation(&j).unwrap();
        assert!((rot - polar_oracle(&j)).abs().max() < 1e-10);
        assert!((rot.transpose() * rot - Matrix3::identity()).abs().max() < 1e-10);
    }
    assert!((finite_strain_rotation(&Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0))).unwrap() - Matrix3::identity()).abs().max() < 1e-12);
    let rz = axis_rotation(2, 0.7);
    assert!((finite_strain_rotation(&rz).unwrap() - rz).abs().max() < 1e-12);
    assert!(matches!(finite_strain_rotation(&Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0))), Err(Error::Folding(_))));
}

fn differential_check(j: &Matrix3<f64>, h: &Matrix3<f64>) -> f64 {
    let rot = finite_strain_rotation(j).unwrap();
    let f = finite_strain_differential(j, &rot).unwrap();
    let analytic = skew(&rotation_variation(&rot, &f, h)) * rot;
    let eps = 1e-6;
    let fd = (finite_strain_rotation(&(j + h * eps)).unwrap() - finite_strain_rotation(&(j - h * eps)).unwrap()) / (2.0 * eps);
    (fd - analytic).norm() / fd.norm().max(analytic.norm())
}

#[test]
fn finite_strain_differential_matches_directional_difference() {
    let mut r = rng(6);
    for _ in 0..50 {
        let j = random_jacobian(&mut r);
        let h = Matrix3::from_fn(|_, _| r.gen_range(-1.0..1.0));
        let rel = differential_check(&j, &h);
        assert!(rel < 1e-3, "{rel}");
    }
}

#[test]
fn finite_strain_differential_is_rotation_equivariant() {
    let mut r = rng(7);
    for _ in 0..20 {
        let j = random_jacobian(&mut r);
        let q = random_rotation(&mut r);
        let h = Matrix3::from_fn(|_, _| r.gen_range(-1.0..1.0));
        assert!(differential_check(&(q * j), &(q * h)) < 1e-3);
    }
}

#[test]
fn degenerate_differential_is_reported() {
    let j = Matrix3::from_diagonal(&Vector3::new(1.0, 1e-20, 1e-20));
    let r = Matrix3::identity();
    assert!(matches!(finite_strain_differential(&j, &r), Err(Error::DegenerateJacobian(_))));
}

/// Richardson-extrapolated central difference of `t ↦ M(e^{tU_i})c` at 0.
fn derivative_oracle(c: &[f64], axis: usize) -> Vec<f64> {
    let d = |h: f64| -> Vec<f64> {
        let p = reorient(c, &wigner_from_rotation(&axis_rotation(axis, h), 4).unwrap()).unwrap();
        let m = reorient(c, &wigner_from_rotation(&axis_rotation(axis, -h), 4).unwrap()).unwrap();
        p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    };
    let (a, b) = (d(1e-3), d(5e-4));
    a.iter().zip(&b).map(|(x, y)| (4.0 * y - x) / 3.0).collect()
}

#[test]
fn coefficient_gradient_is_first_order_accurate() {
    let c = random_vec(90, 8);
    for axis in 0..3 {
        let oracle = derivative_oracle(&c, axis);
        let err = |delta: f64| {
            let g = rotated_coeff_gradient(&c, 4, delta).unwrap();
            g[axis].iter().zip(&oracle).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        let ratio = err(1e-3) / err(5e-4);
        assert!((ratio - 2.0).abs() < 0.2, "axis {axis}: ratio {ratio}");
    }
}

#[test]
fn coefficient_gradient_vanishes_on_isotropic_input() {
    let mut c = vec![0.0; 90];
    for n in 0..6 {
        c[n * 15] = 1.0 + n as f64;
    }
    for row in rotated_coeff_gradient(&c, 4, 1e-4).unwrap() {
        assert!(row.iter().all(|v| v.abs() < 1e-10));
    }
    for row in rotated_coeff_gradient(&[0.0; 90], 4, 1e-4).unwrap() {
        assert!(row.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn contraction_matches_explicit_gradient() {
    let builder = WignerBuilder::new(4).unwrap();
    let p = PerturbationBlocks::new(&builder, 1e-4).unwrap();
    let c = random_vec(90, 9);
    let rho = random_vec(90, 10);
    let g = p.rotated_coeff_gradient(&c).unwrap();
    let mut scratch = vec![0.0; 90];
    let s = p.contract(&c, &rho, &mut scratch);
    for i in 0..3 {
        let direct: f64 = g[i].iter().zip(&rho).map(|(a, b)| a * b).sum();
        assert!((direct - s[i]).abs() < 1e-9 * direct.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reorientation_is_an_isometry(v in prop::array::uniform3(-3.0f64..3.0), seed in 0u64..1000) {
        let c = random_vec(90, seed);
        let rc = reorient(&c, &wigner_from_rotation(&rot_from(v), 4).unwrap()).unwrap();
        let n0: f64 = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        let n1: f64 = rc.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n0 - n1).abs() < 1e-10 * n0.max(1.0));
    }

    #[test]
    fn blocks_are_orthogonal(v in prop::array::uniform3(-3.0f64..3.0)) {
        let w = wigner_from_rotation(&rot_from(v), 8).unwrap();
        for l in (0..=8).step_by(2) {
            let b = w.block(l);
            let k = 2 * l + 1;
            for i in 0..k {
                for j in 0..k {
                    let d: f64 = (0..k).map(|t| b[i * k + t] * b[j * k + t]).sum();
                    let e = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((d - e).abs() < 1e-10);
                }
            }
        }
        prop_assert!((w.block(0)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn polar_factor_ignores_symmetric_stretch(v in prop::array::uniform3(-3.0f64..3.0), s in prop::array::uniform3(0.3f64..3.0), seed in 0u64..100) {
        let rot = rot_from(v);
        let q = random_rotation(&mut rng(seed));
        let p = q * Matrix3::from_diagonal(&Vector3::new(s[0], s[1], s[2])) * q.transpose();
        let got = finite_strain_rotation(&(rot * p)).unwrap();
        prop_assert!((got - rot).abs().max() < 1e-10);
    }
}
