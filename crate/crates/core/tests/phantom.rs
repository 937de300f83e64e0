mod common;

use common::*;
use qflow::bfor::BforBasisSpec;
use qflow::field::Grid;
use qflow::phantom::*;
use qflow::Error;

fn spec() -> BforBasisSpec {
    BforBasisSpec::new(4, 2, 60.0).unwrap()
}

#[test]
fn reference_scheme_layout() {
    let s = hydi_scheme();
    assert_eq!(s.len(), 132);
    let counts: Vec<usize> = s.shells().iter().map(|sh| sh.directions.len()).collect();
    assert_eq!(counts, vec![7, 6, 21, 24, 24, 50]);
    assert!((s.shells()[5].q - 78.95).abs() < 1e-12);
    assert!((s.max_q() - 78.95).abs() < 1e-12);
    let t = s.diffusion_time().unwrap();
    for sh in &s.shells()[1..] {
        assert!((sh.b / (sh.q * sh.q) - s.shells()[1].b / (s.shells()[1].q * s.shells()[1].q)).abs() < 1e-9);
        assert!((sh.b - 4.0 * std::f64::consts::PI.powi(2) * sh.q * sh.q * t).abs() < 1e-6 * sh.b);
        for d in &sh.directions {
            assert!(((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() - 1.0).abs() < 1e-12);
        }
    }
    assert_eq!(s.default_spec().unwrap().len(), 90);
}

#[test]
fn directions_are_deterministic_and_well_spread() {
    let a = electrostatic_directions(24, 3);
    assert_eq!(a, electrostatic_directions(24, 3));
    let mut worst: f64 = 0.0;
    for i in 0..a.len() {
        for j in 0..i {
            let c = (a[i][0] * a[j][0] + a[i][1] * a[j][1] + a[i][2] * a[j][2]).abs();
            worst = worst.max(c);
        }
    }
    // 24 antipodal pairs leave no two axes closer than about 20°.
    assert!(worst < 20f64.to_radians().cos(), "{worst}");
}

#[test]
fn rows_group_into_shells() {
    let rows = [([0.0, 0.0, 0.0], 0.0), ([10.0, 0.0, 0.0], 300.0), ([0.0, 10.0, 0.0], 300.0), ([0.0, 0.0, 20.0], 1200.0)];
    let s = EncodingScheme::from_rows(&rows).unwrap();
    assert_eq!(s.shells().len(), 3);
    assert_eq!(s.len(), 4);
    assert_eq!(s.shells()[1].directions.len(), 2);
    assert!(EncodingScheme::from_rows(&[]).is_err());
}

#[test]
fn isotropic_and_unweighted_signals() {
    let s = hydi_scheme();
    let d = 1.1e-3;
    let iso = nalgebra::Matrix3::identity() * d;
    let e = tensor_mixture_signal(&s, &[(iso, 1.0)]).unwrap();
    for (sample, v) in s.samples().iter().zip(&e) {
        if sample.b == 0.0 {
            assert_eq!(*v, 1.0);
        }
        assert!((v - (-sample.b * d).exp()).abs() < 1e-14);
    }
    let fiber = fiber_tensor([1.0, 0.0, 0.0], 1.7e-3, 0.3e-3);
    let mixed = tensor_mixture_signal(&s, &[(fiber, 0.4), (iso, 0.6)]).unwrap();
    assert!(s.samples().iter().zip(&mixed).all(|(sm, v)| sm.b > 0.0 || *v == 1.0));
}

#[test]
fn invalid_mixtures_are_rejected() {
    let s = hydi_scheme();
    let iso = nalgebra::Matrix3::identity() * 1e-3;
    assert!(tensor_mixture_signal(&s, &[(iso, 0.7)]).is_err());
    let not_spd = nalgebra::Matrix3::new(1e-3, 0.0, 0.0, 0.0, -1e-3, 0.0, 0.0, 0.0, 1e-3);
    assert!(tensor_mixture_signal(&s, &[(not_spd, 1.0)]).is_err());
    let asym = nalgebra::Matrix3::new(1e-3, 5e-4, 0.0, 0.0, 1e-3, 0.0, 0.0, 0.0, 1e-3);
    assert!(tensor_mixture_signal(&s, &[(asym, 1.0)]).is_err());
}

#[test]
fn zero_warp_reproduces_the_template() {
    let g = Grid::cube(5, 2.0).unwrap();
    let t = smooth_field(g, &spec(), 1);
    for (s, phi) in synthetic_ensemble(&t, 3, 0.0, 2, 0.0).unwrap() {
        assert!(phi.is_identity());
        assert_eq!(s, t);
    }
}

#[test]
fn ensembles_are_deterministic_per_seed() {
    let g = Grid::cube(6, 2.0).unwrap();
    let t = smooth_field(g, &spec(), 3);
    let a = synthetic_ensemble(&t, 2, 1.0, 4, 0.05).unwrap();
    let b = synthetic_ensemble(&t, 2, 1.0, 4, 0.05).unwrap();
    let c = synthetic_ensemble(&t, 2, 1.0, 5, 0.05).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn ensemble_warps_are_diffeomorphic_with_the_requested_size() {
    let g = Grid::cube(8, 2.0).unwrap();
    let t = smooth_field(g, &spec(), 6);
    for (_, phi) in synthetic_ensemble(&t, 4, 1.5, 7, 0.0).unwrap() {
        assert!(phi.min_jacobian_determinant() > 0.0);
        let d = max_displacement(&phi);
        assert!(d <= 1.05 * 1.5 * g.min_spacing() && d > 0.0, "{d}");
    }
}

#[test]
fn oversized_warps_are_retried_smaller_or_rejected() {
    let g = Grid::cube(8, 1.0).unwrap();
    let t = smooth_field(g, &spec(), 8);
    match synthetic_ensemble(&t, 2, 40.0, 9, 0.0) {
        Ok(members) => {
            for (_, phi) in members {
                assert!(phi.min_jacobian_determinant() > 0.0);
                assert!(max_displacement(&phi) < 40.0);
            }
        }
        Err(e) => assert!(matches!(e, Error::Folding(_))),
    }
    assert!(synthetic_ensemble(&t, 0, 1.0, 1, 0.0).is_err());
    assert!(synthetic_ensemble(&t, 1, 1.0, 1, -0.1).is_err());
}

#[test]
fn random_warp_reaches_the_requested_amplitude() {
    let g = Grid::cube(8, 2.0).unwrap();
    let phi = random_warp(g, 2.0, 11).unwrap();
    let d = max_displacement(&phi) / g.min_spacing();
    assert!((d - 2.0).abs() < 0.05, "{d}");
}

#[test]
fn swirl_is_a_rotation_at_the_axis() {
    let g = Grid::cube(9, 1.0).unwrap();
    let phi = swirl_warp(g, 30f64.to_radians(), 3.0).unwrap();
    assert!(phi.min_jacobian_determinant() > 0.0);
    let c = g.index(4, 4, 4);
    let p = phi.map()[c];
    let x = g.point(c);
    assert!((0..3).all(|i| (p[i] - x[i]).abs() < 1e-12));
    let j = phi.jacobian(g.index(4, 4, 2));
    assert!((j[(0, 1)] + 30f64.to_radians().sin()).abs() < 0.1);
}

#[test]
fn templates_have_fibers_and_background_margins() {
    let scheme = hydi_scheme();
    let s = scheme.default_spec().unwrap();
    let g = Grid::cube(10, 2.0).unwrap();
    let single = phantom_template(PhantomKind::Single, g, &scheme, &s, 1e-3).unwrap();
    let cross = phantom_template(PhantomKind::Crossing, g, &scheme, &s, 1e-3).unwrap();
    assert!(!single.fiber_voxels().is_empty());
    assert!(cross.fiber_voxels().len() > single.fiber_voxels().len());
    let corner = single.field.voxel(0);
    for (a, b) in corner.iter().zip(&s.free_water()) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(!single.fiber_mask[0]);
}
