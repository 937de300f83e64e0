mod common;

use common::*;
use nalgebra::Vector3;
use proptest::prelude::*;
use qflow::bfor::BforBasisSpec;
use qflow::evalx::*;
use qflow::field::{group_action, CoefficientField, DeformationField, Grid};
use qflow::phantom::{hydi_scheme, EncodingScheme, Shell};
use qflow::wigner::axis_rotation;
use qflow::Error;

fn spec() -> BforBasisSpec {
    BforBasisSpec::new(4, 2, 80.0).unwrap()
}

#[test]
fn identical_fields_have_zero_differences() {
    let g = Grid::cube(3, 2.0).unwrap();
    let a = smooth_field(g, &spec(), 1);
    let diffs = shell_sq_diff(&a, &a, &hydi_scheme(), None).unwrap();
    assert_eq!(diffs.len(), 5);
    assert!(diffs.iter().all(|d| d.value == 0.0));
    assert_eq!(skl_divergence(&a, &a, None, 9).unwrap(), 0.0);
}

#[test]
fn difference_to_zero_is_the_signal_energy() {
    let g = Grid::cube(2, 1.0).unwrap();
    let s = spec();
    let a = smooth_field(g, &s, 2);
    let zero = CoefficientField::zeros(g, s.clone());
    let scheme = hydi_scheme();
    let diffs = shell_sq_diff(&a, &zero, &scheme, None).unwrap();
    for (d, shell) in diffs.iter().zip(scheme.shells().iter().filter(|sh| sh.q > 0.0)) {
        assert_eq!(d.b, shell.b);
        let mut expected = 0.0;
        for v in 0..g.len() {
            for u in &shell.directions {
                let q = [u[0] * shell.q, u[1] * shell.q, u[2] * shell.q];
                expected += s.reconstruct(a.voxel(v), q).unwrap().powi(2);
            }
        }
        assert!((d.value - expected).abs() < 1e-10 * expected);
    }
}

#[test]
fn masks_restrict_and_are_validated() {
    let g = Grid::cube(2, 1.0).unwrap();
    let a = smooth_field(g, &spec(), 3);
    let b = smooth_field(g, &spec(), 4);
    let scheme = hydi_scheme();
    let mut one = vec![false; g.len()];
    one[3] = true;
    let all = shell_sq_diff(&a, &b, &scheme, None).unwrap();
    let part = shell_sq_diff(&a, &b, &scheme, Some(&one)).unwrap();
    assert!(all.iter().zip(&part).all(|(x, y)| y.value < x.value));
    let empty = vec![false; g.len()];
    assert!(matches!(shell_sq_diff(&a, &b, &scheme, Some(&empty)), Err(Error::Empty(_))));
    assert!(matches!(skl_divergence(&a, &b, Some(&empty), 9), Err(Error::Empty(_))));
    assert!(matches!(skl_divergence(&a, &b, Some(&[true]), 9), Err(Error::Dimension { .. })));
    let other = smooth_field(Grid::cube(3, 1.0).unwrap(), &spec(), 5);
    assert!(skl_divergence(&a, &other, None, 9).is_err());
}

#[test]
fn skl_is_exactly_symmetric_and_positive() {
    let g = Grid::cube(2, 1.0).unwrap();
    let a = smooth_field(g, &spec(), 6);
    let b = smooth_field(g, &spec(), 7);
    let ab = skl_divergence(&a, &b, None, 9).unwrap();
    assert_eq!(ab, skl_divergence(&b, &a, None, 9).unwrap());
    assert!(ab > 0.0);
}

#[test]
fn zero_signal_has_no_propagator() {
    let g = Grid::cube(2, 1.0).unwrap();
    let a = smooth_field(g, &spec(), 8);
    let zero = CoefficientField::zeros(g, spec());
    assert!(matches!(skl_divergence(&a, &zero, None, 9), Err(Error::DegeneratePdf)));
}

#[test]
fn shell_differences_survive_a_quarter_turn_of_both_fields() {
    // A 90° turn about z maps voxels onto voxels and this direction set
    // onto itself up to sign, so only rounding can change the sums.
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let dirs = vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [h, h, 0.0], [h, -h, 0.0]];
    let scheme = EncodingScheme::new(vec![Shell { b: 1200.0, q: 40.0, directions: dirs.clone() }, Shell { b: 4800.0, q: 70.0, directions: dirs }]).unwrap();
    let g = Grid::cube(5, 2.0).unwrap();
    let a = smooth_field(g, &spec(), 9);
    let b = smooth_field(g, &spec(), 10);
    let c = Vector3::from(g.center());
    let rot = axis_rotation(2, std::f64::consts::FRAC_PI_2);
    let phi = DeformationField::from_fn(g, |x| {
        let y = c + rot * (Vector3::from(x) - c);
        [y[0], y[1], y[2]]
    })
    .unwrap();
    let (ra, rb) = (group_action(&a, &phi).unwrap(), group_action(&b, &phi).unwrap());
    let before = shell_sq_diff(&a, &b, &scheme, None).unwrap();
    let after = shell_sq_diff(&ra, &rb, &scheme, None).unwrap();
    for (x, y) in before.iter().zip(&after) {
        assert!((x.value - y.value).abs() < 1e-8 * x.value, "{} vs {}", x.value, y.value);
    }
}

proptest! {
    #[test]
    fn symmetric_kl_is_symmetric_and_non_negative(
        p in prop::collection::vec(0.0f64..1.0, 1..40),
        seed in 0u64..1000,
    ) {
        let q: Vec<f64> = random_vec(p.len(), seed).iter().map(|x| x.abs()).collect();
        let pq = symmetric_kl(&p, &q);
        prop_assert_eq!(pq, symmetric_kl(&q, &p));
        prop_assert!(pq >= 0.0);
        prop_assert_eq!(symmetric_kl(&p, &p), 0.0);
    }
}
