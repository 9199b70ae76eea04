use anyon_noise::algebra::{self, HilbertSpace, Link, Operator, StatisticalAngle};
use anyon_noise::linalg::{self, c};
use anyon_noise::noise::CorrelationMatrix;
use anyon_noise::Error;
use proptest::prelude::*;
use std::f64::consts::PI;

fn angle(t: f64) -> StatisticalAngle {
    StatisticalAngle::new(t).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn deformed_algebra_holds_on_hardcore_lattices(theta in 0.0..(2.0 * PI), n in 2usize..=4) {
        let space = HilbertSpace::hardcore(n).unwrap();
        let th = angle(theta);
        let ops = algebra::build_jw_anyon_ops(&space, th).unwrap();
        prop_assert!(algebra::verify_distorted_algebra(&ops, th).unwrap() < 1e-12);
    }

    #[test]
    fn exchange_currents_are_hermitian_and_traceless(theta in 0.0..(2.0 * PI), delta in -PI..PI, i in 0usize..3, j in 0usize..3) {
        prop_assume!(i != j);
        let space = HilbertSpace::hardcore(3).unwrap();
        let th = angle(theta);
        let ops = algebra::build_jw_anyon_ops(&space, th).unwrap();
        let k = algebra::exchange_current(&ops, &Link::new(i, j, 1.0).with_offset(delta), th).unwrap();
        prop_assert!(k.hermiticity_defect() < 1e-14);
        prop_assert!(linalg::trace(k.matrix()).norm() < 1e-14);
    }

    #[test]
    fn two_mode_block_matches_pauli_form(theta in 0.0..(2.0 * PI)) {
        let space = HilbertSpace::hardcore(2).unwrap();
        let th = angle(theta);
        let ops = algebra::build_jw_anyon_ops(&space, th).unwrap();
        let k = algebra::exchange_current(&ops, &Link::two_mode(1.0), th).unwrap();
        let block = k.single_excitation_block(&space).unwrap();
        let expected = linalg::pauli_x() * c(-theta.sin(), 0.0) + linalg::pauli_y() * c(theta.cos(), 0.0);
        prop_assert!(linalg::max_abs_diff(block.matrix(), &expected) < 1e-14);
        prop_assert!(linalg::max_abs_diff(algebra::two_mode_k(th).matrix(), &expected) < 1e-14);
    }

    #[test]
    fn soft_core_operators_commute_across_sites_up_to_phase(theta in 0.0..(2.0 * PI)) {
        // a_0 a_1 = e^{iθ} a_1 a_0 holds for any cutoff
        let space = HilbertSpace::new(2, 2).unwrap();
        let ops = algebra::build_jw_anyon_ops(&space, angle(theta)).unwrap();
        let lhs = ops[0].matrix() * ops[1].matrix();
        let rhs = ops[1].matrix() * ops[0].matrix() * phase(theta);
        prop_assert!(linalg::max_abs_diff(&lhs, &rhs) < 1e-12);
    }
}

fn phase(t: f64) -> anyon_noise::C64 {
    c(t.cos(), t.sin())
}

#[test]
fn bosonic_and_fermionic_limits() {
    let space = HilbertSpace::hardcore(3).unwrap();
    let b = algebra::build_jw_anyon_ops(&space, StatisticalAngle::bosonic()).unwrap();
    for (site, op) in b.iter().enumerate() {
        let bare = algebra::boson_annihilator(&space, site).unwrap();
        assert!(linalg::max_abs_diff(op.matrix(), bare.matrix()) < 1e-15);
    }
    let f = algebra::build_jw_anyon_ops(&space, StatisticalAngle::fermionic()).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let ac = linalg::anticommutator(f[i].matrix(), &f[j].matrix().adjoint());
            let expected = if i == j { linalg::identity(8) } else { linalg::zeros(8) };
            assert!(linalg::max_abs_diff(&ac, &expected) < 1e-14, "({i},{j})");
        }
    }
}

#[test]
fn angle_is_reduced_and_validated() {
    assert!((angle(2.0 * PI + 0.25).radians() - 0.25).abs() < 1e-15);
    assert!((angle(-0.25).radians() - (2.0 * PI - 0.25)).abs() < 1e-15);
    assert!(matches!(StatisticalAngle::new(f64::NAN), Err(Error::Parameter(_))));
}

#[test]
fn space_cap_and_link_validation() {
    assert!(matches!(HilbertSpace::with_cap(20, 1, 1 << 12), Err(Error::Size { .. })));
    assert!(Link::new(0, 0, 1.0).validate(2).is_err());
    assert!(Link::new(0, 5, 1.0).validate(2).is_err());
    let space = HilbertSpace::hardcore(2).unwrap();
    let ops = algebra::build_jw_anyon_ops(&space, angle(0.3)).unwrap();
    assert!(matches!(
        algebra::exchange_current(&ops, &Link::new(0, 2, 1.0), angle(0.3)),
        Err(Error::InvalidLink { .. })
    ));
    assert!(Operator::new(linalg::zeros(3).insert_column(0, c(0.0, 0.0))).is_err());
}

#[test]
fn collective_currents_diagonalize_the_rate_matrix() {
    let th = angle(0.4);
    let k0 = algebra::two_mode_k(th);
    let k1 = algebra::two_mode_k(angle(0.4 + PI / 2.0));
    for xi in [-1.0, 0.0, 0.5, 1.0] {
        let d = CorrelationMatrix::two_link(xi).unwrap();
        let cc = algebra::collective_currents(&[k0.clone(), k1.clone()], &d, 0.3).unwrap();
        assert_eq!(cc.len(), 2);
        let mut rates: Vec<f64> = cc.iter().map(|m| m.rate).collect();
        rates.sort_by(f64::total_cmp);
        let (lo, hi) = ((1.0 - xi.abs()) * 2.0 * 0.09, (1.0 + xi.abs()) * 2.0 * 0.09);
        assert!((rates[0] - lo).abs() < 1e-14 && (rates[1] - hi).abs() < 1e-14, "xi = {xi}: {rates:?}");
        for m in &cc {
            assert!(m.operator.is_hermitian(1e-14));
        }
    }
}
