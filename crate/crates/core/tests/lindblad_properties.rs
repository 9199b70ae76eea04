use anyon_noise::algebra::{self, Operator, StatisticalAngle};
use anyon_noise::lindblad::{
    self, ChannelKind, CollectiveLossModel, EpOptions, LindbladChannel, LossSweep, TwoLinkDephasingModel,
};
use anyon_noise::linalg::{self, c};
use anyon_noise::noise::CorrelationMatrix;
use anyon_noise::stochastic::{DensityMatrix, SimulationGrid};
use anyon_noise::{CMatrix, Error};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
    CMatrix::from_fn(n, n, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
    linalg::hermitian_part(&random_matrix(rng, n))
}

fn random_state(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
    let a = random_matrix(rng, n);
    let m = &a * a.adjoint();
    let tr = linalg::trace(&m);
    m / tr
}

/// `Σ_ab Γ_ab (K_a ρ K_b − ½{K_b K_a, ρ})`
fn kossakowski(ks: &[CMatrix], gamma: &CMatrix, rho: &CMatrix) -> CMatrix {
    let mut out = CMatrix::zeros(rho.nrows(), rho.ncols());
    for a in 0..ks.len() {
        for b in 0..ks.len() {
            let kbka = &ks[b] * &ks[a];
            out += (&ks[a] * rho * &ks[b] - linalg::anticommutator(&kbka, rho) * c(0.5, 0.0)) * gamma[(a, b)];
        }
    }
    out
}

#[test]
fn liouvillian_matches_direct_action() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [2usize, 3, 4] {
        let h0 = Operator::new(random_hermitian(&mut rng, n)).unwrap();
        let channels = vec![
            lindblad::dephasing_generator(&Operator::new(random_hermitian(&mut rng, n)).unwrap(), 0.3).unwrap(),
            lindblad::relaxation_generator(&Operator::new(random_matrix(&mut rng, n)).unwrap(), 0.7).unwrap(),
        ];
        let l = lindblad::build_liouvillian(&h0, &channels).unwrap();
        for _ in 0..5 {
            let x = random_matrix(&mut rng, n);
            let direct = lindblad::master_rhs(h0.matrix(), &channels, &x);
            assert!(linalg::max_abs_diff(&l.apply(&x), &direct) < 1e-12, "n = {n}");
        }
    }
}

#[test]
fn correlated_channels_reproduce_the_kossakowski_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..20 {
        let n_links = 1 + trial % 3;
        let ks: Vec<Operator> = (0..n_links).map(|_| Operator::new(random_hermitian(&mut rng, 3)).unwrap()).collect();
        let a = nalgebra::DMatrix::from_fn(n_links, n_links, |_, _| rng.random_range(-1.0..1.0));
        let gamma = CorrelationMatrix::from_real(&a * a.transpose()).unwrap();
        let channels = lindblad::correlated_dephasing_channels(&ks, &gamma).unwrap();
        let raw: Vec<CMatrix> = ks.iter().map(|k| k.matrix().clone()).collect();
        let zero = CMatrix::zeros(3, 3);
        for _ in 0..3 {
            let rho = random_state(&mut rng, 3);
            let lhs = lindblad::master_rhs(&zero, &channels, &rho);
            let rhs = kossakowski(&raw, gamma.entries(), &rho);
            assert!(linalg::max_abs_diff(&lhs, &rhs) < 1e-12, "trial {trial}");
        }
    }
}

#[test]
fn master_equation_preserves_trace_hermiticity_and_positivity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h0 = Operator::new(random_hermitian(&mut rng, 3)).unwrap();
    let channels = vec![
        lindblad::dephasing_generator(&Operator::new(random_hermitian(&mut rng, 3)).unwrap(), 0.2).unwrap(),
        lindblad::relaxation_generator(&Operator::new(random_matrix(&mut rng, 3)).unwrap(), 0.1).unwrap(),
    ];
    let rho0 = DensityMatrix::new(random_state(&mut rng, 3)).unwrap();
    let grid = SimulationGrid::new(5.0, 0.005, Some(50)).unwrap();
    let states = lindblad::propagate_master(&h0, &channels, &rho0, &grid).unwrap();
    for s in &states {
        assert!((linalg::trace(s.matrix()).re - 1.0).abs() < 1e-12);
        assert!(linalg::hermiticity_defect(s.matrix()) < 1e-14);
        assert!(s.min_eigenvalue() > -1e-12);
    }
}

#[test]
fn liouvillian_propagator_matches_time_stepping() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h0 = Operator::new(random_hermitian(&mut rng, 2)).unwrap();
    let channels = vec![lindblad::relaxation_generator(&Operator::new(random_matrix(&mut rng, 2)).unwrap(), 0.4).unwrap()];
    let rho0 = DensityMatrix::new(random_state(&mut rng, 2)).unwrap();
    let t = 2.0;
    let grid = SimulationGrid::new(t, 0.001, None).unwrap();
    let stepped = lindblad::propagate_master(&h0, &channels, &rho0, &grid).unwrap();
    let l = lindblad::build_liouvillian(&h0, &channels).unwrap();
    let prop = linalg::expm(&(l.matrix() * c(t, 0.0)));
    let exact = linalg::unvec_col(&(prop * linalg::vec_col(rho0.matrix())), 2);
    assert!(linalg::max_abs_diff(stepped.last().unwrap().matrix(), &exact) < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn hermitian_dephasing_liouvillians_are_normal(seed in any::<u64>(), n in 2usize..=4, links in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels: Vec<LindbladChannel> = (0..links)
            .map(|_| {
                let k = Operator::new(random_hermitian(&mut rng, n)).unwrap();
                lindblad::dephasing_generator(&k, rng.random_range(0.0..2.0)).unwrap()
            })
            .collect();
        let l = lindblad::build_liouvillian(&Operator::zeros(n), &channels).unwrap();
        prop_assert!(lindblad::normality_defect(&l) < 1e-12);
    }
}

#[test]
fn single_dephasing_channel_has_real_well_conditioned_spectrum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let k = Operator::new(random_hermitian(&mut rng, 3)).unwrap();
        let l = lindblad::build_liouvillian(&Operator::zeros(3), &[lindblad::dephasing_generator(&k, 0.8).unwrap()]).unwrap();
        let rep = lindblad::spectral_report(&l).unwrap();
        assert!(rep.max_abs_imag() < 1e-10);
        assert!(rep.max_real_part() < 1e-12);
        assert!(rep.max_condition() < 1.0 + 1e-8, "{}", rep.max_condition());
    }
}

#[test]
fn dephasing_channel_rejects_non_hermitian_jumps() {
    let l = Operator::new(CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)])).unwrap();
    assert!(matches!(
        LindbladChannel::new(l.clone(), 1.0, ChannelKind::HermitianDephasing),
        Err(Error::Validity(_))
    ));
    assert!(LindbladChannel::new(l, -1.0, ChannelKind::Relaxation).is_err());
}

#[test]
fn collective_loss_sweep_finds_exceptional_points_at_full_correlation() {
    let model = CollectiveLossModel {
        coupling: 1.0,
        loss: 1.0,
        xi: 0.0,
        theta: 0.0,
    };
    let sweep: Vec<f64> = (0..41).map(|k| -1.0 + 0.05 * k as f64).collect();
    let scan = lindblad::detect_ep(|p| model.at(LossSweep::Xi, p).liouvillian(), &sweep, EpOptions::default()).unwrap();
    assert!(!scan.candidates.is_empty());
    for cand in &scan.candidates {
        assert!(cand.max_condition_number > 1e3);
        assert!(cand.bracket[0] <= cand.parameter && cand.parameter <= cand.bracket[1]);
    }
    assert!(scan.candidates.iter().any(|c| (c.parameter.abs() - 1.0).abs() < 0.05));
}

#[test]
fn hermitian_dephasing_sweep_has_no_exceptional_points() {
    let base = TwoLinkDephasingModel {
        coupling: 0.1,
        d_phi: 1.0,
        theta: 0.3,
        offsets: [0.0, PI / 2.0],
        xi: 0.0,
    };
    let sweep: Vec<f64> = (0..21).map(|k| -1.0 + 0.1 * k as f64).collect();
    let scan = lindblad::detect_ep(|xi| TwoLinkDephasingModel { xi, ..base }.liouvillian(), &sweep, EpOptions::default()).unwrap();
    assert!(scan.candidates.is_empty());
    assert!(scan.points.iter().all(|p| p.normality_defect < 1e-12));
}

#[test]
fn dfs_kernel_picks_the_noiseless_collective_current() {
    let th = StatisticalAngle::new(0.7).unwrap();
    let ks = vec![algebra::two_mode_k(th), algebra::two_mode_k(StatisticalAngle::new(0.7 + PI / 2.0).unwrap())];
    let kernel = lindblad::dfs_kernel(&CorrelationMatrix::two_link(1.0).unwrap(), &ks).unwrap();
    assert_eq!(kernel.len(), 1);
    let v = &kernel[0].coefficients;
    assert!((v[0] + v[1]).norm() < 1e-12, "antisymmetric mode expected: {v:?}");
    let kernel = lindblad::dfs_kernel(&CorrelationMatrix::two_link(-1.0).unwrap(), &ks).unwrap();
    assert_eq!(kernel.len(), 1);
    let v = &kernel[0].coefficients;
    assert!((v[0] - v[1]).norm() < 1e-12, "symmetric mode expected: {v:?}");
    assert!(lindblad::dfs_kernel(&CorrelationMatrix::two_link(0.9).unwrap(), &ks).unwrap().is_empty());
}

#[test]
fn liouvillian_size_cap_is_enforced() {
    let h0 = Operator::zeros(8);
    assert!(matches!(lindblad::build_liouvillian_with_cap(&h0, &[], 1000), Err(Error::Size { .. })));
    assert!(lindblad::build_liouvillian_with_cap(&h0, &[], 4096).is_ok());
}
