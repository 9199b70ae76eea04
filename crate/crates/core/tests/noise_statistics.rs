use anyon_noise::noise::{
    self, increment_factor, ou_path, sample_increments, BathSpectrum, CorrelationMatrix, IncrementSampler, NoiseSpec,
    RngStream,
};
use anyon_noise::Error;

fn sample_covariance(x: &nalgebra::DMatrix<f64>) -> nalgebra::DMatrix<f64> {
    let n = x.nrows() as f64;
    let mean = x.row_mean();
    let centered = nalgebra::DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - mean[j]);
    centered.transpose() * centered / (n - 1.0)
}

#[test]
fn increments_reproduce_the_target_covariance() {
    let d = CorrelationMatrix::from_rows(&[vec![1.0, 0.6, 0.2], vec![0.6, 1.0, -0.3], vec![0.2, -0.3, 1.0]]).unwrap();
    let dt = 0.01;
    let n = 200_000;
    let x = sample_increments(&d, dt, n, RngStream::new(11, 0)).unwrap();
    let cov = sample_covariance(&x);
    for a in 0..3 {
        for b in 0..3 {
            let target = 2.0 * dt * d.entries()[(a, b)].re;
            // standard error of a covariance estimate ≈ 2dt·√((1+ρ²)/n)
            let se = 2.0 * dt * (2.0 / n as f64).sqrt();
            assert!((cov[(a, b)] - target).abs() < 5.0 * se, "entry ({a},{b}): {} vs {target}", cov[(a, b)]);
        }
    }
}

#[test]
fn perfectly_correlated_increments_are_identical() {
    let d = CorrelationMatrix::two_link(1.0).unwrap();
    let x = sample_increments(&d, 0.05, 1000, RngStream::new(3, 9)).unwrap();
    for s in 0..x.nrows() {
        assert_eq!(x[(s, 0)].to_bits(), x[(s, 1)].to_bits());
    }
    let anti = CorrelationMatrix::two_link(-1.0).unwrap();
    let y = sample_increments(&anti, 0.05, 1000, RngStream::new(3, 9)).unwrap();
    for s in 0..y.nrows() {
        assert_eq!(y[(s, 0)], -y[(s, 1)]);
    }
}

#[test]
fn increment_factor_squares_to_the_covariance() {
    for xi in [-1.0, -0.4, 0.0, 0.7, 1.0] {
        let d = CorrelationMatrix::two_link(xi).unwrap();
        let f = increment_factor(&d, 0.2).unwrap();
        let back = &f * f.transpose();
        let target = d.real_entries().unwrap() * 0.4;
        assert!((back - target).abs().max() < 1e-14, "xi = {xi}");
    }
}

#[test]
fn streams_are_deterministic_and_distinct() {
    let d = CorrelationMatrix::identity(2);
    let a = sample_increments(&d, 0.1, 50, RngStream::new(42, 1)).unwrap();
    let b = sample_increments(&d, 0.1, 50, RngStream::new(42, 1)).unwrap();
    let c = sample_increments(&d, 0.1, 50, RngStream::new(42, 2)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let mut s = IncrementSampler::new(&d, 0.1, RngStream::new(42, 1)).unwrap();
    let mut row = [0.0; 2];
    s.next_into(&mut row);
    assert_eq!(row, [a[(0, 0)], a[(0, 1)]]);
}

#[test]
fn ou_path_has_exponential_autocorrelation() {
    let (sigma, tau_c, dt) = (0.7, 0.5, 0.05);
    let n = 400_000;
    let path = ou_path(sigma, tau_c, dt, n, RngStream::new(5, 0)).unwrap();
    let mean = path.iter().sum::<f64>() / n as f64;
    let var = path.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    assert!((var - sigma * sigma).abs() < 0.03 * sigma * sigma, "variance {var}");
    for lag in [1usize, 5, 10, 20] {
        let c: f64 = (0..n - lag).map(|i| (path[i] - mean) * (path[i + lag] - mean)).sum::<f64>() / (n - lag) as f64;
        let target = sigma * sigma * (-(lag as f64) * dt / tau_c).exp();
        assert!((c - target).abs() < 0.03 * sigma * sigma, "lag {lag}: {c} vs {target}");
    }
}

#[test]
fn rates_follow_the_closed_forms() {
    let j = 0.1;
    assert!((noise::effective_rate(&NoiseSpec::Wiener { d_phi: 1.0 }, j) - 0.02).abs() < 1e-15);
    let ou = NoiseSpec::OrnsteinUhlenbeck { sigma: 2.0, tau_c: 0.25 };
    assert!((noise::effective_rate(&ou, j) - 2.0 * j * j * 4.0 * 0.25).abs() < 1e-15);
    let spectrum = BathSpectrum::ohmic(0.03, 2.0, 50.0).unwrap();
    let bath = NoiseSpec::QuantumBath { spectrum };
    assert!((noise::effective_rate(&bath, j) - 2.0 * j * j * 2.0 * 0.03 * 2.0).abs() < 1e-15);
}

#[test]
fn lamb_shift_matches_the_ohmic_integral() {
    let spectrum = BathSpectrum::ohmic(0.05, 1.0, 3.0).unwrap();
    let xi = noise::lamb_shift_coefficient(&spectrum).unwrap();
    assert!((xi - 2.0 * 0.05 * 3.0 / std::f64::consts::PI).abs() < 1e-9, "{xi}");
}

#[test]
fn invalid_correlations_are_rejected() {
    assert!(matches!(CorrelationMatrix::two_link(1.2), Err(Error::Validity(_))));
    assert!(CorrelationMatrix::from_rows(&[vec![1.0, 0.5], vec![0.4, 1.0]]).is_err());
    assert!(CorrelationMatrix::from_rows(&[vec![1.0, 0.9, 0.9], vec![0.9, 1.0, -0.9], vec![0.9, -0.9, 1.0]]).is_err());
    assert!(matches!(NoiseSpec::Wiener { d_phi: -1.0 }.validate(), Err(Error::Parameter(_))));
}
