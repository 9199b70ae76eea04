#![allow(dead_code)]

use anyon_noise::algebra::Operator;
use anyon_noise::lindblad::{self, LindbladChannel};
use anyon_noise::stochastic::{self, DensityMatrix, SimulationGrid};
use anyon_noise::C64;
use nalgebra::DVector;
use rand::Rng;

/// Initial slope of `tr ρ(t)ρ(0)` from the master equation, Richardson
/// extrapolated from forward differences at `h` and `2h`.
pub fn survival_slope(h0: &Operator, channels: &[LindbladChannel], rho0: &DensityMatrix, h: f64) -> f64 {
    let grid = SimulationGrid::new(2.0 * h, h / 100.0, Some(100)).unwrap();
    let states = lindblad::propagate_master(h0, channels, rho0, &grid).unwrap();
    let s = stochastic::survival_probability(&states, rho0).unwrap();
    let d1 = (s[1] - s[0]) / h;
    let d2 = (s[2] - s[0]) / (2.0 * h);
    2.0 * d1 - d2
}

pub fn random_ket<R: Rng>(rng: &mut R, n: usize) -> DVector<C64> {
    let v = DVector::from_fn(n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let norm = v.norm();
    v / C64::new(norm, 0.0)
}

/// Uniform point on the Bloch-sphere equator.
pub fn unit_in_plane<R: Rng>(rng: &mut R) -> [f64; 3] {
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    [phi.cos(), phi.sin(), 0.0]
}
