//! Simulation of Abelian anyon lattices whose exchange phase fluctuates.
//!
//! The crate follows one chain of reasoning end to end:
//!
//! * [`algebra`] builds Jordan–Wigner dressed anyon operators and the
//!   Hermitian exchange currents `K_θ` that the phase noise couples to;
//! * [`noise`] turns white, Ornstein–Uhlenbeck and quantum-bath noise
//!   descriptions into correlated phase increments and dephasing rates;
//! * [`stochastic`] integrates single stochastic Liouville trajectories
//!   (Stratonovich/Heun and Itô/Euler–Maruyama) and averages ensembles;
//! * [`lindblad`] propagates the averaged master equation, builds the
//!   vectorized Liouvillian and inspects its spectrum (normality,
//!   decoherence-free kernels, exceptional points);
//! * [`protection`] evaluates the closed-form protected-mode rates and
//!   optimal statistical angles;
//! * [`cli`] wires everything to JSON configs and the `anyon-sim` binary.

// `!(x <= tol)` rejects NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algebra;
pub mod cli;
pub mod error;
pub mod lindblad;
pub mod linalg;
pub mod noise;
pub mod protection;
pub mod quadrature;
pub mod stochastic;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;

/// Dense complex matrix.
pub type CMatrix = nalgebra::DMatrix<C64>;
