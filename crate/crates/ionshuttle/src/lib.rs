//! Voltage-ramp design, optimization, and verification for shuttling a single
//! ion between the wells of a segmented linear trap.
//!
//! The crate covers the full chain from electrode modelling to wavepacket
//! dynamics:
//!
//! - [`potential`]: electrode potentials (harmonic, analytic surrogate, fitted
//!   series), calibration, and the assembled time-dependent trap potential.
//! - [`ramp`]: smooth transport functions, sampled voltage ramps with CSV I/O,
//!   and the local-well inversion that produces initial voltage guesses.
//! - [`classical`]: point-particle propagation (fixed-step RK4 and adaptive
//!   RK45), final-energy metrics, and duration stability windows.
//! - [`classical_oct`]: iterative optimal control of the classical endpoint
//!   energy with an adjoint (costate) sweep and immediate voltage updates.
//! - [`analytic`]: closed-form minimal-time bang-bang solutions and
//!   compensation ramps that enforce the transport trajectory exactly.
//! - [`quantum`]: a co-moving Fourier grid with a Chebyshev propagator for
//!   wavepacket transport, ground states, fidelities, and observables.
//! - [`quantum_oct`]: wavefunction-overlap optimal control on the moving grid,
//!   scaled model families, and convergence diagnostics.
//! - [`experiment`]: configuration, scans, power-law fits, and reproducible
//!   output bundles used by the command-line binary.
//!
//! Internal units are micrometres, microseconds, atomic mass units, and volts;
//! see [`units`].

pub mod analytic;
pub mod classical;
pub mod classical_oct;
pub mod error;
pub mod experiment;
pub mod potential;
pub mod quantum;
pub mod quantum_oct;
pub mod ramp;
pub mod units;

pub use error::{Result, ShuttleError};
