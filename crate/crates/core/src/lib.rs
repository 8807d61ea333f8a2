//! Desk-scale simulator and calibration engine for continuously parameterized
//! Mølmer–Sørensen (MS) two-qubit gates on a linear trapped-ion register.
//!
//! The crate is organized around the physical layers of the problem:
//!
//! - [`chain`] — equilibrium positions, radial normal modes, and Lamb-Dicke
//!   parameters of the ion chain, plus gate mode-pair/detuning selection.
//! - [`comb`] — the pulsed-laser frequency-comb model: two-photon Rabi rates
//!   and fourth-order differential light shifts, with the blue/red tone-ratio
//!   (ζ_br) balancing root-find.
//! - [`pulse`] — AOM saturation response, the Gaussian amplitude envelope and
//!   its spline representation, and the erf-shaped dynamic frame-rotation
//!   profile.
//! - [`dynamics`] — MS(θ) gate dynamics under shaped pulses: an exact
//!   displacement-algebra path and a truncated-Fock brute-force propagator
//!   used as a numerical oracle.
//! - [`fit`] — deterministic fitting toolkit (damped least squares, binomial
//!   MLE, Wilson intervals, linear crossings, fidelity estimator).
//! - [`calib`] — the calibration schedule driven against a pluggable
//!   experiment backend, including the built-in virtual experiment and the
//!   length-delimited JSON job protocol.
//! - [`compiler`] — circuit IR with dual per-qubit phase frames, virtual-Z
//!   bookkeeping, and ZZ(θ) wrapper synthesis.
//! - [`config`] — the artifact-wide configuration file.
//!
//! Known model limitation: off-resonant carrier flopping terms are excluded
//! from the gate Hamiltonian; their net phase effect enters only through the
//! comb light-shift model.

pub mod calib;
pub mod chain;
pub mod comb;
pub mod compiler;
pub mod config;
pub mod constants;
pub mod dynamics;
pub mod fit;
pub mod pulse;
