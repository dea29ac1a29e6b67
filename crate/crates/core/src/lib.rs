//! Simulation and measurement-chain toolkit for a levitated nanoparticle held
//! in a pulse-modulated optical trap.
//!
//! The crate covers the full loop of a trap-stiffness modulation experiment:
//!
//! * [`physics`] — particle/gas/trap specifications and closed-form force and
//!   rate expressions (gradient force, gas damping, thermal noise strength).
//! * [`modulation`] — the piecewise-constant stiffness schedule `S(t)` built
//!   from quarter-period pulse timings.
//! * [`integrator`] — stochastic integration of the one-dimensional Langevin
//!   equation with modulation, gas damping, thermal noise and velocity
//!   feedback; reproducible parallel ensembles.
//! * [`oracle`] — exact mean/covariance propagation for the linear (harmonic)
//!   dynamics, used both as ground truth for the integrator and for analytic
//!   protocol gain predictions.
//! * [`dsp`] — the detection chain: band-pass filtering, numerical
//!   differentiation, Welch spectral estimation, Lorentzian resonance fits and
//!   equipartition calibration.
//! * [`analysis`] — time-resolved ensemble statistics, phase-space histograms
//!   and derived scalar metrics (dB expansion, effective temperature, phonon
//!   occupation, thermal spread, growth constants).
//!
//! All quantities are SI unless noted otherwise.

pub mod analysis;
pub mod constants;
pub mod dsp;
pub mod integrator;
pub mod modulation;
pub mod oracle;
pub mod physics;
