//! Exact propagation of means and covariances for the damped harmonic
//! oscillator with piecewise-constant parameters.
//!
//! The state is `x = (z, v)` and the linear SDE is
//! `dx = A x dt + (0, √D)ᵀ dW` with `A = [[0, 1], [−ω², −γ]]` and the
//! velocity-noise intensity `D = 2 Γ k_B T / m` [m²/s³]. Everything here is
//! closed form, so the module doubles as ground truth for the stochastic
//! integrator and as the analytic model of the pulse protocol.

use nalgebra::{Matrix2, Vector2};
use thiserror::Error;

use crate::constants::BOLTZMANN;
use crate::modulation::pulse_timings;
use crate::physics::{ParticleSpec, TrapSpec};

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("invalid covariance state: {0}")]
    InvalidState(&'static str),
}

/// Relative threshold separating the under/over-damped branches from the
/// critically damped limit.
const CRITICAL_TOL: f64 = 1e-12;

/// Gaussian summary of the phase-space distribution: mean vector and the
/// 2×2 matrix of second central moments in `(z, v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceState {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

impl CovarianceState {
    pub fn new(
        mean_z: f64,
        mean_v: f64,
        sigma_zz: f64,
        sigma_zv: f64,
        sigma_vv: f64,
    ) -> Result<Self, OracleError> {
        if !(sigma_zz >= 0.0 && sigma_vv >= 0.0) {
            return Err(OracleError::InvalidState("diagonal moments must be nonnegative"));
        }
        let det = sigma_zz * sigma_vv - sigma_zv * sigma_zv;
        if det < -1e-12 * sigma_zz * sigma_vv {
            return Err(OracleError::InvalidState("second-moment matrix must be PSD"));
        }
        Ok(Self {
            mean: Vector2::new(mean_z, mean_v),
            cov: Matrix2::new(sigma_zz, sigma_zv, sigma_zv, sigma_vv),
        })
    }

    /// Isotropic thermal state: `σ_zz = k_B T/(m ω²)`, `σ_vv = k_B T/m`,
    /// uncorrelated, zero mean.
    pub fn thermal(temperature: f64, trap: &TrapSpec, particle: &ParticleSpec) -> Self {
        let m = particle.mass();
        let w = trap.angular_frequency();
        let kt = BOLTZMANN * temperature;
        Self {
            mean: Vector2::zeros(),
            cov: Matrix2::new(kt / (m * w * w), 0.0, 0.0, kt / m),
        }
    }

    pub fn sigma_z(&self) -> f64 {
        self.cov[(0, 0)].max(0.0).sqrt()
    }

    pub fn sigma_v(&self) -> f64 {
        self.cov[(1, 1)].max(0.0).sqrt()
    }

    pub fn cov_zv(&self) -> f64 {
        self.cov[(0, 1)]
    }
}

/// Transition matrix `exp(A·dt)` of the damped oscillator in closed form.
///
/// The underdamped, critically damped and overdamped branches are all
/// handled; `dt = 0` gives the identity and `γ = 0, dt = π/(2ω)` the quarter
/// period rotation `[[0, 1/ω], [−ω, 0]]`. The determinant is `e^(−γ·dt)`.
pub fn segment_map(omega: f64, gamma: f64, dt: f64) -> Matrix2<f64> {
    let half_gamma = 0.5 * gamma;
    let disc = omega * omega - half_gamma * half_gamma;
    let envelope = (-half_gamma * dt).exp();
    if disc > CRITICAL_TOL * omega * omega {
        // underdamped
        let wd = disc.sqrt();
        let (s, c) = (wd * dt).sin_cos();
        envelope
            * Matrix2::new(
                c + half_gamma * s / wd,
                s / wd,
                -omega * omega * s / wd,
                c - half_gamma * s / wd,
            )
    } else if disc < -CRITICAL_TOL * omega * omega {
        // overdamped; fold the envelope into the hyperbolic terms so nothing
        // overflows at large κ·dt (γ/2 > κ keeps both exponents negative)
        let kappa = (-disc).sqrt();
        let ep = ((kappa - half_gamma) * dt).exp();
        let em = (-(kappa + half_gamma) * dt).exp();
        let c = 0.5 * (ep + em);
        let s = 0.5 * (ep - em);
        Matrix2::new(
            c + half_gamma * s / kappa,
            s / kappa,
            -omega * omega * s / kappa,
            c - half_gamma * s / kappa,
        )
    } else {
        // critically damped limit
        envelope
            * Matrix2::new(
                1.0 + half_gamma * dt,
                dt,
                -omega * omega * dt,
                1.0 - half_gamma * dt,
            )
    }
}

/// Map of one full pulse (quarter period at `ω√S`, then quarter period at
/// `ω`). In `(z, v)` coordinates this is `diag(−√S, −1/√S)`.
pub fn pulse_map(depth: f64, omega_z: f64) -> Matrix2<f64> {
    let (tau_low, tau_high) = pulse_timings(depth, omega_z);
    segment_map(omega_z, 0.0, tau_high) * segment_map(omega_z * depth.sqrt(), 0.0, tau_low)
}

/// Exact process-noise covariance `Q(dt) = ∫₀^dt e^(A s) B Bᵀ e^(Aᵀ s) ds`
/// for `B = (0, √diffusion)ᵀ`.
pub fn process_noise(omega: f64, gamma: f64, diffusion: f64, dt: f64) -> Matrix2<f64> {
    if diffusion == 0.0 || dt == 0.0 {
        return Matrix2::zeros();
    }
    let half_gamma = 0.5 * gamma;
    let disc = omega * omega - half_gamma * half_gamma;
    // ∫₀^t e^(−γs) ds, stable for small γt
    let i0 = if gamma > 0.0 { -(-gamma * dt).exp_m1() / gamma } else { dt };

    let (j_ss, j_sc, j_cc, scale);
    if disc > CRITICAL_TOL * omega * omega {
        // underdamped: sin²/ sin·cos / cos² integrals against e^(−γs)
        let wd = disc.sqrt();
        let den = gamma * gamma + 4.0 * wd * wd;
        let e = (-gamma * dt).exp();
        let (s2, c2) = (2.0 * wd * dt).sin_cos();
        let ic = (gamma - e * (gamma * c2 - 2.0 * wd * s2)) / den;
        let is = (2.0 * wd - e * (gamma * s2 + 2.0 * wd * c2)) / den;
        j_ss = 0.5 * (i0 - ic);
        j_cc = 0.5 * (i0 + ic);
        j_sc = 0.5 * is;
        scale = wd;
    } else if disc < -CRITICAL_TOL * omega * omega {
        // overdamped: sinh²/ sinh·cosh / cosh²; γ > 2κ so both exponents decay
        let kappa = (-disc).sqrt();
        let a_minus = gamma - 2.0 * kappa;
        let a_plus = gamma + 2.0 * kappa;
        let f_minus = -(-a_minus * dt).exp_m1() / a_minus;
        let f_plus = -(-a_plus * dt).exp_m1() / a_plus;
        let ich = 0.5 * (f_minus + f_plus);
        let ish = 0.5 * (f_minus - f_plus);
        j_ss = 0.5 * (ich - i0);
        j_cc = 0.5 * (ich + i0);
        j_sc = 0.5 * ish;
        scale = kappa;
    } else {
        // critical: integrand elements are polynomials in s times e^(−γs)
        let (int_s, int_s2);
        if gamma > 0.0 {
            let e = (-gamma * dt).exp();
            int_s = (1.0 - e * (1.0 + gamma * dt)) / (gamma * gamma);
            int_s2 = (2.0 - e * (2.0 + 2.0 * gamma * dt + gamma * gamma * dt * dt))
                / (gamma * gamma * gamma);
        } else {
            int_s = 0.5 * dt * dt;
            int_s2 = dt * dt * dt / 3.0;
        }
        let q_zz = diffusion * int_s2;
        let q_zv = diffusion * (int_s - half_gamma * int_s2);
        let q_vv =
            diffusion * (i0 - gamma * int_s + half_gamma * half_gamma * int_s2);
        return Matrix2::new(q_zz, q_zv, q_zv, q_vv);
    }

    let q_zz = diffusion * j_ss / (scale * scale);
    let q_zv = diffusion * (j_sc / scale - half_gamma * j_ss / (scale * scale));
    let q_vv = diffusion
        * (j_cc - gamma * j_sc / scale + half_gamma * half_gamma * j_ss / (scale * scale));
    Matrix2::new(q_zz, q_zv, q_zv, q_vv)
}

/// Advance mean and covariance over `dt` at constant `(ω, γ, diffusion)`:
/// `mean ← M·mean`, `Σ ← M·Σ·Mᵀ + Q(dt)`.
pub fn propagate(
    state: &CovarianceState,
    omega: f64,
    gamma: f64,
    diffusion: f64,
    dt: f64,
) -> CovarianceState {
    let m = segment_map(omega, gamma, dt);
    let mean = m * state.mean;
    let cov = m * state.cov * m.transpose() + process_noise(omega, gamma, diffusion, dt);
    // enforce exact symmetry against roundoff
    let sym = 0.5 * (cov + cov.transpose());
    CovarianceState { mean, cov: sym }
}

/// Growth of the major-axis standard deviation after `n` ideal pulses,
/// `n · 10·log₁₀(1/√S)` [dB].
pub fn predicted_expansion_db(n_pulses: u32, depth: f64) -> f64 {
    f64::from(n_pulses) * 10.0 * (1.0 / depth.sqrt()).log10()
}

/// Exponential time constant of the major-axis standard deviation,
/// `(τ_low+τ_high) / ln(1/√S)` [s].
pub fn amplitude_time_constant(depth: f64, omega_z: f64) -> f64 {
    let (tau_low, tau_high) = pulse_timings(depth, omega_z);
    (tau_low + tau_high) / (1.0 / depth.sqrt()).ln()
}

/// Exponential time constant of the major-axis variance,
/// `(τ_low+τ_high) / ln(1/S)` [s]; half the amplitude constant.
pub fn variance_time_constant(depth: f64, omega_z: f64) -> f64 {
    let (tau_low, tau_high) = pulse_timings(depth, omega_z);
    (tau_low + tau_high) / (1.0 / depth).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const OMEGA: f64 = 2.0 * std::f64::consts::PI * 77.6e3;

    fn matrix_close(a: &Matrix2<f64>, b: &Matrix2<f64>, tol: f64) {
        let scale = b.amax().max(a.amax()).max(1e-300);
        assert!((a - b).amax() <= tol * scale, "a={a} b={b}");
    }

    /// Simpson-rule quadrature of the process-noise integral; independent of
    /// the closed forms under test.
    fn process_noise_quadrature(omega: f64, gamma: f64, diffusion: f64, dt: f64) -> Matrix2<f64> {
        let n = 20_000; // even
        let h = dt / n as f64;
        let mut acc = Matrix2::zeros();
        for k in 0..=n {
            let s = k as f64 * h;
            let m = segment_map(omega, gamma, s);
            let col = Vector2::new(m[(0, 1)], m[(1, 1)]);
            let w = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * diffusion * col * col.transpose();
        }
        acc * (h / 3.0)
    }

    #[test]
    fn quarter_period_rotation() {
        let m = segment_map(OMEGA, 0.0, std::f64::consts::FRAC_PI_2 / OMEGA);
        matrix_close(&m, &Matrix2::new(0.0, 1.0 / OMEGA, -OMEGA, 0.0), 1e-12);
    }

    #[test]
    fn zero_time_is_identity() {
        for gamma in [0.0, 1.0e3, 2.0 * OMEGA, 5.0 * OMEGA] {
            matrix_close(&segment_map(OMEGA, gamma, 0.0), &Matrix2::identity(), 1e-15);
        }
    }

    #[test]
    fn full_period_is_identity() {
        let m = segment_map(OMEGA, 0.0, 2.0 * std::f64::consts::PI / OMEGA);
        matrix_close(&m, &Matrix2::identity(), 1e-9);
    }

    #[test]
    fn determinant_is_damping_factor() {
        let dt = 3.7e-6;
        for gamma in [0.0, 8.68e-3, 1.45e5, 2.0 * OMEGA, 7.0 * OMEGA] {
            let det = segment_map(OMEGA, gamma, dt).determinant();
            assert_relative_eq!(det, (-gamma * dt).exp(), max_relative = 1e-9);
        }
    }

    #[test]
    fn branches_agree_near_critical_damping() {
        let dt = 2.0e-6;
        let gc = 2.0 * OMEGA;
        let under = segment_map(OMEGA, gc * (1.0 - 1e-9), dt);
        let critical = segment_map(OMEGA, gc, dt);
        let over = segment_map(OMEGA, gc * (1.0 + 1e-9), dt);
        matrix_close(&under, &critical, 1e-7);
        matrix_close(&over, &critical, 1e-7);
    }

    #[test]
    fn pulse_map_is_diagonal_squeeze() {
        let m = pulse_map(0.9, OMEGA);
        assert_relative_eq!(m[(0, 0)], -0.94868, max_relative = 1e-5);
        assert_relative_eq!(m[(1, 1)], -1.05409, max_relative = 1e-5);
        assert!(m[(0, 1)].abs() * OMEGA < 1e-9);
        assert!(m[(1, 0)].abs() / OMEGA < 1e-9);
    }

    #[test]
    fn pulse_map_at_unit_depth_is_half_period() {
        matrix_close(&pulse_map(1.0, OMEGA), &(-Matrix2::identity()), 1e-10);
    }

    #[test]
    fn pulse_map_is_symplectic() {
        for depth in [0.1, 0.25, 0.5, 0.9, 0.99, 1.0] {
            assert_relative_eq!(pulse_map(depth, OMEGA).determinant(), 1.0, max_relative = 1e-10);
        }
    }

    #[test]
    fn process_noise_matches_quadrature() {
        let d = 5.5e-4; // representative velocity-noise intensity
        for (gamma, dt) in [
            (1.45e5, 5.0e-6),
            (1.45e5, 3.0e-7),
            (8.68e-3, 5.0e-6),
            (2.0 * OMEGA, 2.0e-6),
            (5.0 * OMEGA, 2.0e-6),
        ] {
            let exact = process_noise(OMEGA, gamma, d, dt);
            let quad = process_noise_quadrature(OMEGA, gamma, d, dt);
            matrix_close(&exact, &quad, 1e-7);
        }
    }

    #[test]
    fn propagate_reaches_thermal_stationary_state() {
        let m = 7.54e-18;
        let gamma = 1.45e5;
        let kt = crate::constants::BOLTZMANN * 300.0;
        let d = 2.0 * gamma * kt / m;
        let state = CovarianceState::new(1.0e-9, 0.0, 0.0, 0.0, 0.0).unwrap();
        let relaxed = propagate(&state, OMEGA, gamma, d, 1.0);
        assert_relative_eq!(relaxed.cov[(0, 0)], kt / (m * OMEGA * OMEGA), max_relative = 1e-9);
        assert_relative_eq!(relaxed.cov[(1, 1)], kt / m, max_relative = 1e-9);
        assert!(relaxed.cov[(0, 1)].abs() < 1e-9 * kt / (m * OMEGA));
        assert!(relaxed.mean.norm() < 1e-12);
    }

    #[test]
    fn undamped_propagation_preserves_phase_space_area() {
        let state = CovarianceState::new(0.0, 0.0, 4.0e-20, 1.0e-16, 9.0e-9).unwrap();
        let mut s = state;
        for _ in 0..57 {
            s = propagate(&s, OMEGA, 0.0, 0.0, 1.3e-7);
        }
        assert_relative_eq!(
            s.cov.determinant(),
            state.cov.determinant(),
            max_relative = 1e-9
        );
    }

    #[test]
    fn one_pulse_scales_velocity_variance() {
        // isotropic Σ = σ²·diag(1, ω²) gains 1/S in σ_vv after one pulse
        let sigma_sq = 3.2e-20;
        let state =
            CovarianceState::new(0.0, 0.0, sigma_sq, 0.0, sigma_sq * OMEGA * OMEGA).unwrap();
        let m = pulse_map(0.9, OMEGA);
        let cov = m * state.cov * m.transpose();
        assert_relative_eq!(
            cov[(1, 1)] / (sigma_sq * OMEGA * OMEGA),
            1.0 / 0.9,
            max_relative = 1e-9
        );
        assert_relative_eq!(cov[(0, 0)] / sigma_sq, 0.9, max_relative = 1e-9);
    }

    #[test]
    fn expansion_db_values() {
        assert_eq!(predicted_expansion_db(0, 0.9), 0.0);
        assert_relative_eq!(predicted_expansion_db(1, 0.9), 0.2288, max_relative = 1e-3);
        assert_relative_eq!(predicted_expansion_db(124, 0.9), 28.4, max_relative = 2e-3);
    }

    #[test]
    fn growth_time_constants() {
        assert_relative_eq!(amplitude_time_constant(0.9, OMEGA), 125.6e-6, max_relative = 1e-3);
        assert_relative_eq!(variance_time_constant(0.9, OMEGA), 62.8e-6, max_relative = 1e-3);
        assert_relative_eq!(
            amplitude_time_constant(0.9, OMEGA),
            2.0 * variance_time_constant(0.9, OMEGA),
            max_relative = 1e-12
        );
    }

    #[test]
    fn invalid_states_rejected() {
        assert!(CovarianceState::new(0.0, 0.0, -1.0, 0.0, 1.0).is_err());
        assert!(CovarianceState::new(0.0, 0.0, 1.0, 10.0, 1.0).is_err());
    }
}
