//! Stochastic integration of the axial equation of motion
//!
//! `m dv = [S(t)·F(z) − m(Γ_m + γ_fb(t))·v] dt + √(2 m Γ_m k_B T) dW`,
//!
//! with the stiffness schedule `S(t)`, gas damping `Γ_m`, thermal noise and
//! an optional cold-damping feedback term active inside a time window.
//!
//! One step is the symmetric splitting
//! kick(dt/2) → drift(dt/2) → exact Ornstein–Uhlenbeck velocity update →
//! drift(dt/2) → kick(dt/2). The OU sub-step treats total damping and noise
//! exactly, so the sampled temperature carries no first-order step-size bias,
//! and the deterministic part reduces to velocity Verlet (symplectic) in the
//! noiseless limit. No step ever straddles a schedule transition, a feedback
//! window edge or a sample instant: the driver splits the timeline there.
//!
//! Reproducibility: trajectories draw from `ChaCha12`, a counter-based
//! generator, seeded with the master seed; trajectory `i` of an ensemble uses
//! stream `i` of that generator. Results are therefore bit-identical for a
//! fixed configuration regardless of how many threads run the ensemble.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::constants::BOLTZMANN;
use crate::modulation::ModulationSchedule;
use crate::physics::{GasEnvironment, ParticleSpec, PhaseSpacePoint, TrapSpec};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("state became non-finite at t = {time:.6e} s")]
    NonFiniteState { time: f64 },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

/// How a trajectory starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialState {
    /// Draw `(z, v)` from the isotropic thermal Gaussian at this temperature.
    Thermal { temperature: f64 },
    /// Start exactly here.
    Explicit(PhaseSpacePoint),
}

/// Complete description of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub particle: ParticleSpec,
    pub gas: GasEnvironment,
    pub trap: TrapSpec,
    pub schedule: ModulationSchedule,
    /// Cold-damping rate γ_fb [1/s]; the feedback force is `−m γ_fb v`.
    pub feedback_gain: f64,
    /// Feedback is active for `t` inside this closed interval [s]; use
    /// infinities for an always-on edge.
    pub feedback_window: (f64, f64),
    /// Optional lock threshold: feedback additionally requires `|z|` below
    /// this value [m]. Disabled by default.
    pub feedback_position_lock: Option<f64>,
    /// Integrator step [s]; segments between events are subdivided into equal
    /// pieces no longer than this.
    pub time_step: f64,
    /// Total simulated time [s].
    pub duration: f64,
    /// Recording rate [Hz]; must not exceed `1/time_step`.
    pub sample_rate: f64,
    /// Master seed of the counter-based generator.
    pub seed: u64,
    pub initial_state: InitialState,
}

impl SimConfig {
    /// Default integrator step for a trap frequency: 1/200 of the oscillation
    /// period.
    pub fn default_time_step(trap: &TrapSpec) -> f64 {
        std::f64::consts::PI / (100.0 * trap.angular_frequency())
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.time_step > 0.0 && self.time_step.is_finite()) {
            return Err(SimError::InvalidConfig("time_step > 0".into()));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(SimError::InvalidConfig("duration >= 0".into()));
        }
        if !(self.sample_rate > 0.0) {
            return Err(SimError::InvalidConfig("sample_rate > 0".into()));
        }
        if self.sample_rate > 1.0 / self.time_step {
            return Err(SimError::InvalidConfig(
                "sample_rate must not exceed 1/time_step".into(),
            ));
        }
        if !(self.feedback_gain >= 0.0) {
            return Err(SimError::InvalidConfig("feedback_gain >= 0".into()));
        }
        if self.feedback_window.0 > self.feedback_window.1 {
            return Err(SimError::InvalidConfig("feedback window must be ordered".into()));
        }
        if let InitialState::Thermal { temperature } = self.initial_state {
            if !(temperature >= 0.0 && temperature.is_finite()) {
                return Err(SimError::InvalidConfig("initial temperature >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Uniformly sampled `(z, v)` record of a single run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Spacing of the samples [s].
    pub sample_period: f64,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    /// Master seed the run was started from.
    pub seed_used: u64,
    /// RNG stream index within that seed (ensemble member id).
    pub stream: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Time of sample `i` [s].
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.sample_period
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.time(i))
    }
}

/// Sample the isotropic thermal state: independent zero-mean Gaussians with
/// `σ_z² = k_B T/(m ω_z²)` and `σ_v² = k_B T/m`. At `T = 0` this is exactly
/// the origin.
pub fn draw_initial_state<R: Rng>(
    temperature: f64,
    trap: &TrapSpec,
    particle: &ParticleSpec,
    rng: &mut R,
) -> PhaseSpacePoint {
    let m = particle.mass();
    let w = trap.angular_frequency();
    let sigma_z = (BOLTZMANN * temperature / (m * w * w)).sqrt();
    let sigma_v = (BOLTZMANN * temperature / m).sqrt();
    let gz: f64 = rng.sample(StandardNormal);
    let gv: f64 = rng.sample(StandardNormal);
    PhaseSpacePoint::new(sigma_z * gz, sigma_v * gv)
}

/// Precomputed per-run quantities.
struct Engine {
    mass: f64,
    gamma_gas: f64,
    /// Velocity-noise intensity `2 Γ_m k_B T / m` [m²/s³].
    diffusion: f64,
}

impl Engine {
    fn new(config: &SimConfig) -> Self {
        let mass = config.particle.mass();
        let gamma_gas = config.gas.damping_rate(&config.particle);
        let amp = config.gas.noise_force_amplitude(&config.particle, gamma_gas);
        Engine { mass, gamma_gas, diffusion: (amp / mass).powi(2) }
    }

    fn feedback_active(&self, config: &SimConfig, t: f64, z: f64) -> bool {
        if config.feedback_gain == 0.0 {
            return false;
        }
        if t < config.feedback_window.0 || t > config.feedback_window.1 {
            return false;
        }
        config.feedback_position_lock.map_or(true, |lock| z.abs() < lock)
    }

    /// Decay factor and noise standard deviation of the exact OU velocity
    /// update over `h` under total damping `gamma`.
    fn ou_coefficients(&self, gamma: f64, h: f64) -> (f64, f64) {
        if gamma > 0.0 {
            let decay = (-gamma * h).exp();
            let var = self.diffusion * (1.0 - decay * decay) / (2.0 * gamma);
            (decay, var.sqrt())
        } else {
            (1.0, (self.diffusion * h).sqrt())
        }
    }

    /// One splitting step of length `h` with stiffness factor `s` and given
    /// OU coefficients. The caller guarantees `[t, t+h]` contains no
    /// modulation or feedback transition.
    #[inline]
    fn substep<R: Rng>(
        &self,
        config: &SimConfig,
        state: PhaseSpacePoint,
        s: f64,
        decay: f64,
        noise_sigma: f64,
        h: f64,
        rng: &mut R,
    ) -> PhaseSpacePoint {
        let mut z = state.position;
        let mut v = state.velocity;
        v += 0.5 * h * s * config.trap.axial_force(&config.particle, z) / self.mass;
        z += 0.5 * h * v;
        let xi: f64 = rng.sample(StandardNormal);
        v = decay * v + noise_sigma * xi;
        z += 0.5 * h * v;
        v += 0.5 * h * s * config.trap.axial_force(&config.particle, z) / self.mass;
        PhaseSpacePoint::new(z, v)
    }

    /// Advance from `t0` to `t1` (no interior transitions) in equal substeps
    /// of at most `config.time_step`.
    fn advance<R: Rng>(
        &self,
        config: &SimConfig,
        mut state: PhaseSpacePoint,
        t0: f64,
        t1: f64,
        rng: &mut R,
    ) -> Result<PhaseSpacePoint, SimError> {
        let span = t1 - t0;
        if span <= 0.0 {
            return Ok(state);
        }
        let n = (span / config.time_step).ceil().max(1.0) as usize;
        let h = span / n as f64;
        let s = config.schedule.value_at(t0 + 0.5 * span);
        let fb = self.feedback_active(config, t0 + 0.5 * span, state.position);
        let gamma_total = self.gamma_gas + if fb { config.feedback_gain } else { 0.0 };
        let (decay, noise_sigma) = self.ou_coefficients(gamma_total, h);
        for k in 0..n {
            state = self.substep(config, state, s, decay, noise_sigma, h, rng);
            if !state.is_finite() {
                return Err(SimError::NonFiniteState { time: t0 + (k + 1) as f64 * h });
            }
        }
        Ok(state)
    }
}

/// Advance one state by `dt` starting at time `t`. `[t, t+dt]` must not
/// contain a schedule transition (the trajectory driver guarantees this by
/// splitting there); `dt` may not exceed the configured step.
pub fn step<R: Rng>(
    state: PhaseSpacePoint,
    config: &SimConfig,
    t: f64,
    dt: f64,
    rng: &mut R,
) -> Result<PhaseSpacePoint, SimError> {
    if dt > config.time_step * (1.0 + 1e-12) {
        return Err(SimError::InvalidConfig("step dt exceeds configured time_step".into()));
    }
    let engine = Engine::new(config);
    let s = config.schedule.value_at(t + 0.5 * dt);
    let fb = engine.feedback_active(config, t + 0.5 * dt, state.position);
    let gamma_total = engine.gamma_gas + if fb { config.feedback_gain } else { 0.0 };
    let (decay, noise_sigma) = engine.ou_coefficients(gamma_total, dt);
    let next = engine.substep(config, state, s, decay, noise_sigma, dt, rng);
    if next.is_finite() {
        Ok(next)
    } else {
        Err(SimError::NonFiniteState { time: t + dt })
    }
}

/// Integrate a single trajectory on RNG stream 0.
pub fn simulate(config: &SimConfig) -> Result<Trajectory, SimError> {
    simulate_stream(config, 0)
}

/// Integrate one trajectory on the given RNG stream of the master seed.
pub fn simulate_stream(config: &SimConfig, stream: u64) -> Result<Trajectory, SimError> {
    config.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);

    let mut state = match config.initial_state {
        InitialState::Thermal { temperature } => {
            draw_initial_state(temperature, &config.trap, &config.particle, &mut rng)
        }
        InitialState::Explicit(point) => point,
    };
    if !state.is_finite() {
        return Err(SimError::NonFiniteState { time: 0.0 });
    }

    let engine = Engine::new(config);
    let sample_period = 1.0 / config.sample_rate;
    let sample_count = (config.duration * config.sample_rate + 1e-9).floor() as usize + 1;

    // Hard event times the stepper must land on exactly.
    let mut splits: Vec<f64> = config
        .schedule
        .transition_times()
        .into_iter()
        .filter(|&t| t > 0.0 && t < config.duration)
        .collect();
    for edge in [config.feedback_window.0, config.feedback_window.1] {
        if edge > 0.0 && edge < config.duration && edge.is_finite() {
            splits.push(edge);
        }
    }
    splits.sort_by(|a, b| a.partial_cmp(b).unwrap());
    splits.dedup();

    let mut positions = Vec::with_capacity(sample_count);
    let mut velocities = Vec::with_capacity(sample_count);
    positions.push(state.position);
    velocities.push(state.velocity);

    let mut t = 0.0;
    let mut next_split = 0usize;
    for k in 1..sample_count {
        let t_sample = k as f64 * sample_period;
        while next_split < splits.len() && splits[next_split] < t_sample {
            state = engine.advance(config, state, t, splits[next_split], &mut rng)?;
            t = splits[next_split];
            next_split += 1;
        }
        state = engine.advance(config, state, t, t_sample, &mut rng)?;
        t = t_sample;
        positions.push(state.position);
        velocities.push(state.velocity);
    }

    Ok(Trajectory {
        sample_period,
        positions,
        velocities,
        seed_used: config.seed,
        stream,
    })
}

/// Integrate `runs` independent trajectories in parallel. Trajectory `i`
/// uses RNG stream `i`, so the result is independent of the number of
/// threads.
pub fn simulate_ensemble(config: &SimConfig, runs: usize) -> Result<Vec<Trajectory>, SimError> {
    config.validate()?;
    if runs == 0 {
        return Err(SimError::InvalidConfig("ensemble must contain at least one run".into()));
    }
    (0..runs as u64)
        .into_par_iter()
        .map(|stream| simulate_stream(config, stream))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::AIR_MOLECULAR_MASS;
    use crate::oracle;
    use crate::physics::TrapModel;
    use approx::assert_relative_eq;

    const F_Z: f64 = 77.6e3;
    const OMEGA: f64 = 2.0 * std::f64::consts::PI * F_Z;

    fn particle() -> ParticleSpec {
        ParticleSpec::new(1.0e-7, 1800.0, 1.44).unwrap()
    }

    fn vacuum() -> GasEnvironment {
        GasEnvironment::new(0.0, 300.0, AIR_MOLECULAR_MASS).unwrap()
    }

    fn base_config() -> SimConfig {
        SimConfig {
            particle: particle(),
            gas: vacuum(),
            trap: TrapSpec::harmonic(OMEGA).unwrap(),
            schedule: ModulationSchedule::unmodulated(OMEGA),
            feedback_gain: 0.0,
            feedback_window: (f64::NEG_INFINITY, f64::INFINITY),
            feedback_position_lock: None,
            time_step: 1.0 / (2000.0 * F_Z),
            duration: 1.0 / F_Z,
            sample_rate: 2.0e6,
            seed: 7,
            initial_state: InitialState::Explicit(PhaseSpacePoint::new(1.0e-9, 0.0)),
        }
    }

    #[test]
    fn noiseless_orbit_returns_after_one_period() {
        // The splitting is second order: the per-period phase error is
        // 2π(ω dt)²/24, i.e. 2.6e-6 at dt = T/2000 and a quarter of that at
        // dt = T/4000.
        for (div, tol) in [(2000.0, 3.0e-6), (4000.0, 1.0e-6)] {
            let mut config = base_config();
            config.time_step = 1.0 / (div * F_Z);
            let z0 = 1.0e-9;
            let mut state = PhaseSpacePoint::new(z0, 0.0);
            let mut rng = ChaCha12Rng::seed_from_u64(1);
            let n = div as usize;
            let h = config.time_step;
            for k in 0..n {
                state = step(state, &config, k as f64 * h, h, &mut rng).unwrap();
            }
            let err = ((state.position - z0).powi(2) + (state.velocity / OMEGA).powi(2)).sqrt()
                / z0;
            assert!(err < tol, "div={div}: relative return error {err:.3e}");
        }
    }

    #[test]
    fn noiseless_energy_conserved_over_100_periods() {
        let config = base_config();
        let m = config.particle.mass();
        let energy =
            |p: &PhaseSpacePoint| 0.5 * m * p.velocity.powi(2)
                + 0.5 * m * OMEGA * OMEGA * p.position.powi(2);
        let mut state = PhaseSpacePoint::new(1.0e-9, 0.0);
        let e0 = energy(&state);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let h = config.time_step;
        for k in 0..200_000usize {
            state = step(state, &config, k as f64 * h, h, &mut rng).unwrap();
        }
        assert!((energy(&state) - e0).abs() / e0 < 1e-6);
    }

    #[test]
    fn single_pulse_matches_oracle_map() {
        let schedule = ModulationSchedule::new(0.9, OMEGA, 1, 0.0).unwrap();
        let duration = schedule.duration();
        let mut config = base_config();
        config.schedule = schedule;
        config.duration = duration;
        config.sample_rate = 8.0 / duration;
        let z0 = 0.8e-9;
        let v0 = 3.0e-4;
        config.initial_state = InitialState::Explicit(PhaseSpacePoint::new(z0, v0));
        let traj = simulate(&config).unwrap();
        let map = oracle::pulse_map(0.9, OMEGA);
        let expect_z = map[(0, 0)] * z0 + map[(0, 1)] * v0;
        let expect_v = map[(1, 0)] * z0 + map[(1, 1)] * v0;
        let z_end = *traj.positions.last().unwrap();
        let v_end = *traj.velocities.last().unwrap();
        let scale = (z0.powi(2) + (v0 / OMEGA).powi(2)).sqrt();
        let err = ((z_end - expect_z).powi(2) + ((v_end - expect_v) / OMEGA).powi(2)).sqrt()
            / scale;
        assert!(err < 1e-3, "pulse map error {err:.3e}");
    }

    #[test]
    fn envelope_grows_by_inverse_sqrt_depth_per_pulse() {
        let pulses = 40;
        let schedule = ModulationSchedule::new(0.9, OMEGA, pulses, 0.0).unwrap();
        let period = schedule.pulse_period();
        let mut config = base_config();
        config.duration = schedule.duration();
        config.schedule = schedule;
        config.time_step = 1.0 / (200.0 * F_Z);
        // two samples per pulse: at the boundary and at mid-pulse
        config.sample_rate = 2.0 / period;
        let v0 = 1.0e-4;
        config.initial_state = InitialState::Explicit(PhaseSpacePoint::new(0.0, v0));
        let traj = simulate(&config).unwrap();
        // |z| at the phase-locked mid-pulse samples grows as (1/√S)^n
        let growth: Vec<f64> = traj
            .positions
            .iter()
            .skip(1)
            .step_by(2)
            .map(|z| z.abs())
            .collect();
        assert_eq!(growth.len(), pulses as usize);
        let expected_ratio = 1.0 / 0.9f64.sqrt();
        for pair in growth.windows(2) {
            assert_relative_eq!(pair[1] / pair[0], expected_ratio, max_relative = 2e-3);
        }
    }

    #[test]
    fn thermal_draws_follow_equipartition() {
        let trap = TrapSpec::harmonic(OMEGA).unwrap();
        let p = particle();
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let n = 200_000;
        let temperature = 300.0;
        let mut zz = 0.0;
        let mut vv = 0.0;
        for _ in 0..n {
            let s = draw_initial_state(temperature, &trap, &p, &mut rng);
            zz += s.position * s.position;
            vv += s.velocity * s.velocity;
        }
        zz /= n as f64;
        vv /= n as f64;
        let m = p.mass();
        assert_relative_eq!(zz, BOLTZMANN * 300.0 / (m * OMEGA * OMEGA), max_relative = 0.02);
        assert_relative_eq!(vv, BOLTZMANN * 300.0 / m, max_relative = 0.02);

        let frozen = draw_initial_state(0.0, &trap, &p, &mut rng);
        assert_eq!(frozen, PhaseSpacePoint::new(0.0, 0.0));
    }

    #[test]
    fn stationary_variance_matches_equipartition() {
        // fluctuation-dissipation closure: harmonic trap at 5 mbar, 300 K
        let mut config = base_config();
        config.gas = GasEnvironment::new(500.0, 300.0, AIR_MOLECULAR_MASS).unwrap();
        config.time_step = 1.0 / (200.0 * F_Z);
        config.duration = 8.0e-3;
        config.sample_rate = 1.0e6;
        config.initial_state = InitialState::Thermal { temperature: 300.0 };
        let runs = 64;
        let trajectories = simulate_ensemble(&config, runs).unwrap();
        let burn_in = 2000; // ~ 14 damping times at Γ ≈ 1.45e5
        let mut zz = 0.0;
        let mut vv = 0.0;
        let mut count = 0usize;
        for traj in &trajectories {
            for i in burn_in..traj.len() {
                zz += traj.positions[i].powi(2);
                vv += traj.velocities[i].powi(2);
                count += 1;
            }
        }
        zz /= count as f64;
        vv /= count as f64;
        let m = config.particle.mass();
        assert_relative_eq!(zz, BOLTZMANN * 300.0 / (m * OMEGA * OMEGA), max_relative = 0.01);
        assert_relative_eq!(vv, BOLTZMANN * 300.0 / m, max_relative = 0.01);
    }

    #[test]
    fn zero_duration_returns_initial_sample() {
        let mut config = base_config();
        config.duration = 0.0;
        let traj = simulate(&config).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.positions[0], 1.0e-9);
        assert_eq!(traj.velocities[0], 0.0);
    }

    #[test]
    fn identical_configs_reproduce_bit_identical_trajectories() {
        let mut config = base_config();
        config.gas = GasEnvironment::new(50.0, 300.0, AIR_MOLECULAR_MASS).unwrap();
        config.duration = 0.3e-3;
        config.initial_state = InitialState::Thermal { temperature: 300.0 };
        let a = simulate(&config).unwrap();
        let b = simulate(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ensemble_is_independent_of_parallelism() {
        let mut config = base_config();
        config.gas = GasEnvironment::new(50.0, 300.0, AIR_MOLECULAR_MASS).unwrap();
        config.duration = 0.1e-3;
        config.initial_state = InitialState::Thermal { temperature: 300.0 };
        let parallel = simulate_ensemble(&config, 8).unwrap();
        let serial: Vec<Trajectory> =
            (0..8).map(|i| simulate_stream(&config, i).unwrap()).collect();
        assert_eq!(parallel, serial);
    }

    #[test]
    fn feedback_cools_the_ensemble() {
        // with feedback on, the stationary z-variance is reduced by
        // Γ/(Γ+γ_fb)
        let gamma_fb = 3.0e4;
        let mut config = base_config();
        config.gas = GasEnvironment::new(500.0, 300.0, AIR_MOLECULAR_MASS).unwrap();
        config.feedback_gain = gamma_fb;
        config.time_step = 1.0 / (200.0 * F_Z);
        config.duration = 8.0e-3;
        config.sample_rate = 1.0e6;
        config.initial_state = InitialState::Thermal { temperature: 300.0 };
        let gamma_gas = config.gas.damping_rate(&config.particle);
        let runs = 64;
        let trajectories = simulate_ensemble(&config, runs).unwrap();
        let burn_in = 2000;
        let mut zz = 0.0;
        let mut count = 0usize;
        for traj in &trajectories {
            for i in burn_in..traj.len() {
                zz += traj.positions[i].powi(2);
                count += 1;
            }
        }
        zz /= count as f64;
        let m = config.particle.mass();
        let expected =
            BOLTZMANN * 300.0 / (m * OMEGA * OMEGA) * gamma_gas / (gamma_gas + gamma_fb);
        assert_relative_eq!(zz, expected, max_relative = 0.05);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut config = base_config();
        config.time_step = 0.0;
        assert!(matches!(config.validate(), Err(SimError::InvalidConfig(_))));

        let mut config = base_config();
        config.sample_rate = 10.0 / config.time_step;
        assert!(config.validate().is_err());

        let config = base_config();
        assert!(matches!(simulate_ensemble(&config, 0), Err(SimError::InvalidConfig(_))));
    }

    #[test]
    fn gaussian_trap_trajectory_stays_finite() {
        let mut config = base_config();
        config.trap =
            TrapSpec::new(OMEGA, 1.0, 0.5e-6, 1.55e-6, TrapModel::GaussianAxial).unwrap();
        config.schedule = ModulationSchedule::new(0.9, OMEGA, 100, 0.0).unwrap();
        config.duration = config.schedule.duration();
        config.time_step = 1.0 / (200.0 * F_Z);
        config.initial_state = InitialState::Thermal { temperature: 4.18e-3 };
        let traj = simulate(&config).unwrap();
        assert!(traj.positions.iter().all(|z| z.is_finite()));
    }
}
