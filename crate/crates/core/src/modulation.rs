//! Piecewise-constant stiffness modulation `S(t)`.
//!
//! A pulse first lowers the optical power to a fraction `S` of its nominal
//! value for a quarter period of the softened trap, then restores it for a
//! quarter period of the original trap. Concatenating pulses expands an
//! initially isotropic phase-space distribution pulse by pulse.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModulationError {
    #[error("invalid modulation: {0}")]
    Invalid(&'static str),
}

/// Quarter periods of the softened and original trap,
/// `(τ_low, τ_high) = (π/(2 ω_z √S), π/(2 ω_z))`.
pub fn pulse_timings(depth: f64, omega_z: f64) -> (f64, f64) {
    debug_assert!(depth > 0.0 && depth <= 1.0 && omega_z > 0.0);
    let tau_high = std::f64::consts::FRAC_PI_2 / omega_z;
    (tau_high / depth.sqrt(), tau_high)
}

/// The pulse train: `S(t) = depth` during the low phase of each pulse and 1
/// everywhere else, with instantaneous transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationSchedule {
    depth: f64,
    tau_low: f64,
    tau_high: f64,
    pulse_count: u32,
    start_time: f64,
}

impl ModulationSchedule {
    /// Build the schedule from the power ratio `depth` (0 < S ≤ 1) and the
    /// trap frequency `omega_z` [rad/s]; the quarter-period timings follow.
    pub fn new(
        depth: f64,
        omega_z: f64,
        pulse_count: u32,
        start_time: f64,
    ) -> Result<Self, ModulationError> {
        if !(depth > 0.0 && depth <= 1.0) {
            return Err(ModulationError::Invalid("depth must satisfy 0 < S <= 1"));
        }
        if !(omega_z > 0.0 && omega_z.is_finite()) {
            return Err(ModulationError::Invalid("omega_z must be positive"));
        }
        if !start_time.is_finite() {
            return Err(ModulationError::Invalid("start_time must be finite"));
        }
        let (tau_low, tau_high) = pulse_timings(depth, omega_z);
        Ok(Self { depth, tau_low, tau_high, pulse_count, start_time })
    }

    /// Schedule that never modulates (`S(t) ≡ 1`).
    pub fn unmodulated(omega_z: f64) -> Self {
        Self::new(1.0, omega_z, 0, 0.0).expect("valid trivial schedule")
    }

    pub fn depth(&self) -> f64 {
        self.depth
    }

    pub fn tau_low(&self) -> f64 {
        self.tau_low
    }

    pub fn tau_high(&self) -> f64 {
        self.tau_high
    }

    pub fn pulse_count(&self) -> u32 {
        self.pulse_count
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    /// Duration of one pulse, `τ_low + τ_high` [s].
    pub fn pulse_period(&self) -> f64 {
        self.tau_low + self.tau_high
    }

    /// Repetition frequency of the pulse pattern, `1/(τ_low+τ_high)` [Hz].
    pub fn modulation_frequency(&self) -> f64 {
        1.0 / self.pulse_period()
    }

    /// Total length of the pulse train [s].
    pub fn duration(&self) -> f64 {
        f64::from(self.pulse_count) * self.pulse_period()
    }

    /// Instant after which the schedule is identically 1 [s].
    pub fn end_time(&self) -> f64 {
        self.start_time + self.duration()
    }

    /// `S(t)`: `depth` inside a low phase, 1 otherwise.
    pub fn value_at(&self, t: f64) -> f64 {
        if self.pulse_count == 0 || t < self.start_time {
            return 1.0;
        }
        let offset = t - self.start_time;
        let period = self.pulse_period();
        let index = (offset / period).floor();
        if index >= f64::from(self.pulse_count) {
            return 1.0;
        }
        let phase = offset - index * period;
        if phase < self.tau_low {
            self.depth
        } else {
            1.0
        }
    }

    /// Every instant the integrator must land on exactly: the two switch
    /// times of each pulse plus the end of the train. Strictly increasing;
    /// empty for `pulse_count = 0`.
    pub fn transition_times(&self) -> Vec<f64> {
        let mut times = Vec::with_capacity(2 * self.pulse_count as usize + 1);
        let period = self.pulse_period();
        for k in 0..self.pulse_count {
            let pulse_start = self.start_time + f64::from(k) * period;
            times.push(pulse_start);
            times.push(pulse_start + self.tau_low);
        }
        if self.pulse_count > 0 {
            times.push(self.end_time());
        }
        times
    }
}
