//! Flat `section.key = value` run configuration.
//!
//! The format is line oriented and diff friendly: one key per line, `#`
//! comments, SI units spelled out in the key names. Unknown and duplicate
//! keys are rejected; every physical value is range checked when the domain
//! objects are built. `parse → serialize → parse` is the identity.

use std::collections::HashSet;
use std::fmt::Write as _;

use levex::constants::{AIR_MOLECULAR_MASS, PASCALS_PER_MBAR};
use levex::integrator::{InitialState, SimConfig};
use levex::modulation::ModulationSchedule;
use levex::physics::{GasEnvironment, ParticleSpec, PhaseSpacePoint, TrapModel, TrapSpec};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid value for {key}: {message}")]
    Validation { key: String, message: String },
}

/// The bundled experiment-defaults configuration.
pub const PAPER_DEFAULTS: &str = include_str!("../../../configs/paper-defaults.cfg");

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // particle
    pub radius_m: f64,
    pub density_kg_m3: f64,
    pub refractive_index: f64,
    // gas
    pub pressure_mbar: f64,
    pub gas_temperature_k: f64,
    pub molecular_mass_kg: f64,
    // trap
    pub f_z_hz: f64,
    pub medium_index: f64,
    pub waist_m: f64,
    pub wavelength_m: f64,
    pub trap_model: TrapModel,
    // modulation
    pub depth: f64,
    pub pulse_count: u32,
    pub start_time_s: f64,
    // feedback
    pub feedback_gamma_per_s: f64,
    /// `None` = auto: feedback turns on when the pulse train ends.
    pub feedback_window_start_s: Option<f64>,
    pub feedback_window_end_s: f64,
    pub feedback_position_lock_m: Option<f64>,
    // sim
    /// `None` = auto: 1/(200·f_z).
    pub dt_s: Option<f64>,
    /// `None` = auto: end of the pulse train.
    pub duration_s: Option<f64>,
    pub sample_rate_hz: f64,
    pub seed: u64,
    pub ensemble: u32,
    pub initial_thermal: bool,
    pub initial_temperature_k: f64,
    pub initial_z_m: f64,
    pub initial_v_m_s: f64,
    pub keep_trajectories: bool,
    // analysis
    pub bandpass: bool,
    /// `None` = auto: centered on f_z.
    pub bandpass_center_hz: Option<f64>,
    pub bandpass_bandwidth_hz: f64,
    pub bandpass_order: u32,
    pub smoothing_window: u32,
    pub fit_window_start_s: f64,
    pub fit_window_end_s: f64,
    pub histogram_times_s: Vec<f64>,
    pub histogram_bins: u32,
    // calibrate
    pub calibrate_pressure_mbar: f64,
    pub calibrate_temperature_k: f64,
    pub calibrate_duration_s: f64,
    pub calibrate_segment_length: u32,
    pub calibrate_overlap: f64,
    pub calibrate_synthetic_scale: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            radius_m: 1.0e-7,
            density_kg_m3: 1800.0,
            refractive_index: 1.44,
            pressure_mbar: 3.0e-7,
            gas_temperature_k: 300.0,
            molecular_mass_kg: AIR_MOLECULAR_MASS,
            f_z_hz: 77.6e3,
            medium_index: 1.0,
            waist_m: 0.5e-6,
            wavelength_m: 1.55e-6,
            trap_model: TrapModel::GaussianAxial,
            depth: 0.9,
            pulse_count: 1000,
            start_time_s: 0.0,
            feedback_gamma_per_s: 2.0 / 0.044,
            feedback_window_start_s: None,
            feedback_window_end_s: f64::INFINITY,
            feedback_position_lock_m: None,
            dt_s: None,
            duration_s: None,
            sample_rate_hz: 2.0e6,
            seed: 20240701,
            ensemble: 671,
            initial_thermal: true,
            initial_temperature_k: 4.18e-3,
            initial_z_m: 0.0,
            initial_v_m_s: 0.0,
            keep_trajectories: false,
            bandpass: false,
            bandpass_center_hz: None,
            bandpass_bandwidth_hz: 14.0e3,
            bandpass_order: 3,
            smoothing_window: 51,
            fit_window_start_s: 1.0e-4,
            fit_window_end_s: 7.0e-4,
            histogram_times_s: Vec::new(),
            histogram_bins: 61,
            calibrate_pressure_mbar: 5.0,
            calibrate_temperature_k: 300.0,
            calibrate_duration_s: 0.3,
            calibrate_segment_length: 16384,
            calibrate_overlap: 0.5,
            calibrate_synthetic_scale: 1.0,
        }
    }
}

fn parse_f64(key: &str, line: usize, raw: &str) -> Result<f64, ConfigError> {
    raw.parse::<f64>().map_err(|_| ConfigError::Parse {
        line,
        message: format!("{key}: expected a number, got `{raw}`"),
    })
}

fn parse_u64(key: &str, line: usize, raw: &str) -> Result<u64, ConfigError> {
    raw.parse::<u64>().map_err(|_| ConfigError::Parse {
        line,
        message: format!("{key}: expected a nonnegative integer, got `{raw}`"),
    })
}

fn parse_u32(key: &str, line: usize, raw: &str) -> Result<u32, ConfigError> {
    raw.parse::<u32>().map_err(|_| ConfigError::Parse {
        line,
        message: format!("{key}: expected a nonnegative integer, got `{raw}`"),
    })
}

fn parse_bool(key: &str, line: usize, raw: &str) -> Result<bool, ConfigError> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError::Parse {
            line,
            message: format!("{key}: expected true or false, got `{raw}`"),
        }),
    }
}

fn parse_auto(key: &str, line: usize, raw: &str) -> Result<Option<f64>, ConfigError> {
    if raw == "auto" {
        Ok(None)
    } else {
        parse_f64(key, line, raw).map(Some)
    }
}

impl RunConfig {
    /// Parse the flat key/value text. Every key is optional and falls back to
    /// the experiment defaults; unknown or repeated keys are errors, as is a
    /// file with no keys at all.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        let mut seen: HashSet<String> = HashSet::new();
        let mut keys_found = 0usize;

        for (index, raw_line) in text.lines().enumerate() {
            let line = index + 1;
            let content = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Parse {
                    line,
                    message: format!("expected `key = value`, got `{content}`"),
                });
            };
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Parse {
                    line,
                    message: format!("duplicate key `{key}`"),
                });
            }
            keys_found += 1;

            match key {
                "particle.radius_m" => config.radius_m = parse_f64(key, line, value)?,
                "particle.density_kg_m3" => config.density_kg_m3 = parse_f64(key, line, value)?,
                "particle.refractive_index" => {
                    config.refractive_index = parse_f64(key, line, value)?
                }
                "gas.pressure_mbar" => config.pressure_mbar = parse_f64(key, line, value)?,
                "gas.temperature_k" => config.gas_temperature_k = parse_f64(key, line, value)?,
                "gas.molecular_mass_kg" => {
                    config.molecular_mass_kg = parse_f64(key, line, value)?
                }
                "trap.f_z_hz" => config.f_z_hz = parse_f64(key, line, value)?,
                "trap.medium_index" => config.medium_index = parse_f64(key, line, value)?,
                "trap.waist_m" => config.waist_m = parse_f64(key, line, value)?,
                "trap.wavelength_m" => config.wavelength_m = parse_f64(key, line, value)?,
                "trap.model" => {
                    config.trap_model = match value {
                        "harmonic" => TrapModel::Harmonic,
                        "gaussian-axial" => TrapModel::GaussianAxial,
                        _ => {
                            return Err(ConfigError::Parse {
                                line,
                                message: format!(
                                    "trap.model: expected harmonic or gaussian-axial, got `{value}`"
                                ),
                            })
                        }
                    }
                }
                "modulation.depth" => config.depth = parse_f64(key, line, value)?,
                "modulation.pulse_count" => config.pulse_count = parse_u32(key, line, value)?,
                "modulation.start_time_s" => config.start_time_s = parse_f64(key, line, value)?,
                "feedback.gamma_per_s" => {
                    config.feedback_gamma_per_s = parse_f64(key, line, value)?
                }
                "feedback.window_start_s" => {
                    config.feedback_window_start_s = parse_auto(key, line, value)?
                }
                "feedback.window_end_s" => {
                    config.feedback_window_end_s = if value == "inf" {
                        f64::INFINITY
                    } else {
                        parse_f64(key, line, value)?
                    }
                }
                "feedback.position_lock_m" => {
                    config.feedback_position_lock_m = if value == "none" {
                        None
                    } else {
                        Some(parse_f64(key, line, value)?)
                    }
                }
                "sim.dt_s" => config.dt_s = parse_auto(key, line, value)?,
                "sim.duration_s" => config.duration_s = parse_auto(key, line, value)?,
                "sim.sample_rate_hz" => config.sample_rate_hz = parse_f64(key, line, value)?,
                "sim.seed" => config.seed = parse_u64(key, line, value)?,
                "sim.ensemble" => config.ensemble = parse_u32(key, line, value)?,
                "sim.initial" => {
                    config.initial_thermal = match value {
                        "thermal" => true,
                        "explicit" => false,
                        _ => {
                            return Err(ConfigError::Parse {
                                line,
                                message: format!(
                                    "sim.initial: expected thermal or explicit, got `{value}`"
                                ),
                            })
                        }
                    }
                }
                "sim.initial_temperature_k" => {
                    config.initial_temperature_k = parse_f64(key, line, value)?
                }
                "sim.initial_z_m" => config.initial_z_m = parse_f64(key, line, value)?,
                "sim.initial_v_m_s" => config.initial_v_m_s = parse_f64(key, line, value)?,
                "sim.keep_trajectories" => {
                    config.keep_trajectories = parse_bool(key, line, value)?
                }
                "analysis.bandpass" => config.bandpass = parse_bool(key, line, value)?,
                "analysis.bandpass_center_hz" => {
                    config.bandpass_center_hz = parse_auto(key, line, value)?
                }
                "analysis.bandpass_bandwidth_hz" => {
                    config.bandpass_bandwidth_hz = parse_f64(key, line, value)?
                }
                "analysis.bandpass_order" => {
                    config.bandpass_order = parse_u32(key, line, value)?
                }
                "analysis.smoothing_window" => {
                    config.smoothing_window = parse_u32(key, line, value)?
                }
                "analysis.fit_window_start_s" => {
                    config.fit_window_start_s = parse_f64(key, line, value)?
                }
                "analysis.fit_window_end_s" => {
                    config.fit_window_end_s = parse_f64(key, line, value)?
                }
                "analysis.histogram_times_s" => {
                    config.histogram_times_s = if value.is_empty() {
                        Vec::new()
                    } else {
                        value
                            .split(',')
                            .map(|item| parse_f64(key, line, item.trim()))
                            .collect::<Result<Vec<f64>, ConfigError>>()?
                    }
                }
                "analysis.histogram_bins" => {
                    config.histogram_bins = parse_u32(key, line, value)?
                }
                "calibrate.pressure_mbar" => {
                    config.calibrate_pressure_mbar = parse_f64(key, line, value)?
                }
                "calibrate.temperature_k" => {
                    config.calibrate_temperature_k = parse_f64(key, line, value)?
                }
                "calibrate.duration_s" => {
                    config.calibrate_duration_s = parse_f64(key, line, value)?
                }
                "calibrate.segment_length" => {
                    config.calibrate_segment_length = parse_u32(key, line, value)?
                }
                "calibrate.overlap" => config.calibrate_overlap = parse_f64(key, line, value)?,
                "calibrate.synthetic_scale" => {
                    config.calibrate_synthetic_scale = parse_f64(key, line, value)?
                }
                _ => {
                    return Err(ConfigError::Parse {
                        line,
                        message: format!("unknown key `{key}`"),
                    })
                }
            }
        }

        if keys_found == 0 {
            return Err(ConfigError::Parse {
                line: 0,
                message: "config contains no keys".into(),
            });
        }
        config.validate()?;
        Ok(config)
    }

    /// Canonical text form; parsing it reproduces this exact configuration.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let auto = |v: &Option<f64>| match v {
            None => "auto".to_string(),
            Some(x) => format!("{x}"),
        };
        let mut push = |key: &str, value: String| {
            let _ = writeln!(out, "{key} = {value}");
        };
        push("particle.radius_m", format!("{}", self.radius_m));
        push("particle.density_kg_m3", format!("{}", self.density_kg_m3));
        push("particle.refractive_index", format!("{}", self.refractive_index));
        push("gas.pressure_mbar", format!("{}", self.pressure_mbar));
        push("gas.temperature_k", format!("{}", self.gas_temperature_k));
        push("gas.molecular_mass_kg", format!("{}", self.molecular_mass_kg));
        push("trap.f_z_hz", format!("{}", self.f_z_hz));
        push("trap.medium_index", format!("{}", self.medium_index));
        push("trap.waist_m", format!("{}", self.waist_m));
        push("trap.wavelength_m", format!("{}", self.wavelength_m));
        push(
            "trap.model",
            match self.trap_model {
                TrapModel::Harmonic => "harmonic".to_string(),
                TrapModel::GaussianAxial => "gaussian-axial".to_string(),
            },
        );
        push("modulation.depth", format!("{}", self.depth));
        push("modulation.pulse_count", format!("{}", self.pulse_count));
        push("modulation.start_time_s", format!("{}", self.start_time_s));
        push("feedback.gamma_per_s", format!("{}", self.feedback_gamma_per_s));
        push("feedback.window_start_s", auto(&self.feedback_window_start_s));
        push(
            "feedback.window_end_s",
            if self.feedback_window_end_s.is_infinite() {
                "inf".to_string()
            } else {
                format!("{}", self.feedback_window_end_s)
            },
        );
        push(
            "feedback.position_lock_m",
            match self.feedback_position_lock_m {
                None => "none".to_string(),
                Some(x) => format!("{x}"),
            },
        );
        push("sim.dt_s", auto(&self.dt_s));
        push("sim.duration_s", auto(&self.duration_s));
        push("sim.sample_rate_hz", format!("{}", self.sample_rate_hz));
        push("sim.seed", format!("{}", self.seed));
        push("sim.ensemble", format!("{}", self.ensemble));
        push(
            "sim.initial",
            if self.initial_thermal { "thermal".to_string() } else { "explicit".to_string() },
        );
        push("sim.initial_temperature_k", format!("{}", self.initial_temperature_k));
        push("sim.initial_z_m", format!("{}", self.initial_z_m));
        push("sim.initial_v_m_s", format!("{}", self.initial_v_m_s));
        push("sim.keep_trajectories", format!("{}", self.keep_trajectories));
        push("analysis.bandpass", format!("{}", self.bandpass));
        push("analysis.bandpass_center_hz", auto(&self.bandpass_center_hz));
        push(
            "analysis.bandpass_bandwidth_hz",
            format!("{}", self.bandpass_bandwidth_hz),
        );
        push("analysis.bandpass_order", format!("{}", self.bandpass_order));
        push("analysis.smoothing_window", format!("{}", self.smoothing_window));
        push("analysis.fit_window_start_s", format!("{}", self.fit_window_start_s));
        push("analysis.fit_window_end_s", format!("{}", self.fit_window_end_s));
        push(
            "analysis.histogram_times_s",
            self.histogram_times_s
                .iter()
                .map(|t| format!("{t}"))
                .collect::<Vec<_>>()
                .join(","),
        );
        push("analysis.histogram_bins", format!("{}", self.histogram_bins));
        push("calibrate.pressure_mbar", format!("{}", self.calibrate_pressure_mbar));
        push("calibrate.temperature_k", format!("{}", self.calibrate_temperature_k));
        push("calibrate.duration_s", format!("{}", self.calibrate_duration_s));
        push(
            "calibrate.segment_length",
            format!("{}", self.calibrate_segment_length),
        );
        push("calibrate.overlap", format!("{}", self.calibrate_overlap));
        push(
            "calibrate.synthetic_scale",
            format!("{}", self.calibrate_synthetic_scale),
        );
        out
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.particle()?;
        self.gas()?;
        self.trap()?;
        self.schedule()?;
        let invalid = |key: &str, message: &str| ConfigError::Validation {
            key: key.into(),
            message: message.into(),
        };
        if !(self.sample_rate_hz > 0.0) {
            return Err(invalid("sim.sample_rate_hz", "sample rate must be positive"));
        }
        if let Some(dt) = self.dt_s {
            if !(dt > 0.0) {
                return Err(invalid("sim.dt_s", "time step must be positive"));
            }
        }
        if let Some(d) = self.duration_s {
            if !(d >= 0.0) {
                return Err(invalid("sim.duration_s", "duration must be nonnegative"));
            }
        }
        if !(self.feedback_gamma_per_s >= 0.0) {
            return Err(invalid("feedback.gamma_per_s", "feedback gain must be nonnegative"));
        }
        if !(self.initial_temperature_k >= 0.0) {
            return Err(invalid(
                "sim.initial_temperature_k",
                "initial temperature must be nonnegative",
            ));
        }
        if self.smoothing_window == 0 || self.smoothing_window % 2 == 0 {
            return Err(invalid("analysis.smoothing_window", "window must be odd and >= 1"));
        }
        if self.histogram_bins == 0 {
            return Err(invalid("analysis.histogram_bins", "bins must be >= 1"));
        }
        if !(self.fit_window_start_s < self.fit_window_end_s) {
            return Err(invalid(
                "analysis.fit_window_start_s",
                "fit window must be ordered",
            ));
        }
        if !(0.0..1.0).contains(&self.calibrate_overlap) {
            return Err(invalid("calibrate.overlap", "overlap must lie in [0, 1)"));
        }
        if !(self.calibrate_synthetic_scale > 0.0) {
            return Err(invalid("calibrate.synthetic_scale", "scale must be positive"));
        }
        Ok(())
    }

    pub fn omega_z(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.f_z_hz
    }

    pub fn particle(&self) -> Result<ParticleSpec, ConfigError> {
        ParticleSpec::new(self.radius_m, self.density_kg_m3, self.refractive_index).map_err(|e| {
            ConfigError::Validation { key: "particle".into(), message: e.to_string() }
        })
    }

    pub fn gas(&self) -> Result<GasEnvironment, ConfigError> {
        GasEnvironment::new(
            self.pressure_mbar * PASCALS_PER_MBAR,
            self.gas_temperature_k,
            self.molecular_mass_kg,
        )
        .map_err(|e| ConfigError::Validation { key: "gas".into(), message: e.to_string() })
    }

    pub fn trap(&self) -> Result<TrapSpec, ConfigError> {
        TrapSpec::new(
            self.omega_z(),
            self.medium_index,
            self.waist_m,
            self.wavelength_m,
            self.trap_model,
        )
        .map_err(|e| ConfigError::Validation { key: "trap".into(), message: e.to_string() })
    }

    pub fn schedule(&self) -> Result<ModulationSchedule, ConfigError> {
        ModulationSchedule::new(self.depth, self.omega_z(), self.pulse_count, self.start_time_s)
            .map_err(|e| ConfigError::Validation {
                key: "modulation".into(),
                message: e.to_string(),
            })
    }

    pub fn resolved_dt(&self) -> f64 {
        self.dt_s.unwrap_or(1.0 / (200.0 * self.f_z_hz))
    }

    pub fn resolved_duration(&self) -> Result<f64, ConfigError> {
        match self.duration_s {
            Some(d) => Ok(d),
            None => {
                let schedule = self.schedule()?;
                if schedule.pulse_count() == 0 {
                    Err(ConfigError::Validation {
                        key: "sim.duration_s".into(),
                        message: "duration must be explicit when modulation.pulse_count = 0"
                            .into(),
                    })
                } else {
                    Ok(schedule.end_time())
                }
            }
        }
    }

    /// Build the integrator configuration this run describes.
    pub fn sim_config(&self) -> Result<SimConfig, ConfigError> {
        let schedule = self.schedule()?;
        let feedback_start = self.feedback_window_start_s.unwrap_or_else(|| schedule.end_time());
        let initial_state = if self.initial_thermal {
            InitialState::Thermal { temperature: self.initial_temperature_k }
        } else {
            InitialState::Explicit(PhaseSpacePoint::new(self.initial_z_m, self.initial_v_m_s))
        };
        let config = SimConfig {
            particle: self.particle()?,
            gas: self.gas()?,
            trap: self.trap()?,
            schedule,
            feedback_gain: self.feedback_gamma_per_s,
            feedback_window: (feedback_start, self.feedback_window_end_s),
            feedback_position_lock: self.feedback_position_lock_m,
            time_step: self.resolved_dt(),
            duration: self.resolved_duration()?,
            sample_rate: self.sample_rate_hz,
            seed: self.seed,
            initial_state,
        };
        config.validate().map_err(|e| ConfigError::Validation {
            key: "sim".into(),
            message: e.to_string(),
        })?;
        Ok(config)
    }
}
