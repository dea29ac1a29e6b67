//! The five workflows behind the CLI subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use levex::analysis::{
    ensemble_stats, expansion_db, find_peak, growth_time_constant, phase_space_histogram,
    phonon_occupation, thermal_spread, AnalysisError,
};
use levex::constants::{BOLTZMANN, PASCALS_PER_MBAR};
use levex::dsp::{bandpass, calibration_factor, lorentzian_fit, welch_psd, LorentzianGuess};
use levex::integrator::{simulate_ensemble, InitialState, SimConfig, Trajectory};
use levex::modulation::ModulationSchedule;
use levex::oracle::{
    amplitude_time_constant, predicted_expansion_db, propagate, pulse_map, variance_time_constant,
    CovarianceState,
};
use levex::physics::GasEnvironment;

use crate::config::RunConfig;
use crate::csvio;
use crate::manifest::Manifest;

fn ensure_out_dir(out_dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

/// Run the configured ensemble, write per-time statistics (and optionally the
/// raw trajectories) plus a manifest. Returns the manifest path.
pub fn run_simulate(config: &RunConfig, out_dir: &Path) -> anyhow::Result<PathBuf> {
    if config.ensemble == 0 {
        bail!("sim.ensemble must be at least 1");
    }
    ensure_out_dir(out_dir)?;
    let sim = config.sim_config()?;
    let mut manifest = Manifest::start("simulate", config);

    let trajectories = simulate_ensemble(&sim, config.ensemble as usize)?;

    if config.keep_trajectories {
        for trajectory in &trajectories {
            let path = out_dir.join(format!("trajectory_{:05}.csv", trajectory.stream));
            csvio::write_trajectory(&path, trajectory)?;
            manifest.add_output(&path)?;
        }
    }

    if trajectories.len() >= 2 {
        let stats = ensemble_stats(&trajectories)?;
        let sigma_ref = stats.sigma_z[0];
        let stats_path = out_dir.join("stats.csv");
        csvio::write_stats(&stats_path, &stats, sigma_ref)?;
        manifest.add_output(&stats_path)?;
        println!(
            "simulate: {} runs x {} samples, sigma_z(0) = {:.4e} m, max sigma_z = {:.4e} m",
            trajectories.len(),
            stats.len(),
            sigma_ref,
            stats.sigma_z.iter().cloned().fold(0.0f64, f64::max),
        );
    } else {
        println!("simulate: 1 run x {} samples (no ensemble statistics)", trajectories[0].len());
        if !config.keep_trajectories {
            let path = out_dir.join("trajectory_00000.csv");
            csvio::write_trajectory(&path, &trajectories[0])?;
            manifest.add_output(&path)?;
        }
    }

    manifest.finish(out_dir)
}

// ---------------------------------------------------------------------------
// oracle
// ---------------------------------------------------------------------------

/// Exact linear-model run: propagate the covariance through the schedule on
/// the sample grid and emit the analytic protocol constants.
pub fn run_oracle(config: &RunConfig, out_dir: &Path) -> anyhow::Result<PathBuf> {
    ensure_out_dir(out_dir)?;
    let mut manifest = Manifest::start("oracle", config);

    let particle = config.particle()?;
    let gas = config.gas()?;
    let trap = config.trap()?;
    let schedule = config.schedule()?;
    let omega = trap.angular_frequency();
    let gamma_gas = gas.damping_rate(&particle);
    let diffusion = (gas.noise_force_amplitude(&particle, gamma_gas) / particle.mass()).powi(2);
    let duration = config.resolved_duration()?;
    let sample_period = 1.0 / config.sample_rate_hz;
    let sample_count = (duration * config.sample_rate_hz + 1e-9).floor() as usize + 1;
    let feedback_start = config.feedback_window_start_s.unwrap_or_else(|| schedule.end_time());
    let feedback_end = config.feedback_window_end_s;

    let mut state = if config.initial_thermal {
        CovarianceState::thermal(config.initial_temperature_k, &trap, &particle)
    } else {
        CovarianceState::new(config.initial_z_m, config.initial_v_m_s, 0.0, 0.0, 0.0)
            .expect("zero covariance is valid")
    };

    let mut splits: Vec<f64> = schedule
        .transition_times()
        .into_iter()
        .filter(|&t| t > 0.0 && t < duration)
        .collect();
    for edge in [feedback_start, feedback_end] {
        if edge > 0.0 && edge < duration && edge.is_finite() {
            splits.push(edge);
        }
    }
    splits.sort_by(|a, b| a.partial_cmp(b).unwrap());
    splits.dedup();

    let mut times = Vec::with_capacity(sample_count);
    let mut stats_rows: Vec<(f64, f64, f64)> = Vec::with_capacity(sample_count);
    times.push(0.0);
    stats_rows.push((state.sigma_z(), state.sigma_v(), state.cov_zv()));

    let advance = |state: &CovarianceState, t0: f64, t1: f64| -> CovarianceState {
        let mid = 0.5 * (t0 + t1);
        let omega_segment = omega * schedule.value_at(mid).sqrt();
        let feedback_on = mid >= feedback_start && mid <= feedback_end;
        let gamma = gamma_gas + if feedback_on { config.feedback_gamma_per_s } else { 0.0 };
        propagate(state, omega_segment, gamma, diffusion, t1 - t0)
    };

    let mut t = 0.0;
    let mut next_split = 0usize;
    for k in 1..sample_count {
        let t_sample = k as f64 * sample_period;
        while next_split < splits.len() && splits[next_split] < t_sample {
            state = advance(&state, t, splits[next_split]);
            t = splits[next_split];
            next_split += 1;
        }
        state = advance(&state, t, t_sample);
        t = t_sample;
        times.push(t);
        stats_rows.push((state.sigma_z(), state.sigma_v(), state.cov_zv()));
    }

    let sigma_ref = stats_rows[0].0;
    let stats_path = out_dir.join("oracle_stats.csv");
    {
        let mut text = String::with_capacity(stats_rows.len() * 96);
        text.push_str("t,sigma_z,sigma_v,cov_zv,db_amp,db_var\n");
        for (t, row) in times.iter().zip(stats_rows.iter()) {
            let db = expansion_db(row.0, sigma_ref);
            let _ = writeln!(text, "{},{},{},{},{},{}", t, row.0, row.1, row.2, db, 2.0 * db);
        }
        fs::write(&stats_path, text)
            .with_context(|| format!("writing {}", stats_path.display()))?;
    }
    manifest.add_output(&stats_path)?;

    let map = pulse_map(schedule.depth(), omega);
    let db_per_pulse = predicted_expansion_db(1, schedule.depth());
    let tau_amp = amplitude_time_constant(schedule.depth(), omega);
    let tau_var = variance_time_constant(schedule.depth(), omega);
    let summary_path = out_dir.join("oracle_summary.txt");
    {
        let mut text = String::new();
        let _ = writeln!(text, "depth = {}", schedule.depth());
        let _ = writeln!(text, "tau_low_s = {}", schedule.tau_low());
        let _ = writeln!(text, "tau_high_s = {}", schedule.tau_high());
        let _ = writeln!(text, "modulation_frequency_hz = {}", schedule.modulation_frequency());
        let _ = writeln!(text, "pulse_count = {}", schedule.pulse_count());
        let _ = writeln!(text, "protocol_duration_s = {}", schedule.duration());
        let _ = writeln!(
            text,
            "pulse_map = [[{}, {}], [{}, {}]]",
            map[(0, 0)],
            map[(0, 1)],
            map[(1, 0)],
            map[(1, 1)]
        );
        let _ = writeln!(text, "db_per_pulse = {db_per_pulse}");
        let _ = writeln!(
            text,
            "db_total_linear = {}",
            predicted_expansion_db(schedule.pulse_count(), schedule.depth())
        );
        let _ = writeln!(text, "amplitude_time_constant_s = {tau_amp}");
        let _ = writeln!(text, "variance_time_constant_s = {tau_var}");
        fs::write(&summary_path, text)
            .with_context(|| format!("writing {}", summary_path.display()))?;
    }
    manifest.add_output(&summary_path)?;

    println!(
        "oracle: {} samples, {:.4} dB/pulse, tau_amp = {:.4e} s, tau_var = {:.4e} s",
        times.len(),
        db_per_pulse,
        tau_amp,
        tau_var
    );
    manifest.finish(out_dir)
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

/// Spectral calibration: Welch PSD, Lorentzian resonance fit, equipartition
/// conversion factor and the derived state metrics.
pub fn run_calibrate(
    config: &RunConfig,
    out_dir: &Path,
    input: Option<&Path>,
) -> anyhow::Result<PathBuf> {
    ensure_out_dir(out_dir)?;
    let mut manifest = Manifest::start("calibrate", config);
    let particle = config.particle()?;
    let trap = config.trap()?;
    let omega = trap.angular_frequency();

    let (positions, sample_rate, source) = match input {
        Some(path) => {
            let trajectory = csvio::read_trajectory(path)?;
            let rate = 1.0 / trajectory.sample_period;
            (trajectory.positions, rate, path.display().to_string())
        }
        None => {
            // synthetic thermal run at the calibration pressure/temperature,
            // scaled into detector units
            let gas = GasEnvironment::new(
                config.calibrate_pressure_mbar * PASCALS_PER_MBAR,
                config.calibrate_temperature_k,
                config.molecular_mass_kg,
            )
            .map_err(|e| anyhow::anyhow!("calibrate gas: {e}"))?;
            let sim = SimConfig {
                particle,
                gas,
                trap,
                schedule: ModulationSchedule::unmodulated(omega),
                feedback_gain: 0.0,
                feedback_window: (f64::NEG_INFINITY, f64::INFINITY),
                feedback_position_lock: None,
                time_step: config.resolved_dt(),
                duration: config.calibrate_duration_s,
                sample_rate: config.sample_rate_hz,
                seed: config.seed,
                initial_state: InitialState::Thermal {
                    temperature: config.calibrate_temperature_k,
                },
            };
            let trajectory = levex::integrator::simulate(&sim)?;
            let scaled = trajectory
                .positions
                .iter()
                .map(|z| z * config.calibrate_synthetic_scale)
                .collect();
            (scaled, config.sample_rate_hz, "synthetic".to_string())
        }
    };

    let spectrum = welch_psd(
        &positions,
        sample_rate,
        config.calibrate_segment_length as usize,
        config.calibrate_overlap,
    )?;
    let spectrum_path = out_dir.join("spectrum.csv");
    csvio::write_spectrum(&spectrum_path, &spectrum)?;
    manifest.add_output(&spectrum_path)?;

    let guess = LorentzianGuess::from_spectrum(&spectrum)
        .context("spectrum has no usable resonance peak")?;
    let fit = lorentzian_fit(&spectrum, &guess).context("resonance fit failed")?;

    let factor =
        calibration_factor(fit.integrated_area, config.calibrate_temperature_k, &particle, &trap);
    let n = positions.len() as f64;
    let mean = positions.iter().sum::<f64>() / n;
    let variance = positions.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n;
    let sigma_sq_300k = BOLTZMANN * 300.0 / (particle.mass() * omega * omega);
    // Eq-1 style effective temperature, treating the input as meters
    let t_eff = 300.0 * variance / sigma_sq_300k;
    let occupation = phonon_occupation(t_eff, omega);
    let lambda_300k = thermal_spread(300.0, &particle, &trap);

    let report_path = out_dir.join("calibration.txt");
    {
        let mut text = String::new();
        let _ = writeln!(text, "input.source = {source}");
        let _ = writeln!(text, "input.samples = {}", positions.len());
        let _ = writeln!(text, "input.sample_rate_hz = {sample_rate}");
        let _ = writeln!(text, "input.variance = {variance}");
        let _ = writeln!(text, "fit.center_frequency_hz = {}", fit.center_frequency);
        let _ = writeln!(text, "fit.linewidth_per_s = {}", fit.linewidth);
        let _ = writeln!(text, "fit.amplitude = {}", fit.amplitude);
        let _ = writeln!(text, "fit.floor = {}", fit.floor);
        let _ = writeln!(text, "fit.integrated_area = {}", fit.integrated_area);
        let _ = writeln!(text, "fit.residual_norm = {}", fit.residual_norm);
        let _ = writeln!(text, "fit.converged = {}", fit.converged);
        let _ = writeln!(text, "calibration.assumed_temperature_k = {}", config.calibrate_temperature_k);
        let _ = writeln!(text, "calibration.sigma_sq_eq_m2 = {}", BOLTZMANN * config.calibrate_temperature_k / (particle.mass() * omega * omega));
        let _ = writeln!(text, "calibration.factor_m_per_unit = {factor}");
        let _ = writeln!(text, "metrics.sigma_sq_300k_m2 = {sigma_sq_300k}");
        let _ = writeln!(text, "metrics.t_eff_k = {t_eff}");
        let _ = writeln!(text, "metrics.phonon_occupation = {occupation}");
        let _ = writeln!(text, "metrics.lambda_th_300k_m = {lambda_300k}");
        fs::write(&report_path, text)
            .with_context(|| format!("writing {}", report_path.display()))?;
    }
    manifest.add_output(&report_path)?;

    println!(
        "calibrate: f0 = {:.1} Hz, linewidth = {:.4e} 1/s, factor = {:.6e} m/unit, T_eff = {:.4e} K",
        fit.center_frequency, fit.linewidth, factor, t_eff
    );
    manifest.finish(out_dir)
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

/// Measurement-chain analysis of stored trajectories: optional band-pass,
/// velocity by differentiation, ensemble statistics, growth fit, peak search
/// and phase-space histograms.
pub fn run_analyze(
    config: &RunConfig,
    trajectory_dir: &Path,
    out_dir: &Path,
) -> anyhow::Result<PathBuf> {
    ensure_out_dir(out_dir)?;
    let mut manifest = Manifest::start("analyze", config);

    let mut paths: Vec<PathBuf> = fs::read_dir(trajectory_dir)
        .with_context(|| format!("reading {}", trajectory_dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
        .collect();
    paths.sort();
    if paths.len() < 2 {
        bail!(
            "{}: need at least 2 trajectory CSVs, found {}",
            trajectory_dir.display(),
            paths.len()
        );
    }

    let filter_center = config.bandpass_center_hz.unwrap_or(config.f_z_hz);
    let mut trajectories = Vec::with_capacity(paths.len());
    for path in &paths {
        let raw = csvio::read_trajectory(path)?;
        let sample_rate = 1.0 / raw.sample_period;
        let z = if config.bandpass {
            bandpass(
                &raw.positions,
                sample_rate,
                filter_center,
                config.bandpass_bandwidth_hz,
                config.bandpass_order as usize,
            )?
        } else {
            raw.positions
        };
        let v = levex::dsp::differentiate(&z, raw.sample_period)?;
        trajectories.push(Trajectory {
            sample_period: raw.sample_period,
            positions: z,
            velocities: v,
            seed_used: 0,
            stream: trajectories.len() as u64,
        });
    }

    let stats = ensemble_stats(&trajectories)?;
    let sigma_ref = stats.sigma_z[0];
    let stats_path = out_dir.join("stats.csv");
    csvio::write_stats(&stats_path, &stats, sigma_ref)?;
    manifest.add_output(&stats_path)?;

    let fit = growth_time_constant(
        &stats,
        (config.fit_window_start_s, config.fit_window_end_s),
    )?;
    let peak = match find_peak(&stats, config.smoothing_window as usize) {
        Ok(found) => Some(found),
        Err(AnalysisError::NoPeak) => None,
        Err(other) => return Err(other.into()),
    };

    let metrics_path = out_dir.join("metrics.txt");
    {
        let mut text = String::new();
        let _ = writeln!(text, "runs = {}", trajectories.len());
        let _ = writeln!(text, "bandpass = {}", config.bandpass);
        let _ = writeln!(text, "sigma_ref_m = {sigma_ref}");
        let _ = writeln!(text, "growth.window_s = [{}, {}]", config.fit_window_start_s, config.fit_window_end_s);
        let _ = writeln!(text, "growth.time_constant_s = {}", fit.time_constant);
        let _ = writeln!(text, "growth.r_squared = {}", fit.r_squared);
        match peak {
            Some((t_peak, sigma_peak)) => {
                let _ = writeln!(text, "peak.t_s = {t_peak}");
                let _ = writeln!(text, "peak.sigma_z_m = {sigma_peak}");
                let _ = writeln!(text, "peak.db_amp = {}", expansion_db(sigma_peak, sigma_ref));
            }
            None => {
                let _ = writeln!(text, "peak.t_s = none");
            }
        }
        fs::write(&metrics_path, text)
            .with_context(|| format!("writing {}", metrics_path.display()))?;
    }
    manifest.add_output(&metrics_path)?;

    for (index, &time) in config.histogram_times_s.iter().enumerate() {
        let histogram =
            phase_space_histogram(&trajectories, time, config.histogram_bins as usize)?;
        let path = out_dir.join(format!("histogram_{index:03}.csv"));
        csvio::write_histogram(&path, &histogram)?;
        manifest.add_output(&path)?;
    }

    println!(
        "analyze: {} runs, growth tau = {:.4e} s (R2 = {:.4}), peak = {}",
        trajectories.len(),
        fit.time_constant,
        fit.r_squared,
        peak.map_or("none".to_string(), |(t, s)| format!("{s:.4e} m at {t:.4e} s")),
    );
    manifest.finish(out_dir)
}

// ---------------------------------------------------------------------------
// protocol
// ---------------------------------------------------------------------------

/// Print the pulse-schedule timings and the analytic gain constants.
pub fn run_protocol(config: &RunConfig) -> anyhow::Result<()> {
    let schedule = config.schedule()?;
    let omega = config.omega_z();
    println!("depth = {}", schedule.depth());
    println!("tau_low_s = {}", schedule.tau_low());
    println!("tau_high_s = {}", schedule.tau_high());
    println!("pulse_period_s = {}", schedule.pulse_period());
    println!(
        "modulation_frequency_hz = {} ({:.4} x f_z)",
        schedule.modulation_frequency(),
        schedule.modulation_frequency() / config.f_z_hz
    );
    println!("pulse_count = {}", schedule.pulse_count());
    println!("protocol_duration_s = {}", schedule.duration());
    println!("db_per_pulse = {}", predicted_expansion_db(1, schedule.depth()));
    println!("amplitude_time_constant_s = {}", amplitude_time_constant(schedule.depth(), omega));
    println!("variance_time_constant_s = {}", variance_time_constant(schedule.depth(), omega));
    Ok(())
}
