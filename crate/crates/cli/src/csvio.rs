//! CSV formats: trajectories (`t,z,v`), ensemble statistics
//! (`t,sigma_z,sigma_v,cov_zv,db_amp,db_var`), spectra (`f,density`) and
//! phase-space histograms (`z_lo,z_hi,v_lo,v_hi,count`). All values SI.
//! Floats are written in Rust's shortest round-trip form, so reading a file
//! back reproduces the exact bit pattern.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use levex::analysis::{expansion_db, variance_expansion_db, EnsembleStats, PhaseSpaceHistogram};
use levex::dsp::SpectrumEstimate;
use levex::integrator::Trajectory;

pub fn write_trajectory(path: &Path, trajectory: &Trajectory) -> anyhow::Result<()> {
    let mut text = String::with_capacity(trajectory.len() * 48 + 16);
    text.push_str("t,z,v\n");
    for i in 0..trajectory.len() {
        let _ = writeln!(
            text,
            "{},{},{}",
            trajectory.time(i),
            trajectory.positions[i],
            trajectory.velocities[i]
        );
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_trajectory(path: &Path) -> anyhow::Result<Trajectory> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("t,z,v") => {}
        other => bail!(
            "{}: expected header `t,z,v`, got {:?}",
            path.display(),
            other.unwrap_or("<empty>")
        ),
    }
    let mut times = Vec::new();
    let mut positions = Vec::new();
    let mut velocities = Vec::new();
    for (index, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let mut next = |name: &str| -> anyhow::Result<f64> {
            fields
                .next()
                .with_context(|| format!("{}: line {}: missing {name}", path.display(), index + 2))?
                .trim()
                .parse::<f64>()
                .with_context(|| format!("{}: line {}: bad {name}", path.display(), index + 2))
        };
        times.push(next("t")?);
        positions.push(next("z")?);
        velocities.push(next("v")?);
    }
    if times.len() < 2 {
        bail!("{}: need at least 2 samples", path.display());
    }
    let sample_period = times[1] - times[0];
    if sample_period <= 0.0 {
        bail!("{}: non-increasing time column", path.display());
    }
    for (i, &t) in times.iter().enumerate() {
        if (t - i as f64 * sample_period).abs() > 1e-6 * sample_period {
            bail!("{}: non-uniform sample grid at row {}", path.display(), i + 2);
        }
    }
    Ok(Trajectory { sample_period, positions, velocities, seed_used: 0, stream: 0 })
}

/// Stats CSV; `db_amp`/`db_var` are relative to `sigma_ref`.
pub fn write_stats(path: &Path, stats: &EnsembleStats, sigma_ref: f64) -> anyhow::Result<()> {
    let mut text = String::with_capacity(stats.len() * 96 + 48);
    text.push_str("t,sigma_z,sigma_v,cov_zv,db_amp,db_var\n");
    for i in 0..stats.len() {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{}",
            stats.times[i],
            stats.sigma_z[i],
            stats.sigma_v[i],
            stats.cov_zv[i],
            expansion_db(stats.sigma_z[i], sigma_ref),
            variance_expansion_db(stats.sigma_z[i], sigma_ref)
        );
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_spectrum(path: &Path, spectrum: &SpectrumEstimate) -> anyhow::Result<()> {
    let mut text = String::with_capacity(spectrum.frequencies.len() * 32 + 16);
    text.push_str("f,density\n");
    for (f, d) in spectrum.frequencies.iter().zip(spectrum.density.iter()) {
        let _ = writeln!(text, "{f},{d}");
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_histogram(path: &Path, histogram: &PhaseSpaceHistogram) -> anyhow::Result<()> {
    let bins = histogram.bins();
    let mut text = String::with_capacity(bins * bins * 48 + 32);
    text.push_str("z_lo,z_hi,v_lo,v_hi,count\n");
    for zi in 0..bins {
        for vi in 0..bins {
            let _ = writeln!(
                text,
                "{},{},{},{},{}",
                histogram.z_edges[zi],
                histogram.z_edges[zi + 1],
                histogram.v_edges[vi],
                histogram.v_edges[vi + 1],
                histogram.counts[zi * bins + vi]
            );
        }
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn trajectory_round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("trajectory.csv");
        let original = Trajectory {
            sample_period: 5e-7,
            positions: vec![1.234e-9, -2.5e-10, 0.0, 3.3e-8],
            velocities: vec![0.1, -0.25, 1e-4, -7.7e-3],
            seed_used: 42,
            stream: 3,
        };
        write_trajectory(&path, &original).unwrap();
        let read = read_trajectory(&path).unwrap();
        assert_eq!(read.positions, original.positions);
        assert_eq!(read.velocities, original.velocities);
        assert_eq!(read.sample_period, original.sample_period);
    }

    #[test]
    fn bad_header_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "time,pos\n0,1\n").unwrap();
        assert!(read_trajectory(&path).is_err());
    }
}
