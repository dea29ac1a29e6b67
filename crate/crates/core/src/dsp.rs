//! The measurement chain: causal band-pass filtering, numerical
//! differentiation, Welch spectral estimation, Lorentzian resonance fitting
//! and equipartition calibration.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::constants::BOLTZMANN;
use crate::physics::{ParticleSpec, TrapSpec};

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("invalid band: {0}")]
    InvalidBand(String),
    #[error("signal too short: {0}")]
    TooShort(String),
    #[error("spectrum has fewer than 5 bins above the noise floor")]
    DegenerateSpectrum,
}

// ---------------------------------------------------------------------------
// Band-pass filter
// ---------------------------------------------------------------------------

/// One second-order section, direct form II transposed.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        (self.b0 + self.b1 * z_inv + self.b2 * z_inv * z_inv)
            / (1.0 + self.a1 * z_inv + self.a2 * z_inv * z_inv)
    }
}

/// Causal Butterworth band-pass as a cascade of biquads.
///
/// Designed from the analog low-pass prototype of the given order via the
/// band transform with edges at `center ± bandwidth/2`, discretized by the
/// bilinear transform with the edges pre-warped, and normalized to unit gain
/// at `center`.
#[derive(Debug, Clone)]
pub struct BandPassFilter {
    sections: Vec<Biquad>,
    sample_rate: f64,
}

impl BandPassFilter {
    pub fn design(
        sample_rate: f64,
        center: f64,
        bandwidth: f64,
        order: usize,
    ) -> Result<Self, DspError> {
        if order == 0 {
            return Err(DspError::InvalidBand("order must be at least 1".into()));
        }
        if !(sample_rate > 0.0 && center > 0.0 && bandwidth > 0.0) {
            return Err(DspError::InvalidBand(
                "sample_rate, center and bandwidth must be positive".into(),
            ));
        }
        let f_lo = center - 0.5 * bandwidth;
        let f_hi = center + 0.5 * bandwidth;
        if f_lo <= 0.0 || f_hi >= 0.5 * sample_rate {
            return Err(DspError::InvalidBand(format!(
                "band edges [{f_lo}, {f_hi}] must lie inside (0, {})",
                0.5 * sample_rate
            )));
        }

        // pre-warped analog edge frequencies
        let warp = |f: f64| 2.0 * sample_rate * (std::f64::consts::PI * f / sample_rate).tan();
        let w_lo = warp(f_lo);
        let w_hi = warp(f_hi);
        let band = w_hi - w_lo;
        let w0_sq = w_lo * w_hi;

        // analog band-pass poles from the Butterworth prototype
        let mut poles = Vec::with_capacity(2 * order);
        for k in 0..order {
            let theta =
                std::f64::consts::PI * (2.0 * k as f64 + order as f64 + 1.0) / (2.0 * order as f64);
            let prototype = Complex64::new(theta.cos(), theta.sin());
            let pb = prototype * band;
            let disc = (pb * pb - 4.0 * w0_sq).sqrt();
            poles.push((pb + disc) * 0.5);
            poles.push((pb - disc) * 0.5);
        }

        // bilinear transform; zeros land at z = ±1
        let two_fs = 2.0 * sample_rate;
        let digital: Vec<Complex64> =
            poles.iter().map(|s| (two_fs + s) / (two_fs - s)).collect();

        let mut sections = Vec::with_capacity(order);
        let mut reals: Vec<f64> = Vec::new();
        for z in &digital {
            if z.im > 1e-9 * z.norm() {
                sections.push(Biquad {
                    b0: 1.0,
                    b1: 0.0,
                    b2: -1.0,
                    a1: -2.0 * z.re,
                    a2: z.norm_sqr(),
                });
            } else if z.im.abs() <= 1e-9 * z.norm() {
                reals.push(z.re);
            }
        }
        // wide-band designs can produce real pole pairs
        for pair in reals.chunks(2) {
            if let [r1, r2] = pair {
                sections.push(Biquad {
                    b0: 1.0,
                    b1: 0.0,
                    b2: -1.0,
                    a1: -(r1 + r2),
                    a2: r1 * r2,
                });
            }
        }
        if sections.len() != order {
            return Err(DspError::InvalidBand("pole pairing failed".into()));
        }

        let mut filter = Self { sections, sample_rate };
        let raw_gain = filter.magnitude_at(center);
        if !(raw_gain.is_finite() && raw_gain > 0.0) {
            return Err(DspError::InvalidBand("degenerate design".into()));
        }
        let per_section = (1.0 / raw_gain).powf(1.0 / order as f64);
        for s in &mut filter.sections {
            s.b0 *= per_section;
            s.b2 *= per_section;
        }
        Ok(filter)
    }

    /// Magnitude of the transfer function at frequency `f` [Hz].
    pub fn magnitude_at(&self, f: f64) -> f64 {
        let omega = 2.0 * std::f64::consts::PI * f / self.sample_rate;
        let z_inv = Complex64::new(omega.cos(), -omega.sin());
        self.sections
            .iter()
            .map(|s| s.response(z_inv).norm())
            .product()
    }

    /// Run the filter forward over the signal from zero initial state.
    pub fn apply(&self, signal: &[f64]) -> Vec<f64> {
        let mut state = vec![(0.0f64, 0.0f64); self.sections.len()];
        signal
            .iter()
            .map(|&x| {
                let mut value = x;
                for (section, (s1, s2)) in self.sections.iter().zip(state.iter_mut()) {
                    let y = section.b0 * value + *s1;
                    *s1 = section.b1 * value - section.a1 * y + *s2;
                    *s2 = section.b2 * value - section.a2 * y;
                    value = y;
                }
                value
            })
            .collect()
    }
}

/// Causal Butterworth band-pass of `signal`: band edges `center ±
/// bandwidth/2`, analog prototype of the given order, bilinear transform with
/// pre-warping, applied forward in time.
pub fn bandpass(
    signal: &[f64],
    sample_rate: f64,
    center: f64,
    bandwidth: f64,
    order: usize,
) -> Result<Vec<f64>, DspError> {
    Ok(BandPassFilter::design(sample_rate, center, bandwidth, order)?.apply(signal))
}

// ---------------------------------------------------------------------------
// Differentiation
// ---------------------------------------------------------------------------

/// Velocity from a position series by central differences,
/// `v_i = (z_{i+1} − z_{i−1})/(2Δt)`, with one-sided differences at the two
/// endpoints.
pub fn differentiate(positions: &[f64], sample_period: f64) -> Result<Vec<f64>, DspError> {
    let n = positions.len();
    if n < 3 {
        return Err(DspError::TooShort(format!("need at least 3 samples, got {n}")));
    }
    let mut v = Vec::with_capacity(n);
    v.push((positions[1] - positions[0]) / sample_period);
    for i in 1..n - 1 {
        v.push((positions[i + 1] - positions[i - 1]) / (2.0 * sample_period));
    }
    v.push((positions[n - 1] - positions[n - 2]) / sample_period);
    Ok(v)
}

// ---------------------------------------------------------------------------
// Welch spectral estimation
// ---------------------------------------------------------------------------

/// Taper applied to each Welch segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectralWindow {
    Hann,
}

/// One-sided power spectral density estimate.
#[derive(Debug, Clone)]
pub struct SpectrumEstimate {
    /// Bin frequencies, strictly increasing from 0 [Hz].
    pub frequencies: Vec<f64>,
    /// Density per bin [input²/Hz].
    pub density: Vec<f64>,
    /// Bin spacing [Hz].
    pub resolution: f64,
    pub window: SpectralWindow,
    pub segment_length: usize,
}

/// Averaged Hann-windowed periodogram (Welch), one-sided, normalized so that
/// `Σ density·Δf` equals the variance of the signal. Segments are detrended
/// by mean removal and overlap by the given fraction.
pub fn welch_psd(
    signal: &[f64],
    sample_rate: f64,
    segment_length: usize,
    overlap: f64,
) -> Result<SpectrumEstimate, DspError> {
    if segment_length < 4 || segment_length % 2 != 0 {
        return Err(DspError::TooShort("segment_length must be even and at least 4".into()));
    }
    if signal.len() < segment_length {
        return Err(DspError::TooShort(format!(
            "signal length {} below segment length {segment_length}",
            signal.len()
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(DspError::InvalidBand("overlap must lie in [0, 1)".into()));
    }

    let n = segment_length;
    let step = ((n as f64 * (1.0 - overlap)).round() as usize).max(1);
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect();
    let window_power = window.iter().map(|w| w * w).sum::<f64>() / n as f64;

    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut accumulated = vec![0.0f64; n / 2 + 1];
    let mut segments = 0usize;
    let mut buffer = vec![Complex64::new(0.0, 0.0); n];
    let mut start = 0usize;
    while start + n <= signal.len() {
        let segment = &signal[start..start + n];
        let mean = segment.iter().sum::<f64>() / n as f64;
        for (slot, (&x, &w)) in buffer.iter_mut().zip(segment.iter().zip(window.iter())) {
            *slot = Complex64::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buffer);
        for (k, acc) in accumulated.iter_mut().enumerate() {
            *acc += buffer[k].norm_sqr();
        }
        segments += 1;
        start += step;
    }

    let norm = 1.0 / (segments as f64 * sample_rate * n as f64 * window_power);
    let mut density: Vec<f64> = accumulated.iter().map(|p| p * norm).collect();
    for value in density.iter_mut().take(n / 2).skip(1) {
        *value *= 2.0; // fold negative frequencies
    }
    let resolution = sample_rate / n as f64;
    let frequencies = (0..=n / 2).map(|k| k as f64 * resolution).collect();
    Ok(SpectrumEstimate {
        frequencies,
        density,
        resolution,
        window: SpectralWindow::Hann,
        segment_length: n,
    })
}

impl SpectrumEstimate {
    /// `Σ density·Δf`, the variance the estimate accounts for.
    pub fn total_power(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.resolution
    }

    /// Bin of maximal density, excluding DC.
    pub fn peak_bin(&self) -> usize {
        let mut best = 1;
        for k in 2..self.density.len() {
            if self.density[k] > self.density[best] {
                best = k;
            }
        }
        best
    }
}

// ---------------------------------------------------------------------------
// Lorentzian resonance fit
// ---------------------------------------------------------------------------

/// Starting point for [`lorentzian_fit`]; all quantities in the angular
/// convention of the model below.
#[derive(Debug, Clone, Copy)]
pub struct LorentzianGuess {
    /// Resonance frequency f₀ [Hz].
    pub center_frequency: f64,
    /// Linewidth Γ [rad/s].
    pub linewidth: f64,
    /// Amplitude `a` of `a/((ω₀²−ω²)² + Γ²ω²)` [input²·(rad/s)³].
    pub amplitude: f64,
    /// Constant noise floor in angular density units [input²·s/rad].
    pub floor: f64,
}

impl LorentzianGuess {
    /// Heuristic guess from the spectrum itself: peak location, half-power
    /// width and median floor.
    pub fn from_spectrum(spectrum: &SpectrumEstimate) -> Option<Self> {
        let peak = spectrum.peak_bin();
        let f0 = spectrum.frequencies[peak];
        if f0 <= 0.0 {
            return None;
        }
        let s_omega: Vec<f64> =
            spectrum.density.iter().map(|d| d / (2.0 * std::f64::consts::PI)).collect();
        let peak_value = s_omega[peak];
        let half = peak_value / 2.0;
        let mut lo = peak;
        while lo > 1 && s_omega[lo] > half {
            lo -= 1;
        }
        let mut hi = peak;
        while hi + 1 < s_omega.len() && s_omega[hi] > half {
            hi += 1;
        }
        let fwhm_hz = (spectrum.frequencies[hi] - spectrum.frequencies[lo]).max(spectrum.resolution);
        let linewidth = 2.0 * std::f64::consts::PI * fwhm_hz;
        let omega0 = 2.0 * std::f64::consts::PI * f0;
        let mut sorted = s_omega.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let floor = sorted[sorted.len() / 2];
        Some(Self {
            center_frequency: f0,
            linewidth,
            amplitude: (peak_value - floor).max(peak_value * 0.1)
                * linewidth
                * linewidth
                * omega0
                * omega0,
            floor,
        })
    }
}

/// Result of the resonance fit `S(ω) = a/((ω₀²−ω²)² + Γ²ω²) + b` performed
/// against angular frequency (`ω = 2πf`, density per rad/s).
#[derive(Debug, Clone, Copy)]
pub struct LorentzianFit {
    /// Fitted resonance frequency f₀ [Hz].
    pub center_frequency: f64,
    /// Fitted linewidth Γ [rad/s].
    pub linewidth: f64,
    /// Fitted amplitude `a` [input²·(rad/s)³].
    pub amplitude: f64,
    /// Fitted constant floor `b` [input²·s/rad].
    pub floor: f64,
    /// `∫₀^∞ a/((ω₀²−ω²)² + Γ²ω²) dω = a·π/(2Γω₀²)`; equals the variance the
    /// resonance carries, in input² units.
    pub integrated_area: f64,
    /// `‖residual‖ / ‖data‖`.
    pub residual_norm: f64,
    /// False when the iteration hit its limit before the parameters settled.
    pub converged: bool,
}

struct FitData {
    /// Normalized angular frequencies ω/ω_ref.
    u: Vec<f64>,
    /// Normalized angular densities.
    y: Vec<f64>,
}

fn lorentzian_model(p: &[f64; 4], u: f64) -> f64 {
    let d = p[1] * p[1] - u * u;
    p[0] / (d * d + p[2] * p[2] * u * u) + p[3]
}

fn lorentzian_jacobian(p: &[f64; 4], u: f64) -> [f64; 4] {
    let d = p[1] * p[1] - u * u;
    let den = d * d + p[2] * p[2] * u * u;
    let den2 = den * den;
    [
        1.0 / den,
        -p[0] * 4.0 * p[1] * d / den2,
        -p[0] * 2.0 * p[2] * u * u / den2,
        1.0,
    ]
}

fn cost(data: &FitData, p: &[f64; 4]) -> f64 {
    data.u
        .iter()
        .zip(data.y.iter())
        .map(|(&u, &y)| {
            let r = lorentzian_model(p, u) - y;
            r * r
        })
        .sum()
}

/// Least-squares fit of a Lorentzian resonance plus constant floor to the
/// spectrum, by damped Gauss–Newton iteration on internally normalized
/// parameters. Converges when the relative parameter change drops below
/// 1e-8, and gives up (flagging `converged = false`) after 200 iterations.
pub fn lorentzian_fit(
    spectrum: &SpectrumEstimate,
    guess: &LorentzianGuess,
) -> Result<LorentzianFit, DspError> {
    let two_pi = 2.0 * std::f64::consts::PI;

    // noise-floor sanity check: a fittable resonance sticks out of the median
    let mut sorted = spectrum.density.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let floor = sorted[sorted.len() / 2];
    let prominent = spectrum.density.iter().filter(|&&d| d > 10.0 * floor).count();
    if prominent < 5 {
        return Err(DspError::DegenerateSpectrum);
    }

    let omega_ref = two_pi * guess.center_frequency;
    if !(omega_ref > 0.0 && omega_ref.is_finite()) {
        return Err(DspError::InvalidBand("guess center frequency must be positive".into()));
    }
    let s_ref = spectrum
        .density
        .iter()
        .cloned()
        .fold(0.0f64, f64::max)
        / two_pi;
    if !(s_ref > 0.0) {
        return Err(DspError::DegenerateSpectrum);
    }

    let mut data = FitData { u: Vec::new(), y: Vec::new() };
    for (k, &f) in spectrum.frequencies.iter().enumerate() {
        if f <= 0.0 {
            continue; // DC carries no resonance information
        }
        data.u.push(two_pi * f / omega_ref);
        data.y.push(spectrum.density[k] / two_pi / s_ref);
    }

    let wr4 = omega_ref.powi(4);
    let mut p = [
        guess.amplitude / (s_ref * wr4),
        1.0,
        guess.linewidth / omega_ref,
        guess.floor / s_ref,
    ];
    let mut best_cost = cost(&data, &p);
    let mut lambda = 1e-3;
    let mut converged = false;

    for _ in 0..200 {
        // normal equations of the current iterate
        let mut jtj = [[0.0f64; 4]; 4];
        let mut jtr = [0.0f64; 4];
        for (&u, &y) in data.u.iter().zip(data.y.iter()) {
            let r = lorentzian_model(&p, u) - y;
            let j = lorentzian_jacobian(&p, u);
            for a in 0..4 {
                jtr[a] += j[a] * r;
                for b in a..4 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        for a in 0..4 {
            for b in 0..a {
                jtj[a][b] = jtj[b][a];
            }
        }

        let mut accepted = false;
        for _ in 0..40 {
            let mut damped = nalgebra::Matrix4::from_fn(|r, c| jtj[r][c]);
            for d in 0..4 {
                damped[(d, d)] += lambda * jtj[d][d].max(1e-300);
            }
            let rhs = nalgebra::Vector4::new(-jtr[0], -jtr[1], -jtr[2], -jtr[3]);
            let Some(step) = damped.lu().solve(&rhs) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2], p[3] + step[3]];
            let trial_cost = cost(&data, &trial);
            if trial_cost.is_finite() && trial_cost < best_cost {
                let relative_change = (0..4)
                    .map(|i| (trial[i] - p[i]).abs() / (p[i].abs() + 1e-300))
                    .fold(0.0f64, f64::max);
                p = trial;
                best_cost = trial_cost;
                lambda = (lambda * 0.3).max(1e-14);
                accepted = true;
                if relative_change < 1e-8 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e15 {
                break;
            }
        }
        if !accepted {
            // no damping level improves the cost: the iterate is a local
            // minimum to machine precision
            converged = true;
        }
        if converged {
            break;
        }
    }

    let amplitude = p[0].abs() * s_ref * wr4;
    let omega0 = p[1].abs() * omega_ref;
    let linewidth = p[2].abs() * omega_ref;
    let floor_fit = p[3] * s_ref;
    let data_norm = data.y.iter().map(|y| y * y).sum::<f64>().sqrt();
    let residual_norm = best_cost.sqrt() / data_norm.max(1e-300);
    Ok(LorentzianFit {
        center_frequency: omega0 / two_pi,
        linewidth,
        amplitude,
        floor: floor_fit,
        integrated_area: amplitude * std::f64::consts::PI / (2.0 * linewidth * omega0 * omega0),
        residual_norm,
        converged,
    })
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

/// Conversion factor from raw detector units to meters by equipartition at
/// the given temperature: `√(σ²_eq / fitted_area)` with
/// `σ²_eq = k_B T/(m ω_z²)`.
pub fn calibration_factor(
    fitted_area: f64,
    temperature: f64,
    particle: &ParticleSpec,
    trap: &TrapSpec,
) -> f64 {
    let w = trap.angular_frequency();
    let sigma_sq_eq = BOLTZMANN * temperature / (particle.mass() * w * w);
    (sigma_sq_eq / fitted_area).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const FS: f64 = 2.0e6;

    #[test]
    fn bandpass_unit_gain_at_center() {
        let filter = BandPassFilter::design(FS, 77.6e3, 14.0e3, 3).unwrap();
        assert_relative_eq!(filter.magnitude_at(77.6e3), 1.0, max_relative = 1e-9);

        // steady-state amplitude of a tone at band center
        let n = 40_000;
        let tone: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 77.6e3 * i as f64 / FS).sin())
            .collect();
        let out = filter.apply(&tone);
        let tail = &out[n - 4000..];
        let amplitude = tail.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        assert_relative_eq!(amplitude, 1.0, max_relative = 0.01);
    }

    #[test]
    fn bandpass_attenuates_neighbor_mode() {
        let filter = BandPassFilter::design(FS, 77.6e3, 14.0e3, 3).unwrap();
        let gain = filter.magnitude_at(137.0e3);
        let attenuation_db = -20.0 * gain.log10();
        assert!(attenuation_db >= 40.0, "attenuation {attenuation_db:.1} dB");
        // designed band edges sit at half power
        assert_relative_eq!(filter.magnitude_at(77.6e3 - 7.0e3), 0.7071, max_relative = 1e-3);
        assert_relative_eq!(filter.magnitude_at(77.6e3 + 7.0e3), 0.7071, max_relative = 1e-3);
    }

    #[test]
    fn bandpass_blocks_dc() {
        let filter = BandPassFilter::design(FS, 77.6e3, 14.0e3, 3).unwrap();
        let out = filter.apply(&vec![1.0; 30_000]);
        assert!(out[29_999].abs() < 1e-9);
    }

    #[test]
    fn bandpass_rejects_bad_bands() {
        assert!(matches!(
            BandPassFilter::design(FS, 5.0e3, 14.0e3, 3),
            Err(DspError::InvalidBand(_))
        ));
        assert!(BandPassFilter::design(FS, 0.99e6, 50.0e3, 3).is_err());
        assert!(BandPassFilter::design(FS, 77.6e3, 14.0e3, 0).is_err());
    }

    #[test]
    fn bandpass_is_linear() {
        let filter = BandPassFilter::design(FS, 77.6e3, 14.0e3, 3).unwrap();
        let mut state = 0x12345678u64;
        let mut rand = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let a: Vec<f64> = (0..5000).map(|_| rand()).collect();
        let b: Vec<f64> = (0..5000).map(|_| rand()).collect();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x + 3.0 * y).collect();
        let fa = filter.apply(&a);
        let fb = filter.apply(&b);
        let fsum = filter.apply(&sum);
        let scale = fsum.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        for i in 0..5000 {
            assert!((fsum[i] - 2.0 * fa[i] - 3.0 * fb[i]).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn differentiate_linear_ramp() {
        let dt = 1e-4;
        let z: Vec<f64> = (0..100).map(|i| 3.5 * i as f64 * dt).collect();
        let v = differentiate(&z, dt).unwrap();
        for value in v {
            assert_relative_eq!(value, 3.5, max_relative = 1e-9);
        }
    }

    #[test]
    fn differentiate_sine_amplitude_response() {
        let omega = 2.0 * std::f64::consts::PI * 77.6e3;
        let dt = 0.24 / omega; // ωΔt = 0.24
        let amplitude = 2.0e-9;
        let n = 5000;
        let z: Vec<f64> = (0..n).map(|i| amplitude * (omega * i as f64 * dt).sin()).collect();
        let v = differentiate(&z, dt).unwrap();
        let peak = v[100..n - 100].iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        let expected = amplitude * omega * (1.0 - 0.24f64.powi(2) / 6.0);
        assert_relative_eq!(peak, expected, max_relative = 1e-3);
    }

    #[test]
    fn differentiate_edge_cases() {
        assert!(matches!(differentiate(&[1.0, 2.0], 1.0), Err(DspError::TooShort(_))));
        let v = differentiate(&[4.0; 50], 1e-3).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    fn lcg_normals(n: usize, seed: u64) -> Vec<f64> {
        // Box-Muller on a small LCG; test-only noise source
        let mut state = seed;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 + 1.0) / (1u64 << 53) as f64
        };
        (0..n)
            .map(|_| {
                let u1: f64 = next();
                let u2: f64 = next();
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect()
    }

    #[test]
    fn welch_white_noise_is_flat() {
        let n = 1024 * 410;
        let noise = lcg_normals(n, 42);
        let spec = welch_psd(&noise, FS, 256, 0.5).unwrap();
        let expected = 1.0 / (FS / 2.0);
        // skip DC and its neighbor (depleted by per-segment mean removal) and
        // the Nyquist bin (not folded)
        for k in 2..spec.density.len() - 1 {
            assert!(
                (spec.density[k] - expected).abs() / expected < 0.10,
                "bin {k}: {} vs {expected}",
                spec.density[k]
            );
        }
    }

    #[test]
    fn welch_parseval() {
        let n = 1 << 17;
        let noise = lcg_normals(n, 7);
        let spec = welch_psd(&noise, FS, 4096, 0.5).unwrap();
        let variance = {
            let mean = noise.iter().sum::<f64>() / n as f64;
            noise.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64
        };
        assert_relative_eq!(spec.total_power(), variance, max_relative = 0.01);
    }

    #[test]
    fn welch_finds_tone() {
        let f0 = 77.6e3;
        let n = 1 << 16;
        let tone: Vec<f64> =
            (0..n).map(|i| (2.0 * std::f64::consts::PI * f0 * i as f64 / FS).sin()).collect();
        let spec = welch_psd(&tone, FS, 8192, 0.5).unwrap();
        let peak = spec.peak_bin();
        assert!((spec.frequencies[peak] - f0).abs() <= spec.resolution);
    }

    #[test]
    fn welch_rejects_short_signal() {
        assert!(matches!(welch_psd(&[0.0; 100], FS, 256, 0.5), Err(DspError::TooShort(_))));
    }

    fn synthetic_spectrum(f0: f64, gamma: f64, a: f64, b: f64) -> SpectrumEstimate {
        let resolution = 120.0;
        let n = 8000;
        let two_pi = 2.0 * std::f64::consts::PI;
        let frequencies: Vec<f64> = (0..=n).map(|k| k as f64 * resolution).collect();
        let density = frequencies
            .iter()
            .map(|&f| {
                let w = two_pi * f;
                let w0 = two_pi * f0;
                let d = w0 * w0 - w * w;
                two_pi * (a / (d * d + gamma * gamma * w * w) + b)
            })
            .collect();
        SpectrumEstimate {
            frequencies,
            density,
            resolution,
            window: SpectralWindow::Hann,
            segment_length: 2 * n,
        }
    }

    #[test]
    fn lorentzian_fit_recovers_exact_model() {
        let f0 = 77.6e3;
        let gamma = 1.45e5;
        let a = 3.0e-9;
        let spec = synthetic_spectrum(f0, gamma, a, 0.0);
        let guess = LorentzianGuess::from_spectrum(&spec).unwrap();
        let fit = lorentzian_fit(&spec, &guess).unwrap();
        assert!(fit.converged);
        assert!(fit.residual_norm < 1e-10, "residual {}", fit.residual_norm);
        assert_relative_eq!(fit.center_frequency, f0, max_relative = 1e-6);
        assert_relative_eq!(fit.linewidth, gamma, max_relative = 1e-6);
        let two_pi = 2.0 * std::f64::consts::PI;
        let w0 = two_pi * f0;
        assert_relative_eq!(
            fit.integrated_area,
            a * std::f64::consts::PI / (2.0 * gamma * w0 * w0),
            max_relative = 1e-6
        );
    }

    #[test]
    fn lorentzian_fit_tolerates_wrong_initial_center() {
        let f0 = 77.6e3;
        let gamma = 1.45e5;
        // floor at ~1% of the on-resonance peak a/(Γ²ω₀²)
        let spec = synthetic_spectrum(f0, gamma, 3.0e-9, 6.0e-33);
        let mut guess = LorentzianGuess::from_spectrum(&spec).unwrap();
        guess.center_frequency *= 1.2; // 20% off
        let fit = lorentzian_fit(&spec, &guess).unwrap();
        assert_relative_eq!(fit.center_frequency, f0, max_relative = 1e-5);
        assert_relative_eq!(fit.linewidth, gamma, max_relative = 1e-4);
    }

    #[test]
    fn lorentzian_fit_rejects_featureless_spectrum() {
        let n = 4000;
        let frequencies: Vec<f64> = (0..=n).map(|k| k as f64 * 120.0).collect();
        let density = vec![1.0e-20; n + 1];
        let spec = SpectrumEstimate {
            frequencies,
            density,
            resolution: 120.0,
            window: SpectralWindow::Hann,
            segment_length: 2 * n,
        };
        let guess = LorentzianGuess {
            center_frequency: 77.6e3,
            linewidth: 1.0e5,
            amplitude: 1.0,
            floor: 0.0,
        };
        assert!(matches!(lorentzian_fit(&spec, &guess), Err(DspError::DegenerateSpectrum)));
    }

    #[test]
    fn calibration_factor_identities() {
        let particle = ParticleSpec::new(1.0e-7, 1800.0, 1.44).unwrap();
        let trap = TrapSpec::harmonic(2.0 * std::f64::consts::PI * 77.6e3).unwrap();
        let sigma_sq_eq = BOLTZMANN * 300.0
            / (particle.mass() * trap.angular_frequency().powi(2));
        assert_relative_eq!(sigma_sq_eq, 2.31e-15, max_relative = 1e-3);
        assert_relative_eq!(
            calibration_factor(sigma_sq_eq, 300.0, &particle, &trap),
            1.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            calibration_factor(sigma_sq_eq / 2.0, 300.0, &particle, &trap),
            2.0f64.sqrt(),
            max_relative = 1e-12
        );
    }
}
