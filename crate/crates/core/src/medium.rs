//! Two-level Lorentzian absorber and linear propagation of pulse envelopes
//! through it.
//!
//! Sign conventions: a field component oscillating as `exp(-i (w_c + nu) t)`
//! sees the detuning `Delta = delta_s + nu` from line center, where `delta_s`
//! is the carrier detuning. Envelopes are sampled in the frame rotating at
//! the carrier, so on the FFT grid (which expands in `exp(+i w_k t)`) bin `k`
//! carries `Delta = delta_s - w_k`. The field transfer over a fraction `d` of
//! the medium is `exp(d * (-a(Delta)/2 + i phi(Delta)))`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::quad::{self, Tolerance};
use crate::{Error, Result};

/// Homogeneous two-level absorbing line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MediumSpec {
    /// Resonant intensity optical depth a0.
    pub peak_od: f64,
    /// Spontaneous decay rate in rad/s.
    pub gamma: f64,
    /// Spontaneous lifetime 1/gamma in seconds.
    pub tau_sp: f64,
    /// Normalized medium length used when propagating to intermediate depth.
    pub length_fraction: f64,
}

impl MediumSpec {
    pub fn new(peak_od: f64, tau_sp: f64) -> Result<Self> {
        let m = MediumSpec {
            peak_od,
            gamma: 1.0 / tau_sp,
            tau_sp,
            length_fraction: 1.0,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_peak_od(mut self, peak_od: f64) -> Result<Self> {
        self.peak_od = peak_od;
        self.validate()?;
        Ok(self)
    }

    pub fn with_length_fraction(mut self, fraction: f64) -> Result<Self> {
        self.length_fraction = fraction;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_od >= 0.0 && self.peak_od.is_finite()) {
            return Err(Error::invalid("peak_od", format!("{} must be finite and >= 0", self.peak_od)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma", format!("{} must be finite and > 0", self.gamma)));
        }
        if (self.tau_sp * self.gamma - 1.0).abs() > 4.0 * f64::EPSILON {
            return Err(Error::invalid("tau_sp", "tau_sp * gamma must equal 1"));
        }
        if !(0.0..=1.0).contains(&self.length_fraction) {
            return Err(Error::invalid(
                "length_fraction",
                format!("{} outside [0, 1]", self.length_fraction),
            ));
        }
        Ok(())
    }

    /// Intensity optical depth at detuning `delta` (rad/s).
    pub fn od_at(&self, delta: f64) -> f64 {
        let x = 2.0 * delta / self.gamma;
        self.peak_od / (1.0 + x * x)
    }

    /// Dispersive phase at detuning `delta` (rad/s), the Kramers-Kronig
    /// partner of [`od_at`](Self::od_at).
    pub fn phase_at(&self, delta: f64) -> f64 {
        let x = 2.0 * delta / self.gamma;
        -0.5 * self.peak_od * x / (1.0 + x * x)
    }

    /// Field transfer factor after a fraction `depth` of the medium.
    pub fn transfer(&self, delta: f64, depth: f64) -> Complex64 {
        Complex64::new(-0.5 * depth * self.od_at(delta), depth * self.phase_at(delta)).exp()
    }
}

impl Default for MediumSpec {
    fn default() -> Self {
        MediumSpec::new(4.0, 26.5e-9).expect("default medium is valid")
    }
}

pub fn lorentzian_od(delta: f64, medium: &MediumSpec) -> f64 {
    medium.od_at(delta)
}

pub fn dispersion_phase(delta: f64, medium: &MediumSpec) -> f64 {
    medium.phase_at(delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferSample {
    pub detuning: f64,
    /// Field amplitude attenuation exponent a(Delta)/2.
    pub amplitude_od: f64,
    pub phase: f64,
}

pub fn transfer_spectrum(medium: &MediumSpec, detunings: &[f64]) -> Vec<TransferSample> {
    detunings
        .iter()
        .map(|&d| TransferSample {
            detuning: d,
            amplitude_od: 0.5 * medium.od_at(d),
            phase: medium.phase_at(d),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PulseShape {
    #[default]
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    pub shape: PulseShape,
    /// RMS width of the intensity profile, seconds.
    pub intensity_rms: f64,
    /// Carrier detuning from line center, rad/s.
    pub carrier_detuning: f64,
    /// Mean incident photon number |alpha|^2.
    pub mean_photons: f64,
}

impl PulseSpec {
    pub fn gaussian(intensity_rms: f64, carrier_detuning: f64, mean_photons: f64) -> Result<Self> {
        let p = PulseSpec {
            shape: PulseShape::Gaussian,
            intensity_rms,
            carrier_detuning,
            mean_photons,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.intensity_rms > 0.0) {
            return Err(Error::invalid("intensity_rms", "must be > 0"));
        }
        if !(self.mean_photons >= 0.0 && self.mean_photons.is_finite()) {
            return Err(Error::invalid("mean_photons", "must be finite and >= 0"));
        }
        if !self.carrier_detuning.is_finite() {
            return Err(Error::invalid("carrier_detuning", "must be finite"));
        }
        Ok(())
    }

    /// Field envelope with unit peak, `exp(-t^2 / (4 sigma^2))`.
    pub fn field_shape(&self, t: f64) -> f64 {
        match self.shape {
            PulseShape::Gaussian => (-t * t / (4.0 * self.intensity_rms * self.intensity_rms)).exp(),
        }
    }

    pub fn spectrum(&self) -> GaussianSpectrum {
        pulse_spectrum(self)
    }
}

impl Default for PulseSpec {
    fn default() -> Self {
        PulseSpec::gaussian(10e-9, 0.0, 34.0).expect("default pulse is valid")
    }
}

/// Normalized spectral intensity density of a Gaussian pulse, over detuning
/// in rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSpectrum {
    pub center: f64,
    /// RMS width in rad/s, 1/(2 sigma_t).
    pub rms: f64,
}

impl GaussianSpectrum {
    pub fn rms_hz(&self) -> f64 {
        self.rms / (2.0 * PI)
    }

    pub fn density(&self, delta: f64) -> f64 {
        let u = (delta - self.center) / self.rms;
        (-0.5 * u * u).exp() / ((2.0 * PI).sqrt() * self.rms)
    }

    /// `n` evenly spaced `(detuning, density)` pairs over `center +- span_rms * rms`.
    pub fn tabulate(&self, n: usize, span_rms: f64) -> Vec<(f64, f64)> {
        let n = n.max(2);
        let lo = self.center - span_rms * self.rms;
        let step = 2.0 * span_rms * self.rms / (n - 1) as f64;
        (0..n)
            .map(|i| {
                let d = lo + step * i as f64;
                (d, self.density(d))
            })
            .collect()
    }
}

pub fn pulse_spectrum(pulse: &PulseSpec) -> GaussianSpectrum {
    GaussianSpectrum {
        center: pulse.carrier_detuning,
        rms: 0.5 / pulse.intensity_rms,
    }
}

/// Spectrally weighted average of `g(a(Delta))` over the pulse's normalized
/// intensity spectrum, by adaptive quadrature.
pub fn spectral_average<G: Fn(f64) -> f64>(pulse: &PulseSpec, medium: &MediumSpec, g: G) -> Result<f64> {
    let spec = pulse_spectrum(pulse);
    if spec.rms == 0.0 {
        return Ok(g(medium.od_at(spec.center)));
    }
    // Integrate in units of the spectral rms; split at line center so the
    // adaptive rule sees the Lorentzian feature on a boundary.
    let integrand = |u: f64| {
        let weight = (-0.5 * u * u).exp() / (2.0 * PI).sqrt();
        weight * g(medium.od_at(spec.center + spec.rms * u))
    };
    let lim = 12.0;
    let tol = Tolerance {
        abs: 1e-13,
        rel: 1e-11,
        max_intervals: 4000,
    };
    let uc = -spec.center / spec.rms;
    if uc > -lim && uc < lim {
        Ok(quad::integrate(integrand, -lim, uc, tol)? + quad::integrate(integrand, uc, lim, tol)?)
    } else {
        quad::integrate(integrand, -lim, lim, tol)
    }
}

/// Transmission probability of a single photon from the pulse mode,
/// `P_T = integral rho(Delta) exp(-a(Delta)) dDelta`.
pub fn transmission_probability(pulse: &PulseSpec, medium: &MediumSpec) -> Result<f64> {
    pulse.validate()?;
    medium.validate()?;
    spectral_average(pulse, medium, |a| (-a).exp())
}

/// Uniform time grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub len: usize,
}

impl TimeGrid {
    /// Default grid for a pulse centered at t = 0: ends at
    /// max(16 sigma, 16 tau_sp), starts at -max(8 sigma, t_end / 16), with a
    /// power-of-two length >= 2048 and dt <= min(sigma, tau_sp) / 32.
    pub fn for_pulse(pulse: &PulseSpec, medium: &MediumSpec) -> TimeGrid {
        let sigma = pulse.intensity_rms;
        let t_end = (16.0 * sigma).max(16.0 * medium.tau_sp);
        let t0 = -(8.0 * sigma).max(t_end / 16.0);
        let span = t_end - t0;
        let dt_max = sigma.min(medium.tau_sp) / 32.0;
        let mut len = 2048usize;
        while span / len as f64 > dt_max {
            len *= 2;
        }
        TimeGrid {
            t0,
            dt: span / len as f64,
            len,
        }
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + self.dt * i as f64
    }
}

/// Complex signal-field envelope on a uniform time grid, in units of
/// square-root photon flux: `dt * sum |s|^2` is the mean photon number.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledEnvelope {
    pub t0: f64,
    pub dt: f64,
    pub samples: Vec<Complex64>,
    pub carrier_detuning: f64,
}

impl SampledEnvelope {
    pub fn new(t0: f64, dt: f64, samples: Vec<Complex64>, carrier_detuning: f64) -> Result<Self> {
        let env = SampledEnvelope {
            t0,
            dt,
            samples,
            carrier_detuning,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::invalid("dt", "must be > 0"));
        }
        if self.samples.len() < 2 {
            return Err(Error::invalid("samples", "need at least 2 samples"));
        }
        if !self.photon_number().is_finite() {
            return Err(Error::invalid("samples", "photon number is not finite"));
        }
        Ok(())
    }

    /// Samples the pulse on `grid`, normalized to `pulse.mean_photons`.
    pub fn from_pulse(pulse: &PulseSpec, grid: &TimeGrid) -> Result<Self> {
        pulse.validate()?;
        let mut samples: Vec<Complex64> = (0..grid.len)
            .map(|i| Complex64::new(pulse.field_shape(grid.time(i)), 0.0))
            .collect();
        let raw = grid.dt * samples.iter().map(|s| s.norm_sqr()).sum::<f64>();
        let scale = (pulse.mean_photons / raw).sqrt();
        samples.iter_mut().for_each(|s| *s *= scale);
        SampledEnvelope::new(grid.t0, grid.dt, samples, pulse.carrier_detuning)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + self.dt * i as f64
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.samples.len() - 1)
    }

    pub fn photon_number(&self) -> f64 {
        self.dt * self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>()
    }

    pub fn peak_index(&self) -> usize {
        self.samples
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// RMS width of |s|^2 about its centroid.
    pub fn intensity_rms(&self) -> f64 {
        let w: Vec<f64> = self.samples.iter().map(|s| s.norm_sqr()).collect();
        let total: f64 = w.iter().sum();
        if total == 0.0 {
            return 0.0;
        }
        let mean = w.iter().enumerate().map(|(i, x)| x * self.time(i)).sum::<f64>() / total;
        let var = w
            .iter()
            .enumerate()
            .map(|(i, x)| x * (self.time(i) - mean).powi(2))
            .sum::<f64>()
            / total;
        var.sqrt()
    }

    /// Fraction of the energy held by the outermost 5% of samples (both ends).
    pub fn edge_energy_fraction(&self) -> f64 {
        let n = self.samples.len();
        let edge = (n / 20).max(1);
        let total: f64 = self.samples.iter().map(|s| s.norm_sqr()).sum();
        if total == 0.0 {
            return 0.0;
        }
        let outer: f64 = self.samples[..edge]
            .iter()
            .chain(&self.samples[n - edge..])
            .map(|s| s.norm_sqr())
            .sum();
        outer / total
    }
}

/// Applies the medium transfer function on the periodic FFT grid without any
/// window checks.
pub fn propagate_periodic(env: &SampledEnvelope, medium: &MediumSpec, depth_fraction: f64) -> SampledEnvelope {
    let n = env.samples.len();
    let mut buf = env.samples.clone();
    if medium.peak_od == 0.0 || depth_fraction == 0.0 {
        return env.clone();
    }
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let dw = 2.0 * PI / (n as f64 * env.dt);
    for (k, x) in buf.iter_mut().enumerate() {
        let signed = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        let delta = env.carrier_detuning - signed * dw;
        *x *= medium.transfer(delta, depth_fraction);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let inv = 1.0 / n as f64;
    buf.iter_mut().for_each(|x| *x *= inv);
    SampledEnvelope {
        samples: buf,
        ..env.clone()
    }
}

/// Envelope after traversing `depth_fraction` of the medium.
///
/// The input must be negligible (< 1e-6 of its energy) in the outer 5% of the
/// grid, and the output is rejected if more than 1e-4 of its energy ends up
/// there (wrap-around of the trailing free-induction tail).
pub fn propagate_spectral(env: &SampledEnvelope, medium: &MediumSpec, depth_fraction: f64) -> Result<SampledEnvelope> {
    env.validate()?;
    medium.validate()?;
    if !(0.0..=1.0).contains(&depth_fraction) {
        return Err(Error::invalid("depth_fraction", format!("{depth_fraction} outside [0, 1]")));
    }
    let input_edge = env.edge_energy_fraction();
    if input_edge > 1e-6 {
        return Err(Error::WindowLeakage { fraction: input_edge });
    }
    let out = propagate_periodic(env, medium, depth_fraction);
    let output_edge = out.edge_energy_fraction();
    if output_edge > 1e-4 {
        return Err(Error::WindowLeakage { fraction: output_edge });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TAU: f64 = 26.5e-9;

    fn medium(od: f64) -> MediumSpec {
        MediumSpec::new(od, TAU).unwrap()
    }

    fn envelope(sigma: f64, od: f64) -> (SampledEnvelope, MediumSpec) {
        let m = medium(od);
        let p = PulseSpec::gaussian(sigma, 0.0, 1.0).unwrap();
        (SampledEnvelope::from_pulse(&p, &TimeGrid::for_pulse(&p, &m)).unwrap(), m)
    }

    #[test]
    fn lorentzian_values() {
        let m = medium(4.0);
        assert_eq!(lorentzian_od(0.0, &m), 4.0);
        assert!((lorentzian_od(m.gamma / 2.0, &m) - 2.0).abs() < 1e-15);
        let delta = 2.0 * PI * 5.6e6;
        let x: f64 = 2.0 * delta * 26.5e-9;
        let expected = 4.0 / (1.0 + x.powi(2));
        assert!((lorentzian_od(delta, &m) - expected).abs() < 1e-14);
        assert!((expected - 0.893_32).abs() < 1e-4);
    }

    #[test]
    fn dispersion_values() {
        let m = medium(4.0);
        assert_eq!(dispersion_phase(0.0, &m), 0.0);
        assert!((dispersion_phase(m.gamma / 2.0, &m) + 1.0).abs() < 1e-15);
        assert!((dispersion_phase(-m.gamma / 2.0, &m) - 1.0).abs() < 1e-15);
        for k in -50..=50 {
            let d = k as f64 * 1.3e6;
            assert_eq!(dispersion_phase(d, &m), -dispersion_phase(-d, &m));
            assert_eq!(lorentzian_od(d, &m), lorentzian_od(-d, &m));
        }
    }

    #[test]
    fn medium_rejects_bad_values() {
        assert!(MediumSpec::new(-1.0, TAU).is_err());
        assert!(MediumSpec::new(1.0, 0.0).is_err());
        assert!(medium(1.0).with_length_fraction(1.5).is_err());
    }

    #[test]
    fn empty_medium_is_identity() {
        let (env, m) = envelope(10e-9, 0.0);
        let out = propagate_spectral(&env, &m, 1.0).unwrap();
        for (a, b) in env.samples.iter().zip(&out.samples) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn long_pulse_recovers_beer_lambert() {
        let (env, m) = envelope(1e-6, 4.0);
        let out = propagate_spectral(&env, &m, 1.0).unwrap();
        let ratio = out.photon_number() / env.photon_number();
        assert!((ratio - (-4.0f64).exp()).abs() < 1e-4, "{ratio}");
    }

    #[test]
    fn broadband_absorption_near_sixty_percent() {
        let (env, m) = envelope(10e-9, 4.0);
        let out = propagate_spectral(&env, &m, 1.0).unwrap();
        let t = out.photon_number() / env.photon_number();
        assert!((1.0 - t - 0.60).abs() < 0.05, "P_L = {}", 1.0 - t);
    }

    #[test]
    fn pure_tones_follow_beer_lambert() {
        let m = medium(4.0);
        let n = 256;
        let dt = 0.5e-9;
        for k in [0usize, 1, 3, 17, 128, 200, 255] {
            let w = 2.0 * PI * k as f64 / (n as f64 * dt);
            let samples = (0..n).map(|i| Complex64::from_polar(1.0, w * dt * i as f64)).collect();
            let env = SampledEnvelope::new(0.0, dt, samples, 0.0).unwrap();
            let out = propagate_periodic(&env, &m, 1.0);
            let signed = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
            let delta = -signed * 2.0 * PI / (n as f64 * dt);
            let ratio = out.photon_number() / env.photon_number();
            assert!((ratio - (-m.od_at(delta)).exp()).abs() < 1e-6);
        }
    }

    #[test]
    fn propagation_is_causal() {
        // Long trailing window so the free-induction tail does not wrap.
        let m = medium(4.0);
        let p = PulseSpec::gaussian(10e-9, 0.0, 1.0).unwrap();
        let grid = TimeGrid {
            t0: -150e-9,
            dt: 0.15e-9,
            len: 8192,
        };
        let env = SampledEnvelope::from_pulse(&p, &grid).unwrap();
        let out = propagate_spectral(&env, &m, 1.0).unwrap();
        let peak = env.samples[env.peak_index()].norm();
        let lead = (100e-9 / env.dt) as usize; // up to -5 sigma
        for i in 0..lead {
            assert!(out.samples[i].norm() <= env.samples[i].norm() + 1e-9 * peak);
        }
    }

    #[test]
    fn window_leakage_is_reported() {
        let m = medium(4.0);
        let p = PulseSpec::gaussian(10e-9, 0.0, 1.0).unwrap();
        // Grid that ends shortly after the pulse: the free-induction tail wraps.
        let grid = TimeGrid {
            t0: -80e-9,
            dt: 0.1e-9,
            len: 1600,
        };
        let env = SampledEnvelope::from_pulse(&p, &grid).unwrap();
        let err = propagate_spectral(&env, &m, 1.0).unwrap_err();
        assert!(matches!(err, Error::WindowLeakage { .. }), "{err}");
    }

    #[test]
    fn spectrum_widths() {
        let s10 = pulse_spectrum(&PulseSpec::gaussian(10e-9, 0.0, 1.0).unwrap());
        let s50 = pulse_spectrum(&PulseSpec::gaussian(50e-9, 0.0, 1.0).unwrap());
        assert!((s10.rms_hz() / 1e6 - 7.96).abs() < 5e-3);
        assert!((s50.rms_hz() / 1e6 - 1.59).abs() < 5e-3);
        let table = s10.tabulate(4001, 10.0);
        let step = table[1].0 - table[0].0;
        let integral: f64 = table.iter().map(|(_, d)| d).sum::<f64>() * step
            - 0.5 * step * (table[0].1 + table[4000].1);
        assert!((integral - 1.0).abs() < 1e-6);
    }

    #[test]
    fn transmission_limits() {
        let p = PulseSpec::gaussian(10e-9, 0.0, 1.0).unwrap();
        assert!((transmission_probability(&p, &medium(0.0)).unwrap() - 1.0).abs() < 1e-12);
        let narrow = PulseSpec::gaussian(f64::INFINITY, 0.0, 1.0).unwrap();
        assert!((transmission_probability(&narrow, &medium(4.0)).unwrap() - (-4.0f64).exp()).abs() < 1e-15);
        let long = PulseSpec::gaussian(1e-3, 0.0, 1.0).unwrap();
        assert!((transmission_probability(&long, &medium(4.0)).unwrap() - (-4.0f64).exp()).abs() < 1e-8);
        let p_l = 1.0 - transmission_probability(&p, &medium(4.0)).unwrap();
        assert!((p_l - 0.60).abs() < 0.05);
    }

    #[test]
    fn quadrature_matches_time_domain() {
        for sigma in [10e-9, 50e-9, 1e-6] {
            for od in [0.01, 1.0, 4.0] {
                let (env, m) = envelope(sigma, od);
                let out = propagate_spectral(&env, &m, 1.0).unwrap();
                let ratio = out.photon_number() / env.photon_number();
                let p = PulseSpec::gaussian(sigma, 0.0, 1.0).unwrap();
                let pt = transmission_probability(&p, &m).unwrap();
                assert!((ratio - pt).abs() < 1e-3, "sigma {sigma} od {od}: {ratio} vs {pt}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn energy_never_increases_with_depth(od in 0.0f64..6.0, d1 in 0.0f64..1.0, d2 in 0.0f64..1.0, det in -3e7f64..3e7) {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let m = medium(od);
            let p = PulseSpec::gaussian(10e-9, det, 1.0).unwrap();
            let env = SampledEnvelope::from_pulse(&p, &TimeGrid::for_pulse(&p, &m)).unwrap();
            let e_lo = propagate_periodic(&env, &m, lo).photon_number();
            let e_hi = propagate_periodic(&env, &m, hi).photon_number();
            prop_assert!(e_hi <= e_lo * (1.0 + 1e-12));
            prop_assert!(e_lo <= env.photon_number() * (1.0 + 1e-12));
        }

        #[test]
        fn propagation_composes(od in 0.0f64..6.0, d1 in 0.0f64..1.0, frac in 0.0f64..1.0) {
            let d2 = d1 + (1.0 - d1) * frac;
            let m = medium(od);
            let p = PulseSpec::gaussian(10e-9, 0.0, 1.0).unwrap();
            let env = SampledEnvelope::from_pulse(&p, &TimeGrid::for_pulse(&p, &m)).unwrap();
            let two_step = propagate_periodic(&propagate_periodic(&env, &m, d1), &m, d2 - d1);
            let direct = propagate_periodic(&env, &m, d2);
            let peak = direct.samples.iter().map(|s| s.norm()).fold(0.0, f64::max);
            for (a, b) in two_step.samples.iter().zip(&direct.samples) {
                prop_assert!((a - b).norm() <= 1e-9 * peak.max(1e-300) + 1e-9 * b.norm());
            }
        }
    }
}
