//! Weak-excitation two-level dynamics driven by a sampled envelope.
//!
//! In the linear regime the excited-state amplitude obeys
//! `dc/dt = (i Delta - Gamma/2) c + i Omega(t) / 2` with
//! `Omega(t) = rabi_per_amplitude * s(t)`. The excitation probability
//! `P_e = |c|^2` is split into rectified flows: excitation
//! `max(0, dP_e/dt + Gamma P_e)`, coherent de-excitation
//! `max(0, -dP_e/dt - Gamma P_e)` and spontaneous decay `Gamma P_e`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::medium::{MediumSpec, SampledEnvelope};
use crate::{Error, Result};

/// Peak excitation probability above which the linear amplitude equation is
/// no longer trusted.
pub const WEAK_EXCITATION_LIMIT: f64 = 1e-2;

/// Minimum post-peak coverage of the time grid, in lifetimes.
pub const REQUIRED_DECAY_LIFETIMES: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochConfig {
    /// Spontaneous decay rate, rad/s.
    pub gamma: f64,
    /// Carrier minus atomic resonance, rad/s.
    pub detuning: f64,
    /// Rabi frequency (rad/s) per unit envelope amplitude.
    pub rabi_per_amplitude: f64,
    /// Upper bound on the RK4 step, seconds.
    pub integrator_dt: f64,
}

impl BlochConfig {
    /// A configuration in the weak regime for `env`: the absolute pulse area
    /// is set to 0.05 rad and the step to `min(tau_sp, sigma_env) / 64`.
    pub fn weak(env: &SampledEnvelope, medium: &MediumSpec) -> Self {
        let abs_area = env.dt * env.samples.iter().map(|s| s.norm()).sum::<f64>();
        let rabi = if abs_area > 0.0 { 0.05 / abs_area } else { 1.0 };
        BlochConfig {
            gamma: medium.gamma,
            detuning: env.carrier_detuning,
            rabi_per_amplitude: rabi,
            integrator_dt: medium.tau_sp.min(env.intensity_rms().max(env.dt)) / 64.0,
        }
    }

    /// Largest admissible step for `env`, `min(1/Gamma, sigma_env) / 50`.
    pub fn step_limit(&self, env: &SampledEnvelope) -> f64 {
        let sigma = env.intensity_rms();
        let tau = 1.0 / self.gamma;
        let width = if sigma > 0.0 { tau.min(sigma) } else { tau };
        width / 50.0
    }

    pub fn validate_for(&self, env: &SampledEnvelope) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma", "must be finite and > 0"));
        }
        if !(self.integrator_dt > 0.0) {
            return Err(Error::invalid("integrator_dt", "must be > 0"));
        }
        if !self.rabi_per_amplitude.is_finite() || !self.detuning.is_finite() {
            return Err(Error::invalid("rabi_per_amplitude", "must be finite"));
        }
        let limit = self.step_limit(env);
        if self.integrator_dt > limit {
            return Err(Error::StepTooLarge {
                step: self.integrator_dt,
                limit,
            });
        }
        Ok(())
    }
}

/// Excitation probability history of one atom and its rectified flows.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationRecord {
    pub t0: f64,
    pub dt: f64,
    pub gamma: f64,
    pub pe: Vec<f64>,
    pub up_flow: Vec<f64>,
    pub coh_down_flow: Vec<f64>,
    pub spont_flow: Vec<f64>,
}

impl ExcitationRecord {
    /// Builds the flows of a population history from centered finite
    /// differences (one-sided at the ends).
    pub fn from_populations(t0: f64, dt: f64, gamma: f64, pe: Vec<f64>) -> Self {
        let n = pe.len();
        let mut up = vec![0.0; n];
        let mut coh = vec![0.0; n];
        let spont: Vec<f64> = pe.iter().map(|p| gamma * p).collect();
        for i in 0..n {
            let deriv = if n < 2 {
                0.0
            } else if i == 0 {
                (pe[1] - pe[0]) / dt
            } else if i == n - 1 {
                (pe[n - 1] - pe[n - 2]) / dt
            } else {
                (pe[i + 1] - pe[i - 1]) / (2.0 * dt)
            };
            let net = deriv + spont[i];
            if net > 0.0 {
                up[i] = net;
            } else {
                coh[i] = -net;
            }
        }
        ExcitationRecord {
            t0,
            dt,
            gamma,
            pe,
            up_flow: up,
            coh_down_flow: coh,
            spont_flow: spont,
        }
    }

    pub fn len(&self) -> usize {
        self.pe.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pe.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + self.dt * i as f64
    }

    pub fn peak(&self) -> f64 {
        self.pe.iter().cloned().fold(0.0, f64::max)
    }

    /// True when the final population still exceeds 1e-6 of the peak.
    pub fn decay_truncated(&self) -> bool {
        let peak = self.peak();
        peak > 0.0 && self.pe.last().copied().unwrap_or(0.0) > 1e-6 * peak
    }

    /// `integral(up - coh_down - spont) dt - (P_e(end) - P_e(start))`.
    pub fn flow_balance_residual(&self) -> f64 {
        let net: Vec<f64> = (0..self.len())
            .map(|i| self.up_flow[i] - self.coh_down_flow[i] - self.spont_flow[i])
            .collect();
        trapezoid(&net, self.dt) - (self.pe[self.len() - 1] - self.pe[0])
    }
}

pub(crate) fn trapezoid(ys: &[f64], dt: f64) -> f64 {
    match ys.len() {
        0 | 1 => 0.0,
        n => dt * (ys.iter().sum::<f64>() - 0.5 * (ys[0] + ys[n - 1])),
    }
}

/// Integrates the weak-excitation amplitude equation with fixed-step RK4.
/// The drive is linearly interpolated between envelope samples and each
/// sample interval is split into the smallest number of equal substeps that
/// keeps the step at or below `cfg.integrator_dt`.
pub fn integrate_weak_bloch(env: &SampledEnvelope, cfg: &BlochConfig) -> Result<ExcitationRecord> {
    env.validate()?;
    cfg.validate_for(env)?;
    let peak_i = env.peak_index();
    let peak_t = env.time(peak_i);
    let covered = env.t_end() - peak_t;
    let required = REQUIRED_DECAY_LIFETIMES / cfg.gamma;
    if env.samples[peak_i].norm() > 0.0 && covered < required {
        return Err(Error::GridTooShort { covered, required });
    }

    let substeps = (env.dt / cfg.integrator_dt - 1e-9).ceil().max(1.0) as usize;
    let h = env.dt / substeps as f64;
    let lambda = Complex64::new(-0.5 * cfg.gamma, cfg.detuning);
    let half_i = Complex64::new(0.0, 0.5);
    let rhs = |c: Complex64, omega: Complex64| lambda * c + half_i * omega;

    let n = env.len();
    let mut pe = Vec::with_capacity(n);
    let mut c = Complex64::new(0.0, 0.0);
    pe.push(0.0);
    for i in 0..n - 1 {
        let o0 = env.samples[i] * cfg.rabi_per_amplitude;
        let o1 = env.samples[i + 1] * cfg.rabi_per_amplitude;
        let omega = |frac: f64| o0 + (o1 - o0) * frac;
        for j in 0..substeps {
            let m = substeps as f64;
            let (fa, fb, fe) = (j as f64 / m, (j as f64 + 0.5) / m, (j as f64 + 1.0) / m);
            let k1 = rhs(c, omega(fa));
            let k2 = rhs(c + k1 * (0.5 * h), omega(fb));
            let k3 = rhs(c + k2 * (0.5 * h), omega(fb));
            let k4 = rhs(c + k3 * h, omega(fe));
            c += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        pe.push(c.norm_sqr());
    }

    let rec = ExcitationRecord::from_populations(env.t0, env.dt, cfg.gamma, pe);
    let peak = rec.peak();
    if peak >= WEAK_EXCITATION_LIMIT {
        return Err(Error::NotWeak { peak });
    }
    Ok(rec)
}

/// Phase of the envelope's leading edge (first sample above 1e-3 of peak),
/// used as the projection axis for area and phase-flip diagnostics.
pub fn reference_phase(env: &SampledEnvelope) -> f64 {
    let max = env.samples.iter().map(|s| s.norm()).fold(0.0, f64::max);
    env.samples
        .iter()
        .find(|s| s.norm() >= 1e-3 * max)
        .map(|s| s.arg())
        .unwrap_or(0.0)
}

fn projection(env: &SampledEnvelope) -> Vec<f64> {
    let rot = Complex64::from_polar(1.0, -reference_phase(env));
    env.samples.iter().map(|s| (s * rot).re).collect()
}

/// Pulse area `integral Omega(t) dt` along the initial phase axis; portions
/// with flipped phase count negatively.
pub fn pulse_area(env: &SampledEnvelope, cfg: &BlochConfig) -> f64 {
    cfg.rabi_per_amplitude * trapezoid(&projection(env), env.dt)
}

/// Negative lobes shallower than this fraction of the peak amplitude are not
/// reported as phase flips.
pub const PHASE_FLIP_FLOOR: f64 = 1e-2;

/// Earliest time at which the envelope's projection on the initial phase axis
/// crosses zero and then stays negative for at least three samples, reaching
/// below `-PHASE_FLIP_FLOOR` times the peak amplitude within that run.
pub fn detect_phase_flip(env: &SampledEnvelope) -> Option<f64> {
    let max = env.samples.iter().map(|s| s.norm()).fold(0.0, f64::max);
    if max == 0.0 {
        return None;
    }
    let start = env.samples.iter().position(|s| s.norm() >= 1e-3 * max)?;
    let p = projection(env);
    let floor = PHASE_FLIP_FLOOR * max;
    let mut k = start + 1;
    while k < p.len() {
        if p[k - 1] >= 0.0 && p[k] < 0.0 {
            let mut j = k;
            let mut deep = false;
            while j < p.len() && p[j] < 0.0 {
                deep |= p[j] < -floor;
                j += 1;
            }
            if j - k >= 3 && deep {
                let frac = p[k - 1] / (p[k - 1] - p[k]);
                return Some(env.time(k - 1) + frac * env.dt);
            }
            k = j;
        }
        k += 1;
    }
    None
}

/// Time-integral of the excitation probability (trapezoid rule).
pub fn excitation_time(rec: &ExcitationRecord) -> f64 {
    if rec.decay_truncated() {
        log::warn!(
            "excitation record ends at {:.3e} of its peak population; the decay is truncated",
            rec.pe.last().copied().unwrap_or(0.0) / rec.peak()
        );
    }
    trapezoid(&rec.pe, rec.dt)
}

/// Probability that an excitation present at each instant ultimately leaves
/// by coherent forward emission rather than spontaneous decay.
#[derive(Debug, Clone, PartialEq)]
pub struct FateProfile {
    pub t0: f64,
    pub dt: f64,
    pub f_coh: Vec<f64>,
    /// Largest amount by which a value had to be clamped into [0, 1].
    pub max_clamp: f64,
}

/// Backward integration of `df/dt = (Gamma + h) f - h` from `f = 0` at the end
/// of the grid, with the coherent removal hazard `h = coh_down / P_e` held at
/// its interval average over each step (exact for piecewise-constant rates).
pub fn fate_fractions(rec: &ExcitationRecord) -> Result<FateProfile> {
    let n = rec.len();
    let mut hazard = vec![0.0; n];
    for (i, slot) in hazard.iter_mut().enumerate() {
        let coh = rec.coh_down_flow[i];
        if coh > 0.0 {
            let h = coh / rec.pe[i];
            if !h.is_finite() {
                return Err(Error::HazardNotFinite { index: i });
            }
            *slot = h;
        }
    }
    let mut f = vec![0.0; n];
    let mut max_clamp: f64 = 0.0;
    for i in (0..n.saturating_sub(1)).rev() {
        let h = 0.5 * (hazard[i] + hazard[i + 1]);
        let rate = rec.gamma + h;
        let decay = (-rate * rec.dt).exp();
        let raw = f[i + 1] * decay + h / rate * (1.0 - decay);
        let clamped = raw.clamp(0.0, 1.0);
        max_clamp = max_clamp.max((raw - clamped).abs());
        f[i] = clamped;
    }
    if max_clamp > 1e-6 {
        log::warn!("fate fractions clamped by up to {max_clamp:.3e}");
    }
    Ok(FateProfile {
        t0: rec.t0,
        dt: rec.dt,
        f_coh: f,
        max_clamp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::{propagate_spectral, PulseSpec, TimeGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TAU: f64 = 26.5e-9;

    fn pulse_env(sigma: f64, od: f64, depth: f64) -> (SampledEnvelope, MediumSpec) {
        let m = MediumSpec::new(od, TAU).unwrap();
        let p = PulseSpec::gaussian(sigma, 0.0, 1.0).unwrap();
        let env = SampledEnvelope::from_pulse(&p, &TimeGrid::for_pulse(&p, &m)).unwrap();
        (propagate_spectral(&env, &m, depth).unwrap(), m)
    }

    #[test]
    fn zero_drive_gives_zero_population() {
        let (mut env, m) = pulse_env(10e-9, 0.0, 0.0);
        let cfg = BlochConfig::weak(&env, &m);
        env.samples.iter_mut().for_each(|s| *s = Complex64::new(0.0, 0.0));
        let rec = integrate_weak_bloch(&env, &cfg).unwrap();
        assert!(rec.pe.iter().all(|&p| p == 0.0));
        assert!(rec.up_flow.iter().chain(&rec.coh_down_flow).chain(&rec.spont_flow).all(|&x| x == 0.0));
        assert_eq!(excitation_time(&rec), 0.0);
        assert_eq!(pulse_area(&env, &cfg), 0.0);
    }

    #[test]
    fn impulse_excitation_decays_exponentially() {
        let gamma = 1.0 / TAU;
        let (env, m) = pulse_env(0.1e-9, 0.0, 0.0);
        let mut cfg = BlochConfig::weak(&env, &m);
        let theta = 0.01;
        cfg.rabi_per_amplitude *= theta / pulse_area(&env, &cfg);
        let rec = integrate_weak_bloch(&env, &cfg).unwrap();
        let expected_total = (theta / 2.0).powi(2) * TAU;
        let total = excitation_time(&rec);
        assert!((total / expected_total - 1.0).abs() < 0.01, "{total} vs {expected_total}");
        for t in [10e-9_f64, 50e-9, 100e-9] {
            let i = ((t - rec.t0) / rec.dt as f64).round() as usize;
            let expected = (theta / 2.0).powi(2) * (-gamma * rec.time(i)).exp();
            assert!((rec.pe[i] / expected - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn constant_short_drive_is_perturbative() {
        let dt: f64 = 2e-12;
        let duration: f64 = 0.5e-9;
        let on = (duration / dt).round() as usize;
        let n = on + (9.0 * TAU / dt) as usize;
        let samples = (0..n)
            .map(|i| Complex64::new(if i <= on { 1.0 } else { 0.0 }, 0.0))
            .collect();
        let env = SampledEnvelope::new(0.0, dt, samples, 0.0).unwrap();
        let omega = 2e7;
        let cfg = BlochConfig {
            gamma: 1.0 / TAU,
            detuning: 0.0,
            rabi_per_amplitude: omega,
            integrator_dt: dt,
        };
        let rec = integrate_weak_bloch(&env, &cfg).unwrap();
        let expected = (omega * duration / 2.0).powi(2);
        assert!((rec.pe[on] / expected - 1.0).abs() < 0.02);
    }

    #[test]
    fn doubling_drive_quadruples_excitation_time() {
        let (env, m) = pulse_env(10e-9, 4.0, 1.0);
        let cfg = BlochConfig::weak(&env, &m);
        let double = BlochConfig {
            rabi_per_amplitude: 2.0 * cfg.rabi_per_amplitude,
            ..cfg
        };
        let a = excitation_time(&integrate_weak_bloch(&env, &cfg).unwrap());
        let b = excitation_time(&integrate_weak_bloch(&env, &double).unwrap());
        assert!((b / a - 4.0).abs() < 0.04);
    }

    #[test]
    fn flows_balance_and_are_exclusive() {
        for (od, depth) in [(0.0, 0.0), (4.0, 0.5), (4.0, 1.0)] {
            let (env, m) = pulse_env(10e-9, od, depth);
            let rec = integrate_weak_bloch(&env, &BlochConfig::weak(&env, &m)).unwrap();
            let spont = trapezoid(&rec.spont_flow, rec.dt);
            assert!(rec.flow_balance_residual().abs() <= 1e-6 * spont);
            for i in 0..rec.len() {
                assert!(rec.up_flow[i] >= 0.0 && rec.coh_down_flow[i] >= 0.0);
                assert!(rec.up_flow[i] == 0.0 || rec.coh_down_flow[i] == 0.0);
                assert!((0.0..=1.0).contains(&rec.pe[i]));
            }
        }
    }

    #[test]
    fn global_phase_does_not_change_population() {
        let (env, m) = pulse_env(10e-9, 4.0, 1.0);
        let cfg = BlochConfig::weak(&env, &m);
        let mut rotated = env.clone();
        let phase = Complex64::from_polar(1.0, 1.234);
        rotated.samples.iter_mut().for_each(|s| *s *= phase);
        let a = integrate_weak_bloch(&env, &cfg).unwrap();
        let b = integrate_weak_bloch(&rotated, &cfg).unwrap();
        for (x, y) in a.pe.iter().zip(&b.pe) {
            assert!((x - y).abs() <= 1e-12 * a.peak());
        }
    }

    #[test]
    fn halving_the_step_is_converged() {
        let (env, m) = pulse_env(10e-9, 4.0, 1.0);
        let cfg = BlochConfig::weak(&env, &m);
        let fine = BlochConfig {
            integrator_dt: cfg.integrator_dt / 2.0,
            ..cfg
        };
        let a = excitation_time(&integrate_weak_bloch(&env, &cfg).unwrap());
        let b = excitation_time(&integrate_weak_bloch(&env, &fine).unwrap());
        assert!(((a - b) / b).abs() < 1e-4);
    }

    #[test]
    fn narrowband_pulses_have_no_coherent_return() {
        for od in [0.5, 2.0, 4.0] {
            let (env, m) = pulse_env(1e-6, od, 1.0);
            let rec = integrate_weak_bloch(&env, &BlochConfig::weak(&env, &m)).unwrap();
            let coh = trapezoid(&rec.coh_down_flow, rec.dt);
            let spont = trapezoid(&rec.spont_flow, rec.dt);
            assert!(coh < 1e-3 * spont, "od {od}: {coh} vs {spont}");
        }
    }

    #[test]
    fn config_errors() {
        let (env, m) = pulse_env(10e-9, 0.0, 0.0);
        let cfg = BlochConfig::weak(&env, &m);
        let coarse = BlochConfig {
            integrator_dt: 1e-9,
            ..cfg
        };
        assert!(matches!(integrate_weak_bloch(&env, &coarse), Err(Error::StepTooLarge { .. })));
        let strong = BlochConfig {
            rabi_per_amplitude: cfg.rabi_per_amplitude * 100.0,
            ..cfg
        };
        match integrate_weak_bloch(&env, &strong) {
            Err(Error::NotWeak { peak }) => assert!(peak >= 1e-2),
            other => panic!("expected NotWeak, got {other:?}"),
        }
        let short = SampledEnvelope::new(env.t0, env.dt, env.samples[..600].to_vec(), 0.0).unwrap();
        assert!(matches!(integrate_weak_bloch(&short, &cfg), Err(Error::GridTooShort { .. })));
    }

    #[test]
    fn gaussian_area_matches_closed_form() {
        let (env, m) = pulse_env(10e-9, 0.0, 0.0);
        let cfg = BlochConfig::weak(&env, &m);
        let peak = env.samples[env.peak_index()].re;
        let analytic = cfg.rabi_per_amplitude * peak * 2.0 * 10e-9 * std::f64::consts::PI.sqrt();
        assert!((pulse_area(&env, &cfg) / analytic - 1.0).abs() < 1e-6);
    }

    #[test]
    fn area_decays_at_half_the_resonant_od() {
        let (env, m) = pulse_env(10e-9, 4.0, 0.0);
        let cfg = BlochConfig::weak(&env, &m);
        let a0 = pulse_area(&env, &cfg);
        for d in [0.25, 0.5, 1.0] {
            let out = propagate_spectral(&env, &m, d).unwrap();
            let ratio = pulse_area(&out, &cfg) / a0;
            let oracle = m.transfer(0.0, d).re;
            assert!((ratio / oracle - 1.0).abs() < 0.01);
            assert!((oracle - (-2.0 * d).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn phase_flip_detection() {
        let (env, _) = pulse_env(10e-9, 4.0, 0.0);
        assert_eq!(detect_phase_flip(&env), None);
        let (out, _) = pulse_env(10e-9, 4.0, 1.0);
        let flip = detect_phase_flip(&out).expect("flip after OD 4");
        assert!(flip > 0.0 && flip < 40e-9, "{flip}");
        for d in [0.25, 0.5, 1.0] {
            let (thin, _) = pulse_env(10e-9, 0.01, d);
            assert_eq!(detect_phase_flip(&thin), None);
        }
    }

    #[test]
    fn fate_is_zero_without_coherent_flow() {
        let gamma = 1.0 / TAU;
        let n = 1000;
        let pe: Vec<f64> = (0..n).map(|i| 1e-4 * (-(i as f64) * 1e-10 * gamma).exp()).collect();
        let rec = ExcitationRecord {
            t0: 0.0,
            dt: 1e-10,
            gamma,
            pe: pe.clone(),
            up_flow: vec![0.0; n],
            coh_down_flow: vec![0.0; n],
            spont_flow: pe.iter().map(|p| gamma * p).collect(),
        };
        let fate = fate_fractions(&rec).unwrap();
        assert!(fate.f_coh.iter().all(|&f| f == 0.0));
        assert_eq!(fate.max_clamp, 0.0);
    }

    #[test]
    fn constant_hazard_gives_competing_exponential_fraction() {
        let gamma = 1.0 / TAU;
        let h = 0.5 * gamma;
        let n = 20_000;
        let dt = 0.05e-9;
        let pe = vec![1e-4; n];
        let rec = ExcitationRecord {
            t0: 0.0,
            dt,
            gamma,
            pe: pe.clone(),
            up_flow: vec![0.0; n],
            coh_down_flow: pe.iter().map(|p| h * p).collect(),
            spont_flow: pe.iter().map(|p| gamma * p).collect(),
        };
        let fate = fate_fractions(&rec).unwrap();
        assert!((fate.f_coh[0] - h / (gamma + h)).abs() < 1e-9);
        assert_eq!(fate.f_coh[n - 1], 0.0);
    }

    #[test]
    fn infinite_hazard_is_reported() {
        let pe = vec![0.0, 0.0, 0.0];
        let mut rec = ExcitationRecord::from_populations(0.0, 1e-9, 1.0 / TAU, pe);
        rec.coh_down_flow[1] = 1.0;
        assert!(matches!(fate_fractions(&rec), Err(Error::HazardNotFinite { index: 1 })));
    }

    #[test]
    fn fate_vanishes_after_last_coherent_flow() {
        let (env, m) = pulse_env(10e-9, 4.0, 1.0);
        let rec = integrate_weak_bloch(&env, &BlochConfig::weak(&env, &m)).unwrap();
        let fate = fate_fractions(&rec).unwrap();
        let last = rec.coh_down_flow.iter().rposition(|&x| x > 0.0).unwrap();
        assert!(fate.f_coh[last + 1..].iter().all(|&f| f == 0.0));
        assert!(fate.f_coh.iter().all(|f| (0.0..=1.0).contains(f)));
    }

    /// Tokens are born at rate `up_flow` and die either spontaneously
    /// (hazard Gamma) or through the pooled coherent removal (hazard
    /// coh_down / P_e). The empirical coherent fraction must match the
    /// `up`-weighted fate fraction.
    #[test]
    fn token_monte_carlo_matches_fate_fractions() {
        let (env, m) = pulse_env(10e-9, 4.0, 1.0);
        let rec = integrate_weak_bloch(&env, &BlochConfig::weak(&env, &m)).unwrap();
        let fate = fate_fractions(&rec).unwrap();
        let n = rec.len();
        let hazard: Vec<f64> = (0..n)
            .map(|i| if rec.pe[i] > 0.0 { rec.coh_down_flow[i] / rec.pe[i] } else { 0.0 })
            .collect();
        let birth_weight: f64 = rec.up_flow.iter().sum();
        let predicted = rec.up_flow.iter().zip(&fate.f_coh).map(|(u, f)| u * f).sum::<f64>() / birth_weight;

        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0;
        for u in &rec.up_flow {
            acc += u / birth_weight;
            cdf.push(acc);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tokens = 100_000;
        let mut coherent = 0u64;
        for _ in 0..tokens {
            let u: f64 = rng.random();
            let mut i = cdf.partition_point(|&c| c < u).min(n - 1);
            while i + 1 < n {
                let h = 0.5 * (hazard[i] + hazard[i + 1]);
                let rate = rec.gamma + h;
                if rng.random::<f64>() < 1.0 - (-rate * rec.dt).exp() {
                    if rng.random::<f64>() < h / rate {
                        coherent += 1;
                    }
                    break;
                }
                i += 1;
            }
        }
        let frac = coherent as f64 / tokens as f64;
        let se = (predicted * (1.0 - predicted) / tokens as f64).sqrt();
        assert!(predicted > 0.05, "{predicted}");
        assert!((frac - predicted).abs() < 3.0 * se, "{frac} vs {predicted} (se {se})");
    }
}
