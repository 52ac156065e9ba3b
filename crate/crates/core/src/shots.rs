//! Synthetic shot-level data: photon-number statistics, click flags and
//! 36-sample probe phase traces carrying the excitation signal plus drift,
//! a correlated damped oscillation and white phase noise.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::format::{FileHeader, ShotWriter};
use crate::medium::{transmission_probability, MediumSpec, PulseSpec};
use crate::par::{self, Execution};
use crate::stats::Moments;
use crate::{Error, Result};

/// Probe phase per transmitted-photon anchor points: (probe detuning in Hz,
/// per-photon peak phase in rad).
pub const PHI0_ANCHOR_RED: (f64, f64) = (-5.6e6, -20.0e-6);
pub const PHI0_ANCHOR_BLUE: (f64, f64) = (4.7e6, 16.4e-6);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Oscillation {
    /// Phase amplitude (rad) per unit of the shared fluctuation.
    pub amplitude: f64,
    pub period: f64,
    pub damping: f64,
}

impl Default for Oscillation {
    fn default() -> Self {
        Oscillation {
            amplitude: 0.0,
            period: 500e-9,
            damping: 300e-9,
        }
    }
}

/// Parameters of a synthetic campaign. Times in seconds, rates in rad/s,
/// bandwidths in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mean_photons: f64,
    pub p_transmit: f64,
    pub eta_detect: f64,
    pub dark_prob: f64,
    /// Probe phase per excited atom. `None` derives it from the anchors.
    pub phi_atom: Option<f64>,
    pub probe_detuning: f64,
    pub tau_sp: f64,
    pub shot_len: f64,
    pub n_samples: usize,
    pub sample_dt: f64,
    pub meas_bandwidth: f64,
    pub pulse_rms: f64,
    /// Sample index at which the pulse leading edge (center - 2 rms) arrives.
    pub arrival_sample: usize,
    pub phase_noise_rms: f64,
    /// RMS of the per-shot Legendre coefficients P0..P3 of the drift.
    pub drift: [f64; 4],
    pub osc: Oscillation,
    pub prop_noise_s: f64,
    /// Exponent coupling of the shared fluctuation to the transmission,
    /// `P_T -> P_T^(1 + kappa eps)`.
    pub od_coupling: f64,
    pub tau_t_frac: f64,
    /// `None` uses `1 - p_transmit * tau_t_frac`, which keeps the mean dwell
    /// per photon equal to `tau0`.
    pub tau_l_frac: Option<f64>,
    pub record_truth: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let p_transmit = transmission_probability(&PulseSpec::default(), &MediumSpec::default())
            .expect("default pulse and medium are valid");
        ExperimentConfig {
            mean_photons: 34.0,
            p_transmit,
            eta_detect: 0.0,
            dark_prob: 0.01,
            phi_atom: None,
            probe_detuning: 2.0 * PI * PHI0_ANCHOR_RED.0,
            tau_sp: 26.5e-9,
            shot_len: 576e-9,
            n_samples: 36,
            sample_dt: 16e-9,
            meas_bandwidth: 25e6,
            pulse_rms: 10e-9,
            arrival_sample: 11,
            phase_noise_rms: 0.15,
            drift: [0.02, 0.02, 0.01, 0.01],
            osc: Oscillation::default(),
            prop_noise_s: 0.0,
            od_coupling: 0.0,
            tau_t_frac: 0.77,
            tau_l_frac: None,
            record_truth: false,
        }
        .with_click_rate(0.25)
        .expect("default click rate is reachable")
    }
}

fn check_prob(name: &'static str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("{p} outside [0, 1]")))
    }
}

fn check_nonneg(name: &'static str, x: f64) -> Result<()> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("{x} must be finite and >= 0")))
    }
}

fn check_pos(name: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && !x.is_nan() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("{x} must be > 0")))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        check_nonneg("mean_photons", self.mean_photons)?;
        check_prob("p_transmit", self.p_transmit)?;
        check_prob("eta_detect", self.eta_detect)?;
        check_prob("dark_prob", self.dark_prob)?;
        if let Some(p) = self.phi_atom {
            if !p.is_finite() {
                return Err(Error::invalid("phi_atom", "must be finite"));
            }
        }
        if !self.probe_detuning.is_finite() {
            return Err(Error::invalid("probe_detuning", "must be finite"));
        }
        check_pos("tau_sp", self.tau_sp)?;
        check_pos("sample_dt", self.sample_dt)?;
        check_pos("meas_bandwidth", self.meas_bandwidth)?;
        check_pos("pulse_rms", self.pulse_rms)?;
        if self.n_samples < 8 {
            return Err(Error::invalid("n_samples", "need at least 8 samples"));
        }
        if self.n_samples as f64 * self.sample_dt > self.shot_len * (1.0 + 1e-12) {
            return Err(Error::invalid("shot_len", "shorter than n_samples * sample_dt"));
        }
        if self.arrival_sample >= self.n_samples {
            return Err(Error::invalid("arrival_sample", "beyond the last sample"));
        }
        check_nonneg("phase_noise_rms", self.phase_noise_rms)?;
        for d in self.drift {
            check_nonneg("drift", d)?;
        }
        check_nonneg("osc.amplitude", self.osc.amplitude)?;
        check_pos("osc.period", self.osc.period)?;
        check_pos("osc.damping", self.osc.damping)?;
        check_nonneg("prop_noise_s", self.prop_noise_s)?;
        if self.prop_noise_s > 0.3 {
            return Err(Error::invalid("prop_noise_s", "above 0.3 the Gaussian fluctuation model breaks down"));
        }
        if !self.od_coupling.is_finite() {
            return Err(Error::invalid("od_coupling", "must be finite"));
        }
        check_nonneg("tau_t_frac", self.tau_t_frac)?;
        check_nonneg("tau_l_frac", self.tau_l_frac())?;
        if self.p_transmit == 1.0 && self.phi_atom.is_none() {
            return Err(Error::invalid("p_transmit", "tau0 vanishes at P_T = 1; give phi_atom explicitly"));
        }
        if !(0.05..=0.5).contains(&self.phase_noise_rms) {
            log::warn!("phase_noise_rms {} rad is outside the realistic 0.05-0.5 range", self.phase_noise_rms);
        }
        Ok(())
    }

    /// Sets `eta_detect` so that the analytic click rate equals `rate`.
    pub fn with_click_rate(mut self, rate: f64) -> Result<Self> {
        let lambda = self.mean_photons * self.p_transmit;
        if !(rate > self.dark_prob && rate < 1.0) {
            return Err(Error::invalid("click_rate", format!("{rate} must lie in (dark_prob, 1)")));
        }
        let x = -((1.0 - rate) / (1.0 - self.dark_prob)).ln();
        if !(lambda > 0.0) || x > lambda {
            return Err(Error::invalid("click_rate", format!("{rate} unreachable with eta <= 1")));
        }
        self.eta_detect = x / lambda;
        Ok(self)
    }

    pub fn p_loss(&self) -> f64 {
        1.0 - self.p_transmit
    }

    /// Dwell per incident photon, seconds.
    pub fn tau0(&self) -> f64 {
        self.p_loss() * self.tau_sp
    }

    pub fn tau_l_frac(&self) -> f64 {
        self.tau_l_frac.unwrap_or(1.0 - self.p_transmit * self.tau_t_frac)
    }

    /// Mean detected-photon number `eta P_T mu`.
    pub fn mean_detected(&self) -> f64 {
        self.eta_detect * self.p_transmit * self.mean_photons
    }

    /// Analytic click probability for `od_coupling = 0`, averaging over the
    /// Gaussian shared fluctuation.
    pub fn expected_click_rate(&self) -> f64 {
        let x = self.mean_detected();
        let s = self.prop_noise_s;
        1.0 - (1.0 - self.dark_prob) * (-x + 0.5 * x * x * s * s).exp()
    }

    /// Mean dwell per shot (seconds) for `od_coupling = 0`.
    pub fn expected_dwell(&self) -> f64 {
        self.mean_photons
            * (self.p_loss() * self.tau_l_frac() * self.tau_sp + self.p_transmit * self.tau_t_frac * self.tau0())
    }

    /// Per-photon peak phase at the configured probe detuning.
    pub fn phi0_target(&self) -> f64 {
        phi0_at_detuning(self.probe_detuning, self.tau_sp)
    }

    pub fn phi_atom(&self, template: &XpsTemplate) -> f64 {
        self.phi_atom
            .unwrap_or_else(|| self.phi0_target() / (self.tau0() * template.peak_per_dwell))
    }

    pub fn sample_time(&self, k: usize) -> f64 {
        k as f64 * self.sample_dt
    }

    pub fn pulse_center(&self) -> f64 {
        self.sample_time(self.arrival_sample) + 2.0 * self.pulse_rms
    }

    /// Normalized sample coordinate in [-1, 1].
    pub fn unit_time(&self, k: usize) -> f64 {
        2.0 * k as f64 / (self.n_samples - 1) as f64 - 1.0
    }

    /// Shape of the correlated oscillation at sample `k`, starting at the
    /// pulse arrival.
    pub fn osc_shape(&self, k: usize) -> f64 {
        let t = self.sample_time(k) - self.sample_time(self.arrival_sample);
        if t < 0.0 {
            0.0
        } else {
            (-t / self.osc.damping).exp() * (2.0 * PI * t / self.osc.period).cos()
        }
    }

    /// Per-sample phase variance of shots with no photons.
    pub fn background_variance(&self, k: usize) -> f64 {
        let u = self.unit_time(k);
        let drift: f64 = (0..4).map(|j| (self.drift[j] * legendre(j, u)).powi(2)).sum();
        let osc = (self.osc.amplitude * self.prop_noise_s * self.osc_shape(k)).powi(2);
        self.phase_noise_rms.powi(2) + drift + osc
    }
}

/// Dispersive per-photon phase `A g(Delta)`, `g = x / (1 + x^2)`,
/// `x = 2 Delta tau_sp`, with the amplitude fixed by the anchor on the
/// same side of resonance.
pub fn phi0_at_detuning(probe_detuning: f64, tau_sp: f64) -> f64 {
    let g = |delta: f64| {
        let x = 2.0 * delta * tau_sp;
        x / (1.0 + x * x)
    };
    let (hz, phi) = if probe_detuning < 0.0 {
        PHI0_ANCHOR_RED
    } else {
        PHI0_ANCHOR_BLUE
    };
    phi / g(2.0 * PI * hz) * g(probe_detuning)
}

pub(crate) fn legendre(j: usize, u: f64) -> f64 {
    match j {
        0 => 1.0,
        1 => u,
        2 => 0.5 * (3.0 * u * u - 1.0),
        3 => 0.5 * (5.0 * u * u * u - 3.0 * u),
        _ => unreachable!("drift is cubic"),
    }
}

/// Response `dy/dt = (u - y) / tau` to an input linear between samples,
/// integrated exactly. `tau = 0` passes the input through.
fn one_pole(input: &[f64], h: f64, tau: f64) -> Vec<f64> {
    if tau == 0.0 {
        return input.to_vec();
    }
    let e = (-h / tau).exp();
    let ramp = 1.0 - tau / h * (1.0 - e);
    let mut out = Vec::with_capacity(input.len());
    let mut y = 0.0;
    out.push(y);
    for w in input.windows(2) {
        y = e * y + (1.0 - e) * w[0] + (w[1] - w[0]) * ramp;
        out.push(y);
    }
    out
}

/// Peak-normalized shape of the probe phase response to one unit of dwell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XpsTemplate {
    pub samples: Vec<f64>,
    /// Peak of the un-normalized response per second of dwell, 1/s.
    pub peak_per_dwell: f64,
    pub arrival_sample: usize,
}

pub const TEMPLATE_FINE_STEPS: usize = 320;

impl XpsTemplate {
    /// Gaussian intensity (centered `center`, rms `rms`) convolved with the
    /// unit-area kernel `exp(-t/tau_sp)/tau_sp`, then a single-pole low-pass
    /// of bandwidth `bandwidth`; sampled at `k * sample_dt`.
    pub fn from_physics(
        center: f64,
        rms: f64,
        tau_sp: f64,
        bandwidth: f64,
        n_samples: usize,
        sample_dt: f64,
        arrival_sample: usize,
    ) -> Result<Self> {
        let fine = response_per_dwell(center, rms, tau_sp, bandwidth, n_samples, sample_dt);
        let coarse: Vec<f64> = (0..n_samples).map(|k| fine[k * TEMPLATE_FINE_STEPS]).collect();
        let peak = coarse.iter().cloned().fold(0.0, f64::max);
        if !(peak > 0.0) {
            return Err(Error::invalid("template", "pulse falls outside the sampling window"));
        }
        Ok(XpsTemplate {
            samples: coarse.iter().map(|x| x / peak).collect(),
            peak_per_dwell: peak,
            arrival_sample,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Un-normalized response to one second of dwell on a grid `TEMPLATE_FINE_STEPS`
/// times finer than the sampling grid, extended to the end of the last
/// sample interval.
pub fn response_per_dwell(center: f64, rms: f64, tau_sp: f64, bandwidth: f64, n_samples: usize, sample_dt: f64) -> Vec<f64> {
    let h = sample_dt / TEMPLATE_FINE_STEPS as f64;
    let n = n_samples * TEMPLATE_FINE_STEPS + 1;
    let norm = 1.0 / (rms * (2.0 * PI).sqrt());
    let intensity: Vec<f64> = (0..n)
        .map(|i| {
            let z = (i as f64 * h - center) / rms;
            norm * (-0.5 * z * z).exp()
        })
        .collect();
    let excited = one_pole(&intensity, h, tau_sp);
    let tau_f = if bandwidth.is_infinite() {
        0.0
    } else {
        1.0 / (2.0 * PI * bandwidth)
    };
    one_pole(&excited, h, tau_f)
}

pub fn xps_template(cfg: &ExperimentConfig) -> Result<XpsTemplate> {
    cfg.validate()?;
    XpsTemplate::from_physics(
        cfg.pulse_center(),
        cfg.pulse_rms,
        cfg.tau_sp,
        cfg.meas_bandwidth,
        cfg.n_samples,
        cfg.sample_dt,
        cfg.arrival_sample,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotTruth {
    pub n_incident: u64,
    pub n_transmitted: u64,
    pub n_detected: u64,
    /// Total excitation dwell of the shot, seconds.
    pub dwell_total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShotRecord {
    pub phases: Vec<f64>,
    pub click: bool,
    pub truth: Option<ShotTruth>,
}

impl ShotRecord {
    pub fn validate(&self, index: u64) -> Result<()> {
        if let Some(i) = self.phases.iter().position(|p| !p.is_finite()) {
            return Err(Error::ShotInvariant {
                index,
                reason: format!("phase sample {i} is not finite"),
            });
        }
        if let Some(t) = self.truth {
            if !(t.n_detected <= t.n_transmitted && t.n_transmitted <= t.n_incident) {
                return Err(Error::ShotInvariant {
                    index,
                    reason: "photon counts not nested".into(),
                });
            }
        }
        Ok(())
    }
}

/// Shot generator with precomputed per-sample shapes. Shot `k` of seed `s`
/// draws from ChaCha8 stream `k` of the key derived from `s`, so any shot
/// can be regenerated independently.
#[derive(Debug, Clone)]
pub struct ShotGenerator {
    cfg: ExperimentConfig,
    key: [u8; 32],
    signal_per_dwell: Vec<f64>,
    drift_basis: Vec<[f64; 4]>,
    osc: Vec<f64>,
    tau_l_dwell: f64,
    tau_t_dwell: f64,
}

impl ShotGenerator {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let template = xps_template(cfg)?;
        let phi_atom = cfg.phi_atom(&template);
        let scale = phi_atom * template.peak_per_dwell;
        let key = ChaCha8Rng::seed_from_u64(seed).get_seed();
        Ok(ShotGenerator {
            signal_per_dwell: template.samples.iter().map(|t| t * scale).collect(),
            drift_basis: (0..cfg.n_samples)
                .map(|k| {
                    let u = cfg.unit_time(k);
                    [0, 1, 2, 3].map(|j| cfg.drift[j] * legendre(j, u))
                })
                .collect(),
            osc: (0..cfg.n_samples).map(|k| cfg.osc.amplitude * cfg.osc_shape(k)).collect(),
            tau_l_dwell: cfg.tau_l_frac() * cfg.tau_sp,
            tau_t_dwell: cfg.tau_t_frac * cfg.tau0(),
            cfg: cfg.clone(),
            key,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn n_samples(&self) -> usize {
        self.cfg.n_samples
    }

    fn rng_for(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(index);
        rng
    }

    /// Writes shot `index` into `phases` and returns its click flag and truth.
    pub fn fill(&self, index: u64, phases: &mut [f64]) -> (bool, ShotTruth) {
        let cfg = &self.cfg;
        let mut rng = self.rng_for(index);
        let eps = if cfg.prop_noise_s > 0.0 {
            cfg.prop_noise_s * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        let lambda = (cfg.mean_photons * (1.0 + eps)).max(0.0);
        let n = if lambda > 0.0 {
            Poisson::new(lambda).expect("finite positive rate").sample(&mut rng) as u64
        } else {
            0
        };
        let p_t = if cfg.od_coupling == 0.0 {
            cfg.p_transmit
        } else {
            cfg.p_transmit.powf(1.0 + cfg.od_coupling * eps).clamp(0.0, 1.0)
        };
        let n_t = Binomial::new(n, p_t).expect("probability in range").sample(&mut rng);
        let n_d = Binomial::new(n_t, cfg.eta_detect).expect("probability in range").sample(&mut rng);
        let dark = rng.random::<f64>() < cfg.dark_prob;
        let click = n_d >= 1 || dark;
        let dwell = (n - n_t) as f64 * self.tau_l_dwell + n_t as f64 * self.tau_t_dwell;

        let c: [f64; 4] = [0, 1, 2, 3].map(|_| rng.sample::<f64, _>(StandardNormal));
        for (k, out) in phases.iter_mut().enumerate() {
            let b = &self.drift_basis[k];
            let drift = c[0] * b[0] + c[1] * b[1] + c[2] * b[2] + c[3] * b[3];
            let noise = cfg.phase_noise_rms * rng.sample::<f64, _>(StandardNormal);
            *out = drift + self.osc[k] * eps + self.signal_per_dwell[k] * dwell + noise;
        }
        (
            click,
            ShotTruth {
                n_incident: n,
                n_transmitted: n_t,
                n_detected: n_d,
                dwell_total: dwell,
            },
        )
    }

    pub fn generate(&self, index: u64) -> ShotRecord {
        let mut phases = vec![0.0; self.cfg.n_samples];
        let (click, truth) = self.fill(index, &mut phases);
        ShotRecord {
            phases,
            click,
            truth: self.cfg.record_truth.then_some(truth),
        }
    }
}

/// One generated shot as seen by reductions.
#[derive(Debug, Clone, Copy)]
pub struct ShotView<'a> {
    pub index: u64,
    pub phases: &'a [f64],
    pub click: bool,
    pub truth: ShotTruth,
}

pub const CHUNK_SHOTS: u64 = 1 << 14;

fn chunk_bounds(n_shots: u64, chunk: u64) -> (u64, u64) {
    let start = chunk * CHUNK_SHOTS;
    (start, (start + CHUNK_SHOTS).min(n_shots))
}

/// Folds every shot into per-chunk accumulators and returns them in chunk
/// order. Chunks are evaluated in parallel; the shot stream and chunk layout
/// are fixed, so merging the result in order is deterministic.
pub fn fold_campaign<A, I, F>(gen: &ShotGenerator, n_shots: u64, exec: Execution, init: I, fold: F) -> Vec<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, ShotView<'_>) + Sync,
{
    let chunks = n_shots.div_ceil(CHUNK_SHOTS) as usize;
    par::map_indexed(chunks, exec, |c| {
        let (start, end) = chunk_bounds(n_shots, c as u64);
        let mut acc = init();
        let mut phases = vec![0.0; gen.n_samples()];
        for index in start..end {
            let (click, truth) = gen.fill(index, &mut phases);
            fold(
                &mut acc,
                ShotView {
                    index,
                    phases: &phases,
                    click,
                    truth,
                },
            );
        }
        acc
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub n_shots: u64,
    pub seed: u64,
    pub click_rate: f64,
    pub expected_click_rate: f64,
    pub click_rate_se: f64,
    /// Mean over shots and samples.
    pub mean_phase: f64,
    pub truth: Option<TruthAggregates>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthAggregates {
    pub mean_incident: f64,
    pub mean_transmitted: f64,
    pub mean_detected: f64,
    pub mean_dwell: f64,
    pub mean_dwell_se: f64,
    pub expected_dwell: f64,
}

#[derive(Debug, Clone, Default)]
struct SummaryAcc {
    clicks: u64,
    phase: Moments,
    incident: Moments,
    transmitted: Moments,
    detected: Moments,
    dwell: Moments,
}

impl SummaryAcc {
    fn push(&mut self, shot: &ShotView<'_>) {
        self.clicks += shot.click as u64;
        for p in shot.phases {
            self.phase.push(*p);
        }
        self.incident.push(shot.truth.n_incident as f64);
        self.transmitted.push(shot.truth.n_transmitted as f64);
        self.detected.push(shot.truth.n_detected as f64);
        self.dwell.push(shot.truth.dwell_total);
    }

    fn merge(&mut self, o: &SummaryAcc) {
        self.clicks += o.clicks;
        self.phase.merge(&o.phase);
        self.incident.merge(&o.incident);
        self.transmitted.merge(&o.transmitted);
        self.detected.merge(&o.detected);
        self.dwell.merge(&o.dwell);
    }

    fn finish(&self, cfg: &ExperimentConfig, n_shots: u64, seed: u64) -> CampaignSummary {
        let rate = self.clicks as f64 / n_shots as f64;
        CampaignSummary {
            n_shots,
            seed,
            click_rate: rate,
            expected_click_rate: cfg.expected_click_rate(),
            click_rate_se: (rate * (1.0 - rate) / n_shots as f64).sqrt(),
            mean_phase: self.phase.mean(),
            truth: cfg.record_truth.then(|| TruthAggregates {
                mean_incident: self.incident.mean(),
                mean_transmitted: self.transmitted.mean(),
                mean_detected: self.detected.mean(),
                mean_dwell: self.dwell.mean(),
                mean_dwell_se: self.dwell.std_error(),
                expected_dwell: cfg.expected_dwell(),
            }),
        }
    }
}

/// Summary statistics of a campaign without persisting it.
pub fn summarize_campaign(cfg: &ExperimentConfig, n_shots: u64, seed: u64, exec: Execution) -> Result<CampaignSummary> {
    if n_shots == 0 {
        return Err(Error::invalid("n_shots", "must be >= 1"));
    }
    let gen = ShotGenerator::new(cfg, seed)?;
    let parts = fold_campaign(&gen, n_shots, exec, SummaryAcc::default, |a, s| a.push(&s));
    let mut total = SummaryAcc::default();
    parts.iter().for_each(|p| total.merge(p));
    Ok(total.finish(cfg, n_shots, seed))
}

/// Generates `n_shots` shots and writes them to `path` in the binary record
/// format, returning the campaign summary. Output bytes depend only on
/// `(cfg, seed, n_shots, digest)`.
pub fn run_campaign(
    cfg: &ExperimentConfig,
    n_shots: u64,
    seed: u64,
    digest: [u8; 32],
    path: &Path,
    exec: Execution,
) -> Result<CampaignSummary> {
    if n_shots == 0 {
        return Err(Error::invalid("n_shots", "must be >= 1"));
    }
    let gen = ShotGenerator::new(cfg, seed)?;
    let header = FileHeader::new(cfg.n_samples as u32, n_shots, cfg.record_truth, digest);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = ShotWriter::new(BufWriter::new(file), header, path)?;
    let chunks = n_shots.div_ceil(CHUNK_SHOTS);
    let batch = 16u64;
    let mut total = SummaryAcc::default();
    let mut first = 0u64;
    while first < chunks {
        let count = batch.min(chunks - first) as usize;
        let parts = par::map_indexed(count, exec, |c| -> Result<(Vec<ShotRecord>, SummaryAcc)> {
            let (start, end) = chunk_bounds(n_shots, first + c as u64);
            let mut acc = SummaryAcc::default();
            let mut records = Vec::with_capacity((end - start) as usize);
            for index in start..end {
                let mut phases = vec![0.0; gen.n_samples()];
                let (click, truth) = gen.fill(index, &mut phases);
                acc.push(&ShotView {
                    index,
                    phases: &phases,
                    click,
                    truth,
                });
                let rec = ShotRecord {
                    phases,
                    click,
                    truth: cfg.record_truth.then_some(truth),
                };
                rec.validate(index)?;
                records.push(rec);
            }
            Ok((records, acc))
        });
        for part in parts {
            let (records, acc) = part?;
            for r in &records {
                writer.write(r)?;
            }
            total.merge(&acc);
        }
        first += count as u64;
    }
    writer.finish()?.flush().map_err(|e| Error::io(path, e))?;
    Ok(total.finish(cfg, n_shots, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> ExperimentConfig {
        ExperimentConfig {
            record_truth: true,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn default_click_rate_and_anchor() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert!((cfg.expected_click_rate() - 0.25).abs() < 1e-12);
        assert!((cfg.p_transmit - 0.401_914_341_125_825_9).abs() < 1e-9);
        assert!((cfg.phi0_target() - -20.0e-6).abs() < 1e-15);
        assert!((phi0_at_detuning(2.0 * PI * 4.7e6, cfg.tau_sp) - 16.4e-6).abs() < 1e-15);
        assert!(phi0_at_detuning(0.0, cfg.tau_sp) == 0.0);
    }

    #[test]
    fn mean_dwell_identity() {
        let cfg = ExperimentConfig::default();
        assert!((cfg.expected_dwell() - cfg.mean_photons * cfg.tau0()).abs() < 1e-12 * cfg.tau0());
    }

    #[test]
    fn template_shape() {
        let cfg = ExperimentConfig::default();
        let t = xps_template(&cfg).unwrap();
        assert_eq!(t.len(), 36);
        let (argmax, &max) = t.samples.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        assert_eq!(max, 1.0);
        assert!((12..=13).contains(&argmax), "{argmax}");
        assert!(t.samples[..cfg.arrival_sample].iter().all(|&x| x < 1e-3));
        assert!(*t.samples.last().unwrap() < 0.05);
    }

    #[test]
    fn template_area_is_dwell() {
        let cfg = ExperimentConfig::default();
        let fine = response_per_dwell(cfg.pulse_center(), cfg.pulse_rms, cfg.tau_sp, cfg.meas_bandwidth, 36, cfg.sample_dt);
        let h = cfg.sample_dt / TEMPLATE_FINE_STEPS as f64;
        let area = crate::bloch::trapezoid(&fine, h) * cfg.tau_sp;
        assert!((area / cfg.tau_sp - 1.0).abs() < 0.01);
    }

    #[test]
    fn template_degenerates_to_intensity() {
        let center = 196e-9;
        let rms = 10e-9;
        let t = XpsTemplate::from_physics(center, rms, 0.0, f64::INFINITY, 36, 16e-9, 11).unwrap();
        let raw: Vec<f64> = (0..36)
            .map(|k| (-0.5 * ((k as f64 * 16e-9 - center) / rms).powi(2)).exp())
            .collect();
        let peak = raw.iter().cloned().fold(0.0, f64::max);
        for (a, b) in t.samples.iter().zip(&raw) {
            assert!((a - b / peak).abs() < 1e-12);
        }
    }

    #[test]
    fn one_pole_is_exact_for_ramps() {
        let h = 0.1;
        let tau = 0.7;
        let input: Vec<f64> = (0..200).map(|i| 2.0 + 0.3 * i as f64 * h).collect();
        let out = one_pole(&input, h, tau);
        for (i, y) in out.iter().enumerate() {
            let t = i as f64 * h;
            // y = u0 + k (t - tau) + (y0 - u0 + k tau) e^{-t/tau}
            let exact = 2.0 + 0.3 * (t - tau) + (-2.0 + 0.3 * tau) * (-t / tau).exp();
            assert!((y - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_pulse_never_clicks_with_no_dark_counts() {
        let cfg = ExperimentConfig {
            mean_photons: 0.0,
            dark_prob: 0.0,
            eta_detect: 0.5,
            ..quiet()
        };
        let gen = ShotGenerator::new(&cfg, 3).unwrap();
        for k in 0..2000 {
            let s = gen.generate(k);
            assert!(!s.click);
            assert_eq!(s.truth.unwrap().dwell_total, 0.0);
        }
    }

    #[test]
    fn thinned_poisson_click_rate() {
        let cfg = ExperimentConfig {
            p_transmit: 1.0,
            eta_detect: 0.005,
            phi_atom: Some(1.0),
            ..quiet()
        };
        let n = 200_000;
        let s = summarize_campaign(&cfg, n, 11, Execution::default()).unwrap();
        let expected = 1.0 - (1.0 - cfg.dark_prob) * (-cfg.eta_detect * cfg.mean_photons).exp();
        assert!((s.click_rate - expected).abs() < 5.0 * s.click_rate_se);
    }

    #[test]
    fn generation_is_order_independent() {
        let cfg = quiet();
        let gen = ShotGenerator::new(&cfg, 42).unwrap();
        let forward: Vec<ShotRecord> = (0..50).map(|k| gen.generate(k)).collect();
        for k in (0..50).rev() {
            assert_eq!(gen.generate(k), forward[k as usize]);
        }
        let other = ShotGenerator::new(&cfg, 43).unwrap();
        assert_ne!(other.generate(0), forward[0]);
    }

    #[test]
    fn shots_respect_invariants() {
        let gen = ShotGenerator::new(&quiet(), 1).unwrap();
        for k in 0..1000 {
            gen.generate(k).validate(k).unwrap();
        }
        let bad = ShotRecord {
            phases: vec![f64::NAN; 36],
            click: false,
            truth: None,
        };
        assert!(matches!(bad.validate(9), Err(Error::ShotInvariant { index: 9, .. })));
    }

    #[test]
    fn config_validation() {
        let bad = ExperimentConfig {
            dark_prob: 1.5,
            ..quiet()
        };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig {
            n_samples: 40,
            ..quiet()
        };
        assert!(bad.validate().is_err());
        assert!(quiet().with_click_rate(0.005).is_err());
        assert!(quiet().with_click_rate(0.999_999_9).is_err());
    }
}
