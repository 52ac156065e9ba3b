//! Post-selection estimator: click/no-click binning, weighted template fits
//! with a cubic background, click-response normalization, proportional-noise
//! calibration and combination across probe detunings.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::format::ShotReader;
use crate::par::Execution;
use crate::shots::{fold_campaign, xps_template, ExperimentConfig, ShotGenerator, ShotTruth, XpsTemplate};
use crate::stats::{Moments, MomentsVec};
use crate::{Error, Result};

pub const MIN_BIN_COUNT: u64 = 100;
/// Largest acceptable condition number of the weighted design matrix.
pub const MAX_CONDITION: f64 = 1e10;

/// Streaming per-sample moments of click and no-click shots.
#[derive(Debug, Clone, PartialEq)]
pub struct BinAccumulator {
    pub click: MomentsVec,
    pub noclick: MomentsVec,
}

impl BinAccumulator {
    pub fn new(n_samples: usize) -> Self {
        BinAccumulator {
            click: MomentsVec::new(n_samples),
            noclick: MomentsVec::new(n_samples),
        }
    }

    pub fn push(&mut self, phases: &[f64], click: bool) {
        if click {
            self.click.push(phases)
        } else {
            self.noclick.push(phases)
        }
    }

    pub fn merge(&mut self, other: &BinAccumulator) {
        self.click.merge(&other.click);
        self.noclick.merge(&other.noclick);
    }

    pub fn n_shots(&self) -> u64 {
        self.click.count() + self.noclick.count()
    }

    pub fn finish(&self) -> Result<BinnedTraces> {
        for (bin, m) in [("click", &self.click), ("no-click", &self.noclick)] {
            if m.count() < MIN_BIN_COUNT {
                return Err(Error::BinUnderpopulated {
                    bin,
                    count: m.count(),
                    required: MIN_BIN_COUNT,
                });
            }
        }
        let mut all = self.click.clone();
        all.merge(&self.noclick);
        let se_click = self.click.std_error();
        let se_noclick = self.noclick.std_error();
        Ok(BinnedTraces {
            delta_phi: self.click.mean().iter().zip(self.noclick.mean()).map(|(c, n)| c - n).collect(),
            se_delta: se_click.iter().zip(&se_noclick).map(|(a, b)| a.hypot(*b)).collect(),
            phi_click: self.click.mean().to_vec(),
            phi_noclick: self.noclick.mean().to_vec(),
            se_click,
            se_noclick,
            n_click: self.click.count(),
            n_noclick: self.noclick.count(),
            phi_all: all.mean().to_vec(),
            se_all: all.std_error(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedTraces {
    pub phi_click: Vec<f64>,
    pub phi_noclick: Vec<f64>,
    pub delta_phi: Vec<f64>,
    pub se_click: Vec<f64>,
    pub se_noclick: Vec<f64>,
    pub se_delta: Vec<f64>,
    pub n_click: u64,
    pub n_noclick: u64,
    /// Mean and standard error over all shots.
    pub phi_all: Vec<f64>,
    pub se_all: Vec<f64>,
}

impl BinnedTraces {
    pub fn n_shots(&self) -> u64 {
        self.n_click + self.n_noclick
    }

    pub fn click_rate(&self) -> f64 {
        self.n_click as f64 / self.n_shots() as f64
    }

    pub fn write_delta_csv<W: Write>(&self, out: W, sample_dt: f64) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_s", "delta_phi", "delta_phi_se", "phi_click", "phi_noclick"])?;
        for k in 0..self.delta_phi.len() {
            w.write_record([
                format!("{:.16e}", k as f64 * sample_dt),
                format!("{:.16e}", self.delta_phi[k]),
                format!("{:.16e}", self.se_delta[k]),
                format!("{:.16e}", self.phi_click[k]),
                format!("{:.16e}", self.phi_noclick[k]),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Bins shots given as (phases, click) pairs.
pub fn bin_and_average<'a, I>(shots: I, n_samples: usize) -> Result<BinnedTraces>
where
    I: IntoIterator<Item = (&'a [f64], bool)>,
{
    let mut acc = BinAccumulator::new(n_samples);
    for (p, c) in shots {
        if p.len() != n_samples {
            return Err(Error::invalid("phases", format!("expected {n_samples} samples, got {}", p.len())));
        }
        acc.push(p, c);
    }
    acc.finish()
}

/// Bins every shot of a file, streaming.
pub fn bin_file(path: &Path) -> Result<(crate::format::FileHeader, CampaignBins)> {
    let mut r = ShotReader::open(path)?;
    let header = *r.header();
    let mut acc = BinAccumulator::new(header.n_samples as usize);
    let mut truth = header.has_truth().then(TruthAccumulator::default);
    let mut phases = Vec::new();
    let mut index = 0u64;
    while let Some((click, t)) = r.next_into(&mut phases)? {
        if let Some(i) = phases.iter().position(|p| !p.is_finite()) {
            return Err(Error::ShotInvariant {
                index,
                reason: format!("phase sample {i} is not finite"),
            });
        }
        acc.push(&phases, click);
        if let (Some(ta), Some(t)) = (truth.as_mut(), t) {
            ta.push(&t, click);
        }
        index += 1;
    }
    Ok((header, CampaignBins { bins: acc, truth }))
}

#[derive(Debug, Clone)]
pub struct CampaignBins {
    pub bins: BinAccumulator,
    pub truth: Option<TruthAccumulator>,
}

/// Bins a campaign generated in memory, without persisting the shots.
pub fn bin_campaign(gen: &ShotGenerator, n_shots: u64, exec: Execution) -> CampaignBins {
    let n = gen.n_samples();
    let parts = fold_campaign(
        gen,
        n_shots,
        exec,
        || (BinAccumulator::new(n), TruthAccumulator::default()),
        |(b, t), s| {
            b.push(s.phases, s.click);
            t.push(&s.truth, s.click);
        },
    );
    let mut bins = BinAccumulator::new(n);
    let mut truth = TruthAccumulator::default();
    for (b, t) in &parts {
        bins.merge(b);
        truth.merge(t);
    }
    CampaignBins {
        bins,
        truth: Some(truth),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub amplitude: f64,
    pub amplitude_se: f64,
    pub cubic_coeffs: [f64; 4],
    pub chi2_per_dof: f64,
    pub condition: f64,
}

/// Weighted least squares of `trace` on {1, u, u^2, u^3, template} with
/// `u` the sample coordinate mapped to [-1, 1], solved by QR of the
/// row-weighted design.
///
/// With `se = None` (or any zero entry) the fit is unweighted and the
/// amplitude error comes from the residual scatter.
pub fn fit_template(trace: &[f64], se: Option<&[f64]>, template: &XpsTemplate) -> Result<FitResult> {
    let n = trace.len();
    if n != template.len() {
        return Err(Error::invalid("trace", format!("{n} samples, template has {}", template.len())));
    }
    if n < 6 {
        return Err(Error::invalid("trace", "need at least 6 samples"));
    }
    if trace.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("trace", "non-finite sample"));
    }
    let weights: Option<Vec<f64>> = se.and_then(|s| {
        (s.len() == n && s.iter().all(|x| *x > 0.0 && x.is_finite())).then(|| s.iter().map(|x| 1.0 / x).collect())
    });
    let w = |k: usize| weights.as_ref().map_or(1.0, |w| w[k]);
    let a = DMatrix::from_fn(n, 5, |k, j| {
        let u = 2.0 * k as f64 / (n - 1) as f64 - 1.0;
        let basis = if j < 4 { u.powi(j as i32) } else { template.samples[k] };
        w(k) * basis
    });
    let b = DVector::from_fn(n, |k, _| w(k) * trace[k]);

    // Column equilibration keeps the condition estimate about geometry, not
    // units.
    let norms: Vec<f64> = (0..5).map(|j| a.column(j).norm()).collect();
    if norms.contains(&0.0) {
        return Err(Error::RankDeficient { condition: f64::INFINITY });
    }
    let scaled = DMatrix::from_fn(n, 5, |k, j| a[(k, j)] / norms[j]);
    let sv = scaled.clone().singular_values();
    let condition = sv.max() / sv.min();
    if !(condition <= MAX_CONDITION) {
        return Err(Error::RankDeficient { condition });
    }
    let qr = scaled.qr();
    let r = qr.r();
    let qtb = qr.q().transpose() * &b;
    let y = r
        .solve_upper_triangular(&qtb)
        .ok_or(Error::RankDeficient { condition })?;
    let coef: Vec<f64> = (0..5).map(|j| y[j] / norms[j]).collect();

    let resid = &b - &a * DVector::from_column_slice(&coef);
    let chi2 = resid.norm_squared();
    let dof = (n - 5) as f64;
    // Var(coef_j) = [(R^T R)^-1]_jj / norm_j^2.
    let rinv = r
        .clone()
        .try_inverse()
        .ok_or(Error::RankDeficient { condition })?;
    let var_scaled: f64 = (0..5).map(|k| rinv[(4, k)].powi(2)).sum();
    let mut var = var_scaled / norms[4].powi(2);
    if weights.is_none() {
        var *= chi2 / dof;
    }
    Ok(FitResult {
        amplitude: coef[4],
        amplitude_se: var.sqrt(),
        cubic_coeffs: [coef[0], coef[1], coef[2], coef[3]],
        chi2_per_dof: chi2 / dof,
        condition,
    })
}

/// Per-photon peak phase from a mean trace over all shots.
pub fn fit_phi0(mean_trace: &[f64], se: Option<&[f64]>, mean_photons: f64, template: &XpsTemplate) -> Result<FitResult> {
    if !(mean_photons > 0.0) {
        return Err(Error::invalid("mean_photons", "must be > 0"));
    }
    let mut f = fit_template(mean_trace, se, template)?;
    f.amplitude /= mean_photons;
    f.amplitude_se /= mean_photons;
    Ok(f)
}

/// Raw transmitted-photon amplitude: the template fit of the click minus
/// no-click difference trace.
pub fn fit_transmitted(bins: &BinnedTraces, template: &XpsTemplate) -> Result<FitResult> {
    fit_template(&bins.delta_phi, Some(&bins.se_delta), template)
}

/// Expected `E[n_T | click] - E[n_T | no click]` in units of transmitted
/// photons, `x / c` with `x = -ln((1 - c) / (1 - d))`; tends to 1 as the
/// detected-photon number `x` goes to 0 without dark counts.
pub fn click_response(click_rate: f64, dark_prob: f64) -> Result<f64> {
    if !(click_rate > dark_prob && click_rate < 1.0) {
        return Err(Error::invalid(
            "click_rate",
            format!("{click_rate} must lie in (dark_prob = {dark_prob}, 1)"),
        ));
    }
    let x = -((1.0 - click_rate) / (1.0 - dark_prob)).ln();
    Ok(x / click_rate)
}

/// `raw - phi0 s^2 mu`, with the uncertainties of `raw`, `phi0` and `s^2`
/// added in quadrature.
pub fn correct_phi_t(raw: &FitResult, s2: f64, s2_se: f64, mean_photons: f64, phi0: &FitResult) -> FitResult {
    let shift = phi0.amplitude * s2 * mean_photons;
    let var = raw.amplitude_se.powi(2)
        + (phi0.amplitude_se * s2 * mean_photons).powi(2)
        + (phi0.amplitude * mean_photons * s2_se).powi(2);
    FitResult {
        amplitude: raw.amplitude - shift,
        amplitude_se: var.sqrt(),
        ..raw.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub mean_photons: f64,
    /// Click excess `phi_T / phi0`, normalized by the click response.
    pub excess: f64,
    pub excess_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub s2: f64,
    pub s2_se: f64,
    pub intercept: f64,
    pub intercept_se: f64,
    /// Set when the fitted slope is negative: a two-sigma upper bound on s^2.
    pub s2_upper_bound: Option<f64>,
    pub points: Vec<CalibrationPoint>,
}

/// Fits `excess = intercept + s^2 mu` by inverse-variance weighted linear
/// regression.
pub fn calibrate_proportional_noise(points: &[CalibrationPoint]) -> Result<Calibration> {
    if points.len() < 4 {
        return Err(Error::invalid("points", format!("{} photon numbers, need >= 4", points.len())));
    }
    if points.iter().any(|p| !(p.excess_se > 0.0) || !p.excess.is_finite() || !p.mean_photons.is_finite()) {
        return Err(Error::invalid("points", "every point needs a finite excess and a positive error"));
    }
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in points {
        let w = p.excess_se.powi(-2);
        sw += w;
        sx += w * p.mean_photons;
        sy += w * p.excess;
        sxx += w * p.mean_photons * p.mean_photons;
        sxy += w * p.mean_photons * p.excess;
    }
    let det = sw * sxx - sx * sx;
    if !(det > 0.0) {
        return Err(Error::invalid("points", "photon numbers must not all be equal"));
    }
    let s2 = (sw * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    let s2_se = (sw / det).sqrt();
    Ok(Calibration {
        s2,
        s2_se,
        intercept,
        intercept_se: (sxx / det).sqrt(),
        s2_upper_bound: (s2 < 0.0).then_some(2.0 * s2_se),
        points: points.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetuningEntry {
    pub detuning: f64,
    pub phi_t: f64,
    pub phi_t_se: f64,
    pub phi0: f64,
    pub phi0_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedEstimate {
    pub ratio: f64,
    pub se: f64,
    pub inputs: Vec<DetuningEntry>,
}

/// First-order ratio and error of one entry.
pub fn entry_ratio(e: &DetuningEntry) -> (f64, f64) {
    let r = e.phi_t / e.phi0;
    let se = (e.phi_t_se.powi(2) + (r * e.phi0_se).powi(2)).sqrt() / e.phi0.abs();
    (r, se)
}

/// Inverse-variance weighted mean of per-entry `phi_T / phi0`.
pub fn combine_detunings(entries: &[DetuningEntry]) -> Result<CombinedEstimate> {
    if entries.is_empty() {
        return Err(Error::invalid("entries", "need at least one entry"));
    }
    let (mut sw, mut swr) = (0.0, 0.0);
    for (i, e) in entries.iter().enumerate() {
        if !(e.phi0.abs() > 5.0 * e.phi0_se) {
            return Err(Error::Phi0NearZero {
                index: i,
                phi0: e.phi0,
                se: e.phi0_se,
            });
        }
        let (r, se) = entry_ratio(e);
        if !(se > 0.0) {
            return Err(Error::invalid("entries", format!("entry {i} has a zero error")));
        }
        let w = se.powi(-2);
        sw += w;
        swr += w * r;
    }
    Ok(CombinedEstimate {
        ratio: swr / sw,
        se: sw.powf(-0.5),
        inputs: entries.to_vec(),
    })
}

/// Truth-level conditional photon-number moments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TruthAccumulator {
    pub transmitted: [Moments; 2],
    pub lost: [Moments; 2],
    pub dwell: [Moments; 2],
}

impl TruthAccumulator {
    pub fn push(&mut self, t: &ShotTruth, click: bool) {
        let i = click as usize;
        self.transmitted[i].push(t.n_transmitted as f64);
        self.lost[i].push((t.n_incident - t.n_transmitted) as f64);
        self.dwell[i].push(t.dwell_total);
    }

    pub fn merge(&mut self, o: &TruthAccumulator) {
        for i in 0..2 {
            self.transmitted[i].merge(&o.transmitted[i]);
            self.lost[i].merge(&o.lost[i]);
            self.dwell[i].merge(&o.dwell[i]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Excess {
    pub value: f64,
    pub se: f64,
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickInferenceReport {
    pub n_click: u64,
    pub n_noclick: u64,
    /// `E[n_T | click] - E[n_T | no click]`.
    pub transmitted_excess: Excess,
    /// `E[n_L | click] - E[n_L | no click]`.
    pub lost_excess: Excess,
    /// `E[n_T | click] - E[n_T]`, the increase of the inferred transmitted
    /// number; below 1 by an amount of order `eta P_T mu`.
    pub inferred_increase: Excess,
    /// Small-detection-probability expectations of the two excesses.
    pub small_eta_transmitted: f64,
    pub small_eta_lost: f64,
}

/// Exact conditional expectations for a thinned Poisson source without
/// shared fluctuations: returns (`E[n_T|C] - E[n_T|NC]`, `E[n_T|C] - E[n_T]`).
pub fn exact_click_excess(mean_transmitted: f64, eta: f64, dark_prob: f64) -> (f64, f64) {
    let x = eta * mean_transmitted;
    let c = 1.0 - (1.0 - dark_prob) * (-x).exp();
    if c == 0.0 {
        return (0.0, 0.0);
    }
    (x / c, x * (1.0 - c) / c)
}

pub fn click_inference_check(truth: &TruthAccumulator, mean_transmitted: f64, eta: f64, dark_prob: f64) -> Result<ClickInferenceReport> {
    let [nt_nc, nt_c] = &truth.transmitted;
    let [nl_nc, nl_c] = &truth.lost;
    for (bin, m) in [("click", nt_c), ("no-click", nt_nc)] {
        if m.count() < 2 {
            return Err(Error::BinUnderpopulated {
                bin,
                count: m.count(),
                required: 2,
            });
        }
    }
    let diff = |a: &Moments, b: &Moments| (a.mean() - b.mean(), a.std_error().hypot(b.std_error()));
    let (t, t_se) = diff(nt_c, nt_nc);
    let (l, l_se) = diff(nl_c, nl_nc);
    let mut all = *nt_c;
    all.merge(nt_nc);
    let (exact_t, exact_inc) = exact_click_excess(mean_transmitted, eta, dark_prob);
    Ok(ClickInferenceReport {
        n_click: nt_c.count(),
        n_noclick: nt_nc.count(),
        transmitted_excess: Excess {
            value: t,
            se: t_se,
            expected: exact_t,
        },
        lost_excess: Excess {
            value: l,
            se: l_se,
            expected: 0.0,
        },
        inferred_increase: Excess {
            value: nt_c.mean() - all.mean(),
            // Conditional and pooled means share shots; the click-bin error
            // bounds the uncertainty.
            se: nt_c.std_error(),
            expected: exact_inc,
        },
        small_eta_transmitted: 1.0,
        small_eta_lost: 0.0,
    })
}

/// Inputs to the estimator chain beyond the shot data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisInputs {
    pub mean_photons: f64,
    pub dark_prob: f64,
    /// Externally measured per-photon phase (e.g. from a bright campaign);
    /// `None` fits it from the mean trace of the same shots.
    pub phi0_reference: Option<(f64, f64)>,
    /// Proportional-noise calibration `(s^2, se)`.
    pub s2: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub phi0: f64,
    pub phi0_se: f64,
    #[serde(rename = "phiT")]
    pub phi_t: f64,
    #[serde(rename = "phiT_se")]
    pub phi_t_se: f64,
    pub ratio: f64,
    pub ratio_se: f64,
    pub s2: f64,
    pub chi2_per_dof: f64,
    pub n_shots: u64,
    pub click_rate: f64,
    /// Fit of the difference trace before any normalization.
    #[serde(rename = "phiT_raw")]
    pub phi_t_raw: f64,
    #[serde(rename = "phiT_raw_se")]
    pub phi_t_raw_se: f64,
    pub ratio_raw: f64,
    pub click_response: f64,
}

impl AnalysisReport {
    pub fn detuning_entry(&self, detuning: f64) -> DetuningEntry {
        DetuningEntry {
            detuning,
            phi_t: self.phi_t,
            phi_t_se: self.phi_t_se,
            phi0: self.phi0,
            phi0_se: self.phi0_se,
        }
    }
}

/// Full chain: phi0, raw phi_T, click-response normalization, optional
/// proportional-noise correction, ratio.
pub fn analyze_bins(bins: &BinnedTraces, template: &XpsTemplate, inputs: &AnalysisInputs) -> Result<AnalysisReport> {
    let phi0 = match inputs.phi0_reference {
        Some((v, se)) => FitResult {
            amplitude: v,
            amplitude_se: se,
            cubic_coeffs: [0.0; 4],
            chi2_per_dof: 0.0,
            condition: 1.0,
        },
        None => fit_phi0(&bins.phi_all, Some(&bins.se_all), inputs.mean_photons, template)?,
    };
    let raw = fit_transmitted(bins, template)?;
    let response = click_response(bins.click_rate(), inputs.dark_prob)?;
    let normalized = FitResult {
        amplitude: raw.amplitude / response,
        amplitude_se: raw.amplitude_se / response,
        ..raw.clone()
    };
    let (s2, s2_se) = inputs.s2.unwrap_or((0.0, 0.0));
    let corrected = correct_phi_t(&normalized, s2, s2_se, inputs.mean_photons, &phi0);
    let (ratio, ratio_se) = entry_ratio(&DetuningEntry {
        detuning: 0.0,
        phi_t: corrected.amplitude,
        phi_t_se: corrected.amplitude_se,
        phi0: phi0.amplitude,
        phi0_se: phi0.amplitude_se,
    });
    Ok(AnalysisReport {
        phi0: phi0.amplitude,
        phi0_se: phi0.amplitude_se,
        phi_t: corrected.amplitude,
        phi_t_se: corrected.amplitude_se,
        ratio,
        ratio_se,
        s2,
        chi2_per_dof: raw.chi2_per_dof,
        n_shots: bins.n_shots(),
        click_rate: bins.click_rate(),
        phi_t_raw: raw.amplitude,
        phi_t_raw_se: raw.amplitude_se,
        ratio_raw: raw.amplitude / phi0.amplitude,
        click_response: response,
    })
}

/// Generates and bins `n_shots` in memory, then runs [`analyze_bins`].
pub fn analyze_campaign(
    cfg: &ExperimentConfig,
    n_shots: u64,
    seed: u64,
    inputs: &AnalysisInputs,
    exec: Execution,
) -> Result<(AnalysisReport, CampaignBins)> {
    let gen = ShotGenerator::new(cfg, seed)?;
    let template = xps_template(cfg)?;
    let campaign = bin_campaign(&gen, n_shots, exec);
    let report = analyze_bins(&campaign.bins.finish()?, &template, inputs)?;
    Ok((report, campaign))
}

/// Per-photon phase `(phi0, se)` fitted from the mean trace of a simulated
/// campaign, typically a bright one.
pub fn reference_phi0(cfg: &ExperimentConfig, n_shots: u64, seed: u64, exec: Execution) -> Result<(f64, f64)> {
    let gen = ShotGenerator::new(cfg, seed)?;
    let template = xps_template(cfg)?;
    let b = bin_campaign(&gen, n_shots, exec).bins.finish()?;
    let f = fit_phi0(&b.phi_all, Some(&b.se_all), cfg.mean_photons, &template)?;
    Ok((f.amplitude, f.amplitude_se))
}

/// Runs one campaign per mean photon number, each with `eta` chosen for
/// `click_rate`, measures the normalized click excess against the phi0
/// of the same shots and fits the proportional-noise variance.
pub fn calibration_campaigns(
    base: &ExperimentConfig,
    photon_numbers: &[f64],
    click_rate: f64,
    n_shots: u64,
    seed: u64,
    exec: Execution,
) -> Result<Calibration> {
    let mut points = Vec::with_capacity(photon_numbers.len());
    for (i, &mu) in photon_numbers.iter().enumerate() {
        let cfg = ExperimentConfig {
            mean_photons: mu,
            ..base.clone()
        }
        .with_click_rate(click_rate)?;
        let inputs = AnalysisInputs {
            mean_photons: mu,
            dark_prob: cfg.dark_prob,
            phi0_reference: None,
            s2: None,
        };
        let (r, _) = analyze_campaign(&cfg, n_shots, seed.wrapping_add(i as u64), &inputs, exec)?;
        log::info!("calibration mu = {mu}: excess {:.4} +- {:.4}", r.ratio, r.ratio_se);
        points.push(CalibrationPoint {
            mean_photons: mu,
            excess: r.ratio,
            excess_se: r.ratio_se,
        });
    }
    calibrate_proportional_noise(&points)
}
