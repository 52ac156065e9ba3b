//! Dwell-time breakdowns of transmitted and lost photons.
//!
//! All dwell fields are in units of the spontaneous lifetime and are per
//! incident photon, so `tau0 = p_loss` (a photon is lost at rate Gamma per
//! unit of excitation time) and `tau0 = p_loss * tau_l + (1 - p_loss) * tau_t`.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bloch::{fate_fractions, integrate_weak_bloch, trapezoid, BlochConfig};
use crate::medium::{propagate_spectral, spectral_average, MediumSpec, PulseSpec, SampledEnvelope, TimeGrid};
use crate::par::{self, Execution};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwellBreakdown {
    pub tau0: f64,
    pub tau_l: f64,
    pub tau_t: f64,
    pub p_loss: f64,
}

impl DwellBreakdown {
    pub const ZERO: DwellBreakdown = DwellBreakdown {
        tau0: 0.0,
        tau_l: 0.0,
        tau_t: 0.0,
        p_loss: 0.0,
    };

    pub fn p_transmit(&self) -> f64 {
        1.0 - self.p_loss
    }

    /// `tau_t / tau0`, or 0 for an empty medium.
    pub fn tau_t_over_tau0(&self) -> f64 {
        if self.tau0 > 0.0 {
            self.tau_t / self.tau0
        } else {
            0.0
        }
    }

    /// `|tau0 - p_loss|`.
    pub fn loss_identity_residual(&self) -> f64 {
        (self.tau0 - self.p_loss).abs()
    }

    /// `|p_loss tau_l + p_t tau_t - tau0|`.
    pub fn decomposition_residual(&self) -> f64 {
        (self.p_loss * self.tau_l + self.p_transmit() * self.tau_t - self.tau0).abs()
    }

    pub fn satisfies_identities(&self, tol: f64) -> bool {
        let fields = [self.tau0, self.tau_l, self.tau_t, self.p_loss];
        fields.iter().all(|x| x.is_finite() && *x >= 0.0)
            && self.p_loss <= 1.0
            && self.loss_identity_residual() < tol
            && self.decomposition_residual() < tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Egalitarian,
    MinCoherent,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Egalitarian => "egalitarian",
            ModelKind::MinCoherent => "min-coherent",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "egalitarian" => Ok(ModelKind::Egalitarian),
            "min-coherent" | "min_coherent" => Ok(ModelKind::MinCoherent),
            other => Err(Error::Config(format!("unknown model {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCurve {
    pub model: ModelKind,
    /// Pulse intensity rms, seconds.
    pub sigma_t: f64,
    pub points: Vec<(f64, DwellBreakdown)>,
}

pub const CURVE_CSV_HEADER: [&str; 8] = [
    "model",
    "sigma_t_ns",
    "peak_od",
    "p_loss",
    "tau0",
    "tauL",
    "tauT",
    "tauT_over_tau0",
];

impl ModelCurve {
    pub fn write_csv_rows<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        for (od, b) in &self.points {
            w.write_record([
                self.model.as_str().to_string(),
                format!("{:.16e}", self.sigma_t * 1e9),
                format!("{od:.16e}"),
                format!("{:.16e}", b.p_loss),
                format!("{:.16e}", b.tau0),
                format!("{:.16e}", b.tau_l),
                format!("{:.16e}", b.tau_t),
                format!("{:.16e}", b.tau_t_over_tau0()),
            ])?;
        }
        Ok(())
    }
}

/// Writes curves to CSV with [`CURVE_CSV_HEADER`].
pub fn write_curves_csv<W: Write>(curves: &[ModelCurve], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CURVE_CSV_HEADER)?;
    for c in curves {
        c.write_csv_rows(&mut w)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Egalitarian model for a monochromatic photon at optical depth `od`.
pub fn egalitarian_monochromatic(od: f64) -> Result<DwellBreakdown> {
    if !(od >= 0.0 && od.is_finite()) {
        return Err(Error::invalid("od", format!("{od} must be finite and >= 0")));
    }
    if od == 0.0 {
        return Ok(DwellBreakdown::ZERO);
    }
    let p_loss = -(-od).exp_m1();
    Ok(DwellBreakdown {
        tau0: p_loss,
        tau_l: egalitarian_tau_l(od),
        tau_t: od,
        p_loss,
    })
}

/// `1 - a / (e^a - 1)`, with its series below a = 1e-4.
fn egalitarian_tau_l(a: f64) -> f64 {
    if a < 1e-4 {
        a / 2.0 - a * a / 12.0
    } else {
        1.0 - a / a.exp_m1()
    }
}

/// Egalitarian model averaged over the pulse spectrum, each component with its
/// own depth `a(Delta)`.
pub fn egalitarian_broadband(pulse: &PulseSpec, medium: &MediumSpec) -> Result<DwellBreakdown> {
    pulse.validate()?;
    medium.validate()?;
    if medium.peak_od == 0.0 {
        return Ok(DwellBreakdown::ZERO);
    }
    let p_loss = spectral_average(pulse, medium, |a| -(-a).exp_m1())?;
    let t_weighted = spectral_average(pulse, medium, |a| (-a).exp() * a)?;
    let l_weighted = spectral_average(pulse, medium, |a| {
        if a == 0.0 {
            0.0
        } else {
            -(-a).exp_m1() * egalitarian_tau_l(a)
        }
    })?;
    let p_t = 1.0 - p_loss;
    Ok(DwellBreakdown {
        tau0: p_loss,
        tau_l: if p_loss > 0.0 { l_weighted / p_loss } else { 0.0 },
        tau_t: if p_t > 0.0 { t_weighted / p_t } else { 0.0 },
        p_loss,
    })
}

pub const DEFAULT_SLICES: usize = 128;
pub const MIN_SLICES: usize = 32;
/// Allowed change of `tau_t / tau0` when the slice count is doubled.
pub const SLICE_CONVERGENCE_TOL: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq)]
struct SliceSums {
    d_coh: f64,
    d_sp: f64,
    n_sp: f64,
}

fn slice_sums(env: &SampledEnvelope, medium: &MediumSpec, depth: f64, bloch: &BlochConfig) -> Result<SliceSums> {
    let s = propagate_spectral(env, medium, depth)?;
    let rec = integrate_weak_bloch(&s, bloch)?;
    let fate = fate_fractions(&rec)?;
    let coh: Vec<f64> = rec.pe.iter().zip(&fate.f_coh).map(|(p, f)| p * f).collect();
    let sp: Vec<f64> = rec.pe.iter().zip(&fate.f_coh).map(|(p, f)| p * (1.0 - f)).collect();
    Ok(SliceSums {
        d_coh: trapezoid(&coh, rec.dt),
        d_sp: trapezoid(&sp, rec.dt),
        n_sp: bloch.gamma * trapezoid(&rec.pe, rec.dt),
    })
}

fn aggregate(env: &SampledEnvelope, medium: &MediumSpec, slices: usize, bloch: &BlochConfig, exec: Execution) -> Result<DwellBreakdown> {
    let sums = par::map_indexed(slices, exec, |j| {
        slice_sums(env, medium, (j as f64 + 0.5) / slices as f64, bloch)
    });
    let (mut d_coh, mut d_sp, mut n_sp) = (0.0, 0.0, 0.0);
    for s in sums {
        let s = s?;
        d_coh += s.d_coh;
        d_sp += s.d_sp;
        n_sp += s.n_sp;
    }
    // Atoms per slice chosen so that the slab reproduces the resonant OD:
    // N kappa^2 = a0 Gamma.
    let atoms = medium.peak_od * medium.gamma / bloch.rabi_per_amplitude.powi(2);
    let norm = atoms / slices as f64 / env.photon_number();
    let p_loss = n_sp * norm;
    let d_coh = d_coh * norm * medium.gamma;
    let d_sp = d_sp * norm * medium.gamma;
    let p_t = 1.0 - p_loss;
    Ok(DwellBreakdown {
        tau0: d_coh + d_sp,
        tau_l: if p_loss > 0.0 { d_sp / p_loss } else { 0.0 },
        tau_t: if p_t > 0.0 { d_coh / p_t } else { 0.0 },
        p_loss,
    })
}

/// Minimum-coherent-emission model: the medium is cut into `slices` layers
/// at midpoint depths, each atom layer is driven by the locally propagated
/// envelope, and excitation that leaves coherently is attributed to
/// transmitted photons. The result is cross-checked against a run with twice
/// as many slices.
pub fn min_coherent_model(pulse: &PulseSpec, medium: &MediumSpec, slices: usize, bloch: &BlochConfig) -> Result<DwellBreakdown> {
    min_coherent_model_with(pulse, medium, slices, bloch, Execution::default())
}

pub fn min_coherent_model_with(
    pulse: &PulseSpec,
    medium: &MediumSpec,
    slices: usize,
    bloch: &BlochConfig,
    exec: Execution,
) -> Result<DwellBreakdown> {
    pulse.validate()?;
    medium.validate()?;
    if slices < MIN_SLICES {
        return Err(Error::invalid("slices", format!("{slices} < {MIN_SLICES}")));
    }
    if medium.peak_od == 0.0 {
        return Ok(DwellBreakdown::ZERO);
    }
    let env = SampledEnvelope::from_pulse(pulse, &TimeGrid::for_pulse(pulse, medium))?;
    let coarse = aggregate(&env, medium, slices, bloch, exec)?;
    let fine = aggregate(&env, medium, 2 * slices, bloch, exec)?;
    let change = (fine.tau_t_over_tau0() - coarse.tau_t_over_tau0()).abs();
    if change > SLICE_CONVERGENCE_TOL {
        return Err(Error::SlicesNotConverged { slices, change });
    }
    Ok(coarse)
}

/// Largest slice count [`min_coherent_refined`] doubles up to.
pub const MAX_SLICES: usize = 1024;

/// Like [`min_coherent_model`], but doubles the slice count from `slices`
/// until the doubling check passes, giving up beyond `max_slices`. Returns
/// the breakdown and the slice count it was computed with.
pub fn min_coherent_refined(
    pulse: &PulseSpec,
    medium: &MediumSpec,
    slices: usize,
    max_slices: usize,
    bloch: &BlochConfig,
    exec: Execution,
) -> Result<(DwellBreakdown, usize)> {
    pulse.validate()?;
    medium.validate()?;
    if slices < MIN_SLICES {
        return Err(Error::invalid("slices", format!("{slices} < {MIN_SLICES}")));
    }
    if medium.peak_od == 0.0 {
        return Ok((DwellBreakdown::ZERO, slices));
    }
    let env = SampledEnvelope::from_pulse(pulse, &TimeGrid::for_pulse(pulse, medium))?;
    let mut n = slices;
    let mut coarse = aggregate(&env, medium, n, bloch, exec)?;
    loop {
        let fine = aggregate(&env, medium, 2 * n, bloch, exec)?;
        let change = (fine.tau_t_over_tau0() - coarse.tau_t_over_tau0()).abs();
        if change <= SLICE_CONVERGENCE_TOL {
            return Ok((coarse, n));
        }
        if 2 * n > max_slices {
            return Err(Error::SlicesNotConverged { slices: n, change });
        }
        log::debug!("peak OD {}: {n} slices not converged ({change:.2e}), doubling", medium.peak_od);
        n *= 2;
        coarse = fine;
    }
}

/// Weak-regime Bloch settings for the default envelope of `pulse`.
pub fn default_bloch(pulse: &PulseSpec, medium: &MediumSpec) -> Result<BlochConfig> {
    let env = SampledEnvelope::from_pulse(pulse, &TimeGrid::for_pulse(pulse, medium))?;
    Ok(BlochConfig::weak(&env, medium))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModelSpec {
    Egalitarian,
    /// Starting slice count; sweeps refine it up to [`MAX_SLICES`].
    MinCoherent { slices: usize },
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Egalitarian => ModelKind::Egalitarian,
            ModelSpec::MinCoherent { .. } => ModelKind::MinCoherent,
        }
    }

    pub fn evaluate(&self, pulse: &PulseSpec, medium: &MediumSpec) -> Result<DwellBreakdown> {
        match *self {
            ModelSpec::Egalitarian => egalitarian_broadband(pulse, medium),
            ModelSpec::MinCoherent { slices } => {
                let bloch = default_bloch(pulse, medium)?;
                min_coherent_refined(pulse, medium, slices, MAX_SLICES.max(slices), &bloch, Execution::Sequential)
                    .map(|(b, _)| b)
            }
        }
    }
}

/// Evaluates `model` at every optical depth of `od_grid`. Points run in
/// parallel; a failure is reported with the optical depth it occurred at.
pub fn sweep_od(model: ModelSpec, pulse: &PulseSpec, od_grid: &[f64], medium: &MediumSpec) -> Result<ModelCurve> {
    sweep_od_with(model, pulse, od_grid, medium, Execution::default())
}

pub fn sweep_od_with(
    model: ModelSpec,
    pulse: &PulseSpec,
    od_grid: &[f64],
    medium: &MediumSpec,
    exec: Execution,
) -> Result<ModelCurve> {
    if od_grid.is_empty() {
        return Err(Error::invalid("od_grid", "empty"));
    }
    if od_grid.iter().any(|od| !(*od >= 0.0 && od.is_finite())) {
        return Err(Error::invalid("od_grid", "entries must be finite and >= 0"));
    }
    if od_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("od_grid", "must be strictly increasing"));
    }
    let results = par::map_indexed(od_grid.len(), exec, |i| {
        let od = od_grid[i];
        medium
            .with_peak_od(od)
            .and_then(|m| model.evaluate(pulse, &m))
            .map_err(|e| Error::AtOpticalDepth {
                od,
                source: Box::new(e),
            })
    });
    let points = od_grid
        .iter()
        .zip(results)
        .map(|(&od, r)| r.map(|b| (od, b)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelCurve {
        model: model.kind(),
        sigma_t: pulse.intensity_rms,
        points,
    })
}

/// Like [`sweep_od`], but a failing point is dropped from the curve and its
/// error returned alongside, so the remaining points are still evaluated.
pub fn sweep_od_lenient(
    model: ModelSpec,
    pulse: &PulseSpec,
    od_grid: &[f64],
    medium: &MediumSpec,
    exec: Execution,
) -> (ModelCurve, Vec<Error>) {
    let results = par::map_indexed(od_grid.len(), exec, |i| {
        let od = od_grid[i];
        medium
            .with_peak_od(od)
            .and_then(|m| model.evaluate(pulse, &m))
            .map_err(|e| Error::AtOpticalDepth {
                od,
                source: Box::new(e),
            })
    });
    let mut points = Vec::new();
    let mut errors = Vec::new();
    for (&od, r) in od_grid.iter().zip(results) {
        match r {
            Ok(b) => points.push((od, b)),
            Err(e) => errors.push(e),
        }
    }
    (
        ModelCurve {
            model: model.kind(),
            sigma_t: pulse.intensity_rms,
            points,
        },
        errors,
    )
}

/// Egalitarian curves at each of `egalitarian_rms` and minimum-coherent
/// curves at each of `min_coherent_rms`, over a shared OD grid.
pub fn model_family(
    medium: &MediumSpec,
    od_grid: &[f64],
    egalitarian_rms: &[f64],
    min_coherent_rms: &[f64],
    slices: usize,
    exec: Execution,
) -> Result<(Vec<ModelCurve>, Vec<Error>)> {
    let mut curves = Vec::new();
    let mut errors = Vec::new();
    let jobs = egalitarian_rms
        .iter()
        .map(|&s| (ModelSpec::Egalitarian, s))
        .chain(min_coherent_rms.iter().map(|&s| (ModelSpec::MinCoherent { slices }, s)));
    for (model, sigma) in jobs {
        let pulse = PulseSpec::gaussian(sigma, 0.0, 1.0)?;
        let (curve, errs) = sweep_od_lenient(model, &pulse, od_grid, medium, exec);
        curves.push(curve);
        errors.extend(errs);
    }
    Ok((curves, errors))
}
