//! TOML run configuration.
//!
//! Keys carry their unit as a suffix (`_ns`, `_mhz`, `_rad`); everything is
//! converted to SI when resolved. Unknown keys are rejected. A minimal file:
//!
//! ```toml
//! seed = 7
//!
//! [medium]
//! peak_od = 4.0
//!
//! [experiment]
//! mean_photons = 34.0
//! click_rate = 0.25
//!
//! [simulate]
//! n_shots = 100000
//! ```

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dwell::DEFAULT_SLICES;
use crate::medium::{transmission_probability, MediumSpec, PulseSpec};
use crate::shots::{ExperimentConfig, Oscillation};
use crate::{Error, Result};

/// Nanoseconds per second.
const PER_NS: f64 = 1e9;
const MHZ: f64 = 1e6;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    #[serde(default)]
    pub medium: MediumSection,
    #[serde(default)]
    pub pulse: PulseSection,
    #[serde(default)]
    pub propagate: PropagateSection,
    #[serde(default)]
    pub models: ModelsSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub analyze: AnalyzeSection,
    #[serde(default)]
    pub calibrate: CalibrateSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumSection {
    pub peak_od: Option<f64>,
    pub tau_sp_ns: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSection {
    pub sigma_t_ns: Option<f64>,
    pub carrier_detuning_mhz: Option<f64>,
    pub mean_photons: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagateSection {
    /// Depth fractions for the area table; default 0, 0.25, 0.5, 0.75, 1.
    pub depths: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsSection {
    pub od_grid: Option<Vec<f64>>,
    pub egalitarian_sigma_t_ns: Option<Vec<f64>>,
    pub min_coherent_sigma_t_ns: Option<Vec<f64>>,
    pub slices: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub mean_photons: Option<f64>,
    pub p_transmit: Option<f64>,
    pub eta_detect: Option<f64>,
    pub click_rate: Option<f64>,
    pub dark_prob: Option<f64>,
    pub phi_atom_rad: Option<f64>,
    pub probe_detuning_mhz: Option<f64>,
    pub shot_len_ns: Option<f64>,
    pub n_samples: Option<usize>,
    pub sample_dt_ns: Option<f64>,
    pub meas_bandwidth_mhz: Option<f64>,
    pub arrival_sample: Option<usize>,
    pub phase_noise_rms_rad: Option<f64>,
    pub drift_rms_rad: Option<[f64; 4]>,
    pub osc_amplitude_rad: Option<f64>,
    pub osc_period_ns: Option<f64>,
    pub osc_damping_ns: Option<f64>,
    pub prop_noise_s: Option<f64>,
    pub od_coupling: Option<f64>,
    pub tau_t_frac: Option<f64>,
    pub tau_l_frac: Option<f64>,
    pub record_truth: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub n_shots: Option<u64>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeSection {
    pub input: Option<PathBuf>,
    /// Reference per-photon phase and its error, rad.
    pub phi0_rad: Option<f64>,
    pub phi0_se_rad: Option<f64>,
    pub s2: Option<f64>,
    pub s2_se: Option<f64>,
    /// Earlier analysis reports to combine with this one.
    pub combine_reports: Option<Vec<PathBuf>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateSection {
    pub photon_numbers: Option<Vec<f64>>,
    pub n_shots: Option<u64>,
    pub click_rate: Option<f64>,
}

fn finite(name: &'static str, x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::invalid(name, "must be finite"))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn medium(&self) -> Result<MediumSpec> {
        let od = finite("medium.peak_od", self.medium.peak_od.unwrap_or(4.0))?;
        let tau = finite("medium.tau_sp_ns", self.medium.tau_sp_ns.unwrap_or(26.5))? / PER_NS;
        MediumSpec::new(od, tau)
    }

    pub fn pulse(&self) -> Result<PulseSpec> {
        PulseSpec::gaussian(
            finite("pulse.sigma_t_ns", self.pulse.sigma_t_ns.unwrap_or(10.0))? / PER_NS,
            2.0 * PI * finite("pulse.carrier_detuning_mhz", self.pulse.carrier_detuning_mhz.unwrap_or(0.0))? * MHZ,
            finite("pulse.mean_photons", self.pulse.mean_photons.unwrap_or(1.0))?,
        )
    }

    pub fn depths(&self) -> Result<Vec<f64>> {
        let d = self.propagate.depths.clone().unwrap_or_else(|| vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        if d.is_empty() || d.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::invalid("propagate.depths", "need depth fractions in [0, 1]"));
        }
        if d.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("propagate.depths", "must be strictly increasing"));
        }
        Ok(d)
    }

    pub fn od_grid(&self) -> Vec<f64> {
        self.models.od_grid.clone().unwrap_or_else(|| {
            let mut g = vec![0.01, 0.1, 0.25, 0.5];
            g.extend((1..=16).map(|k| 0.5 * k as f64).filter(|x| *x > 0.5));
            g
        })
    }

    /// (egalitarian, min-coherent) pulse rms values in seconds.
    pub fn model_bandwidths(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let convert = |name: &'static str, v: &Option<Vec<f64>>, default: &[f64]| -> Result<Vec<f64>> {
            let v = v.clone().unwrap_or_else(|| default.to_vec());
            if v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(Error::invalid(name, "pulse widths must be finite and > 0"));
            }
            Ok(v.iter().map(|x| x / PER_NS).collect())
        };
        // 795.77 ns is a 0.1 MHz spectral rms.
        Ok((
            convert("models.egalitarian_sigma_t_ns", &self.models.egalitarian_sigma_t_ns, &[10.0, 795.77])?,
            convert("models.min_coherent_sigma_t_ns", &self.models.min_coherent_sigma_t_ns, &[10.0, 50.0])?,
        ))
    }

    pub fn slices(&self) -> usize {
        self.models.slices.unwrap_or(DEFAULT_SLICES)
    }

    /// Resolves the experiment section. The transmission defaults to the
    /// spectral value for the configured medium and an experiment pulse of
    /// `pulse.sigma_t_ns`; the detection efficiency defaults to the value
    /// that gives `click_rate` (0.25).
    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let e = &self.experiment;
        let d = ExperimentConfig {
            eta_detect: 0.0,
            ..exp_base()
        };
        let medium = self.medium()?;
        let pulse_rms = self.pulse()?.intensity_rms;
        let p_transmit = match e.p_transmit {
            Some(p) => p,
            None => transmission_probability(&PulseSpec::gaussian(pulse_rms, 0.0, 1.0)?, &medium)?,
        };
        let osc = Oscillation {
            amplitude: e.osc_amplitude_rad.unwrap_or(d.osc.amplitude),
            period: e.osc_period_ns.map_or(d.osc.period, |x| x / PER_NS),
            damping: e.osc_damping_ns.map_or(d.osc.damping, |x| x / PER_NS),
        };
        let mut cfg = ExperimentConfig {
            mean_photons: e.mean_photons.unwrap_or(d.mean_photons),
            p_transmit,
            eta_detect: e.eta_detect.unwrap_or(0.0),
            dark_prob: e.dark_prob.unwrap_or(d.dark_prob),
            phi_atom: e.phi_atom_rad,
            probe_detuning: e.probe_detuning_mhz.map_or(d.probe_detuning, |x| 2.0 * PI * x * MHZ),
            tau_sp: medium.tau_sp,
            shot_len: e.shot_len_ns.map_or(d.shot_len, |x| x / PER_NS),
            n_samples: e.n_samples.unwrap_or(d.n_samples),
            sample_dt: e.sample_dt_ns.map_or(d.sample_dt, |x| x / PER_NS),
            meas_bandwidth: e.meas_bandwidth_mhz.map_or(d.meas_bandwidth, |x| x * MHZ),
            pulse_rms,
            arrival_sample: e.arrival_sample.unwrap_or(d.arrival_sample),
            phase_noise_rms: e.phase_noise_rms_rad.unwrap_or(d.phase_noise_rms),
            drift: e.drift_rms_rad.unwrap_or(d.drift),
            osc,
            prop_noise_s: e.prop_noise_s.unwrap_or(d.prop_noise_s),
            od_coupling: e.od_coupling.unwrap_or(d.od_coupling),
            tau_t_frac: e.tau_t_frac.unwrap_or(d.tau_t_frac),
            tau_l_frac: e.tau_l_frac,
            record_truth: e.record_truth.unwrap_or(false),
        };
        match (e.eta_detect, e.click_rate) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "experiment: give either eta_detect or click_rate, not both".into(),
                ))
            }
            (Some(_), None) => {}
            (None, rate) => cfg = cfg.with_click_rate(rate.unwrap_or(0.25))?,
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n_shots(&self) -> Result<u64> {
        match self.simulate.n_shots.unwrap_or(100_000) {
            0 => Err(Error::invalid("simulate.n_shots", "must be >= 1")),
            n => Ok(n),
        }
    }

    pub fn phi0_reference(&self) -> Result<Option<(f64, f64)>> {
        match (self.analyze.phi0_rad, self.analyze.phi0_se_rad) {
            (None, None) => Ok(None),
            (Some(v), Some(se)) if v.is_finite() && se >= 0.0 => Ok(Some((v, se))),
            _ => Err(Error::Config("analyze: phi0_rad needs a non-negative phi0_se_rad".into())),
        }
    }

    pub fn s2(&self) -> Result<Option<(f64, f64)>> {
        match (self.analyze.s2, self.analyze.s2_se) {
            (None, None) => Ok(None),
            (Some(v), se) if v.is_finite() && se.unwrap_or(0.0) >= 0.0 => Ok(Some((v, se.unwrap_or(0.0)))),
            _ => Err(Error::Config("analyze: s2_se needs s2 and must be >= 0".into())),
        }
    }

    pub fn calibration_photons(&self) -> Result<Vec<f64>> {
        let v = self
            .calibrate
            .photon_numbers
            .clone()
            .unwrap_or_else(|| vec![588.0, 898.0, 1527.0, 3040.0]);
        if v.len() < 4 || v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::invalid("calibrate.photon_numbers", "need >= 4 positive photon numbers"));
        }
        Ok(v)
    }

    /// Checks every section that the given subcommand reads.
    pub fn validate_for(&self, command: &str) -> Result<()> {
        if self.workers == Some(0) {
            return Err(Error::invalid("workers", "must be >= 1"));
        }
        match command {
            "propagate" => {
                self.medium()?;
                self.pulse()?;
                self.depths()?;
            }
            "models" => {
                self.medium()?;
                self.model_bandwidths()?;
                let g = self.od_grid();
                if g.is_empty() || g.iter().any(|x| !(*x >= 0.0 && x.is_finite())) || g.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::invalid("models.od_grid", "must be non-empty, >= 0 and strictly increasing"));
                }
                if self.slices() < crate::dwell::MIN_SLICES {
                    return Err(Error::invalid("models.slices", format!("must be >= {}", crate::dwell::MIN_SLICES)));
                }
            }
            "simulate" => {
                self.experiment()?;
                self.n_shots()?;
            }
            "analyze" => {
                self.experiment()?;
                self.phi0_reference()?;
                self.s2()?;
            }
            "calibrate" => {
                self.experiment()?;
                self.calibration_photons()?;
                if let Some(r) = self.calibrate.click_rate {
                    if !(r > 0.0 && r < 1.0) {
                        return Err(Error::invalid("calibrate.click_rate", "must lie in (0, 1)"));
                    }
                }
            }
            other => return Err(Error::Config(format!("unknown subcommand {other:?}"))),
        }
        Ok(())
    }
}

fn exp_base() -> ExperimentConfig {
    ExperimentConfig {
        eta_detect: 0.0,
        ..ExperimentConfig::default()
    }
}

/// Canonical text of a resolved experiment: TOML with sorted keys and SI
/// values in shortest round-trip form.
pub fn canonical_text(cfg: &ExperimentConfig) -> Result<String> {
    let value = toml::Value::try_from(cfg).map_err(|e| Error::Config(e.to_string()))?;
    toml::to_string(&value).map_err(|e| Error::Config(e.to_string()))
}

pub fn config_digest(cfg: &ExperimentConfig) -> Result<[u8; 32]> {
    Ok(Sha256::digest(canonical_text(cfg)?.as_bytes()).into())
}

pub fn digest_hex(d: &[u8; 32]) -> String {
    d.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_resolves_to_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.medium().unwrap(), MediumSpec::default());
        assert_eq!(c.pulse().unwrap(), PulseSpec::gaussian(10e-9, 0.0, 1.0).unwrap());
        let e = c.experiment().unwrap();
        let d = ExperimentConfig::default();
        assert!((e.eta_detect - d.eta_detect).abs() < 1e-15);
        assert!((e.p_transmit - d.p_transmit).abs() < 1e-15);
        for name in ["propagate", "models", "simulate", "analyze", "calibrate"] {
            c.validate_for(name).unwrap();
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let err = RunConfig::parse("[medium]\npeak_od = 4.0\nbogus = 1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus"), "{msg}");
        assert!(msg.contains('3'), "{msg}");
        assert_eq!(err.kind(), crate::error::ErrorKind::Config);
    }

    #[test]
    fn invalid_values_fail_validation() {
        let c = RunConfig::parse("[medium]\npeak_od = -1.0\n").unwrap();
        assert!(c.validate_for("propagate").is_err());
        let c = RunConfig::parse("[experiment]\neta_detect = 0.1\nclick_rate = 0.2\n").unwrap();
        assert!(c.validate_for("simulate").is_err());
        let c = RunConfig::parse("[models]\nod_grid = [1.0, 0.5]\n").unwrap();
        assert!(c.validate_for("models").is_err());
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = ExperimentConfig::default();
        let t1 = canonical_text(&a).unwrap();
        let t2 = canonical_text(&a.clone()).unwrap();
        assert_eq!(t1, t2);
        let keys: Vec<&str> = t1.lines().filter_map(|l| l.split(" = ").next()).filter(|k| !k.starts_with('[')).collect();
        let top: Vec<&str> = keys.iter().take_while(|k| !k.is_empty()).cloned().collect();
        let mut sorted = top.clone();
        sorted.sort();
        assert_eq!(top, sorted);
        let b = ExperimentConfig {
            mean_photons: 34.000001,
            ..a.clone()
        };
        assert_ne!(config_digest(&a).unwrap(), config_digest(&b).unwrap());
        assert_eq!(digest_hex(&[0xab; 32]).len(), 64);
    }
}
