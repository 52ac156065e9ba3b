//! `dwelltime` command line: propagate, models, simulate, analyze, calibrate.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use dwelltime::bloch::{
    detect_phase_flip, excitation_time, integrate_weak_bloch, pulse_area, BlochConfig,
};
use dwelltime::config::{canonical_text, config_digest, digest_hex, RunConfig};
use dwelltime::dwell::{model_family, write_curves_csv};
use dwelltime::error::ErrorKind;
use dwelltime::estimator::{
    analyze_bins, bin_file, calibration_campaigns, click_inference_check, combine_detunings, AnalysisInputs,
    AnalysisReport, DetuningEntry,
};
use dwelltime::medium::{propagate_spectral, transmission_probability, SampledEnvelope, TimeGrid};
use dwelltime::par::{self, Execution};
use dwelltime::shots::{run_campaign, xps_template};
use dwelltime::table::{write_area_table, write_envelope, write_excitation, AreaRow};
use dwelltime::Error;

#[derive(Debug, Parser)]
#[command(name = "dwelltime", version, about = "Excitation dwell time of transmitted photons")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads; overrides the configured count.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Analyze a shot file even if its config digest differs.
    #[arg(long, global = true)]
    force_digest: bool,
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Propagate the configured pulse, write envelopes, excitation and area tables.
    Propagate,
    /// Dwell-time model curves over optical depth.
    Models,
    /// Generate a shot-record campaign.
    Simulate,
    /// Run the estimator chain on a shot file.
    Analyze {
        /// Shot file; defaults to `analyze.input`, then `<out>/shots.xdwl`.
        input: Option<PathBuf>,
    },
    /// Fit the proportional-noise variance from bright campaigns.
    Calibrate,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Propagate => "propagate",
            Command::Models => "models",
            Command::Simulate => "simulate",
            Command::Analyze { .. } => "analyze",
            Command::Calibrate => "calibrate",
        }
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::DataFormat => 3,
        ErrorKind::Numerical => 4,
        ErrorKind::Io => 1,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &Value) -> Result<(), Error> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::io(path, e.into()))?;
    std::io::Write::write_all(&mut w, b"\n").map_err(|e| Error::io(path, e))
}

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("plain data serializes")
}

struct Run {
    cfg: RunConfig,
    seed: u64,
    out: PathBuf,
    force_digest: bool,
}

fn propagate(run: &Run) -> Result<(), Error> {
    let medium = run.cfg.medium()?;
    let pulse = run.cfg.pulse()?;
    let depths = run.cfg.depths()?;
    let env = SampledEnvelope::from_pulse(&pulse, &TimeGrid::for_pulse(&pulse, &medium))?;
    let bloch = BlochConfig::weak(&env, &medium);
    let area_in = pulse_area(&env, &bloch);
    let n_in = env.photon_number();

    let mut rows = Vec::with_capacity(depths.len());
    for &d in &depths {
        let out = propagate_spectral(&env, &medium, d)?;
        let area = pulse_area(&out, &bloch);
        rows.push(AreaRow {
            depth: d,
            area,
            area_ratio: if area_in != 0.0 { area / area_in } else { 0.0 },
            energy_ratio: out.photon_number() / n_in,
        });
    }
    let output = propagate_spectral(&env, &medium, 1.0)?;
    let rec = integrate_weak_bloch(&output, &bloch)?;
    let flip = detect_phase_flip(&output);
    let p_transmit = transmission_probability(&pulse, &medium)?;

    write_envelope(&env, create(&run.out.join("envelope_in.csv"))?)?;
    write_envelope(&output, create(&run.out.join("envelope_out.csv"))?)?;
    write_excitation(&rec, create(&run.out.join("excitation.csv"))?)?;
    write_area_table(&rows, create(&run.out.join("area_vs_depth.csv"))?)?;
    let diag = json!({
        "peak_od": medium.peak_od,
        "tau_sp_s": medium.tau_sp,
        "sigma_t_s": pulse.intensity_rms,
        "carrier_detuning_rad_s": pulse.carrier_detuning,
        "n_samples": env.len(),
        "dt_s": env.dt,
        "p_transmit_spectral": p_transmit,
        "p_transmit_propagated": output.photon_number() / n_in,
        "input_area_rad": area_in,
        "output_area_rad": pulse_area(&output, &bloch),
        "phase_flip_time_s": flip,
        "output_excitation_time_s": excitation_time(&rec),
        "output_peak_excitation": rec.peak(),
        "output_decay_truncated": rec.decay_truncated(),
        "flow_balance_residual": rec.flow_balance_residual(),
    });
    write_json(&run.out.join("diagnostics.json"), &diag)?;
    match flip {
        Some(t) => log::info!("phase flip at {:.3} ns", t * 1e9),
        None => log::info!("no phase flip"),
    }
    Ok(())
}

/// Returns the number of failed model points.
fn models(run: &Run) -> Result<usize, Error> {
    let (egal, mc) = run.cfg.model_bandwidths()?;
    let (curves, errors) = model_family(
        &run.cfg.medium()?,
        &run.cfg.od_grid(),
        &egal,
        &mc,
        run.cfg.slices(),
        Execution::Parallel,
    )?;
    for e in &errors {
        log::error!("{e}");
    }
    write_curves_csv(&curves, create(&run.out.join("models.csv"))?)?;
    Ok(errors.len())
}

fn simulate(run: &Run) -> Result<(), Error> {
    let exp = run.cfg.experiment()?;
    let n = run.cfg.n_shots()?;
    let digest = config_digest(&exp)?;
    let path = run
        .cfg
        .simulate
        .output
        .clone()
        .unwrap_or_else(|| run.out.join("shots.xdwl"));
    let summary = run_campaign(&exp, n, run.seed, digest, &path, Execution::Parallel)?;
    let mut v = to_value(&summary);
    v["digest"] = json!(digest_hex(&digest));
    v["output"] = json!(path);
    v["config"] = json!(canonical_text(&exp)?);
    write_json(&run.out.join("summary.json"), &v)?;
    log::info!(
        "{n} shots, click rate {:.4} (expected {:.4})",
        summary.click_rate,
        summary.expected_click_rate
    );
    Ok(())
}

fn read_report_entry(path: &Path) -> Result<DetuningEntry, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let detuning = v
        .get("probe_detuning_rad_s")
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::Format(format!("{}: missing probe_detuning_rad_s", path.display())))?;
    let report: AnalysisReport =
        serde_json::from_value(v).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(report.detuning_entry(detuning))
}

fn analyze(run: &Run, input: Option<PathBuf>) -> Result<(), Error> {
    let exp = run.cfg.experiment()?;
    let path = input
        .or_else(|| run.cfg.analyze.input.clone())
        .unwrap_or_else(|| run.out.join("shots.xdwl"));
    let (header, campaign) = bin_file(&path)?;
    let digest = config_digest(&exp)?;
    if header.digest != digest {
        let err = Error::DigestMismatch {
            file: digest_hex(&header.digest),
            config: digest_hex(&digest),
        };
        if !run.force_digest {
            return Err(err);
        }
        log::warn!("{err}; continuing because of --force-digest");
    }
    if header.n_samples as usize != exp.n_samples {
        return Err(Error::Format(format!(
            "file has {} samples per shot, config {}",
            header.n_samples, exp.n_samples
        )));
    }
    let bins = campaign.bins.finish()?;
    let inputs = AnalysisInputs {
        mean_photons: exp.mean_photons,
        dark_prob: exp.dark_prob,
        phi0_reference: run.cfg.phi0_reference()?,
        s2: run.cfg.s2()?,
    };
    let report = analyze_bins(&bins, &xps_template(&exp)?, &inputs)?;
    bins.write_delta_csv(create(&run.out.join("delta_phi.csv"))?, exp.sample_dt)?;

    let mut v = to_value(&report);
    v["probe_detuning_rad_s"] = json!(exp.probe_detuning);
    v["input"] = json!(path);
    v["digest"] = json!(digest_hex(&header.digest));
    if let Some(truth) = &campaign.truth {
        let t = click_inference_check(truth, exp.mean_photons * exp.p_transmit, exp.eta_detect, exp.dark_prob)?;
        v["click_inference"] = to_value(&t);
    }
    write_json(&run.out.join("report.json"), &v)?;
    log::info!("ratio {:.4} +- {:.4}", report.ratio, report.ratio_se);

    if let Some(paths) = &run.cfg.analyze.combine_reports {
        let mut entries = vec![report.detuning_entry(exp.probe_detuning)];
        for p in paths {
            entries.push(read_report_entry(p)?);
        }
        let combined = combine_detunings(&entries)?;
        write_json(&run.out.join("combined.json"), &to_value(&combined))?;
        log::info!("combined ratio {:.4} +- {:.4}", combined.ratio, combined.se);
    }
    Ok(())
}

fn calibrate(run: &Run) -> Result<(), Error> {
    let exp = run.cfg.experiment()?;
    let photons = run.cfg.calibration_photons()?;
    let n = run.cfg.calibrate.n_shots.unwrap_or(1_000_000);
    let rate = run.cfg.calibrate.click_rate.unwrap_or(0.25);
    let cal = calibration_campaigns(&exp, &photons, rate, n, run.seed, Execution::Parallel)?;
    let mut v = to_value(&cal);
    v["n_shots_per_point"] = json!(n);
    v["click_rate"] = json!(rate);
    v["seed"] = json!(run.seed);
    write_json(&run.out.join("calibration.json"), &v)?;
    log::info!("s^2 = {:.3e} +- {:.1e}", cal.s2, cal.s2_se);
    Ok(())
}

fn execute(cli: &Cli) -> Result<usize, Error> {
    let cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.validate_for(cli.command.name())?;
    let workers = cli.common.workers.or(cfg.workers);
    if workers == Some(0) {
        return Err(Error::Config("--workers must be >= 1".into()));
    }
    if let Some(w) = workers {
        par::configure_workers(w);
    }
    std::fs::create_dir_all(&cli.common.out).map_err(|e| Error::io(&cli.common.out, e))?;
    let run = Run {
        seed: cli.common.seed.unwrap_or(cfg.seed()),
        cfg,
        out: cli.common.out.clone(),
        force_digest: cli.common.force_digest,
    };
    match &cli.command {
        Command::Propagate => propagate(&run).map(|_| 0),
        Command::Models => models(&run),
        Command::Simulate => simulate(&run).map(|_| 0),
        Command::Analyze { input } => analyze(&run, input.clone()).map(|_| 0),
        Command::Calibrate => calibrate(&run).map(|_| 0),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match execute(&cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(failed) => {
            eprintln!("error: {failed} model points failed");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
