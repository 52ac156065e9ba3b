//! CSV emission and re-reading. Floats are written with 17 significant
//! digits so that every binary64 value round-trips.

use std::io::{Read, Write};

use num_complex::Complex64;

use crate::bloch::ExcitationRecord;
use crate::medium::SampledEnvelope;
use crate::{Error, Result};

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn flush<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub const ENVELOPE_HEADER: [&str; 3] = ["t_s", "re", "im"];

pub fn write_envelope<W: Write>(env: &SampledEnvelope, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ENVELOPE_HEADER)?;
    for (i, s) in env.samples.iter().enumerate() {
        w.write_record([fmt_f64(env.time(i)), fmt_f64(s.re), fmt_f64(s.im)])?;
    }
    flush(w)
}

/// Reads an envelope written by [`write_envelope`]. The grid must be uniform.
pub fn read_envelope<R: Read>(input: R, carrier_detuning: f64) -> Result<SampledEnvelope> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().collect::<Vec<_>>() != ENVELOPE_HEADER {
        return Err(Error::Format("envelope CSV header must be t_s,re,im".into()));
    }
    let mut t = Vec::new();
    let mut samples = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format(format!("envelope CSV row {}: bad number in column {i}", line + 2)))
        };
        t.push(num(0)?);
        samples.push(Complex64::new(num(1)?, num(2)?));
    }
    if t.len() < 2 {
        return Err(Error::Format("envelope CSV needs at least two rows".into()));
    }
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    if t.windows(2).any(|w| ((w[1] - w[0]) / dt - 1.0).abs() > 1e-6) {
        return Err(Error::Format("envelope CSV time grid is not uniform".into()));
    }
    SampledEnvelope::new(t[0], dt, samples, carrier_detuning)
}

pub const EXCITATION_HEADER: [&str; 5] = ["t_s", "pe", "up", "coh_down", "spont"];

pub fn write_excitation<W: Write>(rec: &ExcitationRecord, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EXCITATION_HEADER)?;
    for i in 0..rec.len() {
        w.write_record([
            fmt_f64(rec.time(i)),
            fmt_f64(rec.pe[i]),
            fmt_f64(rec.up_flow[i]),
            fmt_f64(rec.coh_down_flow[i]),
            fmt_f64(rec.spont_flow[i]),
        ])?;
    }
    flush(w)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreaRow {
    pub depth: f64,
    pub area: f64,
    pub area_ratio: f64,
    pub energy_ratio: f64,
}

pub const AREA_HEADER: [&str; 4] = ["depth", "area_rad", "area_ratio", "energy_ratio"];

pub fn write_area_table<W: Write>(rows: &[AreaRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AREA_HEADER)?;
    for r in rows {
        w.write_record([fmt_f64(r.depth), fmt_f64(r.area), fmt_f64(r.area_ratio), fmt_f64(r.energy_ratio)])?;
    }
    flush(w)
}

/// Reads any numeric CSV with a header row into (header, rows).
pub fn read_numeric<R: Read>(input: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("row {}: {e}", line + 2)))?;
        rows.push(row);
    }
    Ok((header, rows))
}
