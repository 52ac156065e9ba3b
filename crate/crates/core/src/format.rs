//! Binary shot-record files.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic      4 bytes  "XDWL"
//! version    u32
//! n_samples  u32
//! flags      u32      bit 0: records carry a truth block
//! n_shots    u64
//! digest     32 bytes SHA-256 of the canonical config text
//! records    n_shots x { n_samples x f64, click u8, 3 x u8 padding,
//!                        [n_incident, n_transmitted, n_detected, dwell] x f64 }
//! ```

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use crate::shots::{ShotRecord, ShotTruth};
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"XDWL";
pub const FORMAT_VERSION: u32 = 1;
pub const FLAG_TRUTH: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8 + 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FileHeader {
    pub version: u32,
    pub n_samples: u32,
    pub flags: u32,
    pub n_shots: u64,
    pub digest: [u8; 32],
}

impl FileHeader {
    pub fn new(n_samples: u32, n_shots: u64, truth: bool, digest: [u8; 32]) -> Self {
        FileHeader {
            version: FORMAT_VERSION,
            n_samples,
            flags: if truth { FLAG_TRUTH } else { 0 },
            n_shots,
            digest,
        }
    }

    pub fn has_truth(&self) -> bool {
        self.flags & FLAG_TRUTH != 0
    }

    pub fn record_len(&self) -> usize {
        self.n_samples as usize * 8 + 4 + if self.has_truth() { 32 } else { 0 }
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..8].copy_from_slice(&self.version.to_le_bytes());
        b[8..12].copy_from_slice(&self.n_samples.to_le_bytes());
        b[12..16].copy_from_slice(&self.flags.to_le_bytes());
        b[16..24].copy_from_slice(&self.n_shots.to_le_bytes());
        b[24..56].copy_from_slice(&self.digest);
        b
    }

    pub fn from_bytes(b: &[u8; HEADER_LEN]) -> Result<Self> {
        if b[0..4] != MAGIC {
            return Err(Error::Format("not a shot-record file (bad magic)".into()));
        }
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let flags = u32_at(12);
        if flags & !FLAG_TRUTH != 0 {
            return Err(Error::Format(format!("unknown header flags {flags:#x}")));
        }
        let n_samples = u32_at(8);
        if n_samples == 0 {
            return Err(Error::Format("header declares zero samples per shot".into()));
        }
        Ok(FileHeader {
            version,
            n_samples,
            flags,
            n_shots: u64::from_le_bytes(b[16..24].try_into().expect("8 bytes")),
            digest: b[24..56].try_into().expect("32 bytes"),
        })
    }
}

/// Streaming writer; checks that exactly `header.n_shots` records are written.
pub struct ShotWriter<W: Write> {
    inner: W,
    header: FileHeader,
    written: u64,
    path: PathBuf,
    buf: Vec<u8>,
}

impl<W: Write> ShotWriter<W> {
    pub fn new(mut inner: W, header: FileHeader, path: &Path) -> Result<Self> {
        inner.write_all(&header.to_bytes()).map_err(|e| Error::io(path, e))?;
        Ok(ShotWriter {
            inner,
            header,
            written: 0,
            path: path.to_path_buf(),
            buf: Vec::with_capacity(header.record_len()),
        })
    }

    pub fn write(&mut self, rec: &ShotRecord) -> Result<()> {
        if rec.phases.len() != self.header.n_samples as usize {
            return Err(Error::Format(format!(
                "record has {} samples, header declares {}",
                rec.phases.len(),
                self.header.n_samples
            )));
        }
        if self.written == self.header.n_shots {
            return Err(Error::Format("more records than declared in the header".into()));
        }
        self.buf.clear();
        for p in &rec.phases {
            self.buf.extend_from_slice(&p.to_le_bytes());
        }
        self.buf.extend_from_slice(&[rec.click as u8, 0, 0, 0]);
        if self.header.has_truth() {
            let t = rec
                .truth
                .ok_or_else(|| Error::Format("header flags truth but record has none".into()))?;
            for x in [t.n_incident as f64, t.n_transmitted as f64, t.n_detected as f64, t.dwell_total] {
                self.buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        self.inner.write_all(&self.buf).map_err(|e| Error::io(&self.path, e))?;
        self.written += 1;
        Ok(())
    }

    /// Returns the inner writer after checking the record count.
    pub fn finish(self) -> Result<W> {
        if self.written != self.header.n_shots {
            return Err(Error::Format(format!(
                "{} records written, header declares {}",
                self.written, self.header.n_shots
            )));
        }
        Ok(self.inner)
    }
}

/// Streaming reader over the records of a shot file.
pub struct ShotReader<R: Read> {
    inner: R,
    header: FileHeader,
    read: u64,
    buf: Vec<u8>,
}

impl ShotReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        let reader = ShotReader::new(BufReader::with_capacity(1 << 20, file))?;
        let expected = HEADER_LEN as u64 + reader.header.n_shots * reader.header.record_len() as u64;
        if len != expected {
            return Err(Error::Format(format!(
                "{}: file is {len} bytes, header implies {expected}",
                path.display()
            )));
        }
        Ok(reader)
    }
}

impl<R: Read> ShotReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut b = [0u8; HEADER_LEN];
        inner
            .read_exact(&mut b)
            .map_err(|_| Error::Format("file shorter than the header".into()))?;
        let header = FileHeader::from_bytes(&b)?;
        Ok(ShotReader {
            inner,
            header,
            read: 0,
            buf: vec![0u8; header.record_len()],
        })
    }

    pub fn header(&self) -> &FileHeader {
        &self.header
    }

    /// Reads the next record into `phases`; `Ok(None)` after the last one.
    pub fn next_into(&mut self, phases: &mut Vec<f64>) -> Result<Option<(bool, Option<ShotTruth>)>> {
        if self.read == self.header.n_shots {
            return Ok(None);
        }
        self.inner
            .read_exact(&mut self.buf)
            .map_err(|_| Error::Format(format!("truncated at record {}", self.read)))?;
        let n = self.header.n_samples as usize;
        phases.clear();
        phases.extend(
            self.buf[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))),
        );
        let click = match self.buf[8 * n] {
            0 => false,
            1 => true,
            v => return Err(Error::Format(format!("record {}: click byte {v}", self.read))),
        };
        let truth = self.header.has_truth().then(|| {
            let f = |i: usize| {
                let o = 8 * n + 4 + 8 * i;
                f64::from_le_bytes(self.buf[o..o + 8].try_into().expect("8 bytes"))
            };
            ShotTruth {
                n_incident: f(0) as u64,
                n_transmitted: f(1) as u64,
                n_detected: f(2) as u64,
                dwell_total: f(3),
            }
        });
        self.read += 1;
        Ok(Some((click, truth)))
    }

    pub fn next_record(&mut self) -> Result<Option<ShotRecord>> {
        let mut phases = Vec::with_capacity(self.header.n_samples as usize);
        let index = self.read;
        Ok(match self.next_into(&mut phases)? {
            Some((click, truth)) => {
                let rec = ShotRecord { phases, click, truth };
                rec.validate(index)?;
                Some(rec)
            }
            None => None,
        })
    }
}

/// Reads an entire shot file.
pub fn read_all(path: &Path) -> Result<(FileHeader, Vec<ShotRecord>)> {
    let mut r = ShotReader::open(path)?;
    let mut out = Vec::with_capacity(r.header.n_shots.min(1 << 24) as usize);
    while let Some(rec) = r.next_record()? {
        out.push(rec);
    }
    Ok((r.header, out))
}
