//! On-disk formats: EMBS embedding streams, class-bank manifests, run configs
//! and JSON reports.
//!
//! An EMBS file is a 28-byte little-endian header
//!
//! ```text
//! magic "EMBS" | version u32 = 1 | C u32 | N u32 | record_count u64 | flags u32
//! ```
//!
//! (flag bit 0: truths present) followed by `record_count` records, each
//!
//! ```text
//! truth i32 (-1 = unknown) | view_count u16 | (1 + view_count) * C f32
//! ```
//!
//! with the original embedding first. Vectors are stored as `f32`; a vector
//! whose norm is within 1e-4 of 1 is read back verbatim, anything else is
//! renormalized with a warning. Writing what was read therefore reproduces the
//! file byte for byte.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::cache::CacheDumpEntry;
use crate::error::{Error, Result};
use crate::math::{normalize, ClassBank, Embedding, UNIT_TOL};
use crate::pipeline::{MetricsReport, RunConfig, SampleRecord, StreamRecord};

pub const MAGIC: [u8; 4] = *b"EMBS";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 28;
/// Stored vectors within this distance of unit norm are kept verbatim.
pub const STORED_UNIT_TOL: f64 = 1e-4;

const FLAG_TRUTHS: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StreamHeader {
    /// Embedding dimension `C`.
    pub dim: u32,
    /// Number of classes `N`.
    pub n_classes: u32,
    pub record_count: u64,
    pub truths_present: bool,
}

impl StreamHeader {
    /// Header describing `records`, with the truth flag set when any record is labeled.
    pub fn for_records(dim: usize, n_classes: usize, records: &[StreamRecord]) -> Self {
        StreamHeader {
            dim: dim as u32,
            n_classes: n_classes as u32,
            record_count: records.len() as u64,
            truths_present: records.iter().any(|r| r.truth.is_some()),
        }
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..8].copy_from_slice(&VERSION.to_le_bytes());
        b[8..12].copy_from_slice(&self.dim.to_le_bytes());
        b[12..16].copy_from_slice(&self.n_classes.to_le_bytes());
        b[16..24].copy_from_slice(&self.record_count.to_le_bytes());
        let flags = if self.truths_present { FLAG_TRUTHS } else { 0 };
        b[24..28].copy_from_slice(&flags.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8; HEADER_LEN]) -> Result<Self> {
        if b[0..4] != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"EMBS\"",
                String::from_utf8_lossy(&b[0..4])
            )));
        }
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(Error::Version(version));
        }
        let header = StreamHeader {
            dim: u32_at(8),
            n_classes: u32_at(12),
            record_count: u64::from_le_bytes(b[16..24].try_into().unwrap()),
            truths_present: u32_at(24) & FLAG_TRUTHS != 0,
        };
        if header.dim == 0 || header.n_classes == 0 {
            return Err(Error::Format(format!(
                "header declares C = {}, N = {}; both must be at least 1",
                header.dim, header.n_classes
            )));
        }
        Ok(header)
    }

    /// Size in bytes of a record with `n_views` views.
    pub fn record_len(&self, n_views: usize) -> u64 {
        4 + 2 + (1 + n_views as u64) * self.dim as u64 * 4
    }
}

/// Streaming EMBS reader. Holds at most one record payload in memory.
pub struct StreamReader<R> {
    inner: R,
    header: StreamHeader,
    next: u64,
    renormalized: u64,
    done: bool,
    buf: Vec<u8>,
}

impl StreamReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> StreamReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut b = [0u8; HEADER_LEN];
        inner.read_exact(&mut b).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => {
                Error::Format(format!("file shorter than the {HEADER_LEN}-byte header"))
            }
            _ => Error::Io(e),
        })?;
        let header = StreamHeader::from_bytes(&b)?;
        Ok(StreamReader {
            inner,
            header,
            next: 0,
            renormalized: 0,
            done: false,
            buf: Vec::new(),
        })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    /// Vectors renormalized so far because their stored norm was off by more than 1e-4.
    pub fn renormalized(&self) -> u64 {
        self.renormalized
    }

    fn read_record(&mut self) -> Result<StreamRecord> {
        let id = self.next;
        let truncated = |e: io::Error| match e.kind() {
            ErrorKind::UnexpectedEof => Error::Truncated { record: id },
            _ => Error::Io(e),
        };
        let mut head = [0u8; 6];
        self.inner.read_exact(&mut head).map_err(truncated)?;
        let truth = i32::from_le_bytes(head[0..4].try_into().unwrap());
        let n_views = u16::from_le_bytes(head[4..6].try_into().unwrap()) as usize;

        let dim = self.header.dim as usize;
        // grow with the data actually present so a corrupt C cannot force a huge allocation
        let want = self.header.record_len(n_views) - 6;
        self.buf.clear();
        (&mut self.inner)
            .take(want)
            .read_to_end(&mut self.buf)
            .map_err(Error::Io)?;
        if (self.buf.len() as u64) < want {
            return Err(Error::Truncated { record: id });
        }

        let truth = match truth {
            -1 => None,
            t if t >= 0 && (t as u32) < self.header.n_classes => Some(t as usize),
            t => {
                return Err(Error::Record {
                    id,
                    source: Box::new(Error::Format(format!(
                        "truth {t} is neither -1 nor a class index below {}",
                        self.header.n_classes
                    ))),
                })
            }
        };

        let mut vectors = Vec::with_capacity(1 + n_views);
        for chunk in self.buf.chunks_exact(dim * 4) {
            let values: Vec<f64> = chunk
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            let e = match Embedding::from_unit(values.clone(), STORED_UNIT_TOL) {
                Ok(e) => e,
                Err(_) => {
                    let e = normalize(&values).map_err(|e| e.at_record(id))?;
                    if self.renormalized == 0 {
                        warn!("record {id}: stored vector is not unit-norm, renormalizing");
                    }
                    self.renormalized += 1;
                    e
                }
            };
            vectors.push(e);
        }
        let mut vectors = vectors.into_iter();
        let original = vectors.next().expect("at least the original vector");
        Ok(StreamRecord {
            id,
            original,
            views: vectors.collect(),
            truth,
        })
    }

    fn check_trailing(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        loop {
            match self.inner.read(&mut probe) {
                Ok(0) => return Ok(()),
                Ok(_) => {
                    return Err(Error::Format(format!(
                        "trailing bytes after the {} declared records",
                        self.header.record_count
                    )))
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            }
        }
    }
}

impl<R: Read> Iterator for StreamReader<R> {
    type Item = Result<StreamRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        if self.next == self.header.record_count {
            self.done = true;
            if self.renormalized > 0 {
                warn!(
                    "{} stored vectors were renormalized on read",
                    self.renormalized
                );
            }
            return self.check_trailing().err().map(Err);
        }
        let r = self.read_record();
        self.next += 1;
        if r.is_err() {
            self.done = true;
        }
        Some(r)
    }
}

/// Opens `path` for lazy reading.
pub fn read_stream(path: impl AsRef<Path>) -> Result<StreamReader<BufReader<File>>> {
    StreamReader::open(path)
}

/// Reads every record of `path` into memory.
pub fn read_stream_all(path: impl AsRef<Path>) -> Result<(StreamHeader, Vec<StreamRecord>)> {
    let reader = read_stream(path)?;
    let header = *reader.header();
    let records = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, records))
}

/// Streaming EMBS writer. The header, including `record_count`, is written up front.
pub struct StreamWriter<W: Write> {
    inner: W,
    header: StreamHeader,
    written: u64,
    bytes: u64,
}

impl<W: Write> StreamWriter<W> {
    pub fn new(mut inner: W, header: StreamHeader) -> Result<Self> {
        if header.dim == 0 || header.n_classes == 0 {
            return Err(Error::config("stream header needs C >= 1 and N >= 1"));
        }
        inner.write_all(&header.to_bytes())?;
        Ok(StreamWriter {
            inner,
            header,
            written: 0,
            bytes: HEADER_LEN as u64,
        })
    }

    pub fn write_record(&mut self, rec: &StreamRecord) -> Result<()> {
        if self.written == self.header.record_count {
            return Err(Error::config(format!(
                "header declares {} records, refusing to write more",
                self.header.record_count
            )));
        }
        let dim = self.header.dim as usize;
        for e in std::iter::once(&rec.original).chain(&rec.views) {
            if e.dim() != dim {
                return Err(Error::Dim {
                    expected: dim,
                    found: e.dim(),
                }
                .at_record(rec.id));
            }
        }
        let truth: i32 = match rec.truth {
            None => -1,
            Some(t) if (t as u64) < self.header.n_classes as u64 => t as i32,
            Some(t) => {
                return Err(Error::Label {
                    label: t,
                    n_classes: self.header.n_classes as usize,
                }
                .at_record(rec.id))
            }
        };
        let n_views: u16 = rec.views.len().try_into().map_err(|_| {
            Error::Format(format!(
                "{} views exceed the u16 view count",
                rec.views.len()
            ))
            .at_record(rec.id)
        })?;
        let mut buf = Vec::with_capacity(self.header.record_len(rec.views.len()) as usize);
        buf.extend_from_slice(&truth.to_le_bytes());
        buf.extend_from_slice(&n_views.to_le_bytes());
        for e in std::iter::once(&rec.original).chain(&rec.views) {
            for &x in e.as_slice() {
                buf.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        self.inner.write_all(&buf)?;
        self.written += 1;
        self.bytes += buf.len() as u64;
        Ok(())
    }

    /// Flushes and returns the total byte count.
    pub fn finish(mut self) -> Result<u64> {
        if self.written != self.header.record_count {
            return Err(Error::config(format!(
                "header declares {} records but {} were written",
                self.header.record_count, self.written
            )));
        }
        self.inner.flush()?;
        Ok(self.bytes)
    }
}

/// Writes `records` under `header` and returns the file size in bytes.
pub fn write_stream(
    path: impl AsRef<Path>,
    header: &StreamHeader,
    records: &[StreamRecord],
) -> Result<u64> {
    if header.record_count != records.len() as u64 {
        return Err(Error::config(format!(
            "header declares {} records, {} given",
            header.record_count,
            records.len()
        )));
    }
    let mut w = StreamWriter::new(BufWriter::new(File::create(path)?), *header)?;
    for r in records {
        w.write_record(r)?;
    }
    w.finish()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BankManifest {
    names: Vec<String>,
    #[serde(rename = "C")]
    dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<PathBuf>,
}

fn weights_path(manifest: &Path, declared: Option<&Path>) -> PathBuf {
    match declared {
        Some(p) if p.is_absolute() => p.to_path_buf(),
        Some(p) => manifest.parent().unwrap_or(Path::new("")).join(p),
        None => manifest.with_extension("f32"),
    }
}

/// Reads a class bank from its JSON manifest.
///
/// The manifest is `{"names": [...], "C": int}` with an optional `"weights"`
/// path; by default the weights live next to it with the extension `.f32`, as
/// `N * C` little-endian `f32` in row-major order. Rows that are not unit-norm
/// are normalized with a warning.
pub fn read_class_bank(path: impl AsRef<Path>) -> Result<ClassBank> {
    read_class_bank_counted(path).map(|(bank, _)| bank)
}

/// [`read_class_bank`], also returning how many rows had to be normalized.
pub fn read_class_bank_counted(path: impl AsRef<Path>) -> Result<(ClassBank, usize)> {
    let path = path.as_ref();
    let manifest: BankManifest = serde_json::from_slice(&fs::read(path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if manifest.dim == 0 {
        return Err(Error::Format("manifest declares C = 0".into()));
    }
    let wpath = weights_path(path, manifest.weights.as_deref());
    let raw = fs::read(&wpath)?;
    let row_bytes = manifest.dim * 4;
    if raw.len() % row_bytes != 0 {
        return Err(Error::Format(format!(
            "{}: {} bytes is not a whole number of {}-dimensional f32 rows",
            wpath.display(),
            raw.len(),
            manifest.dim
        )));
    }
    let n_rows = raw.len() / row_bytes;
    if n_rows != manifest.names.len() {
        return Err(Error::Format(format!(
            "{} class names for {} weight rows",
            manifest.names.len(),
            n_rows
        )));
    }
    let mut fixed = 0;
    let mut rows = Vec::with_capacity(n_rows);
    for (i, chunk) in raw.chunks_exact(row_bytes).enumerate() {
        let values: Vec<f64> = chunk
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let row = match Embedding::from_unit(values.clone(), UNIT_TOL) {
            Ok(e) => e,
            Err(_) => {
                warn!("class bank row {i} is not unit-norm, normalizing");
                fixed += 1;
                normalize(&values)?
            }
        };
        rows.push(row);
    }
    Ok((ClassBank::new(manifest.names, rows)?, fixed))
}

/// Writes `bank` as a manifest at `path` plus the sibling `.f32` weight file.
pub fn write_class_bank(path: impl AsRef<Path>, bank: &ClassBank) -> Result<()> {
    let path = path.as_ref();
    let manifest = BankManifest {
        names: bank.names().to_vec(),
        dim: bank.dim(),
        weights: None,
    };
    fs::write(path, serde_json::to_vec_pretty(&manifest)?)?;
    let mut raw = Vec::with_capacity(bank.n_classes() * bank.dim() * 4);
    for row in bank.rows() {
        for &x in row.as_slice() {
            raw.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    fs::write(weights_path(path, None), raw)?;
    Ok(())
}

/// Loads a [`RunConfig`] from JSON; absent fields take their defaults.
pub fn read_run_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_slice(&fs::read(path)?)?;
    cfg.validate()?;
    Ok(cfg)
}

/// What to include in a report beyond the summary.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReportOptions<'a> {
    pub per_sample: bool,
    pub cache: Option<&'a [CacheDumpEntry]>,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    top1: Option<f64>,
    n: usize,
    n_labeled: usize,
    per_class: &'a [Option<f64>],
    config: &'a RunConfig,
    wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_sample: Option<&'a [SampleRecord]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cache: Option<&'a [CacheDumpEntry]>,
}

/// Report as pretty-printed JSON with a fixed key order.
pub fn report_json(report: &MetricsReport, opts: ReportOptions<'_>) -> Result<String> {
    let view = ReportJson {
        top1: report.top1,
        n: report.n,
        n_labeled: report.n_labeled,
        per_class: &report.per_class,
        config: &report.config,
        wall_time_s: report.wall_time_s,
        per_sample: opts.per_sample.then_some(report.per_sample.as_slice()),
        cache: opts.cache,
    };
    let mut s = serde_json::to_string_pretty(&view)?;
    s.push('\n');
    Ok(s)
}

pub fn write_report(
    path: impl AsRef<Path>,
    report: &MetricsReport,
    opts: ReportOptions<'_>,
) -> Result<()> {
    fs::write(path, report_json(report, opts)?)?;
    Ok(())
}
