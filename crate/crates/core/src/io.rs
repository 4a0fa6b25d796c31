//! On-disk formats.
//!
//! Database directory:
//!
//! ```text
//! manifest.json        schema_version, format ("spectrum" | "impulse"),
//!                      rate_hz, fft_size, sets[{subject_id, trial, file}],
//!                      optional generator echo
//! sets/<file>.csv      spectrum: bin_index,re_o,im_o,re_c,im_c,re_m,im_m,re_r,im_r,re_s,im_s
//!                      impulse:  sample_index,o,c,m,r,s
//! ```
//!
//! Numbers are written in scientific notation with 17 significant digits,
//! so a write/read cycle is lossless. Filters and trained estimators are
//! JSON documents carrying a schema version; complex values are `[re, im]`
//! pairs and matrices are row-major arrays of rows.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::drp::{CombinedEstimator, PcaModel, RidgeModel};
use crate::eqdesign::{EqDesignConfig, EqFilter, FilterCoefficients, RSource};
use crate::error::{Error, Result};
use crate::spectra::{ir_to_fr, AtfDatabase, AtfSet, FrequencyResponse, ImpulseResponse, SampleRate};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const SPECTRUM_HEADER: [&str; 11] = [
    "bin_index", "re_o", "im_o", "re_c", "im_c", "re_m", "im_m", "re_r", "im_r", "re_s", "im_s",
];
const IMPULSE_HEADER: [&str; 6] = ["sample_index", "o", "c", "m", "r", "s"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetFormat {
    Spectrum,
    Impulse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub trial: u32,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub format: SetFormat,
    pub rate_hz: f64,
    pub fft_size: usize,
    pub sets: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
}

fn schema(file: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Schema {
        file: file.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn set_file_name(set: &AtfSet) -> String {
    let safe: String = set
        .subject_id
        .chars()
        .map(|ch| if ch.is_ascii_alphanumeric() || ch == '-' || ch == '_' { ch } else { '_' })
        .collect();
    format!("sets/{safe}_t{}.csv", set.trial)
}

/// Writes `db` in spectrum format. `generator` is echoed into the manifest.
pub fn write_database(db: &AtfDatabase, dir: &Path, generator: Option<serde_json::Value>) -> Result<()> {
    let (rate, fft_size) = match (db.rate(), db.fft_size()) {
        (Some(r), Some(n)) => (r, n),
        _ => return Err(Error::Empty("database to write")),
    };
    fs::create_dir_all(dir.join("sets"))?;
    let mut entries = Vec::with_capacity(db.len());
    for set in db.sets() {
        let file = set_file_name(set);
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(dir.join(&file))?;
        w.write_record(SPECTRUM_HEADER)?;
        for k in 0..set.o.num_bins() {
            let mut row = Vec::with_capacity(11);
            row.push(k.to_string());
            for path in set.paths() {
                row.push(num(path.bins()[k].re));
                row.push(num(path.bins()[k].im));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        entries.push(ManifestEntry {
            subject_id: set.subject_id.clone(),
            trial: set.trial,
            file,
        });
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        format: SetFormat::Spectrum,
        rate_hz: rate.hz(),
        fft_size,
        sets: entries,
        generator,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| schema(&path, 0, format!("cannot read manifest: {e}")))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| schema(&path, e.line() as u64, e.to_string()))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(schema(
            &path,
            0,
            format!("unsupported schema version {}", manifest.schema_version),
        ));
    }
    Ok(manifest)
}

pub fn read_database(dir: &Path) -> Result<AtfDatabase> {
    let manifest = read_manifest(dir)?;
    let mpath = dir.join(MANIFEST_FILE);
    let rate = SampleRate::new(manifest.rate_hz).map_err(|e| schema(&mpath, 0, e.to_string()))?;
    if manifest.fft_size < 2 || !manifest.fft_size.is_multiple_of(2) {
        return Err(schema(&mpath, 0, format!("fft_size {} must be even", manifest.fft_size)));
    }
    let sets = manifest
        .sets
        .iter()
        .map(|entry| {
            let path = dir.join(&entry.file);
            let paths = match manifest.format {
                SetFormat::Spectrum => read_spectrum_csv(&path, manifest.fft_size, rate)?,
                SetFormat::Impulse => read_impulse_csv(&path, manifest.fft_size, rate)?,
            };
            let [o, c, m, r, s] = paths;
            AtfSet::new(entry.subject_id.clone(), entry.trial, o, c, m, r, s)
        })
        .collect::<Result<Vec<_>>>()?;
    AtfDatabase::new(sets)
}

fn open_csv(path: &Path, header: &[&str]) -> Result<csv::Reader<fs::File>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| schema(path, 0, format!("cannot open: {e}")))?;
    let found = rdr.headers().map_err(|e| schema(path, 1, e.to_string()))?.clone();
    if found.len() != header.len() || found.iter().zip(header).any(|(a, b)| a != *b) {
        return Err(schema(path, 1, format!("expected header {}", header.join(","))));
    }
    Ok(rdr)
}

fn parse_row(path: &Path, record: &csv::StringRecord, width: usize) -> Result<(u64, Vec<f64>)> {
    let line = record.position().map_or(0, |p| p.line());
    if record.len() != width {
        return Err(schema(path, line, format!("expected {width} columns, found {}", record.len())));
    }
    let index: u64 = record[0]
        .parse()
        .map_err(|_| schema(path, line, format!("bad index {:?}", &record[0])))?;
    let values = record
        .iter()
        .skip(1)
        .map(|field| {
            field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| schema(path, line, format!("bad number {field:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((index, values))
}

fn read_spectrum_csv(path: &Path, fft_size: usize, rate: SampleRate) -> Result<[FrequencyResponse; 5]> {
    let mut rdr = open_csv(path, &SPECTRUM_HEADER)?;
    let nbins = fft_size / 2 + 1;
    let mut cols: [Vec<Complex64>; 5] = Default::default();
    for (expected, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| schema(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let (index, values) = parse_row(path, &record, 11)?;
        let line = record.position().map_or(0, |p| p.line());
        if index != expected as u64 {
            return Err(schema(path, line, format!("expected bin {expected}, found {index}")));
        }
        for (p, col) in cols.iter_mut().enumerate() {
            col.push(Complex64::new(values[2 * p], values[2 * p + 1]));
        }
    }
    if cols[0].len() != nbins {
        return Err(schema(path, 0, format!("expected {nbins} bins, found {}", cols[0].len())));
    }
    let fr = |bins: Vec<Complex64>| {
        FrequencyResponse::new(bins, fft_size, rate).map_err(|e| schema(path, 0, e.to_string()))
    };
    let [o, c, m, r, s] = cols;
    Ok([fr(o)?, fr(c)?, fr(m)?, fr(r)?, fr(s)?])
}

fn read_impulse_csv(path: &Path, fft_size: usize, rate: SampleRate) -> Result<[FrequencyResponse; 5]> {
    let mut rdr = open_csv(path, &IMPULSE_HEADER)?;
    let mut cols: [Vec<f64>; 5] = Default::default();
    for (expected, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| schema(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let (index, values) = parse_row(path, &record, 6)?;
        if index != expected as u64 {
            let line = record.position().map_or(0, |p| p.line());
            return Err(schema(path, line, format!("expected sample {expected}, found {index}")));
        }
        for (col, v) in cols.iter_mut().zip(values) {
            col.push(v);
        }
    }
    let fr = |taps: Vec<f64>| -> Result<FrequencyResponse> {
        let ir = ImpulseResponse::new(taps, rate).map_err(|e| schema(path, 0, e.to_string()))?;
        ir_to_fr(&ir, fft_size).map_err(|e| schema(path, 0, e.to_string()))
    };
    let [o, c, m, r, s] = cols;
    Ok([fr(o)?, fr(c)?, fr(m)?, fr(r)?, fr(s)?])
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| schema(path, e.line() as u64, e.to_string()))
}

type Pair = [f64; 2];

fn pairs(values: &[Complex64]) -> Vec<Pair> {
    values.iter().map(|z| [z.re, z.im]).collect()
}

fn unpairs(values: &[Pair]) -> Vec<Complex64> {
    values.iter().map(|p| Complex64::new(p[0], p[1])).collect()
}

fn matrix_rows(m: &DMatrix<Complex64>) -> Vec<Vec<Pair>> {
    m.row_iter().map(|row| row.iter().map(|z| [z.re, z.im]).collect()).collect()
}

fn rows_matrix(rows: &[Vec<Pair>], ncols: usize, what: &str) -> Result<DMatrix<Complex64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Invariant(format!("{what}: every row needs {ncols} entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| Complex64::new(rows[i][j][0], rows[i][j][1])))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Fir,
    Bins,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterFile {
    pub schema_version: u32,
    pub kind: FilterKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taps: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<Vec<Pair>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fft_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_hz: Option<f64>,
    pub config: EqDesignConfig,
    pub r_source: RSource,
    /// SHA-256 over the coefficient bit patterns, config and source tag.
    pub content_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
}

fn filter_hash(filter: &EqFilter) -> String {
    let mut h = Sha256::new();
    match &filter.coefficients {
        FilterCoefficients::Taps(taps) => {
            h.update(b"fir");
            for t in taps {
                h.update(t.to_le_bytes());
            }
        }
        FilterCoefficients::Bins(bins) => {
            h.update(b"bins");
            h.update((bins.fft_size() as u64).to_le_bytes());
            h.update(bins.rate().hz().to_le_bytes());
            for b in bins.bins() {
                h.update(b.re.to_le_bytes());
                h.update(b.im.to_le_bytes());
            }
        }
    }
    h.update(filter.config.mu.to_le_bytes());
    h.update(filter.config.d_proc_seconds.to_le_bytes());
    h.update((filter.config.taps as u64).to_le_bytes());
    h.update(format!("{:?}", filter.r_source).as_bytes());
    hex::encode(h.finalize())
}

impl FilterFile {
    pub fn from_filter(filter: &EqFilter, run_config: Option<serde_json::Value>) -> Self {
        let (kind, taps, bins, fft_size, rate_hz) = match &filter.coefficients {
            FilterCoefficients::Taps(t) => (FilterKind::Fir, Some(t.clone()), None, None, None),
            FilterCoefficients::Bins(b) => (
                FilterKind::Bins,
                None,
                Some(pairs(b.bins())),
                Some(b.fft_size()),
                Some(b.rate().hz()),
            ),
        };
        Self {
            schema_version: SCHEMA_VERSION,
            kind,
            taps,
            bins,
            fft_size,
            rate_hz,
            config: filter.config,
            r_source: filter.r_source,
            content_hash: filter_hash(filter),
            run_config,
        }
    }

    /// Rebuilds the filter and verifies the stored content hash.
    pub fn to_filter(&self) -> Result<EqFilter> {
        let coefficients = match self.kind {
            FilterKind::Fir => FilterCoefficients::Taps(
                self.taps.clone().ok_or_else(|| Error::Invariant("fir filter without taps".into()))?,
            ),
            FilterKind::Bins => {
                let bins = self.bins.as_ref().ok_or_else(|| Error::Invariant("bins filter without bins".into()))?;
                let fft_size = self.fft_size.ok_or_else(|| Error::Invariant("bins filter without fft_size".into()))?;
                let rate = SampleRate::new(self.rate_hz.ok_or_else(|| Error::Invariant("bins filter without rate".into()))?)?;
                FilterCoefficients::Bins(FrequencyResponse::new(unpairs(bins), fft_size, rate)?)
            }
        };
        let filter = EqFilter {
            coefficients,
            config: self.config,
            r_source: self.r_source,
        };
        if filter_hash(&filter) != self.content_hash {
            return Err(Error::Invariant("filter content hash mismatch".into()));
        }
        Ok(filter)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub fft_size: usize,
    pub rate_hz: f64,
    pub split_hz: f64,
    pub ridge_mu: f64,
    pub ridge_band_limit_hz: f64,
    pub ridge_gains: Vec<Pair>,
    pub components: usize,
    pub pca_band_hz: (f64, f64),
    pub pca_regularized: bool,
    pub s_mean: Vec<Pair>,
    pub r_mean: Vec<Pair>,
    /// `Nbins` rows of `K` entries.
    pub u_s: Vec<Vec<Pair>>,
    pub u_r: Vec<Vec<Pair>>,
    pub g_s_mean: Vec<Pair>,
    pub g_r_mean: Vec<Pair>,
    /// `K` rows of `K` entries.
    pub a_hat: Vec<Vec<Pair>>,
    /// Digest of the ordered training-set fingerprints.
    pub training_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
}

impl ModelFile {
    pub fn from_estimator(
        est: &CombinedEstimator,
        training_fingerprint: String,
        run_config: Option<serde_json::Value>,
    ) -> Self {
        let grid = &est.ridge.gains;
        Self {
            schema_version: SCHEMA_VERSION,
            fft_size: grid.fft_size(),
            rate_hz: grid.rate().hz(),
            split_hz: est.split_hz,
            ridge_mu: est.ridge.mu,
            ridge_band_limit_hz: est.ridge.band_limit_hz,
            ridge_gains: pairs(grid.bins()),
            components: est.pca.components,
            pca_band_hz: est.pca.band_hz,
            pca_regularized: est.pca.regularized,
            s_mean: pairs(est.pca.s_mean.bins()),
            r_mean: pairs(est.pca.r_mean.bins()),
            u_s: matrix_rows(&est.pca.u_s),
            u_r: matrix_rows(&est.pca.u_r),
            g_s_mean: pairs(est.pca.g_s_mean.as_slice()),
            g_r_mean: pairs(est.pca.g_r_mean.as_slice()),
            a_hat: matrix_rows(&est.pca.a_hat),
            training_fingerprint,
            run_config,
        }
    }

    pub fn to_estimator(&self) -> Result<CombinedEstimator> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Invariant(format!(
                "unsupported model schema version {}",
                self.schema_version
            )));
        }
        let rate = SampleRate::new(self.rate_hz)?;
        let fr = |v: &[Pair]| FrequencyResponse::new(unpairs(v), self.fft_size, rate);
        let k = self.components;
        let nbins = self.fft_size / 2 + 1;
        if self.u_s.len() != nbins || self.u_r.len() != nbins {
            return Err(Error::Dimension {
                what: "component matrix rows",
                expected: nbins,
                got: self.u_s.len().min(self.u_r.len()),
            });
        }
        if self.g_s_mean.len() != k || self.g_r_mean.len() != k || self.a_hat.len() != k {
            return Err(Error::Dimension {
                what: "gain-space size",
                expected: k,
                got: self.a_hat.len(),
            });
        }
        Ok(CombinedEstimator {
            ridge: RidgeModel {
                gains: fr(&self.ridge_gains)?,
                mu: self.ridge_mu,
                band_limit_hz: self.ridge_band_limit_hz,
            },
            pca: PcaModel {
                components: k,
                u_s: rows_matrix(&self.u_s, k, "u_s")?,
                u_r: rows_matrix(&self.u_r, k, "u_r")?,
                s_mean: fr(&self.s_mean)?,
                r_mean: fr(&self.r_mean)?,
                g_s_mean: DVector::from_vec(unpairs(&self.g_s_mean)),
                g_r_mean: DVector::from_vec(unpairs(&self.g_r_mean)),
                a_hat: rows_matrix(&self.a_hat, k, "a_hat")?,
                band_hz: self.pca_band_hz,
                regularized: self.pca_regularized,
            },
            split_hz: self.split_hz,
        })
    }
}

/// Lists the files below `dir` in sorted order, relative to `dir`.
pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(base, &path, out)?;
            } else {
                out.push(path.strip_prefix(base).unwrap_or(&path).to_path_buf());
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}
