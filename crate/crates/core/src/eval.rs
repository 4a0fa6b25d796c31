//! Error metrics, the equalization-condition comparison and the
//! leave-one-out harness.
//!
//! Every error is the level difference `10 log10 |truth|^2 - 10 log10
//! |estimate|^2` in dB. Estimator errors compare the true eardrum response
//! against its estimate; equalization errors compare the open-ear response
//! against the aided response of a condition.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::drp::{estimate_combined, estimate_pca, estimate_ridge, train_pca, CombinedEstimator, EstimatorConfig};
use crate::eqdesign::{
    aided_response, design_gls, design_time_ls, design_time_ls_estimated, AidedResponse, EqDesignConfig, EqFilter,
    SINGULAR_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::spectra::{AtfDatabase, AtfSet, FrequencyResponse};

/// Band edges used for the scalar summaries, in Hz.
pub const SUMMARY_BANDS_HZ: [(f64, f64); 3] = [(0.0, 1500.0), (1500.0, 6000.0), (6000.0, 8000.0)];

/// Per-bin level error with near-zero bins flagged. Flagged bins carry 0 dB
/// and are excluded from every statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelError {
    pub freqs_hz: Vec<f64>,
    pub db: Vec<f64>,
    pub flagged: Vec<bool>,
}

impl LevelError {
    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|&&f| f).count()
    }

    /// Mean and population standard deviation of `|e|` and `e` over the
    /// unflagged bins inside `band` (lower edge exclusive unless it is 0,
    /// upper edge inclusive). `None` if no bin qualifies.
    pub fn band_stats(&self, band: (f64, f64)) -> Option<BandStats> {
        let values: Vec<f64> = (0..self.db.len())
            .filter(|&k| !self.flagged[k] && in_band(self.freqs_hz[k], band))
            .map(|k| self.db[k])
            .collect();
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean_abs = values.iter().map(|v| v.abs()).sum::<f64>() / n;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(BandStats {
            mean_abs_db: mean_abs,
            std_db: var.sqrt(),
            bins: values.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandStats {
    pub mean_abs_db: f64,
    pub std_db: f64,
    pub bins: usize,
}

fn in_band(f: f64, band: (f64, f64)) -> bool {
    (f > band.0 || (band.0 == 0.0 && f >= 0.0)) && f <= band.1
}

pub fn level_error(truth: &FrequencyResponse, estimate: &FrequencyResponse) -> Result<LevelError> {
    truth.ensure_same_grid(estimate)?;
    let flagged: Vec<bool> = truth
        .bins()
        .iter()
        .zip(estimate.bins())
        .map(|(t, e)| t.norm() < SINGULAR_THRESHOLD || e.norm() < SINGULAR_THRESHOLD)
        .collect();
    if flagged.iter().all(|&f| f) {
        return Err(Error::Invariant("level error: every bin is numerically zero".into()));
    }
    let db = truth
        .bins()
        .iter()
        .zip(estimate.bins())
        .zip(&flagged)
        .map(|((t, e), &f)| if f { 0.0 } else { 10.0 * t.norm_sqr().log10() - 10.0 * e.norm_sqr().log10() })
        .collect();
    Ok(LevelError {
        freqs_hz: truth.freqs_hz(),
        db,
        flagged,
    })
}

/// Mean and standard deviation of per-set error curves, bin by bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandErrorCurve {
    pub freqs_hz: Vec<f64>,
    pub mean_db: Vec<f64>,
    pub std_db: Vec<f64>,
}

impl BandErrorCurve {
    /// Aggregates curves over sets. A bin flagged in every set gets 0 dB.
    pub fn aggregate(curves: &[&LevelError]) -> Result<Self> {
        let first = curves.first().ok_or(Error::Empty("error curves to aggregate"))?;
        let n = first.db.len();
        if let Some(bad) = curves.iter().find(|c| c.db.len() != n) {
            return Err(Error::Dimension {
                what: "error curve length",
                expected: n,
                got: bad.db.len(),
            });
        }
        let mut mean_db = vec![0.0; n];
        let mut std_db = vec![0.0; n];
        for k in 0..n {
            let values: Vec<f64> = curves.iter().filter(|c| !c.flagged[k]).map(|c| c.db[k]).collect();
            if values.is_empty() {
                continue;
            }
            let m = values.iter().sum::<f64>() / values.len() as f64;
            mean_db[k] = m;
            std_db[k] = (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt();
        }
        Ok(Self {
            freqs_hz: first.freqs_hz.clone(),
            mean_db,
            std_db,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    OpenEar,
    Occluded,
    PerfectEq,
    IdvPca,
    IdvSp,
    Gls,
}

impl Condition {
    pub const ALL: [Condition; 6] = [
        Condition::OpenEar,
        Condition::Occluded,
        Condition::PerfectEq,
        Condition::IdvPca,
        Condition::IdvSp,
        Condition::Gls,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Condition::OpenEar => "open_ear",
            Condition::Occluded => "occluded",
            Condition::PerfectEq => "perfect_eq",
            Condition::IdvPca => "idv_pca",
            Condition::IdvSp => "idv_sp",
            Condition::Gls => "gls",
        }
    }
}

/// Estimators of the eardrum response compared in the report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Combined,
    Ridge,
    /// PCA over the whole band from 0 Hz up to the PCA band edge.
    PcaFullBand,
    /// `r_hat = s`.
    SecondaryPath,
    /// `r_hat` = training mean of `r`.
    EnsembleMean,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::Combined,
        EstimatorKind::Ridge,
        EstimatorKind::PcaFullBand,
        EstimatorKind::SecondaryPath,
        EstimatorKind::EnsembleMean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Combined => "combined",
            EstimatorKind::Ridge => "ridge",
            EstimatorKind::PcaFullBand => "pca_full_band",
            EstimatorKind::SecondaryPath => "secondary_path",
            EstimatorKind::EnsembleMean => "ensemble_mean",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub condition: Condition,
    pub aided: AidedResponse,
    /// Open ear versus aided response.
    pub error: LevelError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetReport {
    pub subject_id: String,
    pub trial: u32,
    pub fingerprint: String,
    pub conditions: Vec<ConditionReport>,
    pub estimators: Vec<(EstimatorKind, LevelError)>,
}

/// One leave-one-out fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub held_out_subject: String,
    pub held_out_fingerprints: Vec<String>,
    /// Digest of the ordered training-set fingerprints.
    pub training_fingerprint: String,
    pub training_sets: usize,
    pub pca_regularized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub sets: Vec<SetReport>,
    pub folds: Vec<FoldRecord>,
    /// Digest of the database and both configurations.
    pub config_fingerprint: String,
    /// Bins above the PCA band that take the ridge fallback.
    pub fallback_bins: usize,
}

fn ensure_held_out(set: &AtfSet, training: &AtfDatabase) -> Result<()> {
    let fp = set.fingerprint();
    if training.sets().iter().any(|t| t.subject_id == set.subject_id || t.fingerprint() == fp) {
        return Err(Error::Contract(format!(
            "set {} trial {} is part of the training data",
            set.subject_id, set.trial
        )));
    }
    Ok(())
}

/// Aided responses and open-ear errors of all six conditions for a
/// held-out set. Aided responses always use the set's true `r`.
pub fn evaluate_conditions(
    set: &AtfSet,
    est: &CombinedEstimator,
    training: &AtfDatabase,
    cfg: &EqDesignConfig,
) -> Result<Vec<ConditionReport>> {
    ensure_held_out(set, training)?;
    let gls = design_gls(training, cfg)?;
    conditions_with(set, est, &gls, cfg)
}

fn conditions_with(
    set: &AtfSet,
    est: &CombinedEstimator,
    gls: &EqFilter,
    cfg: &EqDesignConfig,
) -> Result<Vec<ConditionReport>> {
    let r_hat = estimate_combined(est, &set.s)?;
    let report = |condition, aided: AidedResponse| -> Result<ConditionReport> {
        let error = level_error(&set.o, &aided.bins)?;
        Ok(ConditionReport { condition, aided, error })
    };
    Ok(vec![
        report(Condition::OpenEar, AidedResponse { bins: set.o.clone() })?,
        report(Condition::Occluded, AidedResponse { bins: set.c.clone() })?,
        report(Condition::PerfectEq, aided_response(set, &design_time_ls(set, cfg)?)?)?,
        report(Condition::IdvPca, aided_response(set, &design_time_ls_estimated(set, &r_hat, cfg)?)?)?,
        report(Condition::IdvSp, aided_response(set, &design_time_ls_estimated(set, &set.s, cfg)?)?)?,
        report(Condition::Gls, aided_response(set, gls)?)?,
    ])
}

fn mean_r(training: &AtfDatabase) -> Result<FrequencyResponse> {
    let first = training.sets().first().ok_or(Error::Empty("training database"))?;
    let n = training.len() as f64;
    let bins = (0..first.r.num_bins())
        .map(|k| training.sets().iter().map(|s| s.r.bins()[k]).sum::<num_complex::Complex64>() / n)
        .collect();
    FrequencyResponse::new(bins, first.fft_size(), first.rate())
}

fn digest(parts: &[String]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

fn run_fold(
    db: &AtfDatabase,
    subject: &str,
    est_cfg: &EstimatorConfig,
    eq_cfg: &EqDesignConfig,
) -> Result<(FoldRecord, Vec<SetReport>)> {
    let (held_out, training) = db.split_subject(subject);
    let training_fps = training.fingerprints();
    let train_set: HashSet<&str> = training_fps.iter().map(String::as_str).collect();
    for set in &held_out {
        if train_set.contains(set.fingerprint().as_str()) {
            return Err(Error::Contract(format!(
                "held-out set {} trial {} appears in training",
                set.subject_id, set.trial
            )));
        }
    }
    let est = CombinedEstimator::train(&training, est_cfg)?;
    let pca_full = train_pca(&training, est_cfg.components, (0.0, est_cfg.pca_high_hz))?;
    let r_bar = mean_r(&training)?;
    let gls = design_gls(&training, eq_cfg)?;

    let sets = held_out
        .iter()
        .map(|set| {
            ensure_held_out(set, &training)?;
            let conditions = conditions_with(set, &est, &gls, eq_cfg)?;
            let estimates = [
                (EstimatorKind::Combined, estimate_combined(&est, &set.s)?),
                (EstimatorKind::Ridge, estimate_ridge(&est.ridge, &set.s)?),
                (EstimatorKind::PcaFullBand, estimate_pca(&pca_full, &set.s)?),
                (EstimatorKind::SecondaryPath, set.s.clone()),
                (EstimatorKind::EnsembleMean, r_bar.clone()),
            ];
            let estimators = estimates
                .into_iter()
                .map(|(kind, r_hat)| Ok((kind, level_error(&set.r, &r_hat)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(SetReport {
                subject_id: set.subject_id.clone(),
                trial: set.trial,
                fingerprint: set.fingerprint(),
                conditions,
                estimators,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let record = FoldRecord {
        held_out_subject: subject.to_string(),
        held_out_fingerprints: held_out.iter().map(AtfSet::fingerprint).collect(),
        training_fingerprint: digest(&training_fps),
        training_sets: training.len(),
        pca_regularized: est.pca.regularized || pca_full.regularized,
    };
    Ok((record, sets))
}

/// Subject-level leave-one-out: all trials of a subject are held out
/// together. Folds run in parallel; results keep the database order.
pub fn leave_one_out(db: &AtfDatabase, est_cfg: &EstimatorConfig, eq_cfg: &EqDesignConfig) -> Result<EvalReport> {
    let subjects = db.subjects();
    if subjects.len() < 2 {
        return Err(Error::Config(format!(
            "leave-one-out needs at least 2 subjects, found {}",
            subjects.len()
        )));
    }
    eq_cfg.validate()?;
    let folds = subjects
        .par_iter()
        .map(|subject| run_fold(db, subject, est_cfg, eq_cfg))
        .collect::<Result<Vec<_>>>()?;
    let fallback_bins = db.sets()[0]
        .s
        .freqs_hz()
        .into_iter()
        .filter(|&f| f > est_cfg.pca_high_hz)
        .count();
    let config_fingerprint = digest(&[
        db.fingerprint(),
        serde_json::to_string(est_cfg)?,
        serde_json::to_string(eq_cfg)?,
    ]);
    let mut records = Vec::with_capacity(folds.len());
    let mut sets = Vec::with_capacity(db.len());
    for (record, fold_sets) in folds {
        records.push(record);
        sets.extend(fold_sets);
    }
    Ok(EvalReport {
        sets,
        folds: records,
        config_fingerprint,
        fallback_bins,
    })
}

/// One scalar row of a summary table. `subject` and `trial` are `"all"` for
/// rows aggregated over sets; there `mean_abs_err_db` is the mean of the
/// per-set values and `std_db` their population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub name: &'static str,
    pub subject: String,
    pub trial: String,
    pub band_hz: (f64, f64),
    pub mean_abs_err_db: f64,
    pub std_db: f64,
    pub flagged_bins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub condition_rows: Vec<SummaryRow>,
    pub estimator_rows: Vec<SummaryRow>,
    pub condition_curves: Vec<(Condition, BandErrorCurve)>,
    pub estimator_curves: Vec<(EstimatorKind, BandErrorCurve)>,
}

impl Summary {
    /// Aggregated band mean of `|e|` for a condition.
    pub fn condition_band_mean(&self, condition: Condition, band: (f64, f64)) -> Option<f64> {
        band_lookup(&self.condition_rows, condition.name(), band)
    }

    pub fn estimator_band_mean(&self, kind: EstimatorKind, band: (f64, f64)) -> Option<f64> {
        band_lookup(&self.estimator_rows, kind.name(), band)
    }
}

fn band_lookup(rows: &[SummaryRow], name: &str, band: (f64, f64)) -> Option<f64> {
    rows.iter()
        .find(|r| r.name == name && r.subject == "all" && r.band_hz == band)
        .map(|r| r.mean_abs_err_db)
}

fn summarize_curves(
    name: &'static str,
    per_set: &[(&SetReport, &LevelError)],
    bands: &[(f64, f64)],
    rows: &mut Vec<SummaryRow>,
) -> Result<BandErrorCurve> {
    let mut aggregated = Vec::new();
    for &band in bands {
        let mut means = Vec::new();
        let mut flagged_total = 0;
        for (set, err) in per_set {
            let flagged = (0..err.db.len())
                .filter(|&k| err.flagged[k] && in_band(err.freqs_hz[k], band))
                .count();
            flagged_total += flagged;
            if let Some(stats) = err.band_stats(band) {
                means.push(stats.mean_abs_db);
                rows.push(SummaryRow {
                    name,
                    subject: set.subject_id.clone(),
                    trial: set.trial.to_string(),
                    band_hz: band,
                    mean_abs_err_db: stats.mean_abs_db,
                    std_db: stats.std_db,
                    flagged_bins: flagged,
                });
            }
        }
        if !means.is_empty() {
            let n = means.len() as f64;
            let m = means.iter().sum::<f64>() / n;
            let sd = (means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            aggregated.push(SummaryRow {
                name,
                subject: "all".into(),
                trial: "all".into(),
                band_hz: band,
                mean_abs_err_db: m,
                std_db: sd,
                flagged_bins: flagged_total,
            });
        }
    }
    rows.extend(aggregated);
    let curves: Vec<&LevelError> = per_set.iter().map(|(_, e)| *e).collect();
    BandErrorCurve::aggregate(&curves)
}

/// Band-averaged tables and mean/std curves for every condition and
/// estimator present in the report, in canonical order.
pub fn summarize(report: &EvalReport) -> Result<Summary> {
    summarize_bands(report, &SUMMARY_BANDS_HZ)
}

pub fn summarize_bands(report: &EvalReport, bands: &[(f64, f64)]) -> Result<Summary> {
    if report.sets.is_empty() {
        return Err(Error::Empty("evaluation report"));
    }
    let mut sets: Vec<&SetReport> = report.sets.iter().collect();
    sets.sort_by(|a, b| (&a.subject_id, a.trial).cmp(&(&b.subject_id, b.trial)));

    let mut summary = Summary {
        condition_rows: Vec::new(),
        estimator_rows: Vec::new(),
        condition_curves: Vec::new(),
        estimator_curves: Vec::new(),
    };
    for condition in Condition::ALL {
        let per_set: Vec<(&SetReport, &LevelError)> = sets
            .iter()
            .filter_map(|s| {
                s.conditions
                    .iter()
                    .find(|c| c.condition == condition)
                    .map(|c| (*s, &c.error))
            })
            .collect();
        if per_set.is_empty() {
            continue;
        }
        let curve = summarize_curves(condition.name(), &per_set, bands, &mut summary.condition_rows)?;
        summary.condition_curves.push((condition, curve));
    }
    for kind in EstimatorKind::ALL {
        let per_set: Vec<(&SetReport, &LevelError)> = sets
            .iter()
            .filter_map(|s| s.estimators.iter().find(|(k, _)| *k == kind).map(|(_, e)| (*s, e)))
            .collect();
        if per_set.is_empty() {
            continue;
        }
        let curve = summarize_curves(kind.name(), &per_set, bands, &mut summary.estimator_rows)?;
        summary.estimator_curves.push((kind, curve));
    }
    Ok(summary)
}

fn fmt_num(v: f64) -> String {
    format!("{v:.9}")
}

fn rows_csv(label: &str, rows: &[SummaryRow]) -> String {
    let mut out = format!("{label},subject,trial,band_low_hz,band_high_hz,mean_abs_err_db,std_db\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.name,
            r.subject,
            r.trial,
            fmt_num(r.band_hz.0),
            fmt_num(r.band_hz.1),
            fmt_num(r.mean_abs_err_db),
            fmt_num(r.std_db)
        );
    }
    out
}

fn curve_csv(curve: &BandErrorCurve) -> String {
    let mut out = String::from("freq_hz,mean_db,std_db\n");
    for k in 0..curve.freqs_hz.len() {
        let _ = writeln!(
            out,
            "{},{},{}",
            fmt_num(curve.freqs_hz[k]),
            fmt_num(curve.mean_db[k]),
            fmt_num(curve.std_db[k])
        );
    }
    out
}

fn flags_csv(summary: &Summary) -> String {
    let mut out = String::from("kind,name,subject,trial,band_low_hz,band_high_hz,flagged_bins\n");
    for (kind, rows) in [("condition", &summary.condition_rows), ("estimator", &summary.estimator_rows)] {
        for r in rows {
            let _ = writeln!(
                out,
                "{kind},{},{},{},{},{},{}",
                r.name,
                r.subject,
                r.trial,
                fmt_num(r.band_hz.0),
                fmt_num(r.band_hz.1),
                r.flagged_bins
            );
        }
    }
    out
}

/// CSV files of a summary, as `(relative path, contents)` in write order.
///
/// * `conditions.csv`, `estimators.csv`: band rows per set and aggregated.
/// * `flagged_bins.csv`: near-zero bins excluded from each row.
/// * `curves/condition_<name>.csv`, `curves/estimator_<name>.csv`.
pub fn summary_files(summary: &Summary) -> Vec<(String, String)> {
    let mut files = vec![
        ("conditions.csv".to_string(), rows_csv("condition", &summary.condition_rows)),
        ("estimators.csv".to_string(), rows_csv("estimator", &summary.estimator_rows)),
        ("flagged_bins.csv".to_string(), flags_csv(summary)),
    ];
    for (c, curve) in &summary.condition_curves {
        files.push((format!("curves/condition_{}.csv", c.name()), curve_csv(curve)));
    }
    for (k, curve) in &summary.estimator_curves {
        files.push((format!("curves/estimator_{}.csv", k.name()), curve_csv(curve)));
    }
    files
}

pub fn write_summary(summary: &Summary, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("curves"))?;
    for (name, text) in summary_files(summary) {
        fs::write(dir.join(name), text)?;
    }
    Ok(())
}

/// Outcome of one report-level invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Invariants checked by `eval --check`: zero open-ear error, occluded
/// worst, the equalization ordering in 1.5-6 kHz, the estimator beating
/// both trivial baselines over 0-6 kHz, and aggregation consistency.
pub fn check_report(report: &EvalReport, summary: &Summary) -> Result<Vec<CheckResult>> {
    let mid = (1500.0, 6000.0);
    let full = (0.0, 6000.0);
    let mid_summary = summarize_bands(report, &[mid, full])?;
    let cond = |c| mid_summary.condition_band_mean(c, mid).unwrap_or(f64::NAN);
    let estm = |k| mid_summary.estimator_band_mean(k, full).unwrap_or(f64::NAN);
    let mut out = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        out.push(CheckResult {
            name: name.to_string(),
            passed,
            detail,
        })
    };

    let open_max = report
        .sets
        .iter()
        .flat_map(|s| s.conditions.iter().filter(|c| c.condition == Condition::OpenEar))
        .flat_map(|c| c.error.db.iter().map(|v| v.abs()))
        .fold(0.0_f64, f64::max);
    push("open_ear_zero", open_max == 0.0, format!("max |e| = {open_max:e} dB"));

    let (pe, pca, sp, gls, occ) = (
        cond(Condition::PerfectEq),
        cond(Condition::IdvPca),
        cond(Condition::IdvSp),
        cond(Condition::Gls),
        cond(Condition::Occluded),
    );
    push(
        "ordering_perfect_pca_sp",
        pe < pca && pca < sp,
        format!("perfect_eq {pe:.4} < idv_pca {pca:.4} < idv_sp {sp:.4} dB"),
    );
    push("pca_beats_gls", pca < gls, format!("idv_pca {pca:.4} < gls {gls:.4} dB"));
    let others_max = [pe, pca, sp, gls].into_iter().fold(f64::NEG_INFINITY, f64::max);
    push(
        "occluded_worst",
        occ > others_max,
        format!("occluded {occ:.4} > max other {others_max:.4} dB"),
    );

    let (comb, sp_b, mean_b) = (
        estm(EstimatorKind::Combined),
        estm(EstimatorKind::SecondaryPath),
        estm(EstimatorKind::EnsembleMean),
    );
    push(
        "estimator_beats_baselines",
        comb < sp_b && comb < mean_b,
        format!("combined {comb:.4} < secondary_path {sp_b:.4}, ensemble_mean {mean_b:.4} dB"),
    );

    let mut worst = 0.0_f64;
    for (condition, curve) in &summary.condition_curves {
        let curves: Vec<&LevelError> = report
            .sets
            .iter()
            .filter_map(|s| s.conditions.iter().find(|c| c.condition == *condition).map(|c| &c.error))
            .collect();
        for k in 0..curve.mean_db.len() {
            let values: Vec<f64> = curves.iter().filter(|c| !c.flagged[k]).map(|c| c.db[k]).collect();
            if !values.is_empty() {
                let m = values.iter().sum::<f64>() / values.len() as f64;
                worst = worst.max((m - curve.mean_db[k]).abs());
            }
        }
    }
    push("aggregation_consistent", worst <= 1e-12, format!("max deviation {worst:e} dB"));

    let covered: HashSet<&str> = report.folds.iter().map(|f| f.held_out_subject.as_str()).collect();
    let once = covered.len() == report.folds.len()
        && report.sets.iter().all(|s| covered.contains(s.subject_id.as_str()));
    push("subjects_once", once, format!("{} folds", report.folds.len()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::SampleRate;
    use num_complex::Complex64;

    fn fr(bins: Vec<Complex64>) -> FrequencyResponse {
        let nf = 2 * (bins.len() - 1);
        FrequencyResponse::new(bins, nf, SampleRate::default()).unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn identical_inputs_give_zero_error() {
        let a = fr(vec![c(1.0, 0.0), c(0.3, -2.0), c(0.5, 0.0)]);
        let e = level_error(&a, &a).unwrap();
        assert!(e.db.iter().all(|&v| v == 0.0));
        assert_eq!(e.flagged_count(), 0);
    }

    #[test]
    fn factor_two_is_six_db() {
        let t = fr(vec![c(2.0, 0.0), c(0.0, 2.0), c(-4.0, 0.0)]);
        let e = fr(vec![c(1.0, 0.0), c(1.0, 0.0), c(2.0, 0.0)]);
        let err = level_error(&t, &e).unwrap();
        for v in err.db {
            assert!((v - 6.020599913279624).abs() < 1e-12);
        }
    }

    #[test]
    fn near_zero_bins_flagged() {
        let t = fr(vec![c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        let e = fr(vec![c(1.0, 0.0), c(1.0, 0.0), c(1e-13, 0.0)]);
        let err = level_error(&t, &e).unwrap();
        assert_eq!(err.flagged, vec![false, true, true]);
        let zero = fr(vec![c(0.0, 0.0); 3]);
        assert!(level_error(&zero, &e).is_err());
    }

    #[test]
    fn band_membership() {
        assert!(in_band(0.0, (0.0, 1500.0)));
        assert!(in_band(1500.0, (0.0, 1500.0)));
        assert!(!in_band(1500.0, (1500.0, 6000.0)));
        assert!(in_band(6000.0, (1500.0, 6000.0)));
    }

    #[test]
    fn empty_report_rejected() {
        let report = EvalReport {
            sets: vec![],
            folds: vec![],
            config_fingerprint: String::new(),
            fallback_bins: 0,
        };
        assert!(matches!(summarize(&report), Err(Error::Empty(_))));
    }
}
