use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use hearthru::drp::{estimate_combined, CombinedEstimator};
use hearthru::eqdesign::{design_time_ls, design_time_ls_estimated};
use hearthru::eval::{check_report, leave_one_out, level_error, summarize, summary_files, CheckResult};
use hearthru::io::{self, FilterFile, ModelFile, SCHEMA_VERSION};
use hearthru::spectra::AtfDatabase;
use hearthru::synthdata::generate_database;
use serde::Serialize;

use crate::config::RunConfig;
use crate::Failure;

pub const RUN_CONFIG_FILE: &str = "run_config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum RSourceArg {
    /// The measured eardrum response
    True,
    /// The secondary path used as the eardrum response
    Sp,
    /// The trained estimator applied to the secondary path
    Pca,
}

fn prepare_dir(dir: &Path, force: bool) -> Result<(), Failure> {
    if dir.is_file() {
        return Err(Failure::Config(format!("{} is a file", dir.display())));
    }
    if dir.exists() {
        let non_empty = fs::read_dir(dir)
            .map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(Failure::Config(format!(
                "output directory {} is not empty (use --force)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))
}

fn write_run_config(dir: &Path, cfg: &RunConfig) -> anyhow::Result<()> {
    io::write_json(&dir.join(RUN_CONFIG_FILE), cfg)?;
    Ok(())
}

pub fn cmd_synth(cfg: &RunConfig, force: bool) -> anyhow::Result<()> {
    let out = cfg.require_output()?;
    prepare_dir(out, force)?;
    let db = generate_database(&cfg.generator)?;
    io::write_database(&db, out, Some(cfg.to_json()))?;
    write_run_config(out, cfg)?;
    println!(
        "wrote {} sets ({} subjects x {} trials, Nf={}, {} Hz) to {}",
        db.len(),
        cfg.generator.n_subjects,
        cfg.generator.n_trials,
        cfg.generator.fft_size,
        cfg.generator.rate.hz(),
        out.display()
    );
    Ok(())
}

fn load_database(cfg: &RunConfig) -> anyhow::Result<AtfDatabase> {
    Ok(io::read_database(cfg.require_database()?)?)
}

pub fn cmd_train(cfg: &RunConfig, force: bool) -> anyhow::Result<()> {
    let out = cfg.require_output()?;
    if out.exists() && !force {
        return Err(Failure::Config(format!("{} exists (use --force)", out.display())).into());
    }
    let db = load_database(cfg)?;
    let est = CombinedEstimator::train(&db, &cfg.estimator)?;
    if est.pca.regularized {
        log::warn!("gain covariance was singular; a small ridge was added");
    }
    io::write_json(out, &ModelFile::from_estimator(&est, db.fingerprint(), Some(cfg.to_json())))?;
    println!(
        "trained on {} sets from {} subjects, K={}, wrote {}",
        db.len(),
        db.subjects().len(),
        cfg.estimator.components,
        out.display()
    );
    Ok(())
}

pub fn cmd_design(
    cfg: &RunConfig,
    subject: &str,
    trial: u32,
    r_source: RSourceArg,
    force: bool,
) -> anyhow::Result<()> {
    let out = cfg.require_output()?;
    let db = load_database(cfg)?;
    let set = db.find(subject, trial)?;
    let r_hat = match r_source {
        RSourceArg::True => set.r.clone(),
        RSourceArg::Sp => set.s.clone(),
        RSourceArg::Pca => {
            let path = cfg
                .paths
                .model
                .as_deref()
                .ok_or_else(|| Failure::Config("--model is required for --r-source pca".into()))?;
            let model: ModelFile = io::read_json(path)?;
            estimate_combined(&model.to_estimator()?, &set.s)?
        }
    };
    let filter = match r_source {
        RSourceArg::True => design_time_ls(set, &cfg.eq)?,
        _ => design_time_ls_estimated(set, &r_hat, &cfg.eq)?,
    };
    prepare_dir(out, force)?;
    io::write_json(&out.join("filter.json"), &FilterFile::from_filter(&filter, Some(cfg.to_json())))?;

    let err = level_error(&set.r, &r_hat)?;
    let mut csv = String::from("freq_hz,re_r,im_r,re_r_hat,im_r_hat,err_db,flagged\n");
    for k in 0..err.db.len() {
        let (r, e) = (set.r.bins()[k], r_hat.bins()[k]);
        let _ = writeln!(
            csv,
            "{:.9},{:.16e},{:.16e},{:.16e},{:.16e},{:.9},{}",
            err.freqs_hz[k], r.re, r.im, e.re, e.im, err.db[k], err.flagged[k] as u8
        );
    }
    fs::write(out.join("diagnostic.csv"), csv)?;
    write_run_config(out, cfg)?;
    println!(
        "designed {:?} filter for {subject} trial {trial} ({} taps), wrote {}",
        filter.r_source,
        cfg.eq.taps,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ReportFile<'a> {
    schema_version: u32,
    run_config: serde_json::Value,
    database_fingerprint: String,
    config_fingerprint: &'a str,
    evaluated_sets: usize,
    fallback_bins: usize,
    folds: &'a [hearthru::eval::FoldRecord],
    checks: &'a [CheckResult],
}

/// Returns the invariant checks; the caller decides whether they gate the
/// exit code.
pub fn cmd_eval(cfg: &RunConfig, force: bool) -> anyhow::Result<Vec<CheckResult>> {
    let out = cfg.require_output()?;
    let db = match &cfg.paths.database {
        Some(_) => load_database(cfg)?,
        None => generate_database(&cfg.generator)?,
    };
    if db.subjects().len() < 2 {
        return Err(Failure::Config(format!(
            "evaluation needs at least 2 subjects, found {}",
            db.subjects().len()
        ))
        .into());
    }
    prepare_dir(out, force)?;
    let report = leave_one_out(&db, &cfg.estimator, &cfg.eq)?;
    let summary = summarize(&report)?;
    let checks = check_report(&report, &summary)?;
    fs::create_dir_all(out.join("curves"))?;
    for (name, text) in summary_files(&summary) {
        fs::write(out.join(name), text)?;
    }
    io::write_json(
        &out.join("report.json"),
        &ReportFile {
            schema_version: SCHEMA_VERSION,
            run_config: cfg.to_json(),
            database_fingerprint: db.fingerprint(),
            config_fingerprint: &report.config_fingerprint,
            evaluated_sets: report.sets.len(),
            fallback_bins: report.fallback_bins,
            folds: &report.folds,
            checks: &checks,
        },
    )?;
    write_run_config(out, cfg)?;
    println!(
        "evaluated {} sets over {} folds, wrote {}",
        report.sets.len(),
        report.folds.len(),
        out.display()
    );
    Ok(checks)
}
