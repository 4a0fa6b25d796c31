use std::path::{Path, PathBuf};

use clap::Args;
use hearthru::drp::EstimatorConfig;
use hearthru::eqdesign::EqDesignConfig;
use hearthru::io::SCHEMA_VERSION;
use hearthru::spectra::SampleRate;
use hearthru::synthdata::GeneratorConfig;
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub database: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
}

/// Fully resolved settings of one invocation. Echoed into every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub paths: Paths,
    pub estimator: EstimatorConfig,
    pub eq: EqDesignConfig,
    pub generator: GeneratorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            paths: Paths::default(),
            estimator: EstimatorConfig::default(),
            eq: EqDesignConfig::default(),
            generator: GeneratorConfig::default(),
        }
    }
}

/// Flags shared by every subcommand. Each one overrides the matching
/// config-file entry.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML file with RunConfig entries
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Database directory
    #[arg(long, value_name = "DIR")]
    pub database: Option<PathBuf>,
    /// Output directory (model file for `train`)
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Trained model file
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Overwrite existing output
    #[arg(long)]
    pub force: bool,

    /// Principal components per path
    #[arg(long)]
    pub components: Option<usize>,
    /// Ridge/PCA split frequency in Hz
    #[arg(long)]
    pub split_hz: Option<f64>,
    /// Upper edge of the PCA band in Hz
    #[arg(long)]
    pub pca_high_hz: Option<f64>,
    /// Ridge weight of the per-bin estimator
    #[arg(long)]
    pub mu_est: Option<f64>,

    /// Regularization of the equalization filter
    #[arg(long)]
    pub mu: Option<f64>,
    /// Processing delay in seconds
    #[arg(long)]
    pub d_proc_seconds: Option<f64>,
    /// FIR filter length
    #[arg(long)]
    pub taps: Option<usize>,

    /// Synthetic subjects
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Reinsertion trials per synthetic subject
    #[arg(long)]
    pub trials: Option<u32>,
    /// Seed of the synthetic generator
    #[arg(long)]
    pub seed: Option<u64>,
    /// FFT size of synthetic spectra
    #[arg(long)]
    pub fft_size: Option<usize>,
    /// Sample rate of synthetic spectra in Hz
    #[arg(long)]
    pub rate_hz: Option<f64>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

pub fn load_file(path: &Path) -> Result<RunConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {}", path.display(), e.message())))
}

impl RunConfig {
    /// Config file first, then flags.
    pub fn resolve(o: &Overrides) -> Result<Self, Failure> {
        let mut cfg = match &o.config {
            Some(path) => load_file(path)?,
            None => RunConfig::default(),
        };
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Failure::Config(format!(
                "unsupported config schema version {}",
                cfg.schema_version
            )));
        }
        if o.database.is_some() {
            cfg.paths.database = o.database.clone();
        }
        if o.output.is_some() {
            cfg.paths.output = o.output.clone();
        }
        if o.model.is_some() {
            cfg.paths.model = o.model.clone();
        }
        set(&mut cfg.estimator.components, o.components);
        set(&mut cfg.estimator.split_hz, o.split_hz);
        set(&mut cfg.estimator.pca_high_hz, o.pca_high_hz);
        set(&mut cfg.estimator.mu, o.mu_est);
        set(&mut cfg.eq.mu, o.mu);
        set(&mut cfg.eq.d_proc_seconds, o.d_proc_seconds);
        set(&mut cfg.eq.taps, o.taps);
        set(&mut cfg.generator.n_subjects, o.subjects);
        set(&mut cfg.generator.n_trials, o.trials);
        set(&mut cfg.generator.seed, o.seed);
        set(&mut cfg.generator.fft_size, o.fft_size);
        if let Some(hz) = o.rate_hz {
            cfg.generator.rate = SampleRate::new(hz).map_err(|e| Failure::Config(e.to_string()))?;
        }
        cfg.eq.validate().map_err(|e| Failure::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn require_output(&self) -> Result<&Path, Failure> {
        self.paths
            .output
            .as_deref()
            .ok_or_else(|| Failure::Config("--output is required".into()))
    }

    pub fn require_database(&self) -> Result<&Path, Failure> {
        self.paths
            .database
            .as_deref()
            .ok_or_else(|| Failure::Config("--database is required".into()))
    }
}
