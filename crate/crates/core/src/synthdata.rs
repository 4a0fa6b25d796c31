//! Synthetic measurement databases.
//!
//! Every ear is a one-dimensional lossy tube. The occluded residual canal
//! runs from the device receiver (x = 0) to the eardrum (x = L); the eardrum
//! reflects with a frequency-independent coefficient and the receiver end
//! with [`SOURCE_REFLECTION`]. For a unit forward wave launched at the
//! receiver the pressure along the canal is
//!
//! ```text
//! p(x) = (exp(-g x) + R_d exp(-g (2L - x))) / (1 - R_0 R_d exp(-2 g L))
//! g(f) = WALL_LOSS * sqrt(f) / radius + j 2 pi f / SPEED_OF_SOUND
//! ```
//!
//! * `r` is `p(L)` (eardrum), `s` is `p(L - mic_offset)` (inward microphone
//!   port, `mic_offset` before the eardrum). Both include the receiver
//!   response and the processing latency. At low frequencies the canal is a
//!   uniform-pressure cavity, so `s` and `r` agree there; above a few kHz
//!   the microphone sees a quarter-wave notch at `c / (4 mic_offset)`.
//! * `o` is the open canal (length `L + open_extra`) driven at an open
//!   entrance with reflection [`OPEN_END_REFLECTION`], which gives the
//!   usual quarter-wave ear-canal resonance near 2.5 to 4 kHz.
//! * `c` is `o` through the passive device: `leak_gain` times a first-order
//!   low-pass at [`OCCLUSION_CORNER_HZ`].
//! * `m` is near flat with a small comb ripple.
//!
//! Reinsertion trials move the device along the canal (both `L` and
//! `mic_offset` shift by the same amount) and jitter the gains; the amount
//! scales with `processing_noise_db`.
//!
//! These ranges are engineering choices, not measured population
//! statistics.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::spectra::{AtfDatabase, AtfSet, FrequencyResponse, SampleRate, DEFAULT_FFT_SIZE};

pub const SPEED_OF_SOUND: f64 = 343.0;
/// Visco-thermal wall loss, Np per metre at 1 Hz for a 1 m radius tube.
pub const WALL_LOSS: f64 = 2.95e-5;
/// Reflection at the receiver end of the occluded canal.
pub const SOURCE_REFLECTION: f64 = 0.9;
/// Reflection at the open canal entrance (pressure release).
pub const OPEN_END_REFLECTION: f64 = -0.85;
pub const RECEIVER_CORNER_HZ: f64 = 12_000.0;
/// Device processing latency contained in `r` and `s`.
pub const LATENCY_SECONDS: f64 = 0.001;
pub const OCCLUSION_CORNER_HZ: f64 = 800.0;
/// Delay of the reflection that causes the external-microphone ripple.
pub const MIC_RIPPLE_DELAY_SECONDS: f64 = 0.000_15;
/// Standard deviation of the insertion-depth change per dB of
/// `processing_noise_db`.
pub const INSERTION_JITTER_M_PER_DB: f64 = 0.000_5;

pub const CANAL_LENGTH_RANGE_M: (f64, f64) = (0.010, 0.020);
pub const CANAL_RADIUS_RANGE_M: (f64, f64) = (0.003, 0.0045);
pub const DRUM_REFLECTION_RANGE: (f64, f64) = (0.55, 0.9);
/// Microphone port distance from the receiver.
pub const MIC_SPACING_RANGE_M: (f64, f64) = (0.001, 0.003);
/// Log-uniform.
pub const LEAK_GAIN_RANGE: (f64, f64) = (0.03, 0.3);
pub const PROCESSING_NOISE_DB_RANGE: (f64, f64) = (0.2, 1.0);
pub const OPEN_EXTRA_RANGE_M: (f64, f64) = (0.008, 0.014);
pub const MIC_RIPPLE_RANGE: (f64, f64) = (0.02, 0.1);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarModelParams {
    /// Residual canal length, receiver to eardrum.
    pub canal_length_m: f64,
    pub canal_radius_m: f64,
    /// Eardrum reflection magnitude.
    pub drum_resistance: f64,
    /// Distance from the inward microphone port to the eardrum.
    pub mic_offset_m: f64,
    /// Passive attenuation of the occluded direct path.
    pub leak_gain: f64,
    /// Reinsertion perturbation level.
    pub processing_noise_db: f64,
    /// Canal portion occupied by the device, added back for the open ear.
    pub open_extra_m: f64,
    /// Relative ripple of the external-microphone path.
    pub mic_ripple: f64,
}

impl EarModelParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.canal_length_m > 0.0
            && self.canal_radius_m > 0.0
            && self.drum_resistance >= 0.0
            && self.drum_resistance < 1.0
            && self.mic_offset_m >= 0.0
            && self.mic_offset_m <= self.canal_length_m
            && self.leak_gain >= 0.0
            && self.leak_gain <= 1.0
            && self.processing_noise_db >= 0.0
            && self.open_extra_m >= 0.0
            && self.mic_ripple >= 0.0
            && self.mic_ripple < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("ear model parameters out of range: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_subjects: usize,
    pub n_trials: u32,
    pub seed: u64,
    #[serde(rename = "rate_hz")]
    pub rate: SampleRate,
    pub fft_size: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_subjects: 18,
            n_trials: 3,
            seed: 0,
            rate: SampleRate::default(),
            fft_size: DEFAULT_FFT_SIZE,
        }
    }
}

/// Random stream of subject `index`; independent of how many subjects are
/// generated.
pub fn subject_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn uniform(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    rng.random_range(range.0..range.1)
}

pub fn sample_subject(rng: &mut impl Rng) -> EarModelParams {
    let canal_length_m = uniform(rng, CANAL_LENGTH_RANGE_M);
    let canal_radius_m = uniform(rng, CANAL_RADIUS_RANGE_M);
    let drum_resistance = uniform(rng, DRUM_REFLECTION_RANGE);
    let mic_offset_m = canal_length_m - uniform(rng, MIC_SPACING_RANGE_M);
    let leak_gain = uniform(rng, (LEAK_GAIN_RANGE.0.ln(), LEAK_GAIN_RANGE.1.ln())).exp();
    let processing_noise_db = uniform(rng, PROCESSING_NOISE_DB_RANGE);
    let open_extra_m = uniform(rng, OPEN_EXTRA_RANGE_M);
    let mic_ripple = uniform(rng, MIC_RIPPLE_RANGE);
    EarModelParams {
        canal_length_m,
        canal_radius_m,
        drum_resistance,
        mic_offset_m,
        leak_gain,
        processing_noise_db,
        open_extra_m,
        mic_ripple,
    }
}

/// Per-trial random stream: a digest of the parameters, the trial and the
/// generator seed, so a trial renders identically however it is reached.
fn trial_stream(params: &EarModelParams, trial: u32, seed: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    for v in [
        params.canal_length_m,
        params.canal_radius_m,
        params.drum_resistance,
        params.mic_offset_m,
        params.leak_gain,
        params.processing_noise_db,
        params.open_extra_m,
        params.mic_ripple,
    ] {
        h.update(v.to_le_bytes());
    }
    h.update(trial.to_le_bytes());
    h.update(seed.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn propagation(f: f64, radius: f64) -> Complex64 {
    Complex64::new(WALL_LOSS * f.sqrt() / radius, 2.0 * PI * f / SPEED_OF_SOUND)
}

/// Pressure at `x` in a tube of length `length` for a unit forward wave
/// launched at `x = 0`, with reflections `r_end` at `length` and `r_start`
/// at the origin.
fn tube_pressure(f: f64, radius: f64, length: f64, x: f64, r_start: f64, r_end: f64) -> Complex64 {
    let g = propagation(f, radius);
    let forward = (-g * x).exp();
    let backward = (-g * (2.0 * length - x)).exp() * r_end;
    (forward + backward) / (1.0 - (-g * 2.0 * length).exp() * (r_start * r_end))
}

fn receiver(f: f64) -> Complex64 {
    Complex64::new(1.0, 0.0) / Complex64::new(1.0, f / RECEIVER_CORNER_HZ)
}

fn delay(f: f64, seconds: f64) -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * PI * f * seconds)
}

fn finish(mut bins: Vec<Complex64>, cfg: &GeneratorConfig) -> Result<FrequencyResponse> {
    // A sampled real signal has real DC and Nyquist bins.
    bins[0] = Complex64::new(bins[0].re, 0.0);
    let last = bins.len() - 1;
    bins[last] = Complex64::new(bins[last].norm(), 0.0);
    FrequencyResponse::new(bins, cfg.fft_size, cfg.rate)
}

/// Renders the five paths for one insertion of the device.
pub fn render_atf_set(params: &EarModelParams, trial: u32, cfg: &GeneratorConfig) -> Result<AtfSet> {
    render_atf_set_for(params, trial, cfg, "synthetic")
}

fn render_atf_set_for(
    params: &EarModelParams,
    trial: u32,
    cfg: &GeneratorConfig,
    subject_id: &str,
) -> Result<AtfSet> {
    params.validate()?;
    let mut rng = trial_stream(params, trial, cfg.seed);
    let noise_db = params.processing_noise_db;
    let shift = (INSERTION_JITTER_M_PER_DB * noise_db * normal(&mut rng)).max(-0.25 * params.canal_length_m);
    let length = params.canal_length_m + shift;
    let mic_offset = if params.mic_offset_m > 0.0 {
        (params.mic_offset_m + shift).clamp(0.0, length)
    } else {
        0.0
    };
    let mut gain = |db: f64| 10f64.powf(db * normal(&mut rng) / 20.0);
    let leak = (params.leak_gain * gain(noise_db)).min(1.0);
    // Open-ear and external-microphone paths do not depend on the insertion
    // and only see measurement repeatability.
    let o_gain = gain(0.25 * noise_db);
    let m_gain = gain(0.25 * noise_db);

    let nbins = cfg.fft_size / 2 + 1;
    let freqs: Vec<f64> = (0..nbins)
        .map(|k| k as f64 * cfg.rate.hz() / cfg.fft_size as f64)
        .collect();
    let rd = params.drum_resistance;
    let radius = params.canal_radius_m;
    let open_len = params.canal_length_m + params.open_extra_m;

    let r: Vec<Complex64> = freqs
        .iter()
        .map(|&f| {
            receiver(f) * delay(f, LATENCY_SECONDS) * tube_pressure(f, radius, length, length, SOURCE_REFLECTION, rd)
        })
        .collect();
    let s: Vec<Complex64> = freqs
        .iter()
        .map(|&f| {
            receiver(f)
                * delay(f, LATENCY_SECONDS)
                * tube_pressure(f, radius, length, length - mic_offset, SOURCE_REFLECTION, rd)
        })
        .collect();
    let o: Vec<Complex64> = freqs
        .iter()
        .map(|&f| tube_pressure(f, radius, open_len, open_len, OPEN_END_REFLECTION, rd) * o_gain)
        .collect();
    let c: Vec<Complex64> = o
        .iter()
        .zip(&freqs)
        .map(|(&o, &f)| o * leak / Complex64::new(1.0, f / OCCLUSION_CORNER_HZ))
        .collect();
    let m: Vec<Complex64> = freqs
        .iter()
        .map(|&f| (Complex64::new(1.0, 0.0) + delay(f, MIC_RIPPLE_DELAY_SECONDS) * params.mic_ripple) * m_gain)
        .collect();

    AtfSet::new(
        subject_id,
        trial,
        finish(o, cfg)?,
        finish(c, cfg)?,
        finish(m, cfg)?,
        finish(r, cfg)?,
        finish(s, cfg)?,
    )
}

pub fn subject_id(index: usize, n_subjects: usize) -> String {
    let width = n_subjects.to_string().len().max(2);
    format!("S{:0width$}", index + 1)
}

/// `n_subjects x n_trials` sets, subjects in order, trials numbered from 1.
pub fn generate_database(cfg: &GeneratorConfig) -> Result<AtfDatabase> {
    if cfg.n_subjects == 0 || cfg.n_trials == 0 {
        return Err(Error::Config("need at least one subject and one trial".into()));
    }
    if cfg.fft_size < 2 || !cfg.fft_size.is_multiple_of(2) {
        return Err(Error::Config(format!("fft size must be even, got {}", cfg.fft_size)));
    }
    let per_subject: Vec<Vec<AtfSet>> = (0..cfg.n_subjects)
        .into_par_iter()
        .map(|i| {
            let params = sample_subject(&mut subject_stream(cfg.seed, i as u64));
            let id = subject_id(i, cfg.n_subjects);
            (1..=cfg.n_trials)
                .map(|t| render_atf_set_for(&params, t, cfg, &id))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    AtfDatabase::new(per_subject.into_iter().flatten().collect())
}
