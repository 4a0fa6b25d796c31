//! Hear-through equalization filter design.
//!
//! Transparency holds when `c + m * G * r = o` at every frequency. The
//! designs here fit `G` in the regularized least-squares sense, either per
//! bin (frequency domain) or as a real FIR filter of `taps` coefficients
//! whose response is evaluated with a processing-delay advance.
//!
//! The time-domain problem is solved as a real least-squares problem: each
//! one-sided bin contributes its real and imaginary residual, interior bins
//! with weight 2 and DC/Nyquist with weight 1, which is exactly the
//! two-sided `l2` cost. The system matrix is diagonal-times-DFT, so the
//! normal matrix is symmetric Toeplitz and is built from one weighted
//! autocorrelation sequence.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::{delay_phase, ir_to_fr, AtfDatabase, AtfSet, FrequencyResponse, ImpulseResponse};

/// Magnitudes below this are treated as zero when dividing.
pub const SINGULAR_THRESHOLD: f64 = 1e-12;

pub const DEFAULT_MU: f64 = 0.001;
pub const DEFAULT_D_PROC_SECONDS: f64 = 0.0016;
pub const DEFAULT_TAPS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EqDesignConfig {
    /// Tikhonov weight on the filter norm.
    pub mu: f64,
    /// Processing delay compensated by the causality advance.
    pub d_proc_seconds: f64,
    /// FIR length of time-domain designs.
    pub taps: usize,
}

impl Default for EqDesignConfig {
    fn default() -> Self {
        Self {
            mu: DEFAULT_MU,
            d_proc_seconds: DEFAULT_D_PROC_SECONDS,
            taps: DEFAULT_TAPS,
        }
    }
}

impl EqDesignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::Config(format!("mu must be >= 0, got {}", self.mu)));
        }
        if !(self.d_proc_seconds.is_finite() && self.d_proc_seconds >= 0.0) {
            return Err(Error::Config(format!(
                "processing delay must be >= 0, got {}",
                self.d_proc_seconds
            )));
        }
        if self.taps == 0 {
            return Err(Error::Config("filter needs at least one tap".into()));
        }
        Ok(())
    }
}

/// Which receiver-to-eardrum response a filter was designed with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RSource {
    TrueR,
    EstimatedR,
    SecondaryPathAsR,
    Ensemble,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterCoefficients {
    /// Real FIR taps; the effective response includes the `d_proc` advance.
    Taps(Vec<f64>),
    /// Per-bin complex gains.
    Bins(FrequencyResponse),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EqFilter {
    pub coefficients: FilterCoefficients,
    pub config: EqDesignConfig,
    pub r_source: RSource,
}

impl EqFilter {
    pub fn taps(&self) -> Option<&[f64]> {
        match &self.coefficients {
            FilterCoefficients::Taps(t) => Some(t),
            FilterCoefficients::Bins(_) => None,
        }
    }

    pub fn bins(&self) -> Option<&FrequencyResponse> {
        match &self.coefficients {
            FilterCoefficients::Bins(b) => Some(b),
            FilterCoefficients::Taps(_) => None,
        }
    }

    /// Effective `G(w)` on the grid of `like`: for FIR filters the DFT of the
    /// taps times the processing-delay advance, matching the design model.
    pub fn response(&self, like: &FrequencyResponse) -> Result<FrequencyResponse> {
        match &self.coefficients {
            FilterCoefficients::Bins(b) => {
                b.ensure_same_grid(like)?;
                Ok(b.clone())
            }
            FilterCoefficients::Taps(taps) => {
                let ir = ImpulseResponse::new(taps.clone(), like.rate())?;
                let g = ir_to_fr(&ir, like.fft_size())?;
                let advance = delay_phase(like.fft_size(), like.rate(), -self.config.d_proc_seconds)?;
                g.mul(&advance)
            }
        }
    }
}

/// `c + m * G * r`, the eardrum response of the aided ear.
#[derive(Debug, Clone, PartialEq)]
pub struct AidedResponse {
    pub bins: FrequencyResponse,
}

/// Closed-form transparency filter `(o - c) / (m * r)`.
pub fn ideal_filter(set: &AtfSet) -> Result<FrequencyResponse> {
    let bins = (0..set.o.num_bins())
        .map(|k| {
            let y = set.m.bins()[k] * set.r.bins()[k];
            if y.norm() < SINGULAR_THRESHOLD {
                return Err(Error::Singular {
                    bin: k,
                    what: "|m * r| vanishes",
                });
            }
            Ok((set.o.bins()[k] - set.c.bins()[k]) / y)
        })
        .collect::<Result<Vec<_>>>()?;
    FrequencyResponse::new(bins, set.fft_size(), set.rate())
}

/// Regularized per-bin solution `conj(y) (o - c) / (|y|^2 + mu)` with
/// `y = m * r`.
pub fn design_freq_ls(set: &AtfSet, cfg: &EqDesignConfig) -> Result<EqFilter> {
    cfg.validate()?;
    let bins = (0..set.o.num_bins())
        .map(|k| {
            let y = set.m.bins()[k] * set.r.bins()[k];
            let denom = y.norm_sqr() + cfg.mu;
            if denom < SINGULAR_THRESHOLD * SINGULAR_THRESHOLD {
                return Err(Error::Singular {
                    bin: k,
                    what: "|m * r|^2 + mu vanishes",
                });
            }
            Ok(y.conj() * (set.o.bins()[k] - set.c.bins()[k]) / denom)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EqFilter {
        coefficients: FilterCoefficients::Bins(FrequencyResponse::new(bins, set.fft_size(), set.rate())?),
        config: *cfg,
        r_source: RSource::TrueR,
    })
}

/// Real FIR design against the set's true `r`.
pub fn design_time_ls(set: &AtfSet, cfg: &EqDesignConfig) -> Result<EqFilter> {
    let taps = solve_time_ls(&[(set, &set.r)], cfg)?;
    Ok(EqFilter {
        coefficients: FilterCoefficients::Taps(taps),
        config: *cfg,
        r_source: RSource::TrueR,
    })
}

/// Real FIR design with `r` replaced by an estimate. Passing the set's own
/// secondary path realizes the secondary-path-as-eardrum condition.
pub fn design_time_ls_estimated(
    set: &AtfSet,
    r_hat: &FrequencyResponse,
    cfg: &EqDesignConfig,
) -> Result<EqFilter> {
    set.o.ensure_same_grid(r_hat)?;
    let r_source = if r_hat.bins() == set.s.bins() {
        RSource::SecondaryPathAsR
    } else if r_hat.bins() == set.r.bins() {
        RSource::TrueR
    } else {
        RSource::EstimatedR
    };
    let taps = solve_time_ls(&[(set, r_hat)], cfg)?;
    Ok(EqFilter {
        coefficients: FilterCoefficients::Taps(taps),
        config: *cfg,
        r_source,
    })
}

/// One common FIR filter for a whole training database. The data term is
/// the mean of the per-set residual energies; a database of identical sets
/// gives the individual design.
pub fn design_gls(training: &AtfDatabase, cfg: &EqDesignConfig) -> Result<EqFilter> {
    if training.is_empty() {
        return Err(Error::Empty("training database for the average filter"));
    }
    let systems: Vec<_> = training.sets().iter().map(|s| (s, &s.r)).collect();
    let taps = solve_time_ls(&systems, cfg)?;
    Ok(EqFilter {
        coefficients: FilterCoefficients::Taps(taps),
        config: *cfg,
        r_source: RSource::Ensemble,
    })
}

/// Evaluates the aided response with the set's TRUE `r`.
pub fn aided_response(set: &AtfSet, filter: &EqFilter) -> Result<AidedResponse> {
    let g = filter.response(&set.o)?;
    let bins = (0..set.o.num_bins())
        .map(|k| set.c.bins()[k] + set.m.bins()[k] * g.bins()[k] * set.r.bins()[k])
        .collect();
    Ok(AidedResponse {
        bins: FrequencyResponse::new(bins, set.fft_size(), set.rate())?,
    })
}

/// Per-bin model coefficient `m * r * exp(+j w d_proc)` and target `o - c`.
fn bin_system(
    set: &AtfSet,
    r: &FrequencyResponse,
    d_proc_seconds: f64,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    set.o.ensure_same_grid(r)?;
    let advance = delay_phase(set.fft_size(), set.rate(), -d_proc_seconds)?;
    let coef = (0..set.o.num_bins())
        .map(|k| set.m.bins()[k] * r.bins()[k] * advance.bins()[k])
        .collect();
    let target = set.o.sub(&set.c)?.into_bins();
    Ok((coef, target))
}

/// Solves `(A + mu I) g = b` where `A`, `b` are the weighted real normal
/// equations averaged over the given systems.
fn solve_time_ls(systems: &[(&AtfSet, &FrequencyResponse)], cfg: &EqDesignConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let first = systems.first().ok_or(Error::Empty("design systems"))?.0;
    let nf = first.fft_size();
    let nt = cfg.taps;
    if nt > nf {
        return Err(Error::Config(format!(
            "filter length {nt} exceeds fft size {nf}"
        )));
    }
    let nbins = nf / 2 + 1;
    let theta: Vec<f64> = (0..nbins).map(|k| 2.0 * PI * k as f64 / nf as f64).collect();
    let weight = |k: usize| if k == 0 || k == nf / 2 { 1.0 } else { 2.0 };

    // autocorr[d] = sum_k w_k |a_k|^2 cos(theta_k d)
    // rhs[n]      = sum_k w_k Re(conj(a_k) t_k exp(j theta_k n))
    let mut autocorr = vec![0.0; nt];
    let mut rhs = vec![0.0; nt];
    for (set, r) in systems {
        first.o.ensure_same_grid(&set.o)?;
        let (coef, target) = bin_system(set, r, cfg.d_proc_seconds)?;
        for k in 0..nbins {
            let w = weight(k);
            let power = w * coef[k].norm_sqr();
            let cross = coef[k].conj() * target[k] * w;
            if power == 0.0 && cross == Complex64::new(0.0, 0.0) {
                continue;
            }
            for n in 0..nt {
                let (sin, cos) = (theta[k] * n as f64).sin_cos();
                autocorr[n] += power * cos;
                rhs[n] += cross.re * cos - cross.im * sin;
            }
        }
    }
    let scale = 1.0 / systems.len() as f64;
    let mut normal = DMatrix::from_fn(nt, nt, |i, j| autocorr[i.abs_diff(j)] * scale);
    for i in 0..nt {
        normal[(i, i)] += cfg.mu;
    }
    let rhs = DVector::from_iterator(nt, rhs.into_iter().map(|v| v * scale));

    let chol = normal.cholesky().ok_or_else(|| {
        Error::Solver(format!(
            "normal equations not positive definite (mu = {}); the design is rank deficient",
            cfg.mu
        ))
    })?;
    let g = chol.solve(&rhs);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("non-finite filter taps".into()));
    }
    Ok(g.iter().copied().collect())
}

/// Value of the time-domain design objective for given taps: weighted
/// two-sided residual energy plus `mu * |g|^2`.
pub fn time_ls_cost(set: &AtfSet, r: &FrequencyResponse, taps: &[f64], cfg: &EqDesignConfig) -> Result<f64> {
    let (coef, target) = bin_system(set, r, cfg.d_proc_seconds)?;
    let g = ir_to_fr(&ImpulseResponse::new(taps.to_vec(), set.rate())?, set.fft_size())?;
    let data: f64 = (0..coef.len())
        .map(|k| set.o.bin_weight(k) * (coef[k] * g.bins()[k] - target[k]).norm_sqr())
        .sum();
    Ok(data + cfg.mu * taps.iter().map(|t| t * t).sum::<f64>())
}
