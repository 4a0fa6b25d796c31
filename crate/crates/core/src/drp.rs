//! Eardrum response prediction: estimates the receiver-to-eardrum response
//! `r` of an individual ear from its measured secondary path `s`.
//!
//! Two trained linear estimators are combined at a split frequency:
//!
//! * [`RidgeModel`]: one complex ridge gain per bin, `r_hat = s * g`.
//! * [`PcaModel`]: `s` is projected onto the leading principal components of
//!   the training secondary paths, the gain vector is mapped into the
//!   eardrum-response component space by a least-squares matrix, and `r` is
//!   rebuilt from the eardrum-response components.
//!
//! [`estimate_combined`] takes ridge bins up to and including the split
//! frequency, PCA bins above it up to the PCA band edge, and falls back to
//! the ridge estimate above that edge.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::eqdesign::SINGULAR_THRESHOLD;
use crate::error::{Error, Result};
use crate::spectra::{AtfDatabase, FrequencyResponse};

pub const DEFAULT_COMPONENTS: usize = 12;
pub const DEFAULT_SPLIT_HZ: f64 = 1500.0;
pub const DEFAULT_PCA_HIGH_HZ: f64 = 8000.0;
pub const DEFAULT_RIDGE_MU: f64 = 0.001;

/// Relative eigenvalue floor below which the gain covariance is treated as
/// singular.
const COVARIANCE_RCOND: f64 = 1e-12;
/// Ridge added to a singular gain covariance, relative to `trace / K`.
const COVARIANCE_RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Number of principal components kept for each path.
    pub components: usize,
    pub split_hz: f64,
    /// Upper edge of the PCA band; the lower edge is the split frequency.
    pub pca_high_hz: f64,
    /// Ridge weight of the per-bin estimator.
    pub mu: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            components: DEFAULT_COMPONENTS,
            split_hz: DEFAULT_SPLIT_HZ,
            pca_high_hz: DEFAULT_PCA_HIGH_HZ,
            mu: DEFAULT_RIDGE_MU,
        }
    }
}

impl EstimatorConfig {
    pub fn pca_band(&self) -> (f64, f64) {
        (self.split_hz, self.pca_high_hz)
    }

    pub fn validate(&self, nyquist_hz: f64) -> Result<()> {
        if self.components == 0 {
            return Err(Error::Config("need at least one principal component".into()));
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::Config(format!("ridge mu must be >= 0, got {}", self.mu)));
        }
        check_band((self.split_hz, self.pca_high_hz), nyquist_hz)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    pub gains: FrequencyResponse,
    pub mu: f64,
    /// Upper edge of the band in which the combiner uses this model.
    pub band_limit_hz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub components: usize,
    /// Secondary-path components, one column each (`Nbins x K`).
    pub u_s: DMatrix<Complex64>,
    /// Eardrum-response components (`Nbins x K`).
    pub u_r: DMatrix<Complex64>,
    pub s_mean: FrequencyResponse,
    pub r_mean: FrequencyResponse,
    pub g_s_mean: DVector<Complex64>,
    pub g_r_mean: DVector<Complex64>,
    /// Gain-space map from secondary-path gains to eardrum gains (`K x K`).
    pub a_hat: DMatrix<Complex64>,
    pub band_hz: (f64, f64),
    /// Set when the gain covariance had to be regularized to invert it.
    pub regularized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedEstimator {
    pub ridge: RidgeModel,
    pub pca: PcaModel,
    pub split_hz: f64,
}

fn check_band(band: (f64, f64), nyquist_hz: f64) -> Result<()> {
    let (low, high) = band;
    if !(low >= 0.0 && low < high && high <= nyquist_hz) {
        return Err(Error::Config(format!(
            "band ({low}, {high}) Hz must satisfy 0 <= low < high <= {nyquist_hz}"
        )));
    }
    Ok(())
}

/// Rectangular window: keeps bins whose center frequency lies in
/// `[low, high]`, zeroes the rest.
pub fn window_band(fr: &FrequencyResponse, band: (f64, f64)) -> Result<FrequencyResponse> {
    check_band(band, fr.nyquist_hz())?;
    let bins = fr
        .bins()
        .iter()
        .enumerate()
        .map(|(k, &b)| {
            let f = fr.bin_hz(k);
            if f >= band.0 && f <= band.1 {
                b
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    FrequencyResponse::new(bins, fr.fft_size(), fr.rate())
}

fn band_indices(fr: &FrequencyResponse, band: (f64, f64)) -> Vec<usize> {
    (0..fr.num_bins())
        .filter(|&k| {
            let f = fr.bin_hz(k);
            f >= band.0 && f <= band.1
        })
        .collect()
}

fn require_grid(training: &AtfDatabase) -> Result<&FrequencyResponse> {
    training
        .sets()
        .first()
        .map(|s| &s.s)
        .ok_or(Error::Empty("training database"))
}

/// Per-bin ridge gains `sum_j conj(s_j) r_j / (sum_j |s_j|^2 + mu)`.
///
/// The stacked system is block diagonal across bins, so every bin is solved
/// on its own. Gains are kept on the full grid.
pub fn train_ridge(training: &AtfDatabase, mu: f64) -> Result<RidgeModel> {
    let grid = require_grid(training)?;
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(Error::Config(format!("ridge mu must be >= 0, got {mu}")));
    }
    let nbins = grid.num_bins();
    let mut cross = vec![Complex64::new(0.0, 0.0); nbins];
    let mut power = vec![0.0; nbins];
    for set in training.sets() {
        for k in 0..nbins {
            let s = set.s.bins()[k];
            cross[k] += s.conj() * set.r.bins()[k];
            power[k] += s.norm_sqr();
        }
    }
    let gains = cross
        .into_iter()
        .zip(power)
        .enumerate()
        .map(|(k, (num, den))| {
            let den = den + mu;
            if den < SINGULAR_THRESHOLD * SINGULAR_THRESHOLD {
                Err(Error::Singular {
                    bin: k,
                    what: "every training secondary path vanishes",
                })
            } else {
                Ok(num / den)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RidgeModel {
        gains: FrequencyResponse::new(gains, grid.fft_size(), grid.rate())?,
        mu,
        band_limit_hz: grid.nyquist_hz(),
    })
}

/// `r_hat = s * g`, bin by bin.
pub fn estimate_ridge(model: &RidgeModel, s: &FrequencyResponse) -> Result<FrequencyResponse> {
    s.mul(&model.gains)
}

/// Trains the principal-component estimator on band-windowed spectra.
pub fn train_pca(training: &AtfDatabase, components: usize, band: (f64, f64)) -> Result<PcaModel> {
    let grid = require_grid(training)?;
    let j = training.len();
    if j < 2 {
        return Err(Error::Config(format!(
            "principal component training needs at least 2 sets, got {j}"
        )));
    }
    check_band(band, grid.nyquist_hz())?;
    let idx = band_indices(grid, band);
    if components == 0 || components > j.min(idx.len()) {
        return Err(Error::Config(format!(
            "component count {components} must be in 1..={} ({} sets, {} bins in band)",
            j.min(idx.len()),
            j,
            idx.len()
        )));
    }
    let nbins = grid.num_bins();

    // Band rows only; columns are training sets.
    let gather = |pick: fn(&crate::spectra::AtfSet) -> &FrequencyResponse| {
        DMatrix::from_fn(idx.len(), j, |row, col| pick(&training.sets()[col]).bins()[idx[row]])
    };
    let s_data = gather(|set| &set.s);
    let r_data = gather(|set| &set.r);

    let (s_mean_band, s_centered) = center_columns(&s_data);
    let (r_mean_band, r_centered) = center_columns(&r_data);

    let u_s_band = leading_left_singular_vectors(&s_centered, components);
    let u_r_band = leading_left_singular_vectors(&r_centered, components);

    let g_s = u_s_band.adjoint() * &s_centered;
    let g_r = u_r_band.adjoint() * &r_centered;
    let (g_s_mean, g_s_tilde) = center_columns(&g_s);
    let (g_r_mean, g_r_tilde) = center_columns(&g_r);

    let cross = &g_r_tilde * g_s_tilde.adjoint();
    let auto = &g_s_tilde * g_s_tilde.adjoint();
    let (a_hat, regularized) = solve_gain_map(&cross, &auto)?;
    if regularized {
        log::warn!(
            "secondary-path gain covariance is singular ({j} sets, {components} components); \
             mapping solved with a small ridge"
        );
    }

    let embed_vec = |band_vals: &DVector<Complex64>| -> Result<FrequencyResponse> {
        let mut full = vec![Complex64::new(0.0, 0.0); nbins];
        for (row, &k) in idx.iter().enumerate() {
            full[k] = band_vals[row];
        }
        FrequencyResponse::new(full, grid.fft_size(), grid.rate())
    };
    let embed_mat = |band_mat: &DMatrix<Complex64>| {
        let mut full = DMatrix::zeros(nbins, components);
        for (row, &k) in idx.iter().enumerate() {
            full.set_row(k, &band_mat.row(row));
        }
        full
    };

    Ok(PcaModel {
        components,
        u_s: embed_mat(&u_s_band),
        u_r: embed_mat(&u_r_band),
        s_mean: embed_vec(&s_mean_band)?,
        r_mean: embed_vec(&r_mean_band)?,
        g_s_mean,
        g_r_mean,
        a_hat,
        band_hz: band,
        regularized,
    })
}

/// Column mean and the column-centered matrix.
fn center_columns(data: &DMatrix<Complex64>) -> (DVector<Complex64>, DMatrix<Complex64>) {
    let n = data.ncols() as f64;
    let mut mean = DVector::zeros(data.nrows());
    for col in data.column_iter() {
        mean += col;
    }
    mean /= Complex64::new(n, 0.0);
    let mut centered = data.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    (mean, centered)
}

/// Top `k` left singular vectors, ordered by decreasing singular value.
/// Each column is rotated so that its largest-magnitude entry is real and
/// positive, which pins the otherwise arbitrary unit phase.
fn leading_left_singular_vectors(data: &DMatrix<Complex64>, k: usize) -> DMatrix<Complex64> {
    let svd = data.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors were requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut out = DMatrix::zeros(data.nrows(), k);
    for (dst, &src) in order.iter().take(k).enumerate() {
        let col = u.column(src);
        let mut pivot = 0;
        for (i, v) in col.iter().enumerate() {
            if v.norm() > col[pivot].norm() {
                pivot = i;
            }
        }
        let p = col[pivot];
        let rot = if p.norm() > 0.0 { p.conj() / p.norm() } else { Complex64::new(1.0, 0.0) };
        for i in 0..data.nrows() {
            out[(i, dst)] = col[i] * rot;
        }
    }
    out
}

/// `A = cross * auto^-1`, with a small ridge on `auto` when it is
/// numerically singular. Returns the map and whether the ridge was needed.
fn solve_gain_map(
    cross: &DMatrix<Complex64>,
    auto: &DMatrix<Complex64>,
) -> Result<(DMatrix<Complex64>, bool)> {
    let k = auto.nrows();
    let trace: f64 = (0..k).map(|i| auto[(i, i)].re).sum();
    if trace <= 0.0 {
        // No secondary-path variation at all: nothing to map.
        return Ok((DMatrix::zeros(k, k), true));
    }
    let eig = auto.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let singular = min <= COVARIANCE_RCOND * max;
    let mut system = auto.clone();
    if singular {
        let eps = COVARIANCE_RIDGE * trace / k as f64;
        for i in 0..k {
            system[(i, i)] += Complex64::new(eps, 0.0);
        }
    }
    // auto is Hermitian: A^H = auto^-1 cross^H.
    let chol = system
        .cholesky()
        .ok_or_else(|| Error::Solver("gain covariance is not positive definite".into()))?;
    let a_h = chol.solve(&cross.adjoint());
    Ok((a_h.adjoint(), singular))
}

/// `g_s = U_s^H (s - s_mean)`, `g_r = g_r_mean + A g_s`,
/// `r_hat = r_mean + U_r g_r`, on the model's band. Bins outside the band
/// carry no meaning.
pub fn estimate_pca(model: &PcaModel, s: &FrequencyResponse) -> Result<FrequencyResponse> {
    model.s_mean.ensure_same_grid(s)?;
    let windowed = window_band(s, model.band_hz)?;
    let centered = DVector::from_iterator(
        s.num_bins(),
        windowed.bins().iter().zip(model.s_mean.bins()).map(|(a, b)| a - b),
    );
    let g_s = model.u_s.adjoint() * centered;
    let g_r = &model.g_r_mean + &model.a_hat * g_s;
    let deviation = &model.u_r * g_r;
    let bins = model
        .r_mean
        .bins()
        .iter()
        .zip(deviation.iter())
        .map(|(m, d)| m + d)
        .collect();
    FrequencyResponse::new(bins, s.fft_size(), s.rate())
}

/// Which estimator supplies a bin at frequency `f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinSource {
    Ridge,
    Pca,
    /// Above the PCA band: ridge output used as a fallback.
    RidgeFallback,
}

impl CombinedEstimator {
    pub fn train(training: &AtfDatabase, cfg: &EstimatorConfig) -> Result<Self> {
        let grid = require_grid(training)?;
        cfg.validate(grid.nyquist_hz())?;
        let mut ridge = train_ridge(training, cfg.mu)?;
        ridge.band_limit_hz = cfg.split_hz;
        let pca = train_pca(training, cfg.components, cfg.pca_band())?;
        Ok(Self {
            ridge,
            pca,
            split_hz: cfg.split_hz,
        })
    }

    pub fn source_of(&self, f_hz: f64) -> BinSource {
        if f_hz <= self.split_hz {
            BinSource::Ridge
        } else if f_hz <= self.pca.band_hz.1 {
            BinSource::Pca
        } else {
            BinSource::RidgeFallback
        }
    }
}

/// Piecewise estimate: ridge at and below the split frequency, PCA above it
/// up to the PCA band edge, ridge again beyond that edge.
pub fn estimate_combined(est: &CombinedEstimator, s: &FrequencyResponse) -> Result<FrequencyResponse> {
    let ridge = estimate_ridge(&est.ridge, s)?;
    let pca = estimate_pca(&est.pca, s)?;
    let bins = (0..s.num_bins())
        .map(|k| match est.source_of(s.bin_hz(k)) {
            BinSource::Pca => pca.bins()[k],
            BinSource::Ridge | BinSource::RidgeFallback => ridge.bins()[k],
        })
        .collect();
    FrequencyResponse::new(bins, s.fft_size(), s.rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{AtfSet, SampleRate};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn fr(bins: Vec<Complex64>, nf: usize) -> FrequencyResponse {
        FrequencyResponse::new(bins, nf, SampleRate::default()).unwrap()
    }

    fn random_bins(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
        (0..n).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    fn db_from(pairs: Vec<(Vec<Complex64>, Vec<Complex64>)>, nf: usize) -> AtfDatabase {
        let one = fr(vec![c(1.0, 0.0); nf / 2 + 1], nf);
        let sets = pairs
            .into_iter()
            .enumerate()
            .map(|(i, (s, r))| {
                AtfSet::new(format!("s{i}"), 1, one.clone(), one.clone(), one.clone(), fr(r, nf), fr(s, nf)).unwrap()
            })
            .collect();
        AtfDatabase::new(sets).unwrap()
    }

    #[test]
    fn proportional_ensemble_gives_constant_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let nf = 32;
        let pairs = (0..4)
            .map(|_| {
                let s: Vec<_> = random_bins(&mut rng, nf / 2 + 1).into_iter().map(|b| b + c(2.0, 0.0)).collect();
                let r = s.iter().map(|b| b * 2.0).collect();
                (s, r)
            })
            .collect();
        let model = train_ridge(&db_from(pairs, nf), 0.0).unwrap();
        assert!(model.gains.bins().iter().all(|g| (g - c(2.0, 0.0)).norm() < 1e-12));
    }

    #[test]
    fn scalar_ridge_gain() {
        let nf = 8;
        let db = db_from(vec![(vec![c(1.0, 0.0); 5], vec![c(1.0, 0.0); 5])], nf);
        let model = train_ridge(&db, 0.001).unwrap();
        for g in model.gains.bins() {
            assert!((g.re - 1.0 / 1.001).abs() < 1e-15);
            assert!((g.re - 0.999001).abs() < 1e-6);
        }
    }

    #[test]
    fn ridge_singular_bin_without_regularization() {
        let nf = 8;
        let mut s = vec![c(1.0, 0.0); 5];
        s[2] = c(0.0, 0.0);
        let db = db_from(vec![(s.clone(), vec![c(1.0, 0.0); 5]), (s, vec![c(1.0, 0.0); 5])], nf);
        assert!(matches!(train_ridge(&db, 0.0), Err(Error::Singular { bin: 2, .. })));
        let model = train_ridge(&db, 0.01).unwrap();
        assert_eq!(model.gains.bins()[2], c(0.0, 0.0));
    }

    #[test]
    fn ridge_identity_and_zero_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let nf = 16;
        let s = fr(random_bins(&mut rng, 9), nf);
        let ones = RidgeModel { gains: fr(vec![c(1.0, 0.0); 9], nf), mu: 0.0, band_limit_hz: 1500.0 };
        assert_eq!(estimate_ridge(&ones, &s).unwrap(), s);
        let zeros = RidgeModel { gains: fr(vec![c(0.0, 0.0); 9], nf), mu: 0.0, band_limit_hz: 1500.0 };
        assert!(estimate_ridge(&zeros, &s).unwrap().bins().iter().all(|b| b.norm() == 0.0));
    }

    #[test]
    fn ridge_composition_doubles() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let nf = 16;
        let pairs = (0..3)
            .map(|_| {
                let s: Vec<_> = random_bins(&mut rng, 9).into_iter().map(|b| b + c(1.5, 0.0)).collect();
                let r = s.iter().map(|b| b * 2.0).collect();
                (s, r)
            })
            .collect();
        let model = train_ridge(&db_from(pairs, nf), 0.0).unwrap();
        let probe = fr(random_bins(&mut rng, 9), nf);
        let est = estimate_ridge(&model, &probe).unwrap();
        for (e, p) in est.bins().iter().zip(probe.bins()) {
            assert!((e - p * 2.0).norm() < 1e-12);
        }
    }

    #[test]
    fn window_band_edges() {
        let nf = 1024;
        let x = fr(vec![c(1.0, 0.0); 513], nf);
        assert_eq!(window_band(&x, (0.0, 20_000.0)).unwrap(), x);
        let w = window_band(&x, (1500.0, 8000.0)).unwrap();
        let kept: Vec<usize> = (0..513).filter(|&k| w.bins()[k].norm() > 0.0).collect();
        assert_eq!(kept.first(), Some(&39));
        assert_eq!(kept.last(), Some(&204));
        assert_eq!(kept.len(), 204 - 39 + 1);
        assert!(window_band(&x, (8000.0, 1500.0)).is_err());
        assert!(window_band(&x, (0.0, 30_000.0)).is_err());
    }

    #[test]
    fn window_partition_at_the_split() {
        // 50 Hz bins: 1500 Hz is exactly bin 30, which belongs to the low band.
        let rate = SampleRate::new(3200.0).unwrap();
        let x = FrequencyResponse::new(vec![c(1.0, 0.0); 33], 64, rate).unwrap();
        let low = window_band(&x, (0.0, 1500.0)).unwrap();
        let est = CombinedEstimator {
            ridge: RidgeModel { gains: x.clone(), mu: 0.0, band_limit_hz: 1500.0 },
            pca: dummy_pca(&x, (1500.0, 1600.0)),
            split_hz: 1500.0,
        };
        for k in 0..33 {
            let in_low = low.bins()[k].norm() > 0.0;
            let above = est.source_of(x.bin_hz(k)) != BinSource::Ridge;
            assert!(in_low ^ above, "bin {k} covered {} times", in_low as u8 + above as u8);
        }
        assert!(low.bins()[30].norm() > 0.0);
        assert_eq!(est.source_of(1500.0), BinSource::Ridge);
        assert_eq!(est.source_of(1550.0), BinSource::Pca);
        assert_eq!(est.source_of(1650.0), BinSource::RidgeFallback);
    }

    fn dummy_pca(grid: &FrequencyResponse, band: (f64, f64)) -> PcaModel {
        let n = grid.num_bins();
        PcaModel {
            components: 1,
            u_s: DMatrix::zeros(n, 1),
            u_r: DMatrix::zeros(n, 1),
            s_mean: FrequencyResponse::zeros(grid.fft_size(), grid.rate()).unwrap(),
            r_mean: FrequencyResponse::zeros(grid.fft_size(), grid.rate()).unwrap(),
            g_s_mean: DVector::zeros(1),
            g_r_mean: DVector::zeros(1),
            a_hat: DMatrix::zeros(1, 1),
            band_hz: band,
            regularized: false,
        }
    }

    #[test]
    fn zero_variance_ensemble_collapses_to_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let nf = 64;
        let r = random_bins(&mut rng, 33);
        let pairs = (0..5).map(|_| (random_bins(&mut rng, 33), r.clone())).collect();
        let db = db_from(pairs, nf);
        let band = (0.0, 20_000.0);
        let model = train_pca(&db, 2, band).unwrap();
        let probe = fr(random_bins(&mut rng, 33), nf);
        let est = estimate_pca(&model, &probe).unwrap();
        for (e, t) in est.bins().iter().zip(&r) {
            assert!((e - t).norm() < 1e-12);
        }
    }

    #[test]
    fn mean_input_gives_mean_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let nf = 64;
        let pairs = (0..8).map(|_| (random_bins(&mut rng, 33), random_bins(&mut rng, 33))).collect();
        let db = db_from(pairs, nf);
        let model = train_pca(&db, 3, (0.0, 20_000.0)).unwrap();
        let est = estimate_pca(&model, &model.s_mean).unwrap();
        let expected = &model.u_r * &model.g_r_mean;
        for k in 0..33 {
            assert!((est.bins()[k] - model.r_mean.bins()[k] - expected[k]).norm() < 1e-12);
            assert!((est.bins()[k] - model.r_mean.bins()[k]).norm() < 1e-12);
        }
    }

    #[test]
    fn rank_one_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let nf = 64;
        let nb = 33;
        let unit = |rng: &mut ChaCha8Rng| {
            let v = random_bins(rng, nb);
            let n = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect::<Vec<_>>()
        };
        let (u, v) = (unit(&mut rng), unit(&mut rng));
        let (s_bar, r_bar) = (random_bins(&mut rng, nb), random_bins(&mut rng, nb));
        let pairs: Vec<_> = (0..6)
            .map(|_| {
                let a = c(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                let s = s_bar.iter().zip(&v).map(|(m, d)| m + d * a).collect();
                let r = r_bar.iter().zip(&u).map(|(m, d)| m + d * a).collect();
                (s, r)
            })
            .collect();
        let db = db_from(pairs, nf);
        let model = train_pca(&db, 1, (0.0, 20_000.0)).unwrap();
        for set in db.sets() {
            let est = estimate_pca(&model, &set.s).unwrap();
            for (e, t) in est.bins().iter().zip(set.r.bins()) {
                assert!((e - t).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn components_are_orthonormal_with_pinned_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let nf = 128;
        let pairs = (0..15).map(|_| (random_bins(&mut rng, 65), random_bins(&mut rng, 65))).collect();
        let db = db_from(pairs, nf);
        let model = train_pca(&db, 5, (1500.0, 8000.0)).unwrap();
        for u in [&model.u_s, &model.u_r] {
            let gram = u.adjoint() * u;
            for i in 0..5 {
                for j in 0..5 {
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((gram[(i, j)] - c(expected, 0.0)).norm() < 1e-10);
                }
                let col = u.column(i);
                let pivot = col.iter().max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap()).unwrap();
                assert!(pivot.im.abs() < 1e-15 && pivot.re > 0.0);
            }
        }
        // Out-of-band rows carry nothing.
        let grid = &db.sets()[0].s;
        for k in 0..65 {
            let f = grid.bin_hz(k);
            if !(1500.0..=8000.0).contains(&f) {
                assert!(model.u_s.row(k).iter().all(|x| x.norm() == 0.0));
            }
        }
        assert!(!model.regularized);
    }

    #[test]
    fn too_many_components_or_sets_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let nf = 32;
        let pairs: Vec<_> = (0..3).map(|_| (random_bins(&mut rng, 17), random_bins(&mut rng, 17))).collect();
        let db = db_from(pairs.clone(), nf);
        assert!(matches!(train_pca(&db, 4, (0.0, 20_000.0)), Err(Error::Config(_))));
        assert!(matches!(train_pca(&db, 0, (0.0, 20_000.0)), Err(Error::Config(_))));
        let one = db_from(pairs[..1].to_vec(), nf);
        assert!(matches!(train_pca(&one, 1, (0.0, 20_000.0)), Err(Error::Config(_))));
    }

    #[test]
    fn underdetermined_mapping_is_regularized() {
        // J = K: the centered gains have rank J - 1 < K.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let nf = 32;
        let pairs = (0..3).map(|_| (random_bins(&mut rng, 17), random_bins(&mut rng, 17))).collect();
        let db = db_from(pairs, nf);
        let model = train_pca(&db, 3, (0.0, 20_000.0)).unwrap();
        assert!(model.regularized);
        assert!(model.a_hat.iter().all(|x| x.re.is_finite() && x.im.is_finite()));
    }

    #[test]
    fn mapping_beats_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let nf = 64;
        let pairs = (0..12).map(|_| (random_bins(&mut rng, 33), random_bins(&mut rng, 33))).collect();
        let db = db_from(pairs, nf);
        let model = train_pca(&db, 4, (0.0, 20_000.0)).unwrap();
        let gains = |u: &DMatrix<Complex64>, mean: &FrequencyResponse, pick: fn(&AtfSet) -> &FrequencyResponse| {
            db.sets()
                .iter()
                .map(|set| {
                    let x = DVector::from_iterator(33, pick(set).bins().iter().zip(mean.bins()).map(|(a, b)| a - b));
                    u.adjoint() * x
                })
                .collect::<Vec<_>>()
        };
        let gs = gains(&model.u_s, &model.s_mean, |s| &s.s);
        let gr = gains(&model.u_r, &model.r_mean, |s| &s.r);
        let cost = |a: &DMatrix<Complex64>| -> f64 {
            gs.iter()
                .zip(&gr)
                .map(|(s, r)| (r - &model.g_r_mean - a * (s - &model.g_s_mean)).norm_squared())
                .sum()
        };
        let best = cost(&model.a_hat);
        for _ in 0..100 {
            let d = DMatrix::from_fn(4, 4, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let d = &d * Complex64::new(1e-3 / d.norm(), 0.0);
            assert!(cost(&(&model.a_hat + d)) >= best);
        }
    }

    #[test]
    fn projection_gains_are_best_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let nf = 64;
        let pairs = (0..10).map(|_| (random_bins(&mut rng, 33), random_bins(&mut rng, 33))).collect();
        let db = db_from(pairs, nf);
        let model = train_pca(&db, 3, (0.0, 20_000.0)).unwrap();
        for set in db.sets() {
            let x = DVector::from_iterator(33, set.r.bins().iter().zip(model.r_mean.bins()).map(|(a, b)| a - b));
            let g = model.u_r.adjoint() * &x;
            let best = (&x - &model.u_r * &g).norm();
            for _ in 0..100 {
                let h = DVector::from_fn(3, |_, _| c(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)));
                assert!((&x - &model.u_r * h).norm() >= best - 1e-12);
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let nf = 64;
        let pairs: Vec<_> = (0..10).map(|_| (random_bins(&mut rng, 33), random_bins(&mut rng, 33))).collect();
        let a = CombinedEstimator::train(&db_from(pairs.clone(), nf), &EstimatorConfig { components: 4, ..Default::default() }).unwrap();
        let b = CombinedEstimator::train(&db_from(pairs, nf), &EstimatorConfig { components: 4, ..Default::default() }).unwrap();
        assert_eq!(a, b);
    }
}
