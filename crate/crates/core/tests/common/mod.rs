#![allow(dead_code)]
//! Independent dense reference implementations used by the integration and
//! acceptance tests. Everything here is built from explicit matrices and
//! direct formulas, without the structure the library exploits.

use std::f64::consts::PI;

use hearthru::drp::PcaModel;
use hearthru::eqdesign::EqDesignConfig;
use hearthru::spectra::{AtfDatabase, AtfSet, FrequencyResponse, SampleRate};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};

pub fn cx(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Direct O(N^2) DFT of real taps, one-sided.
pub fn dft_real(taps: &[f64], nf: usize) -> Vec<Complex64> {
    (0..=nf / 2)
        .map(|k| {
            taps.iter()
                .enumerate()
                .map(|(n, &x)| x * Complex64::from_polar(1.0, -2.0 * PI * (k * n) as f64 / nf as f64))
                .sum()
        })
        .collect()
}

/// Response of a random decaying real impulse response.
pub fn random_real_fr(rng: &mut impl Rng, nf: usize, rate: SampleRate, floor: f64) -> FrequencyResponse {
    random_fr_with_len(rng, nf, rate, floor, (nf / 4).max(2))
}

pub fn random_fr_with_len(rng: &mut impl Rng, nf: usize, rate: SampleRate, floor: f64, len: usize) -> FrequencyResponse {
    let mut taps: Vec<f64> = (0..len)
        .map(|n| rng.random_range(-1.0..1.0) * (-(n as f64) / (len as f64 / 3.0)).exp())
        .collect();
    // A dominant direct tap keeps the response away from zero.
    taps[0] = floor + taps[0].abs();
    FrequencyResponse::new(dft_real(&taps, nf), nf, rate).unwrap()
}

pub fn random_set(rng: &mut impl Rng, nf: usize, rate: SampleRate, id: &str, trial: u32) -> AtfSet {
    let o = random_real_fr(rng, nf, rate, 1.5);
    let c = random_real_fr(rng, nf, rate, 0.0).scale(cx(0.2, 0.0)).unwrap();
    let m = random_real_fr(rng, nf, rate, 2.5);
    let r = random_real_fr(rng, nf, rate, 2.5);
    let s = random_real_fr(rng, nf, rate, 2.5);
    AtfSet::new(id, trial, o, c, m, r, s).unwrap()
}

/// Full Nf-point spectrum from the one-sided half of a real signal.
pub fn two_sided(one_sided: &[Complex64], nf: usize) -> Vec<Complex64> {
    (0..nf)
        .map(|k| if k <= nf / 2 { one_sided[k] } else { one_sided[nf - k].conj() })
        .collect()
}

/// Materialized design matrix `Y_D[k, n] = m r exp(+j w d) exp(-j w n)`
/// over the full two-sided grid, and the matching target `o - c`.
pub fn dense_system(set: &AtfSet, r: &FrequencyResponse, cfg: &EqDesignConfig) -> (DMatrix<Complex64>, DVector<Complex64>) {
    let nf = set.fft_size();
    let d = cfg.d_proc_seconds * set.rate().hz();
    let a: Vec<Complex64> = (0..=nf / 2)
        .map(|k| {
            set.m.bins()[k] * r.bins()[k] * Complex64::from_polar(1.0, 2.0 * PI * k as f64 * d / nf as f64)
        })
        .collect();
    let t: Vec<Complex64> = (0..=nf / 2).map(|k| set.o.bins()[k] - set.c.bins()[k]).collect();
    let a2 = two_sided(&a, nf);
    let t2 = two_sided(&t, nf);
    let y = DMatrix::from_fn(nf, cfg.taps, |k, n| {
        a2[k] * Complex64::from_polar(1.0, -2.0 * PI * (k * n) as f64 / nf as f64)
    });
    (y, DVector::from_vec(t2))
}

/// Real taps minimizing the mean of `|Y_D g - t|^2` over the systems plus
/// `mu |g|^2`, by SVD least squares on the stacked real/imaginary system
/// with the regularizer appended as extra rows.
pub fn dense_time_ls(systems: &[(&AtfSet, &FrequencyResponse)], cfg: &EqDesignConfig) -> Vec<f64> {
    let nt = cfg.taps;
    let w = (1.0 / systems.len() as f64).sqrt();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for (set, r) in systems {
        let (y, t) = dense_system(set, r, cfg);
        for k in 0..y.nrows() {
            rows.push((0..nt).map(|n| w * y[(k, n)].re).collect());
            rhs.push(w * t[k].re);
            rows.push((0..nt).map(|n| w * y[(k, n)].im).collect());
            rhs.push(w * t[k].im);
        }
    }
    for i in 0..nt {
        let mut row = vec![0.0; nt];
        row[i] = cfg.mu.sqrt();
        rows.push(row);
        rhs.push(0.0);
    }
    let a = DMatrix::from_fn(rows.len(), nt, |i, j| rows[i][j]);
    let b = DVector::from_vec(rhs);
    let svd = a.svd(true, true);
    svd.solve(&b, 1e-14).unwrap().iter().copied().collect()
}

/// `|Y_D^H (Y_D g - t) + mu g|` and `|t|` for one set.
pub fn stationarity(set: &AtfSet, cfg: &EqDesignConfig, taps: &[f64]) -> (f64, f64) {
    let (y, t) = dense_system(set, &set.r, cfg);
    let g = DVector::from_iterator(taps.len(), taps.iter().map(|&v| cx(v, 0.0)));
    let grad = y.adjoint() * (&y * &g - &t) + g * cx(cfg.mu, 0.0);
    (grad.norm(), t.norm())
}

/// Per-bin ridge gains from the stacked block system
/// `D_s = [diag(s_1); ...; diag(s_J)]`, `min |D_s g - [r_1; ...; r_J]|^2 + mu |g|^2`,
/// solved as one dense complex system.
pub fn dense_ridge(db: &AtfDatabase, mu: f64) -> Vec<Complex64> {
    let nb = db.sets()[0].s.num_bins();
    let j = db.len();
    let ds = DMatrix::from_fn(j * nb, nb, |row, col| {
        let (set, k) = (row / nb, row % nb);
        if k == col {
            db.sets()[set].s.bins()[k]
        } else {
            cx(0.0, 0.0)
        }
    });
    let rv = DVector::from_fn(j * nb, |row, _| db.sets()[row / nb].r.bins()[row % nb]);
    let mut normal = ds.adjoint() * &ds;
    for i in 0..nb {
        normal[(i, i)] += cx(mu, 0.0);
    }
    let rhs = ds.adjoint() * rv;
    normal.lu().solve(&rhs).unwrap().iter().copied().collect()
}

fn in_band(f: f64, band: (f64, f64)) -> bool {
    f >= band.0 && f <= band.1
}

/// `A = C_rs C_ss^-1` from the explicit sample covariances of the gain
/// vectors of a trained model, inverted with a general LU.
pub fn covariance_a_hat(model: &PcaModel, db: &AtfDatabase) -> DMatrix<Complex64> {
    let k = model.components;
    let gains = |u: &DMatrix<Complex64>, mean: &FrequencyResponse, pick: fn(&AtfSet) -> &FrequencyResponse| {
        db.sets()
            .iter()
            .map(|set| {
                let x = pick(set);
                let v = DVector::from_fn(x.num_bins(), |b, _| {
                    if in_band(x.bin_hz(b), model.band_hz) {
                        x.bins()[b] - mean.bins()[b]
                    } else {
                        cx(0.0, 0.0)
                    }
                });
                u.adjoint() * v
            })
            .collect::<Vec<_>>()
    };
    let gs = gains(&model.u_s, &model.s_mean, |s| &s.s);
    let gr = gains(&model.u_r, &model.r_mean, |s| &s.r);
    let n = gs.len() as f64;
    let mean = |v: &[DVector<Complex64>]| v.iter().fold(DVector::zeros(k), |acc, x| acc + x) / cx(n, 0.0);
    let (ms, mr) = (mean(&gs), mean(&gr));
    let mut css = DMatrix::zeros(k, k);
    let mut crs = DMatrix::zeros(k, k);
    for (s, r) in gs.iter().zip(&gr) {
        let ds = s - &ms;
        let dr = r - &mr;
        css += &ds * ds.adjoint() / cx(n, 0.0);
        crs += &dr * ds.adjoint() / cx(n, 0.0);
    }
    crs * css.try_inverse().unwrap()
}

/// Noiseless ensemble whose centered secondary paths and eardrum responses
/// both have rank `k`, with the eardrum coefficients a fixed linear map of
/// the secondary-path coefficients.
pub fn rank_k_ensemble(rng: &mut impl Rng, j: usize, k: usize, nf: usize, rate: SampleRate) -> AtfDatabase {
    let nb = nf / 2 + 1;
    let rand_c = |rng: &mut dyn rand::RngCore| cx(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let s_base: Vec<Complex64> = (0..nb).map(|_| rand_c(rng) + cx(3.0, 0.0)).collect();
    let r_base: Vec<Complex64> = (0..nb).map(|_| rand_c(rng) + cx(3.0, 0.0)).collect();
    let s_dirs: Vec<Vec<Complex64>> = (0..k).map(|_| (0..nb).map(|_| rand_c(rng)).collect()).collect();
    let r_dirs: Vec<Vec<Complex64>> = (0..k).map(|_| (0..nb).map(|_| rand_c(rng)).collect()).collect();
    let map = DMatrix::from_fn(k, k, |_, _| rand_c(rng));
    let flat = FrequencyResponse::constant(cx(1.0, 0.0), nf, rate).unwrap();
    let sets = (0..j)
        .map(|idx| {
            let alpha = DVector::from_fn(k, |_, _| rand_c(rng));
            let beta = &map * &alpha;
            let build = |base: &[Complex64], dirs: &[Vec<Complex64>], coef: &DVector<Complex64>| {
                let bins = (0..nb)
                    .map(|b| base[b] + (0..k).map(|i| coef[i] * dirs[i][b] * 0.3).sum::<Complex64>())
                    .collect();
                FrequencyResponse::new(bins, nf, rate).unwrap()
            };
            let s = build(&s_base, &s_dirs, &alpha);
            let r = build(&r_base, &r_dirs, &beta);
            AtfSet::new(format!("R{idx:02}"), 1, flat.clone(), flat.scale(cx(0.1, 0.0)).unwrap(), flat.clone(), r, s)
                .unwrap()
        })
        .collect();
    AtfDatabase::new(sets).unwrap()
}

pub fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

pub fn rel_err_real(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

/// Realistic, exactly recoverable ensemble: smooth real-signal responses,
/// rank-`k` variation in `s` and `r` tied by a fixed real map, no variation
/// at DC where `r = 2 s`, a 1.2 ms device latency in `s` and `r`, and
/// equalizable open/occluded/microphone paths.
pub fn smooth_rank_k_ensemble(rng: &mut impl Rng, j: usize, k: usize, nf: usize, rate: SampleRate) -> AtfDatabase {
    let s_base = random_fr_with_len(rng, nf, rate, 2.5, 6);
    let mut r_base = random_fr_with_len(rng, nf, rate, 2.5, 6).into_bins();
    r_base[0] = s_base.bins()[0] * 2.0;
    let dir = |rng: &mut dyn rand::RngCore| {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng.next_u64());
        let mut bins = random_fr_with_len(&mut rng, nf, rate, 0.0, 6).scale(cx(0.3, 0.0)).unwrap().into_bins();
        bins[0] = cx(0.0, 0.0);
        bins
    };
    let s_dirs: Vec<Vec<Complex64>> = (0..k).map(|_| dir(rng)).collect();
    let r_dirs: Vec<Vec<Complex64>> = (0..k).map(|_| dir(rng)).collect();
    let map = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    let nb = nf / 2 + 1;
    let latency = hearthru::spectra::delay_phase(nf, rate, 0.0012).unwrap();
    let sets = (0..j)
        .map(|idx| {
            let alpha = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
            let beta = &map * &alpha;
            let build = |base: &[Complex64], dirs: &[Vec<Complex64>], coef: &DVector<f64>| {
                let bins = (0..nb)
                    .map(|b| base[b] + (0..k).map(|i| dirs[i][b] * coef[i]).sum::<Complex64>())
                    .collect();
                FrequencyResponse::new(bins, nf, rate).unwrap()
            };
            let s = build(s_base.bins(), &s_dirs, &alpha).mul(&latency).unwrap();
            let r = build(&r_base, &r_dirs, &beta).mul(&latency).unwrap();
            let o = random_fr_with_len(rng, nf, rate, 1.5, 6);
            let c = o.scale(cx(0.1 + 0.05 * rng.random::<f64>(), 0.0)).unwrap();
            let m = random_fr_with_len(rng, nf, rate, 2.5, 6);
            AtfSet::new(format!("X{idx:02}"), 1, o, c, m, r, s).unwrap()
        })
        .collect();
    AtfDatabase::new(sets).unwrap()
}
