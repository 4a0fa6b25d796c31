//! Signal containers and the transforms between impulse responses and
//! one-sided spectra.
//!
//! Conventions: the forward DFT is unnormalized, the inverse carries `1/Nf`.
//! A [`FrequencyResponse`] stores bins `0..=Nf/2` (DC through Nyquist); bin
//! `k` sits at `k * rate / Nf` Hz.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Default sampling rate of the measurement chain.
pub const DEFAULT_RATE_HZ: f64 = 40_000.0;
/// Default DFT length (25.6 ms at 40 kHz).
pub const DEFAULT_FFT_SIZE: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SampleRate(f64);

impl SampleRate {
    pub fn new(hertz: f64) -> Result<Self> {
        if hertz.is_finite() && hertz > 0.0 {
            Ok(Self(hertz))
        } else {
            Err(Error::Config(format!("sample rate must be positive, got {hertz}")))
        }
    }

    pub fn hz(self) -> f64 {
        self.0
    }
}

impl Default for SampleRate {
    fn default() -> Self {
        Self(DEFAULT_RATE_HZ)
    }
}

impl TryFrom<f64> for SampleRate {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SampleRate> for f64 {
    fn from(r: SampleRate) -> f64 {
        r.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    taps: Vec<f64>,
    rate: SampleRate,
}

impl ImpulseResponse {
    pub fn new(taps: Vec<f64>, rate: SampleRate) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::Empty("impulse response taps"));
        }
        if let Some(i) = taps.iter().position(|t| !t.is_finite()) {
            return Err(Error::Invariant(format!("non-finite tap at index {i}")));
        }
        Ok(Self { taps, rate })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn rate(&self) -> SampleRate {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn into_taps(self) -> Vec<f64> {
        self.taps
    }
}

/// One-sided complex spectrum of a real acoustic path.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyResponse {
    bins: Vec<Complex64>,
    fft_size: usize,
    rate: SampleRate,
}

impl FrequencyResponse {
    /// Builds a spectrum from its one-sided bins. Values must be finite and
    /// the length must be `fft_size / 2 + 1`. DC and Nyquist are not forced
    /// to be real here (fractional delay ramps are legitimate spectra); see
    /// [`FrequencyResponse::is_real_signal`].
    pub fn new(bins: Vec<Complex64>, fft_size: usize, rate: SampleRate) -> Result<Self> {
        check_fft_size(fft_size)?;
        if bins.len() != fft_size / 2 + 1 {
            return Err(Error::Dimension {
                what: "one-sided bins",
                expected: fft_size / 2 + 1,
                got: bins.len(),
            });
        }
        if let Some(k) = bins.iter().position(|b| !(b.re.is_finite() && b.im.is_finite())) {
            return Err(Error::Invariant(format!("non-finite value at bin {k}")));
        }
        Ok(Self { bins, fft_size, rate })
    }

    pub fn zeros(fft_size: usize, rate: SampleRate) -> Result<Self> {
        check_fft_size(fft_size)?;
        Ok(Self {
            bins: vec![Complex64::new(0.0, 0.0); fft_size / 2 + 1],
            fft_size,
            rate,
        })
    }

    pub fn constant(value: Complex64, fft_size: usize, rate: SampleRate) -> Result<Self> {
        check_fft_size(fft_size)?;
        Self::new(vec![value; fft_size / 2 + 1], fft_size, rate)
    }

    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    pub fn into_bins(self) -> Vec<Complex64> {
        self.bins
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn rate(&self) -> SampleRate {
        self.rate
    }

    pub fn num_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn bin_hz(&self, k: usize) -> f64 {
        bin_frequency(k, self.fft_size, self.rate)
    }

    pub fn freqs_hz(&self) -> Vec<f64> {
        (0..self.bins.len()).map(|k| self.bin_hz(k)).collect()
    }

    pub fn nyquist_hz(&self) -> f64 {
        self.rate.hz() / 2.0
    }

    /// DC and Nyquist are purely real, as they must be for a real signal.
    pub fn is_real_signal(&self) -> bool {
        self.bins[0].im == 0.0 && self.bins[self.bins.len() - 1].im == 0.0
    }

    pub fn same_grid(&self, other: &FrequencyResponse) -> bool {
        self.fft_size == other.fft_size && self.rate == other.rate
    }

    pub fn ensure_same_grid(&self, other: &FrequencyResponse) -> Result<()> {
        if self.fft_size != other.fft_size {
            return Err(Error::Dimension {
                what: "fft size",
                expected: self.fft_size,
                got: other.fft_size,
            });
        }
        if self.rate != other.rate {
            return Err(Error::Invariant(format!(
                "sample rates differ: {} Hz vs {} Hz",
                self.rate.hz(),
                other.rate.hz()
            )));
        }
        Ok(())
    }

    /// Bin-wise combination of two spectra on the same grid.
    pub fn zip_with(
        &self,
        other: &FrequencyResponse,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<FrequencyResponse> {
        self.ensure_same_grid(other)?;
        let bins = self.bins.iter().zip(&other.bins).map(|(&a, &b)| f(a, b)).collect();
        FrequencyResponse::new(bins, self.fft_size, self.rate)
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Result<FrequencyResponse> {
        FrequencyResponse::new(self.bins.iter().map(|&b| f(b)).collect(), self.fft_size, self.rate)
    }

    pub fn mul(&self, other: &FrequencyResponse) -> Result<FrequencyResponse> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn add(&self, other: &FrequencyResponse) -> Result<FrequencyResponse> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &FrequencyResponse) -> Result<FrequencyResponse> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: Complex64) -> Result<FrequencyResponse> {
        self.map(|b| b * factor)
    }

    /// Full-length conjugate-symmetric spectrum `X[0..Nf]`.
    pub fn to_two_sided(&self) -> Vec<Complex64> {
        let n = self.fft_size;
        let mut full = Vec::with_capacity(n);
        full.extend_from_slice(&self.bins);
        for k in (1..n / 2).rev() {
            full.push(self.bins[k].conj());
        }
        full
    }

    /// Two-sided energy weight of one-sided bin `k`: interior bins stand for
    /// themselves and their mirror image.
    pub fn bin_weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.fft_size / 2 {
            1.0
        } else {
            2.0
        }
    }
}

fn check_fft_size(fft_size: usize) -> Result<()> {
    if fft_size < 2 || !fft_size.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "fft size must be even and at least 2, got {fft_size}"
        )));
    }
    Ok(())
}

pub fn bin_frequency(k: usize, fft_size: usize, rate: SampleRate) -> f64 {
    k as f64 * rate.hz() / fft_size as f64
}

/// One-sided DFT of `ir` zero-padded to `fft_size`.
pub fn ir_to_fr(ir: &ImpulseResponse, fft_size: usize) -> Result<FrequencyResponse> {
    check_fft_size(fft_size)?;
    if ir.len() > fft_size {
        return Err(Error::Dimension {
            what: "fft size shorter than impulse response",
            expected: ir.len(),
            got: fft_size,
        });
    }
    let mut buf: Vec<Complex64> = ir
        .taps()
        .iter()
        .map(|&t| Complex64::new(t, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(fft_size)
        .collect();
    FftPlanner::new().plan_fft_forward(fft_size).process(&mut buf);
    buf.truncate(fft_size / 2 + 1);
    buf[0].im = 0.0;
    buf[fft_size / 2].im = 0.0;
    FrequencyResponse::new(buf, fft_size, ir.rate())
}

/// Inverse transform of the conjugate-symmetric extension of `fr`, truncated
/// to `out_len` samples.
pub fn fr_to_ir(fr: &FrequencyResponse, out_len: usize) -> Result<ImpulseResponse> {
    let n = fr.fft_size();
    if out_len == 0 || out_len > n {
        return Err(Error::Dimension {
            what: "impulse response length (must be 1..=fft size)",
            expected: n,
            got: out_len,
        });
    }
    if !fr.is_real_signal() {
        return Err(Error::Invariant(
            "DC and Nyquist bins must be real to invert to a real signal".into(),
        ));
    }
    let mut buf = fr.to_two_sided();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    ImpulseResponse::new(buf[..out_len].iter().map(|z| z.re * scale).collect(), fr.rate())
}

/// Phase ramp `exp(-j 2 pi k (shift * rate) / Nf)`. A negative shift is a time
/// advance. Fractional-sample shifts are allowed.
pub fn delay_phase(fft_size: usize, rate: SampleRate, shift_seconds: f64) -> Result<FrequencyResponse> {
    check_fft_size(fft_size)?;
    let shift_samples = shift_seconds * rate.hz();
    let bins = (0..=fft_size / 2)
        .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 * shift_samples / fft_size as f64))
        .collect();
    FrequencyResponse::new(bins, fft_size, rate)
}

/// One measurement set: the five acoustic paths of one ear and one
/// device insertion.
#[derive(Debug, Clone, PartialEq)]
pub struct AtfSet {
    pub subject_id: String,
    pub trial: u32,
    /// Source to eardrum, open ear.
    pub o: FrequencyResponse,
    /// Source to eardrum through the occluding (switched-off) device.
    pub c: FrequencyResponse,
    /// Source to external microphone.
    pub m: FrequencyResponse,
    /// Receiver to eardrum, processing delay included.
    pub r: FrequencyResponse,
    /// Receiver to inward-facing microphone (secondary path).
    pub s: FrequencyResponse,
}

impl AtfSet {
    pub fn new(
        subject_id: impl Into<String>,
        trial: u32,
        o: FrequencyResponse,
        c: FrequencyResponse,
        m: FrequencyResponse,
        r: FrequencyResponse,
        s: FrequencyResponse,
    ) -> Result<Self> {
        for other in [&c, &m, &r, &s] {
            o.ensure_same_grid(other)?;
        }
        Ok(Self {
            subject_id: subject_id.into(),
            trial,
            o,
            c,
            m,
            r,
            s,
        })
    }

    pub fn fft_size(&self) -> usize {
        self.o.fft_size()
    }

    pub fn rate(&self) -> SampleRate {
        self.o.rate()
    }

    pub fn paths(&self) -> [&FrequencyResponse; 5] {
        [&self.o, &self.c, &self.m, &self.r, &self.s]
    }

    /// Stable identity of this set: subject, trial and every bin's bit
    /// pattern.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.subject_id.as_bytes());
        h.update([0u8]);
        h.update(self.trial.to_le_bytes());
        h.update((self.fft_size() as u64).to_le_bytes());
        h.update(self.rate().hz().to_le_bytes());
        for path in self.paths() {
            for b in path.bins() {
                h.update(b.re.to_le_bytes());
                h.update(b.im.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtfDatabase {
    sets: Vec<AtfSet>,
}

impl AtfDatabase {
    /// All sets must share the same DFT grid. An empty database is allowed;
    /// training operations check their own minimum size.
    pub fn new(sets: Vec<AtfSet>) -> Result<Self> {
        if let Some(first) = sets.first() {
            for set in &sets[1..] {
                first.o.ensure_same_grid(&set.o)?;
            }
        }
        Ok(Self { sets })
    }

    pub fn sets(&self) -> &[AtfSet] {
        &self.sets
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn fft_size(&self) -> Option<usize> {
        self.sets.first().map(AtfSet::fft_size)
    }

    pub fn rate(&self) -> Option<SampleRate> {
        self.sets.first().map(AtfSet::rate)
    }

    /// Subject ids in order of first appearance.
    pub fn subjects(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for s in &self.sets {
            if !seen.contains(&s.subject_id.as_str()) {
                seen.push(s.subject_id.as_str());
            }
        }
        seen
    }

    pub fn find(&self, subject: &str, trial: u32) -> Result<&AtfSet> {
        self.sets
            .iter()
            .find(|s| s.subject_id == subject && s.trial == trial)
            .ok_or_else(|| Error::UnknownSet {
                subject: subject.to_string(),
                trial,
            })
    }

    /// Splits into (sets of `subject`, everything else), preserving order.
    pub fn split_subject(&self, subject: &str) -> (Vec<AtfSet>, AtfDatabase) {
        let (held, rest): (Vec<_>, Vec<_>) =
            self.sets.iter().cloned().partition(|s| s.subject_id == subject);
        (held, AtfDatabase { sets: rest })
    }

    pub fn fingerprints(&self) -> Vec<String> {
        self.sets.iter().map(AtfSet::fingerprint).collect()
    }

    /// Digest over the ordered set fingerprints.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for f in self.fingerprints() {
            h.update(f.as_bytes());
        }
        hex::encode(h.finalize())
    }
}
