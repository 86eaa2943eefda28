//! Zero-forcing FIR equalization of the detector response.
//!
//! The detector magnitude response is read off the homodyne PSD under the
//! assumption that the vacuum input is white. A symmetric FIR is fitted to
//! its inverse by weighted least squares and scaled by `α` so the total
//! variance of the design spectrum is unchanged.

use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{Error, Result};
use crate::io::digest_f64s;
use crate::sim::{quantize, AdcModel, CaptureKind, RealRecord, SampleRecord};
use crate::spectral::SpectralEstimate;

pub const MIN_TAPS: usize = 3;
pub const MAX_TAPS: usize = 1025;
/// Uniform in-band grid points used by the least-squares design.
pub const DESIGN_GRID: usize = 4096;
/// Ridge added to the normal equations, relative to their mean diagonal.
pub const DESIGN_RIDGE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseEstimate {
    pub freq_hz: Vec<f64>,
    /// `|F(f)|`, normalized to 1 at the DC bin.
    pub magnitude: Vec<f64>,
    pub sample_rate_hz: f64,
    /// Digest of the PSD the estimate was derived from.
    pub source_id: String,
}

impl ResponseEstimate {
    pub fn at(&self, freq_hz: f64) -> f64 {
        dsp::interp(&self.freq_hz, &self.magnitude, freq_hz)
    }

    /// Response known in closed form, sampled on `points` bins over `[0, f_N]`.
    pub fn from_fn(sample_rate_hz: f64, points: usize, f: impl Fn(f64) -> f64, source_id: &str) -> Self {
        let fnyq = sample_rate_hz / 2.0;
        let freq_hz: Vec<f64> = (0..points)
            .map(|i| fnyq * i as f64 / (points - 1) as f64)
            .collect();
        let magnitude = freq_hz.iter().map(|&x| f(x)).collect();
        ResponseEstimate {
            freq_hz,
            magnitude,
            sample_rate_hz,
            source_id: source_id.to_string(),
        }
    }
}

/// `|F(f)| = sqrt(S_M(f) / S_M(0))`.
///
/// The Welch DC bin is biased by mean removal and twice as noisy as its
/// neighbours, so `S_M(0)` is taken from an even quadratic `a + b·f²` fitted
/// to the first [`REFERENCE_BINS`] non-DC bins.
pub fn estimate_detector_response(hom: &SpectralEstimate) -> Result<ResponseEstimate> {
    let psd = hom.floored()?;
    let peak = psd.iter().copied().fold(0.0, f64::max);
    let reference = dc_reference(&hom.freq_hz, &psd);
    if !(reference.is_finite() && reference > PSD_REFERENCE_FLOOR * peak) {
        return Err(Error::DegenerateSpectrum(format!(
            "DC reference level {reference:e} is not usable"
        )));
    }
    let mut magnitude: Vec<f64> = psd.iter().map(|p| (p / reference).sqrt()).collect();
    magnitude[0] = 1.0;
    Ok(ResponseEstimate {
        freq_hz: hom.freq_hz.clone(),
        magnitude,
        sample_rate_hz: hom.sample_rate_hz,
        source_id: digest_f64s(&hom.psd),
    })
}

pub const REFERENCE_BINS: usize = 16;

fn dc_reference(freq: &[f64], psd: &[f64]) -> f64 {
    let k = REFERENCE_BINS.min(psd.len() - 1);
    if k < 2 {
        return psd[0];
    }
    // Least squares for a + b·x with x = f².
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    let scale = freq[k] * freq[k];
    for i in 1..=k {
        let x = freq[i] * freq[i] / scale;
        sx += x;
        sy += psd[i];
        sxx += x * x;
        sxy += x * psd[i];
    }
    let n = k as f64;
    let det = n * sxx - sx * sx;
    (sxx * sy - sx * sxy) / det
}

const PSD_REFERENCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirFilter {
    /// Symmetric taps, already scaled by `alpha`.
    pub taps: Vec<f64>,
    pub design_band_hz: (f64, f64),
    pub alpha: f64,
    pub sample_rate_hz: f64,
    pub target_response_id: String,
}

impl FirFilter {
    pub fn identity(sample_rate_hz: f64) -> Self {
        FirFilter {
            taps: vec![1.0],
            design_band_hz: (0.0, sample_rate_hz / 2.0),
            alpha: 1.0,
            sample_rate_hz,
            target_response_id: "identity".into(),
        }
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Samples dropped at each end by [`apply_fir`].
    pub fn edge(&self) -> usize {
        (self.taps.len() - 1) / 2
    }

    /// `|EQ(f)|`.
    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        dsp::zero_phase_response(&self.taps, freq_hz, self.sample_rate_hz).abs()
    }

    pub fn validate(&self) -> Result<()> {
        if self.taps.is_empty() || self.taps.len().is_multiple_of(2) {
            return Err(Error::InvalidSpec(format!(
                "equalizer needs an odd number of taps, got {}",
                self.taps.len()
            )));
        }
        if self.taps.iter().any(|t| !t.is_finite()) || !(self.alpha > 0.0) {
            return Err(Error::InvalidSpec("equalizer taps must be finite with α > 0".into()));
        }
        Ok(())
    }
}

fn check_band(band: (f64, f64), rate: f64) -> Result<()> {
    let (lo, hi) = band;
    if !(lo >= 0.0 && lo < hi && hi <= rate / 2.0 * (1.0 + 1e-12)) {
        return Err(Error::InvalidSpec(format!(
            "design band ({lo}, {hi}) Hz must satisfy 0 <= low < high <= f_N = {}",
            rate / 2.0
        )));
    }
    Ok(())
}

/// Least-squares fit of a symmetric `taps`-long FIR to `1/|F|` on a uniform
/// in-band grid, weighted by `|F|²` (so the residual is the relative error of
/// `EQ·F`), followed by `α` normalization on the PSD implied by `|F|²`.
pub fn design_zf_fir(response: &ResponseEstimate, taps: usize, band_hz: (f64, f64)) -> Result<FirFilter> {
    if taps.is_multiple_of(2) || !(MIN_TAPS..=MAX_TAPS).contains(&taps) {
        return Err(Error::InvalidSpec(format!(
            "tap count {taps} must be odd and within {MIN_TAPS}..={MAX_TAPS}"
        )));
    }
    let rate = response.sample_rate_hz;
    check_band(band_hz, rate)?;
    let (lo, hi) = band_hz;
    let hi = hi.min(rate / 2.0);
    let grid: Vec<f64> = (0..DESIGN_GRID)
        .map(|i| lo + (hi - lo) * i as f64 / (DESIGN_GRID - 1) as f64)
        .collect();
    let mag: Vec<f64> = grid.iter().map(|&f| response.at(f)).collect();
    if mag.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
        return Err(Error::DegenerateSpectrum(
            "response vanishes inside the design band".into(),
        ));
    }
    let target: Vec<f64> = mag.iter().map(|m| 1.0 / m).collect();
    let weight: Vec<f64> = mag.iter().map(|m| m * m).collect();
    let h = dsp::fit_zero_phase_fir(&grid, &target, &weight, taps / 2, rate, DESIGN_RIDGE)?;
    let filter = FirFilter {
        taps: h,
        design_band_hz: (lo, hi),
        alpha: 1.0,
        sample_rate_hz: rate,
        target_response_id: response.source_id.clone(),
    };
    let implied: Vec<f64> = response.magnitude.iter().map(|m| m * m).collect();
    normalize_alpha_on(filter, &response.freq_hz, &implied)
}

/// `∫|EQ|² S df / ∫ S df` on the PSD grid.
pub fn variance_gain(filter: &FirFilter, psd: &SpectralEstimate) -> Result<f64> {
    variance_gain_on(filter, &psd.freq_hz, &psd.psd)
}

fn variance_gain_on(filter: &FirFilter, freq: &[f64], s: &[f64]) -> Result<f64> {
    let before = dsp::trapezoid_mean(s);
    if !(before.is_finite() && before > 0.0) {
        return Err(Error::DegenerateSpectrum("design PSD has zero variance".into()));
    }
    let shaped: Vec<f64> = freq
        .iter()
        .zip(s)
        .map(|(&f, &p)| filter.magnitude(f).powi(2) * p)
        .collect();
    Ok(dsp::trapezoid_mean(&shaped) / before)
}

fn normalize_alpha_on(mut filter: FirFilter, freq: &[f64], s: &[f64]) -> Result<FirFilter> {
    let gain = variance_gain_on(&filter, freq, s)?;
    if !(gain.is_finite() && gain > 0.0) {
        return Err(Error::DegenerateSpectrum(
            "equalizer removes all design-band power".into(),
        ));
    }
    let scale = 1.0 / gain.sqrt();
    for t in &mut filter.taps {
        *t *= scale;
    }
    filter.alpha *= scale;
    Ok(filter)
}

/// Rescales the taps so that `∫|EQ|² S_M df = ∫ S_M df` on `design_psd`.
pub fn normalize_alpha(filter: FirFilter, design_psd: &SpectralEstimate) -> Result<FirFilter> {
    filter.validate()?;
    normalize_alpha_on(filter, &design_psd.freq_hz, &design_psd.psd)
}

/// Worst in-band deviation of `|EQ·F|` from its in-band mean, in dB
/// (returned as `(max_over, max_under)`, both ≥ 0).
pub fn equalized_flatness_db(filter: &FirFilter, response: &ResponseEstimate, band_hz: (f64, f64)) -> (f64, f64) {
    let (lo, hi) = band_hz;
    let vals: Vec<f64> = (0..DESIGN_GRID)
        .map(|i| {
            let f = lo + (hi - lo) * i as f64 / (DESIGN_GRID - 1) as f64;
            filter.magnitude(f) * response.at(f)
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.iter().fold((0.0f64, 0.0f64), |(over, under), v| {
        let db = 20.0 * (v / mean).log10();
        (over.max(db), under.max(-db))
    })
}

/// Linear convolution with centred alignment; the first and last
/// `(taps − 1)/2` samples are dropped.
pub fn apply_fir(x: &[f64], filter: &FirFilter) -> Result<Vec<f64>> {
    filter.validate()?;
    if x.len() <= filter.taps.len() {
        return Err(Error::InvalidInput(format!(
            "record of {} samples is too short for {} taps",
            x.len(),
            filter.taps.len()
        )));
    }
    Ok(dsp::fir_valid(&filter.taps, x))
}

pub fn apply_fir_record(rec: &SampleRecord, filter: &FirFilter) -> Result<RealRecord> {
    let samples = apply_fir(&rec.to_f64(), filter)?;
    Ok(RealRecord {
        samples,
        sample_rate_hz: rec.sample_rate_hz,
    })
}

/// Re-quantizes equalized values with an ideal mid-tread converter.
pub fn requantize(rec: &RealRecord, bits: u8, kind: CaptureKind, rng_seed: u64) -> Result<SampleRecord> {
    let adc = AdcModel::ideal(bits);
    SampleRecord::new(quantize(&rec.samples, &adc), rec.sample_rate_hz, bits, kind, rng_seed)
}
