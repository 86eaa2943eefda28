use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    /// Periodic window of length `len`.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WelchParams {
    pub segment_len: usize,
    pub overlap: f64,
    pub window: Window,
}

impl Default for WelchParams {
    fn default() -> Self {
        WelchParams {
            segment_len: 4096,
            overlap: 0.5,
            window: Window::Hann,
        }
    }
}

/// Shortest and longest transform the estimator accepts; lengths must also be
/// powers of two.
pub const MIN_SEGMENT_LEN: usize = 8;
pub const MAX_SEGMENT_LEN: usize = 1 << 22;

/// One-sided PSD on the uniform grid `0, df, ..., f_N`.
///
/// Every bin, DC and Nyquist included, is scaled as a one-sided density, so a
/// white process has a flat estimate and the trapezoidal integral over
/// `[0, f_N]` equals the signal variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    pub freq_hz: Vec<f64>,
    pub psd: Vec<f64>,
    pub sample_rate_hz: f64,
    pub segment_len: usize,
    pub overlap_fraction: f64,
    pub window: Window,
    pub n_segments: usize,
}

/// Bins below this fraction of the peak are raised to it before any
/// log-spectral integral.
pub const PSD_FLOOR_REL: f64 = 1e-12;

impl SpectralEstimate {
    pub fn nyquist_hz(&self) -> f64 {
        self.sample_rate_hz / 2.0
    }

    pub fn df(&self) -> f64 {
        self.sample_rate_hz / self.segment_len as f64
    }

    /// Integrated variance, `∫_0^{f_N} S(f) df` by the trapezoid rule.
    pub fn variance(&self) -> f64 {
        dsp::trapezoid_mean(&self.psd) * self.nyquist_hz()
    }

    /// PSD with bins below `PSD_FLOOR_REL * max` raised to that level.
    pub fn floored(&self) -> Result<Vec<f64>> {
        let max = self.psd.iter().copied().fold(0.0, f64::max);
        if !(max.is_finite() && max > 0.0) {
            return Err(Error::DegenerateSpectrum(
                "spectrum has no positive bins".into(),
            ));
        }
        if self.psd.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::DegenerateSpectrum("spectrum has invalid bins".into()));
        }
        let floor = PSD_FLOOR_REL * max;
        Ok(self.psd.iter().map(|&v| v.max(floor)).collect())
    }

    /// Same estimate with every bin scaled by `gain(f)`.
    pub fn scaled_by(&self, gain: impl Fn(f64) -> f64) -> SpectralEstimate {
        let psd = self
            .freq_hz
            .iter()
            .zip(&self.psd)
            .map(|(&f, &p)| p * gain(f))
            .collect();
        SpectralEstimate {
            psd,
            ..self.clone()
        }
    }

    pub(crate) fn same_grid(&self, other: &SpectralEstimate) -> Result<()> {
        if self.psd.len() != other.psd.len() {
            return Err(Error::GridMismatch(format!(
                "{} vs {} bins",
                self.psd.len(),
                other.psd.len()
            )));
        }
        let tol = 1e-9 * self.sample_rate_hz;
        if (self.sample_rate_hz - other.sample_rate_hz).abs() > tol {
            return Err(Error::GridMismatch(format!(
                "sample rates {} vs {} Hz",
                self.sample_rate_hz, other.sample_rate_hz
            )));
        }
        Ok(())
    }
}

/// Averaged modified periodograms (Welch). The record mean is removed once
/// before segmentation.
pub fn welch_psd(x: &[f64], sample_rate_hz: f64, params: &WelchParams) -> Result<SpectralEstimate> {
    let len = params.segment_len;
    if !len.is_power_of_two() || !(MIN_SEGMENT_LEN..=MAX_SEGMENT_LEN).contains(&len) {
        return Err(Error::InvalidInput(format!(
            "segment length {len} must be a power of two in [{MIN_SEGMENT_LEN}, {MAX_SEGMENT_LEN}]"
        )));
    }
    if len > x.len() {
        return Err(Error::InvalidInput(format!(
            "segment length {len} exceeds record length {}",
            x.len()
        )));
    }
    if !(0.0..1.0).contains(&params.overlap) {
        return Err(Error::InvalidInput(format!(
            "overlap {} outside [0, 1)",
            params.overlap
        )));
    }
    if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
        return Err(Error::InvalidInput("sample rate must be positive".into()));
    }

    let step = (len - (len as f64 * params.overlap).round() as usize).max(1);
    let n_segments = (x.len() - len) / step + 1;
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let window = params.window.coefficients(len);
    let win_energy: f64 = window.iter().map(|w| w * w).sum();
    let n_bins = len / 2 + 1;

    let fft = FftPlanner::new().plan_fft_forward(len);
    // Fixed-size groups summed in index order: the result does not depend on
    // how rayon schedules the groups.
    const GROUP: usize = 64;
    let n_groups = n_segments.div_ceil(GROUP);
    let partials: Vec<Vec<f64>> = (0..n_groups)
        .into_par_iter()
        .map(|g| {
            let mut acc = vec![0.0; n_bins];
            let mut buf = vec![Complex64::new(0.0, 0.0); len];
            let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
            let end = ((g + 1) * GROUP).min(n_segments);
            for s in g * GROUP..end {
                let seg = &x[s * step..s * step + len];
                for ((b, &v), &w) in buf.iter_mut().zip(seg).zip(&window) {
                    *b = Complex64::new((v - mean) * w, 0.0);
                }
                fft.process_with_scratch(&mut buf, &mut scratch);
                for (a, c) in acc.iter_mut().zip(&buf[..n_bins]) {
                    *a += c.norm_sqr();
                }
            }
            acc
        })
        .collect();

    let mut sum = vec![0.0; n_bins];
    for p in &partials {
        for (s, v) in sum.iter_mut().zip(p) {
            *s += v;
        }
    }
    let scale = 2.0 / (sample_rate_hz * win_energy * n_segments as f64);
    let psd = sum.into_iter().map(|v| v * scale).collect();
    let df = sample_rate_hz / len as f64;
    let freq_hz = (0..n_bins).map(|k| k as f64 * df).collect();

    Ok(SpectralEstimate {
        freq_hz,
        psd,
        sample_rate_hz,
        segment_len: len,
        overlap_fraction: params.overlap,
        window: params.window,
        n_segments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::gen_gaussian_stream;

    #[test]
    fn white_noise_is_flat() {
        let x = gen_gaussian_stream(4, 2_000_000).unwrap();
        let est = welch_psd(&x, 2.0, &WelchParams::default()).unwrap();
        let bound = 3.0 / (est.n_segments as f64).sqrt();
        // Unit variance over f_N = 1 Hz gives a density of 1.
        let inner = &est.psd[1..est.psd.len() - 1];
        let within = inner.iter().filter(|&&p| (p - 1.0).abs() < bound).count();
        assert!(within as f64 >= 0.99 * inner.len() as f64, "{within}/{}", inner.len());
        assert!(inner.iter().all(|&p| (p - 1.0).abs() < 5.0 / (est.n_segments as f64).sqrt()));
        // DC and Nyquist average a single real component per segment.
        for p in [est.psd[0], est.psd[est.psd.len() - 1]] {
            assert!((p - 1.0).abs() < 5.0 * std::f64::consts::SQRT_2 * bound / 3.0);
        }
    }

    #[test]
    fn parseval_holds() {
        let x: Vec<f64> = gen_gaussian_stream(8, 1_000_000)
            .unwrap()
            .iter()
            .map(|v| 3.0 * v + 1.0)
            .collect();
        let est = welch_psd(&x, 10.0e9, &WelchParams::default()).unwrap();
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!((est.variance() / var - 1.0).abs() < 0.005);
        let plain_sum = est.psd.iter().sum::<f64>() * est.df();
        assert!((plain_sum / var - 1.0).abs() < 0.005);
    }

    #[test]
    fn rejects_bad_parameters() {
        let x = vec![0.0; 1000];
        let mut p = WelchParams {
            segment_len: 1000,
            ..Default::default()
        };
        assert!(welch_psd(&x, 1.0, &p).is_err());
        p.segment_len = 2048;
        assert!(welch_psd(&x, 1.0, &p).is_err());
        p.segment_len = 256;
        p.overlap = 1.0;
        assert!(welch_psd(&x, 1.0, &p).is_err());
    }

    #[test]
    fn rectangular_window_segment_count() {
        let x = gen_gaussian_stream(1, 1024).unwrap();
        let p = WelchParams {
            segment_len: 256,
            overlap: 0.0,
            window: Window::Rectangular,
        };
        let est = welch_psd(&x, 1.0, &p).unwrap();
        assert_eq!(est.n_segments, 4);
        assert_eq!(est.psd.len(), 129);
    }
}
