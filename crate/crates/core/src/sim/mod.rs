//! Synthetic front end: homodyne, dark and sine-wave captures through a
//! parameterized detector and a non-linear ADC.
//!
//! A homodyne capture is `g * F(vacuum) + sigma_e * F(S^-1(excess))`, where
//! `F` is the detector response (optionally followed by an anti-alias
//! filter), `S` is the clearance shape and `sigma_e = g / sqrt(C_dc)`. Both
//! paths see the same `F`, so the PSD ratio of the vacuum and excess parts is
//! exactly the configured clearance `C_dc * |S(f)|^2`. A dark capture is the
//! excess path alone.

mod adc;
mod filter;
mod noise;
mod record;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adc::{quantize, AdcModel};
pub use filter::{apply_filter_spec, FilterSpec, ShapeSpec};
pub use noise::{gaussian_stream_tagged, gen_gaussian_stream, tag, BLOCK_LEN};
pub use record::{code_bounds, CaptureKind, RealRecord, SampleRecord};

use crate::dsp;
use crate::error::{Error, Result};

/// Taps of the FIR that realizes the inverse clearance shape on the excess path.
pub const EXCESS_SHAPING_TAPS: usize = 129;
/// Frequency points in the least-squares fit of that FIR.
pub const EXCESS_SHAPING_GRID: usize = 4096;
/// Largest inverse-shape gain the excess path will realize (60 dB).
pub const MAX_INVERSE_SHAPE_GAIN: f64 = 1e3;

/// Detector, clearance and acquisition parameters of the simulated front end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorModel {
    /// LSB per vacuum standard deviation at DC.
    pub vacuum_gain: f64,
    pub detector_response: FilterSpec,
    pub clearance_dc_db: f64,
    pub clearance_shape: ShapeSpec,
    #[serde(default)]
    pub antialias_response: Option<FilterSpec>,
    pub sample_rate_hz: f64,
}

impl DetectorModel {
    /// Flat detector with flat clearance.
    pub fn flat(vacuum_gain: f64, clearance_dc_db: f64, sample_rate_hz: f64) -> Self {
        DetectorModel {
            vacuum_gain,
            detector_response: FilterSpec::Flat,
            clearance_dc_db,
            clearance_shape: ShapeSpec::Flat,
            antialias_response: None,
            sample_rate_hz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.vacuum_gain.is_finite() && self.vacuum_gain > 0.0) {
            return Err(Error::InvalidInput(format!(
                "vacuum gain {} must be positive",
                self.vacuum_gain
            )));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if !self.clearance_dc_db.is_finite() {
            return Err(Error::InvalidInput("DC clearance must be finite".into()));
        }
        self.detector_response.validate(self.sample_rate_hz)?;
        self.clearance_shape.validate(self.sample_rate_hz)?;
        if let Some(aa) = &self.antialias_response {
            aa.validate(self.sample_rate_hz)?;
        }
        Ok(())
    }

    pub fn nyquist_hz(&self) -> f64 {
        self.sample_rate_hz / 2.0
    }

    /// Linear DC clearance.
    pub fn clearance_dc(&self) -> f64 {
        10f64.powf(self.clearance_dc_db / 10.0)
    }

    /// Standard deviation of the white excess source before shaping.
    pub fn excess_sigma(&self) -> f64 {
        self.vacuum_gain / self.clearance_dc().sqrt()
    }

    /// |F(f)|: detector response times the optional anti-alias filter.
    pub fn response_magnitude(&self, freq_hz: f64) -> f64 {
        let det = self.detector_response.magnitude(freq_hz, self.sample_rate_hz);
        let aa = self
            .antialias_response
            .as_ref()
            .map_or(1.0, |a| a.magnitude(freq_hz, self.sample_rate_hz));
        det * aa
    }

    /// Configured clearance `C(f) = S_Q / S_E`, linear.
    pub fn configured_clearance(&self, freq_hz: f64) -> f64 {
        let inv = inverse_shape_target(&self.clearance_shape, freq_hz);
        self.clearance_dc() / (inv * inv)
    }

    /// Symmetric FIR approximating `1/|S(f)|` for the excess path, or `None`
    /// when the clearance is flat.
    pub fn excess_shaping_fir(&self) -> Result<Option<Vec<f64>>> {
        if self.clearance_shape.is_flat() {
            return Ok(None);
        }
        let nyq = self.nyquist_hz();
        let freqs: Vec<f64> = (0..EXCESS_SHAPING_GRID)
            .map(|i| nyq * i as f64 / (EXCESS_SHAPING_GRID - 1) as f64)
            .collect();
        let target: Vec<f64> = freqs
            .iter()
            .map(|&f| inverse_shape_target(&self.clearance_shape, f))
            .collect();
        // Relative error weighting keeps the fit uniform in dB.
        let weight: Vec<f64> = target.iter().map(|t| 1.0 / (t * t)).collect();
        let taps = dsp::fit_zero_phase_fir(
            &freqs,
            &target,
            &weight,
            EXCESS_SHAPING_TAPS / 2,
            self.sample_rate_hz,
            1e-12,
        )?;
        Ok(Some(taps))
    }

    fn settling_samples(&self) -> usize {
        let rate = self.sample_rate_hz;
        let aa = self
            .antialias_response
            .as_ref()
            .map_or(0, |a| a.settling_samples(rate));
        self.detector_response.settling_samples(rate) + aa + EXCESS_SHAPING_TAPS + 1024
    }

    fn apply_response(&self, x: &mut Vec<f64>) -> Result<()> {
        let rate = self.sample_rate_hz;
        if !matches!(self.detector_response, FilterSpec::Flat) {
            *x = apply_filter_spec(x, &self.detector_response, rate)?;
        }
        if let Some(aa) = &self.antialias_response {
            *x = apply_filter_spec(x, aa, rate)?;
        }
        Ok(())
    }
}

fn inverse_shape_target(shape: &ShapeSpec, freq_hz: f64) -> f64 {
    (1.0 / shape.magnitude(freq_hz)).min(MAX_INVERSE_SHAPE_GAIN)
}

/// Pre-quantization real-valued capture; exposed for tests that need the
/// analog signal.
pub fn simulate_analog(
    det: &DetectorModel,
    kind: CaptureKind,
    count: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::EmptyRequest("capture of length 0"));
    }
    det.validate()?;
    if !matches!(kind, CaptureKind::Homodyne | CaptureKind::Dark) {
        return Err(Error::InvalidInput(format!(
            "simulate_capture produces homodyne or dark captures, not {kind:?}"
        )));
    }
    let warmup = det.settling_samples();
    let total = count + warmup;

    let mut excess = gaussian_stream_tagged(seed, tag::EXCESS, total)?;
    let sigma_e = det.excess_sigma();
    excess.iter_mut().for_each(|v| *v *= sigma_e);
    if let Some(taps) = det.excess_shaping_fir()? {
        excess = dsp::fir_causal(&taps, &excess);
    }
    det.apply_response(&mut excess)?;

    let mut signal = excess;
    if kind == CaptureKind::Homodyne {
        let mut vacuum = gaussian_stream_tagged(seed, tag::VACUUM, total)?;
        let g = det.vacuum_gain;
        vacuum.iter_mut().for_each(|v| *v *= g);
        det.apply_response(&mut vacuum)?;
        signal.iter_mut().zip(&vacuum).for_each(|(s, v)| *s += v);
    }
    signal.drain(..warmup);
    Ok(signal)
}

/// Simulates a homodyne or dark capture and quantizes it with `adc`.
///
/// Signals whose standard deviation exceeds `R/2` by more than a factor of 4
/// log a saturation warning; the record is still produced, clipped.
pub fn simulate_capture(
    det: &DetectorModel,
    adc: &AdcModel,
    kind: CaptureKind,
    count: usize,
    seed: u64,
) -> Result<SampleRecord> {
    let analog = simulate_analog(det, kind, count, seed)?;
    let n = analog.len() as f64;
    let mean = analog.iter().sum::<f64>() / n;
    let sd = (analog.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    if sd > 4.0 * adc.range() / 2.0 {
        log::warn!(
            "saturation: signal std-dev {sd:.1} LSB against ADC half range {} LSB",
            adc.range()
        );
    }
    let codes = quantize(&analog, adc);
    SampleRecord::new(codes, det.sample_rate_hz, adc.bits, kind, seed)
}

/// Sine test-tone parameters, amplitude and offset in LSB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineSpec {
    pub amplitude: f64,
    pub freq_hz: f64,
    pub phase_rad: f64,
    pub offset: f64,
}

/// Quantized `A sin(2 pi f t_n + phi0) + B + N(0, noise_sigma^2)`.
pub fn simulate_sine_capture(
    adc: &AdcModel,
    sine: &SineSpec,
    rate_hz: f64,
    count: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<SampleRecord> {
    if count == 0 {
        return Err(Error::EmptyRequest("sine capture of length 0"));
    }
    if !(sine.amplitude.is_finite() && sine.amplitude > 0.0) {
        return Err(Error::Domain(format!(
            "sine amplitude {} must be positive",
            sine.amplitude
        )));
    }
    if !(sine.freq_hz > 0.0 && sine.freq_hz < rate_hz / 2.0) {
        return Err(Error::Domain(format!(
            "sine frequency {} Hz outside (0, {}) Hz",
            sine.freq_hz,
            rate_hz / 2.0
        )));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Domain("noise sigma must be non-negative".into()));
    }
    let omega = 2.0 * std::f64::consts::PI * sine.freq_hz / rate_hz;
    let mut codes = vec![0i16; count];
    codes
        .par_chunks_mut(BLOCK_LEN)
        .enumerate()
        .for_each(|(b, chunk)| {
            let mut rng = noise::block_rng(seed, tag::SINE_NOISE, b as u64);
            let base = b * BLOCK_LEN;
            for (i, c) in chunk.iter_mut().enumerate() {
                let n = (base + i) as f64;
                let mut x = sine.amplitude * (omega * n + sine.phase_rad).sin() + sine.offset;
                if noise_sigma > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x += noise_sigma * z;
                }
                *c = adc.quantize_one(x);
            }
        });
    SampleRecord::new(codes, rate_hz, adc.bits, CaptureKind::Sine, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_count_is_an_error() {
        let det = DetectorModel::flat(30.0, 20.0, 1.0);
        let adc = AdcModel::ideal(8);
        assert!(matches!(
            simulate_capture(&det, &adc, CaptureKind::Homodyne, 0, 1),
            Err(Error::EmptyRequest(_))
        ));
    }

    #[test]
    fn capture_is_deterministic() {
        let det = DetectorModel {
            detector_response: FilterSpec::Butterworth {
                order: 2,
                cutoff_hz: 0.1,
            },
            ..DetectorModel::flat(30.0, 15.0, 1.0)
        };
        let adc = AdcModel::ideal(8);
        let a = simulate_capture(&det, &adc, CaptureKind::Homodyne, 50_000, 3).unwrap();
        let b = simulate_capture(&det, &adc, CaptureKind::Homodyne, 50_000, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn variance_composition_flat() {
        // sigma_M^2 = g^2 (1 + 2n) with 2n = 1/C for a flat clearance.
        let det = DetectorModel::flat(10.0, 10.0, 1.0);
        let x = simulate_analog(&det, CaptureKind::Homodyne, 10_000_000, 17).unwrap();
        let n = x.len() as f64;
        let var = x.iter().map(|v| v * v).sum::<f64>() / n;
        let n_photon = 0.5 / det.clearance_dc();
        let want = 100.0 * (1.0 + 2.0 * n_photon);
        assert!((var / want - 1.0).abs() < 0.01, "{var} vs {want}");
    }

    #[test]
    fn dark_to_homodyne_variance_ratio() {
        let det = DetectorModel::flat(30.0, 20.0, 1.0);
        let adc = AdcModel::ideal(8);
        let hom = simulate_capture(&det, &adc, CaptureKind::Homodyne, 2_000_000, 1).unwrap();
        let dark = simulate_capture(&det, &adc, CaptureKind::Dark, 2_000_000, 2).unwrap();
        let ratio = dark.variance() / hom.variance();
        let want = 1.0 / (1.0 + det.clearance_dc());
        assert!((ratio / want - 1.0).abs() < 0.03, "{ratio} vs {want}");
    }

    #[test]
    fn excess_fir_tracks_inverse_shape() {
        let det = DetectorModel {
            clearance_shape: ShapeSpec::Butterworth {
                order: 2,
                cutoff_hz: 0.1,
            },
            ..DetectorModel::flat(30.0, 20.0, 1.0)
        };
        let taps = det.excess_shaping_fir().unwrap().unwrap();
        assert_eq!(taps.len(), EXCESS_SHAPING_TAPS);
        for i in 0..=50 {
            let f = 0.5 * i as f64 / 50.0;
            let got = dsp::zero_phase_response(&taps, f, 1.0);
            let want = 1.0 / det.clearance_shape.magnitude(f);
            assert!((got / want - 1.0).abs() < 0.01, "f={f}: {got} vs {want}");
        }
    }

    #[test]
    fn sine_capture_rejects_bad_inputs() {
        let adc = AdcModel::ideal(8);
        let mut s = SineSpec {
            amplitude: 0.0,
            freq_hz: 0.01,
            phase_rad: 0.0,
            offset: 0.0,
        };
        assert!(simulate_sine_capture(&adc, &s, 1.0, 100, 0.0, 1).is_err());
        s.amplitude = 10.0;
        s.freq_hz = 0.6;
        assert!(simulate_sine_capture(&adc, &s, 1.0, 100, 0.0, 1).is_err());
    }

    #[test]
    fn over_range_sine_saturates_edges() {
        let adc = AdcModel::ideal(8);
        let s = SineSpec {
            amplitude: 1.05 * adc.range(),
            freq_hz: 0.001_234,
            phase_rad: 0.3,
            offset: 0.0,
        };
        let rec = simulate_sine_capture(&adc, &s, 1.0, 200_000, 0.0, 1).unwrap();
        let max = *rec.samples().iter().max().unwrap();
        let min = *rec.samples().iter().min().unwrap();
        assert_eq!((min, max), (-128, 127));
        assert!(rec.clip_fraction() > 0.01);
    }
}
