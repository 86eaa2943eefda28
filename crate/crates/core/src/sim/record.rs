use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a capture contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptureKind {
    /// Vacuum quadrature plus excess noise.
    Homodyne,
    /// Excess noise only (local oscillator off).
    Dark,
    /// Sine-wave calibration capture.
    Sine,
    /// Data from outside the simulator.
    External,
}

impl CaptureKind {
    pub fn to_byte(self) -> u8 {
        match self {
            CaptureKind::Homodyne => 0,
            CaptureKind::Dark => 1,
            CaptureKind::Sine => 2,
            CaptureKind::External => 3,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => CaptureKind::Homodyne,
            1 => CaptureKind::Dark,
            2 => CaptureKind::Sine,
            3 => CaptureKind::External,
            _ => return None,
        })
    }
}

/// A captured or simulated run of signed ADC codes.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    samples: Vec<i16>,
    pub sample_rate_hz: f64,
    pub bit_depth: u8,
    pub capture_kind: CaptureKind,
    /// Generator seed, 0 for external data.
    pub rng_seed: u64,
}

impl SampleRecord {
    pub fn new(
        samples: Vec<i16>,
        sample_rate_hz: f64,
        bit_depth: u8,
        capture_kind: CaptureKind,
        rng_seed: u64,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyRequest("sample record has no samples"));
        }
        if !(1..=16).contains(&bit_depth) {
            return Err(Error::InvalidInput(format!(
                "bit depth {bit_depth} outside 1..=16"
            )));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sample rate {sample_rate_hz} must be positive"
            )));
        }
        let (lo, hi) = code_bounds(bit_depth);
        if let Some(bad) = samples.iter().find(|&&s| (s as i32) < lo || (s as i32) > hi) {
            return Err(Error::InvalidInput(format!(
                "sample {bad} outside [{lo}, {hi}] for {bit_depth}-bit codes"
            )));
        }
        Ok(SampleRecord {
            samples,
            sample_rate_hz,
            bit_depth,
            capture_kind,
            rng_seed,
        })
    }

    pub fn samples(&self) -> &[i16] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<i16> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| s as f64).collect()
    }

    /// Sample variance (population normalization).
    pub fn variance(&self) -> f64 {
        let n = self.samples.len() as f64;
        let mean = self.samples.iter().map(|&s| s as f64).sum::<f64>() / n;
        self.samples
            .iter()
            .map(|&s| {
                let d = s as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n
    }

    /// Fraction of samples sitting on either extreme code.
    pub fn clip_fraction(&self) -> f64 {
        let (lo, hi) = code_bounds(self.bit_depth);
        let clipped = self
            .samples
            .iter()
            .filter(|&&s| s as i32 == lo || s as i32 == hi)
            .count();
        clipped as f64 / self.samples.len() as f64
    }
}

/// Inclusive code range of a symmetric signed `bits`-bit converter.
pub fn code_bounds(bits: u8) -> (i32, i32) {
    let half = 1i32 << (bits - 1);
    (-half, half - 1)
}

/// A real-valued record, e.g. the output of the equalizer before any
/// re-quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct RealRecord {
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
}

impl RealRecord {
    pub fn variance(&self) -> f64 {
        let n = self.samples.len() as f64;
        let mean = self.samples.iter().sum::<f64>() / n;
        self.samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_codes() {
        let err = SampleRecord::new(vec![0, 128], 1.0, 8, CaptureKind::External, 0);
        assert!(err.is_err());
        let ok = SampleRecord::new(vec![-128, 127], 1.0, 8, CaptureKind::External, 0);
        assert!(ok.is_ok());
    }

    #[test]
    fn rejects_empty() {
        assert!(matches!(
            SampleRecord::new(vec![], 1.0, 8, CaptureKind::Dark, 0),
            Err(Error::EmptyRequest(_))
        ));
    }

    #[test]
    fn kind_byte_round_trip() {
        for k in [
            CaptureKind::Homodyne,
            CaptureKind::Dark,
            CaptureKind::Sine,
            CaptureKind::External,
        ] {
            assert_eq!(CaptureKind::from_byte(k.to_byte()), Some(k));
        }
        assert_eq!(CaptureKind::from_byte(9), None);
    }
}
