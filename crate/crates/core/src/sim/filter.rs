use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{Error, Result};

/// A linear time-invariant response used to colour simulated noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FilterSpec {
    Flat,
    /// Bilinear-transform Butterworth low-pass, unit DC gain.
    Butterworth { order: usize, cutoff_hz: f64 },
    /// Explicit causal FIR taps.
    Fir { taps: Vec<f64> },
}

impl FilterSpec {
    pub fn validate(&self, rate_hz: f64) -> Result<()> {
        match self {
            FilterSpec::Flat => Ok(()),
            FilterSpec::Butterworth { order, cutoff_hz } => {
                validate_butterworth(*order, *cutoff_hz, rate_hz)
            }
            FilterSpec::Fir { taps } => {
                if taps.is_empty() || taps.iter().any(|t| !t.is_finite()) {
                    Err(Error::InvalidSpec("FIR taps must be finite and non-empty".into()))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Magnitude response at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64, rate_hz: f64) -> f64 {
        match self {
            FilterSpec::Flat => 1.0,
            FilterSpec::Butterworth { order, cutoff_hz } => {
                if is_transparent(*cutoff_hz, rate_hz) {
                    1.0
                } else {
                    dsp::butterworth_magnitude(*order, *cutoff_hz, freq_hz, rate_hz)
                }
            }
            FilterSpec::Fir { taps } => dsp::fir_response(taps, freq_hz, rate_hz).norm(),
        }
    }

    /// Number of leading output samples affected by the zero initial state.
    pub fn settling_samples(&self, rate_hz: f64) -> usize {
        match self {
            FilterSpec::Flat => 0,
            FilterSpec::Butterworth { order, cutoff_hz } => {
                let tau = rate_hz / (2.0 * std::f64::consts::PI * cutoff_hz);
                ((40.0 * *order as f64 * tau).ceil() as usize).min(1 << 22) + 64
            }
            FilterSpec::Fir { taps } => taps.len(),
        }
    }
}

fn validate_butterworth(order: usize, cutoff_hz: f64, rate_hz: f64) -> Result<()> {
    if order == 0 || order > 32 {
        return Err(Error::InvalidSpec(format!("Butterworth order {order} outside 1..=32")));
    }
    let nyquist = rate_hz / 2.0;
    if !(cutoff_hz.is_finite() && cutoff_hz > 0.0 && cutoff_hz <= nyquist) {
        return Err(Error::InvalidSpec(format!(
            "cutoff {cutoff_hz} Hz outside (0, {nyquist}] Hz"
        )));
    }
    Ok(())
}

// A cutoff at Nyquist pre-warps to infinity: the poles land on the zeros at
// z = -1 and the section degenerates to the identity.
fn is_transparent(cutoff_hz: f64, rate_hz: f64) -> bool {
    cutoff_hz >= 0.5 * rate_hz * (1.0 - 1e-12)
}

/// Filters `x` through `spec`. Butterworth specs run as bilinear IIR sections,
/// FIR specs as causal convolution truncated to the input length, and the
/// flat spec is the identity.
pub fn apply_filter_spec(x: &[f64], spec: &FilterSpec, rate_hz: f64) -> Result<Vec<f64>> {
    spec.validate(rate_hz)?;
    Ok(match spec {
        FilterSpec::Flat => x.to_vec(),
        FilterSpec::Butterworth { order, cutoff_hz } => {
            let mut y = x.to_vec();
            if !is_transparent(*cutoff_hz, rate_hz) {
                let secs = dsp::butterworth_sections(*order, *cutoff_hz, rate_hz);
                dsp::filter_sections(&secs, &mut y);
            }
            y
        }
        FilterSpec::Fir { taps } => dsp::fir_causal(taps, x),
    })
}

/// Spectral shape of the clearance, as a magnitude (the clearance itself
/// follows the squared magnitude).
///
/// The Butterworth variant is the analog shape `1/sqrt(1 + (f/fc)^(2N))`: the
/// clearance is a ratio of spectra, not a realized filter, so there is no
/// bilinear zero at Nyquist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeSpec {
    Flat,
    Butterworth { order: usize, cutoff_hz: f64 },
}

impl ShapeSpec {
    pub fn validate(&self, rate_hz: f64) -> Result<()> {
        match self {
            ShapeSpec::Flat => Ok(()),
            ShapeSpec::Butterworth { order, cutoff_hz } => {
                validate_butterworth(*order, *cutoff_hz, rate_hz)
            }
        }
    }

    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        match self {
            ShapeSpec::Flat => 1.0,
            ShapeSpec::Butterworth { order, cutoff_hz } => {
                let r = freq_hz / cutoff_hz;
                1.0 / (1.0 + r.powi(2 * *order as i32)).sqrt()
            }
        }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self, ShapeSpec::Flat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_is_identity() {
        let x = vec![1.0, -2.0, 3.5];
        assert_eq!(apply_filter_spec(&x, &FilterSpec::Flat, 10.0).unwrap(), x);
    }

    #[test]
    fn fir_impulse_response() {
        let mut x = vec![0.0; 6];
        x[0] = 1.0;
        let y = apply_filter_spec(&x, &FilterSpec::Fir { taps: vec![1.0, 0.5] }, 10.0).unwrap();
        assert_eq!(y, vec![1.0, 0.5, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn cutoff_above_nyquist_is_rejected() {
        let spec = FilterSpec::Butterworth {
            order: 2,
            cutoff_hz: 6.0,
        };
        assert!(matches!(
            apply_filter_spec(&[0.0; 4], &spec, 10.0),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn cutoff_at_nyquist_passes_through() {
        let spec = FilterSpec::Butterworth {
            order: 3,
            cutoff_hz: 5.0,
        };
        let x = vec![0.3, -1.0, 2.0, 0.0];
        assert_eq!(apply_filter_spec(&x, &spec, 10.0).unwrap(), x);
        assert_eq!(spec.magnitude(4.9, 10.0), 1.0);
    }

    #[test]
    fn spec_json_is_tagged() {
        let spec: FilterSpec =
            serde_json::from_str(r#"{"kind":"butterworth","order":2,"cutoff_hz":2e9}"#).unwrap();
        assert_eq!(
            spec,
            FilterSpec::Butterworth {
                order: 2,
                cutoff_hz: 2e9
            }
        );
        assert!(serde_json::from_str::<FilterSpec>(r#"{"kind":"butterworth","order":2,"cutoff_hz":1.0,"x":1}"#)
            .is_err());
        assert_eq!(
            serde_json::from_str::<FilterSpec>(r#"{"kind":"flat"}"#).unwrap(),
            FilterSpec::Flat
        );
    }
}
