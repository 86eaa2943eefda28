//! Spectral side-information analysis: Welch PSDs, log-spectral conditional
//! variances, the `R_c` functional, clearance profiles and temporal
//! correlations.

mod lpc;
mod welch;

use serde::{Deserialize, Serialize};

pub use lpc::{autocovariance, conditional_variance_lpc, levinson_durbin, LevinsonResult};
pub use welch::{welch_psd, SpectralEstimate, WelchParams, Window, PSD_FLOOR_REL};

use crate::dsp;
use crate::error::{Error, Result};

/// Default lower limit of the linear clearance estimate (-30 dB).
pub const CLEARANCE_FLOOR: f64 = 1e-3;

/// Conditional variance of a stationary Gaussian process given its entire
/// past: `exp{ ∫_0^{f_N} ln[f_N S(f)] df / f_N }`, trapezoidal on the grid.
pub fn conditional_variance(psd: &SpectralEstimate) -> Result<f64> {
    let s = psd.floored()?;
    let fnyq = psd.nyquist_hz();
    let logs: Vec<f64> = s.iter().map(|&v| (fnyq * v).ln()).collect();
    Ok(dsp::trapezoid_mean(&logs).exp())
}

/// `R_c(x) = exp{ ∫_0^{f_N} ln x(f) df / f_N }` for a positive function
/// sampled on a uniform grid spanning `[0, f_N]`.
pub fn rc_functional(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::EmptyRequest("R_c of an empty grid"));
    }
    if let Some(bad) = x.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Domain(format!(
            "R_c requires positive finite values, found {bad}"
        )));
    }
    let logs: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    Ok(dsp::trapezoid_mean(&logs).exp())
}

/// `sigma_M^2 / sigma_{M,c}^2`: integrated variance over conditional variance.
pub fn temporal_correlation_factor(psd: &SpectralEstimate) -> Result<f64> {
    Ok(psd.variance() / conditional_variance(psd)?)
}

/// Frequency-resolved vacuum-to-excess ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearanceProfile {
    pub freq_hz: Vec<f64>,
    pub clearance_linear: Vec<f64>,
    pub floor_applied: Vec<bool>,
}

impl ClearanceProfile {
    pub fn clearance_db(&self) -> Vec<f64> {
        self.clearance_linear
            .iter()
            .map(|c| 10.0 * c.log10())
            .collect()
    }

    /// `R_c(1 + 1/C(f))`.
    pub fn rc_one_plus_inverse(&self) -> Result<f64> {
        let x: Vec<f64> = self.clearance_linear.iter().map(|c| 1.0 + 1.0 / c).collect();
        rc_functional(&x)
    }

    pub fn floored_bins(&self) -> usize {
        self.floor_applied.iter().filter(|&&f| f).count()
    }
}

/// `C(f) = (S_M - S_E) / S_E`, with the vacuum PSD obtained by subtraction.
/// Bins where the subtraction falls to `floor * S_E` or below are set to
/// `floor` and flagged.
pub fn clearance_profile(
    hom: &SpectralEstimate,
    dark: &SpectralEstimate,
    floor: f64,
) -> Result<ClearanceProfile> {
    hom.same_grid(dark)?;
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(Error::Domain(format!("clearance floor {floor} must be positive")));
    }
    let max_m = hom.psd.iter().copied().fold(0.0, f64::max);
    if !(max_m > 0.0) {
        return Err(Error::DegenerateSpectrum("homodyne spectrum is zero".into()));
    }
    // A vanishing dark spectrum means unbounded clearance; cap it via the floor.
    let e_floor = PSD_FLOOR_REL * max_m;
    let mut clearance_linear = Vec::with_capacity(hom.psd.len());
    let mut floor_applied = Vec::with_capacity(hom.psd.len());
    for (&m, &e) in hom.psd.iter().zip(&dark.psd) {
        let e = e.max(e_floor);
        let c = (m - e) / e;
        if c <= floor {
            clearance_linear.push(floor);
            floor_applied.push(true);
        } else {
            clearance_linear.push(c);
            floor_applied.push(false);
        }
    }
    Ok(ClearanceProfile {
        freq_hz: hom.freq_hz.clone(),
        clearance_linear,
        floor_applied,
    })
}

/// Biased, normalized autocorrelation `rho(0..=max_lag)` with `rho(0) = 1`.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if max_lag == 0 || max_lag >= x.len() / 10 {
        return Err(Error::InvalidInput(format!(
            "max lag {max_lag} must be in [1, {})",
            x.len() / 10
        )));
    }
    let r = autocovariance(x, max_lag);
    if r[0] <= 0.0 {
        return Err(Error::Singular("record has zero variance".into()));
    }
    Ok(r.iter().map(|v| v / r[0]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::gen_gaussian_stream;

    fn flat_estimate(level: f64, bins: usize) -> SpectralEstimate {
        SpectralEstimate {
            freq_hz: (0..bins).map(|k| k as f64 * 0.5 / (bins - 1) as f64).collect(),
            psd: vec![level; bins],
            sample_rate_hz: 1.0,
            segment_len: 2 * (bins - 1),
            overlap_fraction: 0.5,
            window: Window::Hann,
            n_segments: 1,
        }
    }

    #[test]
    fn flat_psd_conditional_variance_is_total() {
        // density 4 over f_N = 0.5 Hz is a variance of 2
        let est = flat_estimate(4.0, 2049);
        assert!((conditional_variance(&est).unwrap() - 2.0).abs() < 1e-12);
        assert!((temporal_correlation_factor(&est).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_level_psd_is_geometric_mean() {
        // Levels p and q on equal halves: the log-integral is the mean of logs.
        let bins = 4097;
        let mut est = flat_estimate(1.0, bins);
        let (p, q) = (6.0, 1.5);
        for (k, v) in est.psd.iter_mut().enumerate() {
            *v = if k < bins / 2 { p } else if k == bins / 2 { (p * q).sqrt() } else { q };
        }
        let got = conditional_variance(&est).unwrap();
        let want = 0.5 * (p * q).sqrt();
        assert!((got / want - 1.0).abs() < 1e-3, "{got} vs {want}");
    }

    #[test]
    fn zero_spectrum_is_degenerate() {
        let est = flat_estimate(0.0, 33);
        assert!(matches!(
            conditional_variance(&est),
            Err(Error::DegenerateSpectrum(_))
        ));
    }

    #[test]
    fn rc_constant_and_errors() {
        assert!((rc_functional(&[2.5; 100]).unwrap() - 2.5).abs() < 1e-12);
        assert!(rc_functional(&[1.0, 0.0, 1.0]).is_err());
        assert!(rc_functional(&[1.0, -1.0]).is_err());
    }

    #[test]
    fn rc_flat_clearance_difference_is_one() {
        for c in [0.01, 1.0, 100.0, 1e4] {
            let a = rc_functional(&[c + 1.0; 257]).unwrap();
            let b = rc_functional(&[c; 257]).unwrap();
            assert!((a - b - 1.0).abs() < 1e-9 * (1.0 + c));
        }
    }

    #[test]
    fn clearance_of_doubled_spectrum_is_unity() {
        let dark = flat_estimate(3.0, 65);
        let hom = flat_estimate(6.0, 65);
        let c = clearance_profile(&hom, &dark, CLEARANCE_FLOOR).unwrap();
        assert!(c.clearance_linear.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert_eq!(c.floored_bins(), 0);
    }

    #[test]
    fn suppressed_band_is_floored_and_flagged() {
        let dark = flat_estimate(1.0, 65);
        let mut hom = flat_estimate(11.0, 65);
        for v in &mut hom.psd[52..] {
            *v = 0.9; // vacuum buried under excess: subtraction goes negative
        }
        let c = clearance_profile(&hom, &dark, CLEARANCE_FLOOR).unwrap();
        assert!(c.floor_applied[52..].iter().all(|&f| f));
        assert!(c.floor_applied[..52].iter().all(|&f| !f));
        assert!(c.clearance_linear[60] == CLEARANCE_FLOOR);
    }

    #[test]
    fn clearance_grid_mismatch() {
        let a = flat_estimate(1.0, 65);
        let b = flat_estimate(1.0, 129);
        assert!(matches!(
            clearance_profile(&a, &b, CLEARANCE_FLOOR),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn white_autocorrelation_is_small() {
        let x = gen_gaussian_stream(3, 1_000_000).unwrap();
        let rho = autocorrelation(&x, 100).unwrap();
        assert_eq!(rho[0], 1.0);
        let bound = 4.0 / (x.len() as f64).sqrt();
        assert!(rho[1..].iter().all(|r| r.abs() <= bound));
    }

    #[test]
    fn ar1_autocorrelation_decays_geometrically() {
        let w = gen_gaussian_stream(11, 2_000_000).unwrap();
        let mut x = vec![0.0; w.len()];
        for i in 1..w.len() {
            x[i] = 0.5 * x[i - 1] + w[i];
        }
        let rho = autocorrelation(&x, 8).unwrap();
        for (k, r) in rho.iter().enumerate() {
            assert!((r - 0.5f64.powi(k as i32)).abs() < 0.005, "lag {k}: {r}");
        }
    }
}
