//! Sanity statistics for extracted bit streams: frequency, byte histogram
//! and bit autocorrelation. These are gates, not a replacement for the
//! external batteries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::extract::Bits;

pub const MIN_BITS: usize = 1_000_000;
pub const DEFAULT_ALPHA: f64 = 1e-3;
pub const DEFAULT_MAX_LAG: usize = 32;

fn check_len(bits: &Bits) -> Result<()> {
    if bits.len() < MIN_BITS {
        return Err(Error::InvalidInput(format!(
            "statistical tests need at least {MIN_BITS} bits, got {}",
            bits.len()
        )));
    }
    Ok(())
}

/// Frequency test: `p = erfc(|S| / sqrt(2n))` with `S = Σ (2b − 1)`.
pub fn monobit(bits: &Bits) -> Result<f64> {
    check_len(bits)?;
    let n = bits.len() as f64;
    let s = 2.0 * bits.count_ones() as f64 - n;
    Ok(erfc(s.abs() / (2.0 * n).sqrt()))
}

/// Monobit bias `ones/n − 1/2`.
pub fn bias(bits: &Bits) -> f64 {
    bits.count_ones() as f64 / bits.len() as f64 - 0.5
}

/// Chi-square of the byte histogram (bits grouped MSB-first, 255 degrees
/// of freedom); trailing bits short of a byte are ignored.
pub fn chi2_bytes(bits: &Bits) -> Result<f64> {
    check_len(bits)?;
    let nbytes = bits.len() / 8;
    let words = bits.words();
    let counts = (0..nbytes)
        .into_par_iter()
        .fold(
            || vec![0u64; 256],
            |mut h, i| {
                let b = ((words[i / 8] >> (8 * (i % 8))) as u8).reverse_bits();
                h[b as usize] += 1;
                h
            },
        )
        .reduce(
            || vec![0u64; 256],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let expected = nbytes as f64 / 256.0;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dist = ChiSquared::new(255.0).expect("valid dof");
    Ok(dist.sf(chi2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutocorrResult {
    /// `ρ_k` for `k = 1..=max_lag`, on ±1 symbols.
    pub rho: Vec<f64>,
    pub max_abs_rho: f64,
    pub worst_lag: usize,
    /// Bonferroni-corrected two-sided p-value of the worst lag.
    pub p_value: f64,
}

fn agreements_at_lag(bits: &Bits, k: usize) -> (u64, u64) {
    let n = bits.len();
    let w = bits.words();
    let pairs = n - k;
    let (q, sh) = (k / 64, k % 64);
    let full = pairs / 64;
    let shifted = |i: usize| -> u64 {
        let lo = w.get(i + q).copied().unwrap_or(0);
        if sh == 0 {
            lo
        } else {
            (lo >> sh) | (w.get(i + q + 1).copied().unwrap_or(0) << (64 - sh))
        }
    };
    let mut diff: u64 = (0..full)
        .into_par_iter()
        .map(|i| (w[i] ^ shifted(i)).count_ones() as u64)
        .sum();
    let rem = pairs % 64;
    if rem > 0 {
        let mask = (1u64 << rem) - 1;
        diff += ((w[full] ^ shifted(full)) & mask).count_ones() as u64;
    }
    (pairs as u64 - diff, pairs as u64)
}

pub fn autocorr(bits: &Bits, max_lag: usize) -> Result<AutocorrResult> {
    check_len(bits)?;
    if max_lag == 0 || max_lag >= bits.len() / 2 {
        return Err(Error::InvalidInput(format!("max lag {max_lag} out of range")));
    }
    let mut rho = Vec::with_capacity(max_lag);
    let mut worst = (0.0f64, 1usize, 0.0f64);
    for k in 1..=max_lag {
        let (agree, pairs) = agreements_at_lag(bits, k);
        let r = (2.0 * agree as f64 - pairs as f64) / pairs as f64;
        let z = r.abs() * (pairs as f64).sqrt();
        if z > worst.2 {
            worst = (r.abs(), k, z);
        }
        rho.push(r);
    }
    let p = (max_lag as f64 * erfc(worst.2 / std::f64::consts::SQRT_2)).min(1.0);
    Ok(AutocorrResult {
        max_abs_rho: rho.iter().fold(0.0, |a, r| a.max(r.abs())),
        rho,
        worst_lag: worst.1,
        p_value: p,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub bits: u64,
    pub alpha: f64,
    pub monobit_p: f64,
    pub bias: f64,
    pub chi2_bytes_p: f64,
    pub autocorr: AutocorrResult,
    pub passed: bool,
}

pub fn run_all(bits: &Bits, max_lag: usize, alpha: f64) -> Result<StatReport> {
    let monobit_p = monobit(bits)?;
    let chi2_bytes_p = chi2_bytes(bits)?;
    let ac = autocorr(bits, max_lag)?;
    let passed = monobit_p > alpha && chi2_bytes_p > alpha && ac.p_value > alpha;
    Ok(StatReport {
        bits: bits.len() as u64,
        alpha,
        monobit_p,
        bias: bias(bits),
        chi2_bytes_p,
        autocorr: ac,
        passed,
    })
}
