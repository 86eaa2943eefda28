//! Device-dependent min-entropy of a quantized Gaussian homodyne measurement.
//!
//! The excess noise is modelled as a thermal state with mean photon number
//! `n`; the ADC by its range `R`, bin width `Δx` and worst-case DNL. All
//! entropies are in bits per sample.

mod curves;

use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};

pub use curves::{
    curve_hmin_vs_clearance, curve_hmin_vs_temporal, default_clearance_curve,
    default_temporal_curve, ClearanceShape, CurveColumn, CurveTable, DEFAULT_BITS,
};

use crate::error::{Error, Result};
use crate::spectral::{self, ClearanceProfile, SpectralEstimate};

/// Search interval for the free parameter `δ`.
pub const DELTA_MIN: f64 = 1e-8;
pub const DELTA_MAX: f64 = 1e4;
const COARSE_POINTS: usize = 2001;

/// Security parameter and input block used for extractor sizing by default.
pub const DEFAULT_EPSILON_HASH: f64 = 1e-14;
pub const DEFAULT_INPUT_BLOCK_BITS: usize = 8192;

/// ADC geometry in LSB units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdcGeometry {
    pub adc_bits: u8,
    pub range_lsb: f64,
    pub bin_width_lsb: f64,
    pub dnl_max: f64,
}

impl AdcGeometry {
    /// Symmetric range `R = 2^(N-1)`, unit bins, no DNL.
    pub fn ideal(adc_bits: u8) -> Self {
        AdcGeometry {
            adc_bits,
            range_lsb: (1u64 << (adc_bits.max(1) - 1)) as f64,
            bin_width_lsb: 1.0,
            dnl_max: 0.0,
        }
    }

    pub fn with_dnl(mut self, dnl_max: f64) -> Self {
        self.dnl_max = dnl_max;
        self
    }

    /// Widest bin the bound has to assume.
    pub fn effective_bin_width(&self) -> f64 {
        self.bin_width_lsb + self.dnl_max
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=32).contains(&self.adc_bits) {
            return Err(Error::Domain(format!("ADC bits {} outside 1..=32", self.adc_bits)));
        }
        if !(self.range_lsb.is_finite() && self.range_lsb > 0.0) {
            return Err(Error::Domain(format!("range {} must be positive", self.range_lsb)));
        }
        if !(self.bin_width_lsb.is_finite() && self.bin_width_lsb > 0.0) {
            return Err(Error::Domain(format!(
                "bin width {} must be positive",
                self.bin_width_lsb
            )));
        }
        if !(self.dnl_max.is_finite() && self.dnl_max >= 0.0) {
            return Err(Error::Domain(format!("DNL max {} must be >= 0", self.dnl_max)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyInputs {
    /// Effective mean photon number of the excess noise.
    pub n_eff: f64,
    /// Vacuum standard deviation in LSB.
    pub g: f64,
    #[serde(flatten)]
    pub adc: AdcGeometry,
}

impl EntropyInputs {
    pub fn validate(&self) -> Result<()> {
        self.adc.validate()?;
        if !(self.n_eff.is_finite() && self.n_eff >= 0.0) {
            return Err(Error::Domain(format!("n_eff {} must be >= 0", self.n_eff)));
        }
        if !(self.g.is_finite() && self.g > 0.0) {
            return Err(Error::Domain(format!("gain {} must be positive", self.g)));
        }
        Ok(())
    }
}

/// `Γ(n) = (√n + √(n+1))²`, the minimum over `δ` of `(n+δ)(1+n+δ)/δ`.
pub fn gamma(n: f64) -> Result<f64> {
    if !(n >= 0.0) {
        return Err(Error::Domain(format!("Γ(n) needs n >= 0, got {n}")));
    }
    let s = n.sqrt() + (n + 1.0).sqrt();
    Ok(s * s)
}

/// `u = g √((4n(n+1+δ) + 2δ)/δ)`.
pub fn u_factor(n: f64, delta: f64, g: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("δ must be positive, got {delta}")));
    }
    if !(g > 0.0) {
        return Err(Error::Domain(format!("gain must be positive, got {g}")));
    }
    Ok(g * ((4.0 * n * (n + 1.0 + delta) + 2.0 * delta) / delta).sqrt())
}

/// Minimizer of the prefactor, `δ* = √(n(n+1))`.
pub fn delta_star(n: f64) -> f64 {
    (n * (n + 1.0)).sqrt()
}

/// `u` at `δ*`, equal to `g √(2Γ(n))` (and `g√2` in the `n → 0` limit).
fn u_at_delta_star(n: f64, g: f64) -> f64 {
    let s = n.sqrt() + (n + 1.0).sqrt();
    g * std::f64::consts::SQRT_2 * s
}

fn b_term(adc: &AdcGeometry, u: f64) -> f64 {
    let centre = erf(adc.effective_bin_width() / (2.0 * u));
    let edge = 0.5 * erfc(adc.range_lsb / u);
    centre.max(edge)
}

/// `log2[(n+δ)(1+n+δ)/δ · B(u(δ))]`, the quantity minimized over `δ`.
fn log_objective(inputs: &EntropyInputs, delta: f64) -> f64 {
    let n = inputs.n_eff;
    let pref = (n + delta) * (1.0 + n + delta) / delta;
    let u = inputs.g * ((4.0 * n * (n + 1.0 + delta) + 2.0 * delta) / delta).sqrt();
    pref.log2() + b_term(&inputs.adc, u).log2()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IidBound {
    /// Unclamped `-min_δ log2[...]`.
    pub h_min_bits: f64,
    pub delta_star: f64,
    pub u: f64,
}

/// Golden-section minimization over `ln δ ∈ [ln DELTA_MIN, ln DELTA_MAX]`
/// after a coarse log-grid scan (seeded with `δ* = √(n(n+1))`) locates the
/// basin.
pub fn hmin_iid(inputs: &EntropyInputs) -> Result<IidBound> {
    inputs.validate()?;
    let (lo, hi) = (DELTA_MIN.ln(), DELTA_MAX.ln());
    let f = |t: f64| log_objective(inputs, t.exp());
    let step = (hi - lo) / (COARSE_POINTS - 1) as f64;

    let mut best_i = 0;
    let mut best = f64::INFINITY;
    for i in 0..COARSE_POINTS {
        let v = f(lo + i as f64 * step);
        if v < best {
            best = v;
            best_i = i;
        }
    }
    let mut bracket = (
        lo + best_i.saturating_sub(1) as f64 * step,
        lo + (best_i + 1).min(COARSE_POINTS - 1) as f64 * step,
    );
    let seed = delta_star(inputs.n_eff);
    if (DELTA_MIN..=DELTA_MAX).contains(&seed) {
        let ts = seed.ln();
        if f(ts) < best {
            bracket = ((ts - step).max(lo), (ts + step).min(hi));
        }
    }

    let (t, v) = golden_section(&f, bracket.0, bracket.1, 1e-12, 200);
    if !v.is_finite() {
        return Err(Error::Optimization(format!(
            "objective not finite in bracket [{:.3e}, {:.3e}]",
            bracket.0.exp(),
            bracket.1.exp()
        )));
    }
    let delta = t.exp();
    Ok(IidBound {
        h_min_bits: -v,
        delta_star: delta,
        u: u_factor(inputs.n_eff, delta, inputs.g)?,
    })
}

fn golden_section(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64, max_iter: usize) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..max_iter {
        if (b - a).abs() <= tol {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    // Endpoints matter when the optimum sits on the search boundary.
    [(c, fc), (d, fd), (a, f(a)), (b, f(b))]
        .into_iter()
        .fold((c, f64::INFINITY), |acc, p| if p.1 < acc.1 { p } else { acc })
}

/// `-log2[Γ(n) · B(u(δ*))]`. At the balanced gain the edge and centre terms
/// of `B` coincide, so this equals `-log2[Γ(n) erf(Δx_eff / 2u)]`.
pub fn hmin_closed_form(inputs: &EntropyInputs) -> Result<f64> {
    inputs.validate()?;
    let u = u_at_delta_star(inputs.n_eff, inputs.g);
    Ok(-(gamma(inputs.n_eff)?.log2() + b_term(&inputs.adc, u).log2()))
}

/// Gain that balances the centre-bin and edge-bin probabilities at `δ*(n)`:
/// `erf(Δx_eff/2u) = ½ erfc(R/u)`, solved by bisection on `u`.
pub fn optimal_gain(n: f64, adc: &AdcGeometry) -> Result<f64> {
    adc.validate()?;
    if !(n.is_finite() && n >= 0.0) {
        return Err(Error::Domain(format!("n {n} must be >= 0")));
    }
    let w = adc.effective_bin_width();
    let r = adc.range_lsb;
    let balance = |u: f64| erf(w / (2.0 * u)) - 0.5 * erfc(r / u);

    // Small u: centre term → 1, edge term → 0. Large u: the edge term wins.
    let mut lo = 1e-3 * w.min(r);
    let mut hi = r.max(w);
    if !(balance(lo) > 0.0) {
        return Err(Error::Optimization(format!(
            "no sign change: balance({lo:.3e}) = {:.3e}",
            balance(lo)
        )));
    }
    let mut grow = 0;
    while balance(hi) > 0.0 {
        hi *= 2.0;
        grow += 1;
        if grow > 200 {
            return Err(Error::Optimization(format!(
                "no sign change up to u = {hi:.3e}"
            )));
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if balance(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let u = if balance(lo).abs() <= balance(hi).abs() { lo } else { hi };
    Ok(u / u_at_delta_star(n, 1.0))
}

/// Final per-sample bound: the better of the δ-optimized and closed-form
/// bounds, clamped to `[0, N]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HminResult {
    pub h_min_bits: f64,
    pub iid: IidBound,
    pub closed_form_bits: f64,
    pub clamped: bool,
}

pub fn hmin(inputs: &EntropyInputs) -> Result<HminResult> {
    let iid = hmin_iid(inputs)?;
    let closed = hmin_closed_form(inputs)?;
    let raw = iid.h_min_bits.max(closed);
    let n_bits = inputs.adc.adc_bits as f64;
    let h = raw.clamp(0.0, n_bits);
    Ok(HminResult {
        h_min_bits: h,
        iid,
        closed_form_bits: closed,
        clamped: h != raw,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectivePhotonNumber {
    pub n_eff: f64,
    pub raw: f64,
    pub clamped: bool,
    pub temporal_factor: f64,
    pub rc_clearance: f64,
    pub sigma_m2: f64,
    pub sigma_mc2: f64,
}

/// `n = ½ (σ_M²/σ_{M,c}²) R_c(1 + 1/C) − ½`, clamped at zero.
pub fn effective_photon_number(
    hom_psd: &SpectralEstimate,
    clearance: &ClearanceProfile,
) -> Result<EffectivePhotonNumber> {
    if hom_psd.psd.len() != clearance.clearance_linear.len() {
        return Err(Error::GridMismatch(format!(
            "PSD has {} bins, clearance {}",
            hom_psd.psd.len(),
            clearance.clearance_linear.len()
        )));
    }
    let sigma_m2 = hom_psd.variance();
    let sigma_mc2 = spectral::conditional_variance(hom_psd)?;
    let temporal_factor = sigma_m2 / sigma_mc2;
    let rc_clearance = clearance.rc_one_plus_inverse()?;
    Ok(photon_number_from_factors(temporal_factor, rc_clearance, sigma_m2, sigma_mc2))
}

pub fn photon_number_from_factors(
    temporal_factor: f64,
    rc_clearance: f64,
    sigma_m2: f64,
    sigma_mc2: f64,
) -> EffectivePhotonNumber {
    let raw = 0.5 * temporal_factor * rc_clearance - 0.5;
    EffectivePhotonNumber {
        n_eff: raw.max(0.0),
        raw,
        clamped: raw < 0.0,
        temporal_factor,
        rc_clearance,
        sigma_m2,
        sigma_mc2,
    }
}

/// Leftover-hash output length `floor((n_bits/bit_depth)·h − 2 log2(1/ε))`,
/// clamped at zero.
pub fn extractable_bits(h_min: f64, bit_depth: u32, n_bits: usize, epsilon_hash: f64) -> Result<usize> {
    if !(epsilon_hash > 0.0 && epsilon_hash < 1.0) {
        return Err(Error::Domain(format!("ε_hash {epsilon_hash} outside (0, 1)")));
    }
    if bit_depth == 0 || n_bits == 0 || !n_bits.is_multiple_of(bit_depth as usize) {
        return Err(Error::Domain(format!(
            "input block {n_bits} is not a positive multiple of {bit_depth}"
        )));
    }
    if !(h_min >= 0.0 && h_min <= bit_depth as f64) {
        return Err(Error::Domain(format!(
            "min-entropy {h_min} outside [0, {bit_depth}]"
        )));
    }
    let samples = (n_bits / bit_depth as usize) as f64;
    let m = (samples * h_min - 2.0 * (1.0 / epsilon_hash).log2()).floor();
    Ok((m.max(0.0) as usize).min(n_bits))
}

/// Output bit rate `f_s · bit_depth · m / n_bits`.
pub fn generation_rate(m: usize, n_bits: usize, bit_depth: u32, sample_rate_hz: f64) -> f64 {
    sample_rate_hz * bit_depth as f64 * m as f64 / n_bits as f64
}

/// Every intermediate that went into a reported bound.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EntropyProvenance {
    pub sigma_m2: Option<f64>,
    pub sigma_mc2: Option<f64>,
    pub temporal_factor: Option<f64>,
    pub rc_clearance: Option<f64>,
    pub n_eff_raw: Option<f64>,
    pub n_eff_clamped: bool,
    pub h_min_iid_bits: f64,
    pub h_min_closed_form_bits: f64,
    pub h_min_clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub inputs: EntropyInputs,
    pub delta_star: f64,
    pub u: f64,
    pub h_min_bits: f64,
    pub epsilon_hash: f64,
    pub input_block_bits: usize,
    pub output_block_bits: usize,
    pub bit_depth: u32,
    pub sample_rate_hz: f64,
    pub rate_bps: f64,
    pub provenance: EntropyProvenance,
}

/// Bound, extractor sizing and rate for one operating point. Fields of
/// `provenance` describing the spectral stage are left as given.
pub fn entropy_report(
    inputs: &EntropyInputs,
    sample_rate_hz: f64,
    input_block_bits: usize,
    epsilon_hash: f64,
    mut provenance: EntropyProvenance,
) -> Result<EntropyReport> {
    let res = hmin(inputs)?;
    let bit_depth = inputs.adc.adc_bits as u32;
    let m = extractable_bits(res.h_min_bits, bit_depth, input_block_bits, epsilon_hash)?;
    provenance.h_min_iid_bits = res.iid.h_min_bits;
    provenance.h_min_closed_form_bits = res.closed_form_bits;
    provenance.h_min_clamped = res.clamped;
    Ok(EntropyReport {
        inputs: *inputs,
        delta_star: res.iid.delta_star,
        u: res.iid.u,
        h_min_bits: res.h_min_bits,
        epsilon_hash,
        input_block_bits,
        output_block_bits: m,
        bit_depth,
        sample_rate_hz,
        rate_bps: generation_rate(m, input_block_bits, bit_depth, sample_rate_hz),
        provenance,
    })
}

#[cfg(test)]
mod tests;
