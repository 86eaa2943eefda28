//! ADC static non-linearity from a sine-wave capture.
//!
//! A four-parameter sine fit gives the continuous input estimate `x̂[n]` for
//! every sample. Transition levels are then located by matching the number
//! of samples digitized below code `k` with the number of model values below
//! `T_k` (the histogram test, with the fitted sine standing in for the known
//! input). INL and DNL follow from the transition levels; the per-code mean
//! residual is kept alongside as the directly observed error statistic.

mod fit;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub use fit::{sine_fit, SineFit, SineFitOptions, MIN_PERIODS};

use crate::error::{Error, Result};
use crate::sim::{code_bounds, SampleRecord};

/// Default minimum hits before a code counts as calibrated.
pub const DEFAULT_MIN_HITS: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherentFrequency {
    pub cycles: u64,
    pub record_len: u64,
    pub freq_hz: f64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `f = f_s J/M` with `J` the integer closest to `target·M/f_s` that is
/// coprime to `M`. Candidates are tried outward from the nearest integer;
/// at equal distance the larger `J` wins.
pub fn coherent_frequency(sample_rate_hz: f64, record_len: u64, target_hz: f64) -> Result<CoherentFrequency> {
    if record_len <= 2 {
        return Err(Error::Domain(format!("record length {record_len} must exceed 2")));
    }
    if !(sample_rate_hz > 0.0 && target_hz > 0.0 && target_hz < sample_rate_hz / 2.0) {
        return Err(Error::Domain(format!(
            "target {target_hz} Hz outside (0, f_s/2) for f_s = {sample_rate_hz} Hz"
        )));
    }
    let m = record_len;
    let ideal = target_hz * m as f64 / sample_rate_hz;
    // J must stay in [1, M/2) to remain below Nyquist.
    let j_max = (m - 1) / 2;
    let nearest = (ideal.round() as u64).clamp(1, j_max.max(1));
    let ok = |j: u64| j >= 1 && j <= j_max && gcd(j, m) == 1;
    for d in 0..=j_max {
        let up = nearest + d;
        let down = nearest.checked_sub(d);
        let cands = [
            (up, (up as f64 - ideal).abs()),
            (down.unwrap_or(0), down.map_or(f64::INFINITY, |j| (j as f64 - ideal).abs())),
        ];
        let mut best: Option<(u64, f64)> = None;
        for (j, dist) in cands {
            if ok(j) && best.is_none_or(|(bj, bd)| dist < bd || (dist == bd && j > bj)) {
                best = Some((j, dist));
            }
        }
        if let Some((j, _)) = best {
            return Ok(CoherentFrequency {
                cycles: j,
                record_len: m,
                freq_hz: sample_rate_hz * j as f64 / m as f64,
            });
        }
    }
    Err(Error::Domain(format!("no J coprime to M = {m} below Nyquist")))
}

/// Per-code error histogram for heatmap plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSpec {
    pub error_min: f64,
    pub error_max: f64,
    pub bins: usize,
}

impl Default for HeatmapSpec {
    fn default() -> Self {
        HeatmapSpec {
            error_min: -4.0,
            error_max: 4.0,
            bins: 160,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorHeatmap {
    pub spec: HeatmapSpec,
    pub codes: Vec<i32>,
    /// Row-major `codes × bins` counts.
    pub counts: Vec<u64>,
}

impl ErrorHeatmap {
    pub fn bin_centre(&self, b: usize) -> f64 {
        let w = (self.spec.error_max - self.spec.error_min) / self.spec.bins as f64;
        self.spec.error_min + (b as f64 + 0.5) * w
    }

    /// Non-zero `(code, error_bin_centre, count)` triples.
    pub fn triples(&self) -> Vec<(i32, f64, u64)> {
        let mut out = Vec::new();
        for (ci, &code) in self.codes.iter().enumerate() {
            for b in 0..self.spec.bins {
                let c = self.counts[ci * self.spec.bins + b];
                if c > 0 {
                    out.push((code, self.bin_centre(b), c));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub min_hits: u64,
    /// Gaussian input noise in LSB used to de-bias the transition estimates.
    /// `None` estimates it from the residual variance.
    pub noise_sigma_lsb: Option<f64>,
    pub heatmap: HeatmapSpec,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            min_hits: DEFAULT_MIN_HITS,
            noise_sigma_lsb: None,
            heatmap: HeatmapSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnlProfile {
    pub codes: Vec<i32>,
    /// Upper transition level of each code minus its ideal position, LSB.
    pub inl: Vec<f64>,
    /// Width of each code minus one LSB; zero for edge codes.
    pub dnl: Vec<f64>,
    pub hits_per_code: Vec<u64>,
    /// Mean of `code − x̂` over the samples digitized to each code.
    pub mean_error: Vec<f64>,
    /// Jarque–Bera statistic of the per-code residuals (`NaN` below 8 hits).
    pub jarque_bera: Vec<f64>,
    /// Interior code with enough hits.
    pub valid: Vec<bool>,
    pub max_dnl: f64,
    pub min_hits: u64,
    pub noise_sigma_lsb: f64,
    pub heatmap: ErrorHeatmap,
}

impl DnlProfile {
    pub fn undersampled_codes(&self) -> Vec<i32> {
        let last = self.codes.len() - 1;
        self.codes
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != 0 && i != last && !self.valid[i])
            .map(|(_, &c)| c)
            .collect()
    }

    /// Value of `max |DNL|` over valid codes (the signed maximum is `max_dnl`).
    pub fn max_abs_dnl(&self) -> f64 {
        self.dnl
            .iter()
            .zip(&self.valid)
            .filter(|(_, &v)| v)
            .map(|(d, _)| d.abs())
            .fold(0.0, f64::max)
    }

    /// 1% critical value of the Jarque–Bera statistic (χ² with 2 d.o.f.).
    pub fn jarque_bera_critical_1pct() -> f64 {
        ChiSquared::new(2.0).expect("valid dof").inverse_cdf(0.99)
    }
}

struct CodeStats {
    hits: Vec<u64>,
    /// Power sums of the residual: Σe, Σe², Σe³, Σe⁴ per code.
    moments: Vec<[f64; 4]>,
    heat: Vec<u64>,
    model_hist: Vec<u64>,
}

struct Layout {
    lo: i32,
    n_codes: usize,
    hist_origin: f64,
    bins_per_lsb: f64,
    hist_len: usize,
    heat_bins: usize,
    heat_min: f64,
    heat_scale: f64,
}

impl Layout {
    fn new(bits: u8, heat: &HeatmapSpec) -> Result<Self> {
        if heat.bins == 0 || !(heat.error_max > heat.error_min) {
            return Err(Error::InvalidInput("heatmap needs bins > 0 and max > min".into()));
        }
        let (lo, hi) = code_bounds(bits);
        let n_codes = (hi - lo + 1) as usize;
        let margin = 64.0;
        let span = n_codes as f64 + 2.0 * margin;
        // At most 2^22 histogram bins, at most 1/1024 LSB resolution.
        let bins_per_lsb = ((1u64 << 22) as f64 / span).clamp(1.0, 1024.0).log2().floor().exp2();
        Ok(Layout {
            lo,
            n_codes,
            hist_origin: lo as f64 - 0.5 - margin,
            bins_per_lsb,
            hist_len: (span * bins_per_lsb).ceil() as usize,
            heat_bins: heat.bins,
            heat_min: heat.error_min,
            heat_scale: heat.bins as f64 / (heat.error_max - heat.error_min),
        })
    }

    fn empty(&self) -> CodeStats {
        CodeStats {
            hits: vec![0; self.n_codes],
            moments: vec![[0.0; 4]; self.n_codes],
            heat: vec![0; self.n_codes * self.heat_bins],
            model_hist: vec![0; self.hist_len],
        }
    }

    fn add(&self, st: &mut CodeStats, code: i16, model: f64) {
        let ci = (code as i32 - self.lo) as usize;
        let e = code as f64 - model;
        st.hits[ci] += 1;
        let m = &mut st.moments[ci];
        let e2 = e * e;
        m[0] += e;
        m[1] += e2;
        m[2] += e2 * e;
        m[3] += e2 * e2;
        let hb = ((e - self.heat_min) * self.heat_scale).floor();
        if hb >= 0.0 && (hb as usize) < self.heat_bins {
            st.heat[ci * self.heat_bins + hb as usize] += 1;
        }
        let xb = ((model - self.hist_origin) * self.bins_per_lsb).floor();
        let xb = xb.clamp(0.0, (self.hist_len - 1) as f64) as usize;
        st.model_hist[xb] += 1;
    }
}

fn merge(into: &mut CodeStats, from: &CodeStats) {
    for (a, b) in into.hits.iter_mut().zip(&from.hits) {
        *a += b;
    }
    for (a, b) in into.moments.iter_mut().zip(&from.moments) {
        for k in 0..4 {
            a[k] += b[k];
        }
    }
    for (a, b) in into.heat.iter_mut().zip(&from.heat) {
        *a += b;
    }
    for (a, b) in into.model_hist.iter_mut().zip(&from.model_hist) {
        *a += b;
    }
}

/// Convolves a histogram with a sampled Gaussian kernel via FFT.
fn smooth_gaussian(hist: &[u64], sigma_bins: f64) -> Vec<f64> {
    let half = (6.0 * sigma_bins).ceil() as usize;
    let n = (hist.len() + 2 * half + 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut a: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(if i < hist.len() { hist[i] as f64 } else { 0.0 }, 0.0))
        .collect();
    let mut k = vec![Complex64::new(0.0, 0.0); n];
    let mut norm = 0.0;
    for d in -(half as i64)..=(half as i64) {
        let w = (-0.5 * (d as f64 / sigma_bins).powi(2)).exp();
        k[d.rem_euclid(n as i64) as usize] = Complex64::new(w, 0.0);
        norm += w;
    }
    fwd.process(&mut a);
    fwd.process(&mut k);
    for (x, y) in a.iter_mut().zip(&k) {
        *x *= y / norm;
    }
    inv.process(&mut a);
    a[..hist.len()].iter().map(|c| c.re / n as f64).collect()
}

/// Transition levels, INL/DNL and per-code error statistics from a capture
/// and its sine fit.
pub fn inl_dnl(rec: &SampleRecord, fit: &SineFit, opts: &CalibrationOptions) -> Result<DnlProfile> {
    let layout = Layout::new(rec.bit_depth, &opts.heatmap)?;
    let codes = rec.samples();
    let model = fit.centred();
    const TASK: usize = 1 << 20;
    let n_tasks = codes.len().div_ceil(TASK);
    let mut total = layout.empty();
    // Bounded batches keep memory flat; merging in index order keeps the
    // floating-point sums independent of scheduling.
    let batch = rayon::current_num_threads().max(1) * 2;
    for b0 in (0..n_tasks).step_by(batch) {
        let parts: Vec<CodeStats> = (b0..(b0 + batch).min(n_tasks))
            .into_par_iter()
            .map(|t| {
                let mut st = layout.empty();
                let end = ((t + 1) * TASK).min(codes.len());
                model.for_each_model(t * TASK, end, |n, m| layout.add(&mut st, codes[n], m));
                st
            })
            .collect();
        for p in &parts {
            merge(&mut total, p);
        }
    }
    finish(&layout, total, opts)
}

/// Same as [`inl_dnl`] from explicit per-sample codes and residuals
/// (`residual = code − x̂`).
pub fn inl_dnl_from_residuals(
    codes: &[i16],
    residuals: &[f64],
    bits: u8,
    opts: &CalibrationOptions,
) -> Result<DnlProfile> {
    if codes.len() != residuals.len() {
        return Err(Error::SizeMismatch {
            expected: codes.len(),
            actual: residuals.len(),
        });
    }
    if codes.is_empty() {
        return Err(Error::EmptyRequest("calibration capture"));
    }
    let layout = Layout::new(bits, &opts.heatmap)?;
    let (lo, hi) = code_bounds(bits);
    let mut st = layout.empty();
    for (&c, &r) in codes.iter().zip(residuals) {
        if (c as i32) < lo || (c as i32) > hi {
            return Err(Error::InvalidInput(format!("code {c} outside {bits}-bit range")));
        }
        layout.add(&mut st, c, c as f64 - r);
    }
    finish(&layout, st, opts)
}

fn finish(layout: &Layout, st: CodeStats, opts: &CalibrationOptions) -> Result<DnlProfile> {
    let total: u64 = st.hits.iter().sum();
    if total == 0 {
        return Err(Error::EmptyRequest("calibration capture"));
    }
    let n_codes = layout.n_codes;

    // Within-code residual variance is σ² + 1/12 wherever the input density
    // is locally flat. Clipped edge codes carry arbitrarily large residuals
    // and per-code means carry the INL, so both are removed.
    let interior = 1..n_codes.saturating_sub(1);
    let sum_e2: f64 = interior
        .clone()
        .filter(|&i| st.hits[i] > 0)
        .map(|i| st.moments[i][1] - st.moments[i][0].powi(2) / st.hits[i] as f64)
        .sum();
    let interior_hits: u64 = st.hits[interior].iter().sum();
    let sigma = match opts.noise_sigma_lsb {
        Some(s) if s >= 0.0 && s.is_finite() => s,
        Some(s) => return Err(Error::Domain(format!("noise sigma {s} must be >= 0"))),
        None if interior_hits == 0 => 0.0,
        None => (sum_e2 / interior_hits as f64 - 1.0 / 12.0).max(0.0).sqrt(),
    };

    // Distribution of x̂ + noise: the input the comparators actually saw.
    let sigma_bins = sigma * layout.bins_per_lsb;
    let density: Vec<f64> = if sigma_bins >= 0.5 {
        smooth_gaussian(&st.model_hist, sigma_bins)
    } else {
        st.model_hist.iter().map(|&v| v as f64).collect()
    };
    let mut cum = Vec::with_capacity(density.len() + 1);
    cum.push(0.0);
    for d in &density {
        cum.push(cum.last().unwrap() + d.max(0.0));
    }
    let scale = total as f64 / cum.last().unwrap();

    // T_k for k = lo+1 ..= hi: where the input CDF reaches #{code < k}.
    let mut transitions = Vec::with_capacity(n_codes - 1);
    let mut below = 0u64;
    let mut idx = 0usize;
    for k in 0..n_codes - 1 {
        below += st.hits[k];
        let target = below as f64 / scale;
        while idx + 1 < cum.len() - 1 && cum[idx + 1] < target {
            idx += 1;
        }
        let (c0, c1) = (cum[idx], cum[idx + 1]);
        let frac = if c1 > c0 { ((target - c0) / (c1 - c0)).clamp(0.0, 1.0) } else { 0.5 };
        transitions.push(layout.hist_origin + (idx as f64 + frac) / layout.bins_per_lsb);
    }

    let codes: Vec<i32> = (0..n_codes).map(|i| layout.lo + i as i32).collect();
    let mut inl = vec![0.0; n_codes];
    let mut dnl = vec![0.0; n_codes];
    for i in 0..n_codes - 1 {
        inl[i] = transitions[i] - (codes[i] as f64 + 0.5);
    }
    inl[n_codes - 1] = inl[n_codes.saturating_sub(2)];
    let mut valid = vec![false; n_codes];
    for i in 1..n_codes - 1 {
        dnl[i] = transitions[i] - transitions[i - 1] - 1.0;
        valid[i] = st.hits[i] >= opts.min_hits;
    }
    let undersampled = (1..n_codes - 1).filter(|&i| !valid[i]).count();
    if undersampled > 0 {
        log::warn!(
            "{undersampled} interior codes below {} hits excluded from the DNL maximum",
            opts.min_hits
        );
    }
    let max_dnl = dnl
        .iter()
        .zip(&valid)
        .filter(|(_, &v)| v)
        .map(|(d, _)| *d)
        .fold(f64::NEG_INFINITY, f64::max);
    let max_dnl = if max_dnl.is_finite() { max_dnl } else { 0.0 };

    let mut mean_error = vec![0.0; n_codes];
    let mut jarque_bera = vec![f64::NAN; n_codes];
    for i in 0..n_codes {
        let h = st.hits[i] as f64;
        if h == 0.0 {
            continue;
        }
        let m = st.moments[i];
        let mu = m[0] / h;
        mean_error[i] = mu;
        if h >= 8.0 {
            let (e2, e3, e4) = (m[1] / h, m[2] / h, m[3] / h);
            let c2 = e2 - mu * mu;
            let c3 = e3 - 3.0 * mu * e2 + 2.0 * mu.powi(3);
            let c4 = e4 - 4.0 * mu * e3 + 6.0 * mu * mu * e2 - 3.0 * mu.powi(4);
            if c2 > 0.0 {
                let skew = c3 / c2.powf(1.5);
                let kurt = c4 / (c2 * c2);
                jarque_bera[i] = h / 6.0 * (skew * skew + 0.25 * (kurt - 3.0).powi(2));
            }
        }
    }

    Ok(DnlProfile {
        codes: codes.clone(),
        inl,
        dnl,
        hits_per_code: st.hits,
        mean_error,
        jarque_bera,
        valid,
        max_dnl,
        min_hits: opts.min_hits,
        noise_sigma_lsb: sigma,
        heatmap: ErrorHeatmap {
            spec: opts.heatmap.clone(),
            codes,
            counts: st.heat,
        },
    })
}

/// Capture, fit and profile in one call.
pub fn calibrate(rec: &SampleRecord, fit_opts: &SineFitOptions, opts: &CalibrationOptions) -> Result<(SineFit, DnlProfile)> {
    let fit = sine_fit(rec, fit_opts)?;
    let profile = inl_dnl(rec, &fit, opts)?;
    Ok((fit, profile))
}

#[cfg(test)]
mod tests;
