//! Small signal-processing building blocks shared by the simulator and the
//! equalizer: bilinear Butterworth sections, causal FIR convolution, and a
//! weighted least-squares fit of a symmetric (zero-phase) FIR to a magnitude
//! target.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

/// One second-order (or first-order, with `b2 = a2 = 0`) IIR section in
/// transposed direct form II.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn process(&self, x: &mut [f64]) {
        let (b0, b1, b2) = (self.b[0], self.b[1], self.b[2]);
        let (a1, a2) = (self.a[1], self.a[2]);
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + s1;
            s1 = b1 * xin - a1 * y + s2;
            s2 = b2 * xin - a2 * y;
            *v = y;
        }
    }

    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        let num = self.b[0] + z_inv * self.b[1] + z2 * self.b[2];
        let den = self.a[0] + z_inv * self.a[1] + z2 * self.a[2];
        num / den
    }
}

/// Digital Butterworth low-pass of the given order, obtained from the analog
/// prototype by the pre-warped bilinear transform. DC gain is exactly one.
pub fn butterworth_sections(order: usize, cutoff_hz: f64, rate_hz: f64) -> Vec<Biquad> {
    let fs2 = 2.0 * rate_hz;
    let wc = fs2 * (PI * cutoff_hz / rate_hz).tan();
    let mut sections = Vec::with_capacity(order.div_ceil(2));
    for k in 0..order / 2 {
        let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
        let p = Complex64::from_polar(wc, theta);
        let z = (fs2 + p) / (fs2 - p);
        let a1 = -2.0 * z.re;
        let a2 = z.norm_sqr();
        let g = (1.0 + a1 + a2) / 4.0;
        sections.push(Biquad {
            b: [g, 2.0 * g, g],
            a: [1.0, a1, a2],
        });
    }
    if order % 2 == 1 {
        let z = (fs2 - wc) / (fs2 + wc);
        let g = (1.0 - z) / 2.0;
        sections.push(Biquad {
            b: [g, g, 0.0],
            a: [1.0, -z, 0.0],
        });
    }
    sections
}

/// Runs a cascade of sections over `x` in place.
pub fn filter_sections(sections: &[Biquad], x: &mut [f64]) {
    for s in sections {
        s.process(x);
    }
}

/// Complex response of a section cascade at `freq_hz`.
pub fn sections_response(sections: &[Biquad], freq_hz: f64, rate_hz: f64) -> Complex64 {
    let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / rate_hz);
    sections
        .iter()
        .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
}

/// Closed-form magnitude of the bilinear Butterworth design above.
pub fn butterworth_magnitude(order: usize, cutoff_hz: f64, freq_hz: f64, rate_hz: f64) -> f64 {
    let r = (PI * freq_hz / rate_hz).tan() / (PI * cutoff_hz / rate_hz).tan();
    1.0 / (1.0 + r.powi(2 * order as i32)).sqrt()
}

/// Causal linear convolution truncated to the input length.
pub fn fir_causal(taps: &[f64], x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (n, out) in y.iter_mut().enumerate() {
        let kmax = taps.len().min(n + 1);
        let mut acc = 0.0;
        for (k, &h) in taps[..kmax].iter().enumerate() {
            acc += h * x[n - k];
        }
        *out = acc;
    }
    y
}

/// Convolution keeping only the fully overlapped outputs
/// (`x.len() - taps.len() + 1` samples). Each output is an independent dot
/// product, so chunked parallel evaluation is bit-identical to serial.
pub fn fir_valid(taps: &[f64], x: &[f64]) -> Vec<f64> {
    use rayon::prelude::*;
    if x.len() < taps.len() {
        return Vec::new();
    }
    let n_out = x.len() - taps.len() + 1;
    let rev: Vec<f64> = taps.iter().rev().copied().collect();
    let mut y = vec![0.0; n_out];
    y.par_chunks_mut(1 << 14)
        .enumerate()
        .for_each(|(c, chunk)| {
            let base = c << 14;
            for (i, out) in chunk.iter_mut().enumerate() {
                let start = base + i;
                *out = dot(&rev, &x[start..start + rev.len()]);
            }
        });
    y
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize without reassociating.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Complex response of an FIR with taps starting at delay zero.
pub fn fir_response(taps: &[f64], freq_hz: f64, rate_hz: f64) -> Complex64 {
    let w = -2.0 * PI * freq_hz / rate_hz;
    taps.iter()
        .enumerate()
        .map(|(k, &h)| Complex64::from_polar(h, w * k as f64))
        .sum()
}

/// Real (zero-phase) response of a symmetric odd-length FIR about its centre tap.
pub fn zero_phase_response(taps: &[f64], freq_hz: f64, rate_hz: f64) -> f64 {
    let half = taps.len() / 2;
    let w = 2.0 * PI * freq_hz / rate_hz;
    let mut acc = taps[half];
    for k in 1..=half {
        acc += 2.0 * taps[half + k] * (w * k as f64).cos();
    }
    acc
}

/// Weighted least-squares fit of a symmetric FIR with `2 * half_len + 1` taps
/// whose zero-phase response approximates `target` at `freqs_hz`.
///
/// A ridge term of `ridge * trace / dim` is added to the normal equations;
/// failure of the Cholesky factorization is reported as ill-conditioning.
pub fn fit_zero_phase_fir(
    freqs_hz: &[f64],
    target: &[f64],
    weight: &[f64],
    half_len: usize,
    rate_hz: f64,
    ridge: f64,
) -> Result<Vec<f64>> {
    let dim = half_len + 1;
    let mut ata = DMatrix::<f64>::zeros(dim, dim);
    let mut atb = DVector::<f64>::zeros(dim);
    let mut row = vec![0.0; dim];
    for ((&f, &t), &w) in freqs_hz.iter().zip(target).zip(weight) {
        if w == 0.0 {
            continue;
        }
        let om = 2.0 * PI * f / rate_hz;
        row[0] = 1.0;
        for (k, r) in row.iter_mut().enumerate().skip(1) {
            *r = 2.0 * (om * k as f64).cos();
        }
        for i in 0..dim {
            let wi = w * row[i];
            atb[i] += wi * t;
            for j in i..dim {
                ata[(i, j)] += wi * row[j];
            }
        }
    }
    for i in 0..dim {
        for j in 0..i {
            ata[(i, j)] = ata[(j, i)];
        }
    }
    let trace = ata.trace();
    if !(trace.is_finite() && trace > 0.0) {
        return Err(Error::IllConditioned("no weighted design points".into()));
    }
    let lambda = ridge * trace / dim as f64;
    for i in 0..dim {
        ata[(i, i)] += lambda;
    }
    let chol = ata
        .cholesky()
        .ok_or_else(|| Error::IllConditioned("normal equations are not positive definite".into()))?;
    let h = chol.solve(&atb);
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::IllConditioned("non-finite tap solution".into()));
    }
    let mut taps = Vec::with_capacity(2 * half_len + 1);
    taps.extend((1..=half_len).rev().map(|k| h[k]));
    taps.extend(h.iter().copied());
    Ok(taps)
}

/// Trapezoidal mean of samples on a uniform grid, i.e. `∫ y df / span`.
pub fn trapezoid_mean(y: &[f64]) -> f64 {
    match y.len() {
        0 => f64::NAN,
        1 => y[0],
        n => {
            let inner: f64 = y[1..n - 1].iter().sum();
            (inner + 0.5 * (y[0] + y[n - 1])) / (n - 1) as f64
        }
    }
}

/// Linear interpolation of `(xs, ys)` at `x`, clamped to the end values.
pub fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let i = xs.partition_point(|&v| v <= x) - 1;
    let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + t * (ys[i + 1] - ys[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn butterworth_sections_match_closed_form() {
        for order in [1, 2, 5, 8] {
            let secs = butterworth_sections(order, 2.0e9, 20.0e9);
            for f in [0.0, 0.5e9, 2.0e9, 6.0e9, 9.5e9] {
                let got = sections_response(&secs, f, 20.0e9).norm();
                let want = butterworth_magnitude(order, 2.0e9, f, 20.0e9);
                assert!((got - want).abs() < 1e-9, "order {order} f {f}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn half_power_at_cutoff() {
        let secs = butterworth_sections(4, 1.0, 10.0);
        let g = sections_response(&secs, 1.0, 10.0).norm();
        assert!((g - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn valid_convolution_matches_direct_sum() {
        let taps = [0.5, -1.0, 2.0];
        let x: Vec<f64> = (0..10).map(|i| (i * i) as f64).collect();
        let y = fir_valid(&taps, &x);
        assert_eq!(y.len(), 8);
        for (n, v) in y.iter().enumerate() {
            let want = taps[0] * x[n + 2] + taps[1] * x[n + 1] + taps[2] * x[n];
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_phase_fit_reproduces_identity() {
        let rate = 1.0;
        let f: Vec<f64> = (0..512).map(|i| 0.5 * i as f64 / 511.0).collect();
        let ones = vec![1.0; f.len()];
        let taps = fit_zero_phase_fir(&f, &ones, &ones, 4, rate, 0.0).unwrap();
        assert!((taps[4] - 1.0).abs() < 1e-10);
        for (i, t) in taps.iter().enumerate() {
            if i != 4 {
                assert!(t.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn trapezoid_of_constant() {
        assert_eq!(trapezoid_mean(&[3.0; 7]), 3.0);
        assert!((trapezoid_mean(&[0.0, 1.0, 2.0]) - 1.0).abs() < 1e-15);
    }
}
