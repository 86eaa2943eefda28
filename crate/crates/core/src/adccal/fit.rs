use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{code_bounds, SampleRecord};

/// Samples between exact re-evaluations of the rotation recurrence.
const ROT_CHUNK: usize = 4096;
/// Chunks handed to one rayon task.
const TASK_CHUNKS: usize = 64;

pub const MIN_PERIODS: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineFitOptions {
    /// Skip the zero-crossing estimate and start from this frequency.
    pub freq_hint_hz: Option<f64>,
    pub max_iterations: usize,
    /// Convergence threshold on the relative frequency step.
    pub tolerance: f64,
    /// Leave samples at the two extreme codes out of the fit; an overdriven
    /// sine is clipped there and would bias the amplitude low.
    pub exclude_clipped: bool,
}

impl Default for SineFitOptions {
    fn default() -> Self {
        SineFitOptions {
            freq_hint_hz: None,
            max_iterations: 50,
            tolerance: 1e-12,
            exclude_clipped: true,
        }
    }
}

/// `x[n] = A sin(2π f₀ n/f_s + φ₀) + B`, with `n` counted from the first
/// sample of the record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineFit {
    pub amplitude: f64,
    pub freq_hz: f64,
    pub phase_rad: f64,
    pub offset: f64,
    pub sample_rate_hz: f64,
    pub iterations: usize,
    pub rms_residual: f64,
}

/// Internal parametrization around a centred time axis:
/// `a sin(ω m) + b cos(ω m) + c`, `m = n − centre`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Centred {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub omega: f64,
    pub centre: f64,
}

impl Centred {
    fn from_fit(fit: &SineFit) -> Centred {
        let omega = 2.0 * PI * fit.freq_hz / fit.sample_rate_hz;
        Centred {
            a: fit.amplitude * fit.phase_rad.cos(),
            b: fit.amplitude * fit.phase_rad.sin(),
            c: fit.offset,
            omega,
            centre: 0.0,
        }
    }

    /// Calls `f(n, model(n))` for `n in start..end`, in order.
    pub(crate) fn for_each_model(&self, start: usize, end: usize, mut f: impl FnMut(usize, f64)) {
        let (sw, cw) = self.omega.sin_cos();
        let mut n = start;
        while n < end {
            let stop = (n + ROT_CHUNK).min(end);
            let (mut s, mut c) = (self.omega * (n as f64 - self.centre)).sin_cos();
            for i in n..stop {
                f(i, self.a * s + self.b * c + self.c);
                let s2 = s * cw + c * sw;
                c = c * cw - s * sw;
                s = s2;
            }
            n = stop;
        }
    }

    fn to_fit(self, rate: f64) -> SineFit {
        // Shift the phase reference from the centre back to n = 0.
        let amplitude = self.a.hypot(self.b);
        let phase = self.b.atan2(self.a) - self.omega * self.centre;
        SineFit {
            amplitude,
            freq_hz: self.omega * rate / (2.0 * PI),
            phase_rad: phase.rem_euclid(2.0 * PI),
            offset: self.c,
            sample_rate_hz: rate,
            iterations: 0,
            rms_residual: 0.0,
        }
    }
}

impl SineFit {
    pub fn model(&self, n: usize) -> f64 {
        let t = 2.0 * PI * self.freq_hz / self.sample_rate_hz * n as f64;
        self.amplitude * (t + self.phase_rad).sin() + self.offset
    }

    pub(crate) fn centred(&self) -> Centred {
        Centred::from_fit(self)
    }

    /// Recorded code minus fitted model, per sample, in LSB.
    pub fn residuals(&self, rec: &SampleRecord) -> Vec<f64> {
        let codes = rec.samples();
        let model = self.centred();
        let mut out = vec![0.0; codes.len()];
        out.par_chunks_mut(ROT_CHUNK * TASK_CHUNKS)
            .enumerate()
            .for_each(|(t, chunk)| {
                let start = t * ROT_CHUNK * TASK_CHUNKS;
                model.for_each_model(start, start + chunk.len(), |n, m| {
                    chunk[n - start] = codes[n] as f64 - m;
                });
            });
        out
    }
}

/// Upward crossings with hysteresis: returns `(count, first, last)` sample
/// indices of the crossings.
fn crossings(x: &[i16]) -> (usize, usize, usize) {
    let n = x.len() as f64;
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = x.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let h = (0.2 * var.sqrt()).max(0.5);
    let mut high = x[0] as f64 > mean;
    let (mut count, mut first, mut last) = (0, 0, 0);
    for (i, &v) in x.iter().enumerate() {
        let v = v as f64;
        if high && v < mean - h {
            high = false;
        } else if !high && v > mean + h {
            high = true;
            if count == 0 {
                first = i;
            }
            last = i;
            count += 1;
        }
    }
    (count, first, last)
}

fn initial_frequency(rec: &SampleRecord, opts: &SineFitOptions) -> Result<f64> {
    let rate = rec.sample_rate_hz;
    let len = rec.len() as f64;
    let f = match opts.freq_hint_hz {
        Some(f) => {
            if !(f > 0.0 && f < rate / 2.0) {
                return Err(Error::Domain(format!("frequency hint {f} Hz out of range")));
            }
            f
        }
        None => {
            let (count, first, last) = crossings(rec.samples());
            if count < 2 {
                return Err(Error::InvalidInput("record contains no sine periods".into()));
            }
            (count - 1) as f64 / (last - first) as f64 * rate
        }
    };
    if f * len / rate < MIN_PERIODS {
        return Err(Error::InvalidInput(format!(
            "record spans {:.1} periods, need at least {MIN_PERIODS}",
            f * len / rate
        )));
    }
    Ok(f)
}

/// Sums over `codes[0..len]` of the Gauss–Newton normal equations. The
/// frequency column is scaled by the half-length so the system stays
/// well-conditioned.
struct Normal4 {
    jtj: [[f64; 4]; 4],
    jtr: [f64; 4],
    rss: f64,
}

fn accumulate(codes: &[i16], model: &Centred, half: f64, with_freq: bool, clip: Option<(i16, i16)>) -> Normal4 {
    let tasks = codes.len().div_ceil(ROT_CHUNK * TASK_CHUNKS);
    let parts: Vec<Normal4> = (0..tasks)
        .into_par_iter()
        .map(|t| {
            let start = t * ROT_CHUNK * TASK_CHUNKS;
            let end = (start + ROT_CHUNK * TASK_CHUNKS).min(codes.len());
            let mut acc = Normal4 {
                jtj: [[0.0; 4]; 4],
                jtr: [0.0; 4],
                rss: 0.0,
            };
            let (sw, cw) = model.omega.sin_cos();
            let mut n = start;
            while n < end {
                let stop = (n + ROT_CHUNK).min(end);
                let (mut s, mut c) = (model.omega * (n as f64 - model.centre)).sin_cos();
                for (i, &code) in codes.iter().enumerate().take(stop).skip(n) {
                    if clip.is_some_and(|(lo, hi)| code == lo || code == hi) {
                        let s2 = s * cw + c * sw;
                        c = c * cw - s * sw;
                        s = s2;
                        continue;
                    }
                    let r = code as f64 - (model.a * s + model.b * c + model.c);
                    let d = if with_freq {
                        (i as f64 - model.centre) / half * (model.a * c - model.b * s)
                    } else {
                        0.0
                    };
                    let j = [s, c, 1.0, d];
                    for p in 0..4 {
                        for q in p..4 {
                            acc.jtj[p][q] += j[p] * j[q];
                        }
                        acc.jtr[p] += j[p] * r;
                    }
                    acc.rss += r * r;
                    let s2 = s * cw + c * sw;
                    c = c * cw - s * sw;
                    s = s2;
                }
                n = stop;
            }
            acc
        })
        .collect();
    let mut total = Normal4 {
        jtj: [[0.0; 4]; 4],
        jtr: [0.0; 4],
        rss: 0.0,
    };
    for p in &parts {
        for i in 0..4 {
            for j in i..4 {
                total.jtj[i][j] += p.jtj[i][j];
            }
            total.jtr[i] += p.jtr[i];
        }
        total.rss += p.rss;
    }
    for i in 0..4 {
        for j in 0..i {
            total.jtj[i][j] = total.jtj[j][i];
        }
    }
    total
}

/// Linear least squares for `(a, b, c)` at fixed frequency.
fn three_param(codes: &[i16], model: &mut Centred, half: f64, clip: Option<(i16, i16)>) -> Result<()> {
    let zero = Centred {
        a: 0.0,
        b: 0.0,
        c: 0.0,
        ..*model
    };
    let ne = accumulate(codes, &zero, half, false, clip);
    let m = Matrix3::from_fn(|i, j| ne.jtj[i][j]);
    let v = Vector3::from_fn(|i, _| ne.jtr[i]);
    let sol = m
        .lu()
        .solve(&v)
        .ok_or_else(|| Error::Singular("three-parameter sine fit is singular".into()))?;
    model.a = sol[0];
    model.b = sol[1];
    model.c = sol[2];
    Ok(())
}

/// IEEE-1241-style four-parameter fit: three-parameter linear solve at the
/// initial frequency, then Gauss–Newton on `(a, b, c, ω)`, run on prefixes
/// growing by 4× so the frequency is refined before phase errors accumulate.
pub fn sine_fit(rec: &SampleRecord, opts: &SineFitOptions) -> Result<SineFit> {
    let rate = rec.sample_rate_hz;
    let f0 = initial_frequency(rec, opts)?;
    let codes = rec.samples();
    let len = codes.len();
    let (lo, hi) = code_bounds(rec.bit_depth);
    let clip = opts.exclude_clipped.then_some((lo as i16, hi as i16));
    let period = rate / f0;
    let mut stage_len = ((16.0 * period).ceil() as usize).max(1 << 16).min(len);

    let mut model = Centred {
        a: 0.0,
        b: 0.0,
        c: 0.0,
        omega: 2.0 * PI * f0 / rate,
        centre: 0.0,
    };
    let mut total_iter = 0;
    loop {
        let prefix = &codes[..stage_len];
        let half = (stage_len as f64 / 2.0).max(1.0);
        model.centre = (stage_len as f64 - 1.0) / 2.0;
        three_param(prefix, &mut model, half, clip)?;

        let mut converged = false;
        let mut grad_norm = f64::INFINITY;
        for _ in 0..opts.max_iterations {
            total_iter += 1;
            let ne = accumulate(prefix, &model, half, true, clip);
            grad_norm = ne.jtr.iter().map(|v| v * v).sum::<f64>().sqrt();
            let m = Matrix4::from_fn(|i, j| ne.jtj[i][j]);
            let v = Vector4::from_fn(|i, _| ne.jtr[i]);
            let step = m
                .cholesky()
                .map(|ch| ch.solve(&v))
                .or_else(|| m.lu().solve(&v))
                .ok_or_else(|| Error::Singular("Gauss-Newton normal equations".into()))?;
            model.a += step[0];
            model.b += step[1];
            model.c += step[2];
            let d_omega = step[3] / half;
            model.omega += d_omega;
            if !(model.omega > 0.0 && model.omega < PI) {
                return Err(Error::NonConvergence {
                    iterations: total_iter,
                    gradient_norm: grad_norm,
                });
            }
            if d_omega.abs() <= opts.tolerance * model.omega {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergence {
                iterations: total_iter,
                gradient_norm: grad_norm,
            });
        }
        if stage_len == len {
            break;
        }
        stage_len = (stage_len * 4).min(len);
    }

    let half = (len as f64 / 2.0).max(1.0);
    let final_ne = accumulate(codes, &model, half, false, clip);
    let mut fit = model.to_fit(rate);
    fit.iterations = total_iter;
    fit.rms_residual = (final_ne.rss / final_ne.jtj[2][2].max(1.0)).sqrt();
    Ok(fit)
}
