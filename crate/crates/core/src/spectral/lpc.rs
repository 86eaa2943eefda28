use rayon::prelude::*;

use crate::error::{Error, Result};

/// Biased autocovariance `r[k] = (1/N) Σ (x_i - m)(x_{i+k} - m)` for
/// `k = 0..=max_lag`.
pub fn autocovariance(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = x.iter().map(|v| v - mean).collect();
    (0..=max_lag.min(n.saturating_sub(1)))
        .into_par_iter()
        .map(|k| {
            let a = &centred[..n - k];
            let b = &centred[k..];
            a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() / n as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevinsonResult {
    /// Predictor polynomial `[1, a_1, ..., a_p]`.
    pub coefficients: Vec<f64>,
    pub reflection: Vec<f64>,
    /// Forward prediction error variance after each order `0..=p`.
    pub error_by_order: Vec<f64>,
}

/// Levinson–Durbin recursion on autocovariances `r[0..=p]`.
pub fn levinson_durbin(r: &[f64]) -> Result<LevinsonResult> {
    if r.is_empty() {
        return Err(Error::EmptyRequest("autocovariance sequence"));
    }
    let p = r.len() - 1;
    if !(r[0] > 0.0) {
        return Err(Error::Singular("zero-lag autocovariance is not positive".into()));
    }
    let mut a = vec![0.0; p + 1];
    a[0] = 1.0;
    let mut err = r[0];
    let mut reflection = Vec::with_capacity(p);
    let mut error_by_order = Vec::with_capacity(p + 1);
    error_by_order.push(err);
    let mut prev = a.clone();
    for i in 1..=p {
        let acc: f64 = (0..i).map(|j| a[j] * r[i - j]).sum();
        let k = -acc / err;
        if !(k.abs() < 1.0) {
            return Err(Error::Singular(format!(
                "reflection coefficient {k} at order {i}: autocovariance is not positive definite"
            )));
        }
        prev[..i].copy_from_slice(&a[..i]);
        for j in 1..i {
            a[j] = prev[j] + k * prev[i - j];
        }
        a[i] = k;
        err *= 1.0 - k * k;
        reflection.push(k);
        error_by_order.push(err);
    }
    Ok(LevinsonResult {
        coefficients: a,
        reflection,
        error_by_order,
    })
}

/// Forward prediction error variance of an order-`order` linear predictor
/// fitted by Levinson–Durbin to the biased autocovariance.
pub fn conditional_variance_lpc(x: &[f64], order: usize) -> Result<f64> {
    if order == 0 || order >= x.len() / 10 {
        return Err(Error::InvalidInput(format!(
            "LPC order {order} must be in [1, {})",
            x.len() / 10
        )));
    }
    let r = autocovariance(x, order);
    let res = levinson_durbin(&r)?;
    Ok(*res.error_by_order.last().expect("order >= 1"))
}
