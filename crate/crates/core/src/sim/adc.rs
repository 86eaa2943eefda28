use serde::{Deserialize, Serialize};

use super::record::code_bounds;
use crate::error::{Error, Result};

/// Static model of an `N`-bit converter with mid-tread symmetric signed codes.
///
/// `transition_levels[i]` is the lower edge of code `min_code + 1 + i`, in
/// LSB. Code `k` is produced iff the input lies in `(t_k, t_{k+1}]`; inputs at
/// or below the first level clip to the minimum code and inputs above the
/// last level clip to the maximum code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdcModel {
    pub bits: u8,
    transition_levels: Vec<f64>,
}

impl AdcModel {
    /// Uniform 1-LSB bins centred on the integer codes.
    pub fn ideal(bits: u8) -> Self {
        let (lo, hi) = code_bounds(bits);
        let transition_levels = ((lo + 1)..=hi).map(|k| k as f64 - 0.5).collect();
        AdcModel {
            bits,
            transition_levels,
        }
    }

    pub fn from_transition_levels(bits: u8, transition_levels: Vec<f64>) -> Result<Self> {
        if !(1..=16).contains(&bits) {
            return Err(Error::InvalidInput(format!("ADC bits {bits} outside 1..=16")));
        }
        let expected = (1usize << bits) - 1;
        if transition_levels.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                actual: transition_levels.len(),
            });
        }
        if transition_levels.iter().any(|t| !t.is_finite())
            || transition_levels.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::InvalidInput(
                "transition levels must be finite and strictly increasing".into(),
            ));
        }
        Ok(AdcModel {
            bits,
            transition_levels,
        })
    }

    /// Builds a converter whose interior code widths are `1 + dnl[k]`, with the
    /// transition pattern anchored so the centre code keeps its ideal lower
    /// edge. `dnl` is indexed like [`AdcModel::codes`]; edge entries are ignored.
    pub fn from_dnl(bits: u8, dnl: &[f64]) -> Result<Self> {
        let n_codes = 1usize << bits;
        if dnl.len() != n_codes {
            return Err(Error::SizeMismatch {
                expected: n_codes,
                actual: dnl.len(),
            });
        }
        let (lo, _) = code_bounds(bits);
        let mut levels = vec![0.0; n_codes - 1];
        // Lower edge of code 0 stays at -0.5.
        let zero_idx = (-lo) as usize - 1;
        levels[zero_idx] = -0.5;
        for i in zero_idx + 1..levels.len() {
            // levels[i] is the lower edge of code index i + 1
            levels[i] = levels[i - 1] + 1.0 + dnl[i];
        }
        for i in (0..zero_idx).rev() {
            levels[i] = levels[i + 1] - 1.0 - dnl[i + 1];
        }
        Self::from_transition_levels(bits, levels)
    }

    /// Moves the upper edge of `code` by `delta` LSB: the code widens by
    /// `delta` and its upper neighbour narrows by the same amount.
    pub fn with_shifted_upper_edge(mut self, code: i32, delta: f64) -> Result<Self> {
        let (lo, hi) = code_bounds(self.bits);
        if code < lo || code >= hi {
            return Err(Error::InvalidInput(format!("code {code} has no upper edge")));
        }
        let idx = (code - lo) as usize;
        self.transition_levels[idx] += delta;
        Self::from_transition_levels(self.bits, self.transition_levels)
    }

    pub fn transition_levels(&self) -> &[f64] {
        &self.transition_levels
    }

    /// Half range `R = 2^(N-1)` in LSB.
    pub fn range(&self) -> f64 {
        (1u32 << (self.bits - 1)) as f64
    }

    pub fn min_code(&self) -> i32 {
        code_bounds(self.bits).0
    }

    pub fn max_code(&self) -> i32 {
        code_bounds(self.bits).1
    }

    pub fn codes(&self) -> impl Iterator<Item = i32> {
        self.min_code()..=self.max_code()
    }

    /// Per-code width deviation from 1 LSB. The two edge codes have no finite
    /// width and report 0.
    pub fn dnl(&self) -> Vec<f64> {
        let n_codes = 1usize << self.bits;
        let mut dnl = vec![0.0; n_codes];
        for (k, w) in self.transition_levels.windows(2).enumerate() {
            dnl[k + 1] = w[1] - w[0] - 1.0;
        }
        dnl
    }

    pub fn max_dnl(&self) -> f64 {
        self.dnl().into_iter().fold(0.0, f64::max)
    }

    pub fn is_ideal(&self) -> bool {
        self.dnl().iter().all(|d| d.abs() < 1e-12)
    }

    /// Code for a single analog input in LSB.
    #[inline]
    pub fn quantize_one(&self, x: f64) -> i16 {
        let t = &self.transition_levels;
        let lo = self.min_code();
        if x.is_nan() {
            return 0;
        }
        // Number of levels strictly below x, found by walking from a rounded guess.
        let guess = (x.round() as i64 - lo as i64).clamp(0, t.len() as i64) as usize;
        let mut k = guess;
        while k > 0 && t[k - 1] >= x {
            k -= 1;
        }
        while k < t.len() && t[k] < x {
            k += 1;
        }
        (lo + k as i32) as i16
    }
}

/// Maps real inputs (LSB) to codes by transition-level search, clipping at
/// both extremes. Monotone non-decreasing in its input.
pub fn quantize(x: &[f64], adc: &AdcModel) -> Vec<i16> {
    x.iter().map(|&v| adc.quantize_one(v)).collect()
}
