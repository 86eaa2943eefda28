use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{hmin_closed_form, optimal_gain, AdcGeometry, EntropyInputs};
use crate::error::{Error, Result};
use crate::spectral::rc_functional;

/// Points on `[0, f_N]` used to evaluate `R_c` of an analytic clearance.
const SHAPE_GRID: usize = 4097;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveColumn {
    pub name: String,
    pub values: Vec<f64>,
}

/// Min-entropy traces over a shared x-axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveTable {
    pub x_name: String,
    pub x: Vec<f64>,
    pub columns: Vec<CurveColumn>,
}

impl CurveTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }
}

/// Optimal-gain bound `-log2[Γ(n) B(u(δ*))]` with the gain balanced for the
/// DNL-free ADC and the DNL widening only the centre bin, clamped to `[0, N]`.
fn hmin_nominal_gain(n: f64, bits: u8, dnl_max: f64) -> Result<f64> {
    let nominal = AdcGeometry::ideal(bits);
    let g = optimal_gain(n, &nominal)?;
    let inputs = EntropyInputs {
        n_eff: n,
        g,
        adc: nominal.with_dnl(dnl_max),
    };
    Ok(hmin_closed_form(&inputs)?.clamp(0.0, bits as f64))
}

fn check_grid(name: &str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::EmptyRequest("curve grid"));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("{name} grid has non-finite points")));
    }
    Ok(())
}

/// `H_min` versus `σ_M²/σ_{M,c}²` for a noiseless receiver (`R_c(1+1/C) = 1`),
/// so `n = (factor − 1)/2`. One column per `(bits, dnl)` named
/// `N{bits}_dx{1+dnl}`.
pub fn curve_hmin_vs_temporal(adc_bits: &[u8], dnl_cases: &[f64], factors: &[f64]) -> Result<CurveTable> {
    check_grid("temporal factor", factors)?;
    if let Some(f) = factors.iter().find(|&&f| f < 1.0) {
        return Err(Error::Domain(format!("temporal factor {f} below 1")));
    }
    let mut columns = Vec::new();
    for &bits in adc_bits {
        for &dnl in dnl_cases {
            let values = factors
                .par_iter()
                .map(|&f| hmin_nominal_gain(0.5 * (f - 1.0), bits, dnl))
                .collect::<Result<Vec<f64>>>()?;
            columns.push(CurveColumn {
                name: format!("N{bits}_dx{}", 1.0 + dnl),
                values,
            });
        }
    }
    Ok(CurveTable {
        x_name: "temporal_factor".into(),
        x: factors.to_vec(),
        columns,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClearanceShape {
    Flat,
    /// `C(f) = C_DC / (1 + (f/f_c)^(2·order))` with `f_c = fraction · f_N`.
    Butterworth { order: u32, cutoff_fraction: f64 },
}

impl ClearanceShape {
    fn label(&self) -> String {
        match self {
            ClearanceShape::Flat => "flat".into(),
            ClearanceShape::Butterworth { order, .. } => format!("butterworth{order}"),
        }
    }

    /// `R_c(1 + 1/C(f))` for a DC clearance `c_dc` (linear).
    pub fn rc_one_plus_inverse(&self, c_dc: f64) -> Result<f64> {
        match *self {
            ClearanceShape::Flat => Ok(1.0 + 1.0 / c_dc),
            ClearanceShape::Butterworth {
                order,
                cutoff_fraction,
            } => {
                if !(cutoff_fraction > 0.0) || order == 0 {
                    return Err(Error::InvalidSpec(format!(
                        "butterworth clearance needs order >= 1 and cutoff > 0, got {order}, {cutoff_fraction}"
                    )));
                }
                let x: Vec<f64> = (0..SHAPE_GRID)
                    .map(|i| {
                        let f = i as f64 / (SHAPE_GRID - 1) as f64;
                        let c = c_dc / (1.0 + (f / cutoff_fraction).powi(2 * order as i32));
                        1.0 + 1.0 / c
                    })
                    .collect();
                rc_functional(&x)
            }
        }
    }
}

/// `H_min` versus DC clearance in dB with temporal correlations equal to one,
/// so `n = (R_c(1+1/C) − 1)/2`. Columns are named `N{bits}_{shape}`.
pub fn curve_hmin_vs_clearance(
    adc_bits: &[u8],
    shapes: &[ClearanceShape],
    dc_db: &[f64],
) -> Result<CurveTable> {
    check_grid("clearance", dc_db)?;
    let mut columns = Vec::new();
    for &bits in adc_bits {
        for shape in shapes {
            let values = dc_db
                .par_iter()
                .map(|&db| {
                    let rc = shape.rc_one_plus_inverse(10f64.powf(db / 10.0))?;
                    hmin_nominal_gain(0.5 * (rc - 1.0), bits, 0.0)
                })
                .collect::<Result<Vec<f64>>>()?;
            columns.push(CurveColumn {
                name: format!("N{bits}_{}", shape.label()),
                values,
            });
        }
    }
    Ok(CurveTable {
        x_name: "clearance_dc_db".into(),
        x: dc_db.to_vec(),
        columns,
    })
}

/// Resolutions plotted by default.
pub const DEFAULT_BITS: [u8; 4] = [4, 8, 12, 16];

/// Temporal factors 1 to 10 in steps of 0.1, bin widths 1 and 2 LSB.
pub fn default_temporal_curve() -> Result<CurveTable> {
    let factors: Vec<f64> = (0..=90).map(|i| 1.0 + 0.1 * i as f64).collect();
    curve_hmin_vs_temporal(&DEFAULT_BITS, &[0.0, 1.0], &factors)
}

/// DC clearance −10 to 40 dB in 0.5 dB steps, flat and second-order
/// Butterworth at `f_N/5`.
pub fn default_clearance_curve() -> Result<CurveTable> {
    let dc: Vec<f64> = (0..=100).map(|i| -10.0 + 0.5 * i as f64).collect();
    let shapes = [
        ClearanceShape::Flat,
        ClearanceShape::Butterworth {
            order: 2,
            cutoff_fraction: 0.2,
        },
    ];
    curve_hmin_vs_clearance(&DEFAULT_BITS, &shapes, &dc)
}
