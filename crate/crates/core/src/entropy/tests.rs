use super::*;
use proptest::prelude::*;

fn ideal_at_optimum(bits: u8, n: f64) -> EntropyInputs {
    let adc = AdcGeometry::ideal(bits);
    EntropyInputs {
        n_eff: n,
        g: optimal_gain(n, &adc).unwrap(),
        adc,
    }
}

/// Independent minimizer: dense log grid, then repeated local refinement.
fn brute_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let mut best = f64::INFINITY;
    for _ in 0..8 {
        let pts = 2000;
        let mut arg = a;
        for i in 0..=pts {
            let t = a + (b - a) * i as f64 / pts as f64;
            let v = f(t.exp());
            if v < best {
                best = v;
                arg = t;
            }
        }
        let w = (b - a) / pts as f64;
        a = arg - 2.0 * w;
        b = arg + 2.0 * w;
    }
    best
}

#[test]
fn gamma_values() {
    assert_eq!(gamma(0.0).unwrap(), 1.0);
    assert!((gamma(1.0).unwrap() - (3.0 + 2.0 * 2f64.sqrt())).abs() < 1e-12);
    assert!(gamma(-0.1).is_err());
}

#[test]
fn gamma_is_prefactor_minimum() {
    for n in [0.1, 1.0, 10.0] {
        let m = brute_min(|d| (n + d) * (1.0 + n + d) / d, 1e-6, 1e6);
        assert!((m - gamma(n).unwrap()).abs() < 1e-8, "n={n}: {m}");
    }
}

#[test]
fn u_factor_values() {
    for d in [1e-3, 0.5, 7.0] {
        assert!((u_factor(0.0, d, 3.0).unwrap() - 3.0 * 2f64.sqrt()).abs() < 1e-12);
    }
    let d = 2f64.sqrt();
    let want = ((4.0 * (2.0 + d) + 2.0 * d) / d).sqrt();
    assert!((u_factor(1.0, d, 1.0).unwrap() - want).abs() < 1e-12);
    let u1 = u_factor(0.7, 0.3, 1.0).unwrap();
    assert!((u_factor(0.7, 0.3, 5.5).unwrap() - 5.5 * u1).abs() < 1e-12);
    assert!(u_factor(1.0, 0.0, 1.0).is_err());
    assert!(u_factor(1.0, -1.0, 1.0).is_err());
}

#[test]
fn ideal_eight_bit_bound() {
    let inputs = ideal_at_optimum(8, 0.0);
    // Balanced-gain root for R = 128, Δx = 1: u* = 74.5244, g* = u*/√2.
    assert!((inputs.g - 52.6967).abs() < 1e-3, "g* = {}", inputs.g);
    let res = hmin(&inputs).unwrap();
    assert!((res.h_min_bits - 7.04).abs() < 0.05);
    assert!((res.h_min_bits - 7.0454).abs() < 1e-3, "{}", res.h_min_bits);
}

#[test]
fn other_resolutions_at_optimum() {
    for (bits, want) in [(4u8, 3.785), (12, 10.636), (16, 14.361)] {
        let h = hmin(&ideal_at_optimum(bits, 0.0)).unwrap().h_min_bits;
        assert!((h - want).abs() < 2e-3, "N={bits}: {h}");
    }
}

#[test]
fn optimal_gain_residual_and_scaling() {
    for n in [0.0, 0.1, 1.0, 5.0] {
        let adc = AdcGeometry::ideal(8);
        let g = optimal_gain(n, &adc).unwrap();
        let u = g * (2.0 * gamma(n).unwrap()).sqrt();
        let resid = erf(1.0 / (2.0 * u)) - 0.5 * erfc(128.0 / u);
        assert!(resid.abs() < 1e-12, "n={n}: {resid}");
        let doubled = AdcGeometry {
            range_lsb: 256.0,
            bin_width_lsb: 2.0,
            ..adc
        };
        let g2 = optimal_gain(n, &doubled).unwrap();
        assert!((g2 / g - 2.0).abs() < 1e-9);
    }
}

#[test]
fn iid_against_dense_grid_scan() {
    // At g = 30 the optimum sits on the kink where the centre and edge terms
    // of B cross, so a 10^4-point log grid can only bound it from one side.
    let inputs = EntropyInputs {
        n_eff: 0.5,
        g: 30.0,
        adc: AdcGeometry::ideal(8),
    };
    let obj = |d: f64| {
        let pref = (0.5 + d) * (1.5 + d) / d;
        let u = u_factor(0.5, d, 30.0).unwrap();
        let b = erf(1.0 / (2.0 * u)).max(0.5 * erfc(128.0 / u));
        (pref * b).log2()
    };
    let got = hmin_iid(&inputs).unwrap();
    let mut grid = f64::INFINITY;
    let (lo, hi) = (DELTA_MIN.ln(), DELTA_MAX.ln());
    for i in 0..10_000 {
        grid = grid.min(obj((lo + (hi - lo) * i as f64 / 9999.0).exp()));
    }
    assert!(got.h_min_bits >= -grid - 1e-12);
    assert!((got.h_min_bits + grid).abs() < 1e-3, "{} vs {}", got.h_min_bits, -grid);
    let refined = brute_min(obj, DELTA_MIN, DELTA_MAX);
    assert!((got.h_min_bits + refined).abs() < 1e-8, "{} vs {}", got.h_min_bits, -refined);
}

#[test]
fn iid_matches_grid_scan_in_smooth_regime() {
    let inputs = EntropyInputs {
        n_eff: 0.5,
        g: 20.0,
        adc: AdcGeometry::ideal(8),
    };
    let got = hmin_iid(&inputs).unwrap().h_min_bits;
    let (lo, hi) = (DELTA_MIN.ln(), DELTA_MAX.ln());
    let mut grid = f64::INFINITY;
    for i in 0..10_000 {
        grid = grid.min(log_objective(&inputs, (lo + (hi - lo) * i as f64 / 9999.0).exp()));
    }
    assert!((got + grid).abs() < 1e-4, "{got} vs {}", -grid);
}

#[test]
fn first_order_optimality_in_smooth_regime() {
    // Centre term dominates at g = 20: the optimum is an interior stationary point.
    let inputs = EntropyInputs {
        n_eff: 0.5,
        g: 20.0,
        adc: AdcGeometry::ideal(8),
    };
    let res = hmin_iid(&inputs).unwrap();
    let d = res.delta_star;
    let h = 1e-6 * d;
    let deriv = (log_objective(&inputs, d + h) - log_objective(&inputs, d - h)) / (2.0 * h);
    assert!(deriv.abs() < 1e-6, "{deriv}");
    assert!(d < delta_star(0.5));
}

#[test]
fn closed_form_matches_iid_at_optimal_gain() {
    for n in [0.0, 0.1, 1.0] {
        let inputs = ideal_at_optimum(8, n);
        let iid = hmin_iid(&inputs).unwrap().h_min_bits;
        let closed = hmin_closed_form(&inputs).unwrap();
        assert!((iid - closed).abs() < 1e-3, "n={n}: {iid} vs {closed}");
        let direct = -(gamma(n).unwrap() * erf(1.0 / (2.0 * inputs.g * (2.0 * gamma(n).unwrap()).sqrt()))).log2();
        assert!((closed - direct).abs() < 1e-9);
    }
}

#[test]
fn bound_never_exceeds_bit_depth() {
    for g in [0.01, 0.3, 1.0, 10.0, 1e4] {
        let inputs = EntropyInputs {
            n_eff: 0.0,
            g,
            adc: AdcGeometry::ideal(8),
        };
        let h = hmin(&inputs).unwrap().h_min_bits;
        assert!((0.0..=8.0).contains(&h));
    }
}

#[test]
fn extractor_sizing() {
    let eps = DEFAULT_EPSILON_HASH;
    assert_eq!(extractable_bits(5.09, 8, 8192, eps).unwrap(), 5119);
    assert_eq!(extractable_bits(0.0, 8, 8192, eps).unwrap(), 0);
    assert_eq!(extractable_bits(8.0, 8, 8192, 0.5).unwrap(), 8190);
    assert!(extractable_bits(5.0, 8, 8192, 0.0).is_err());
    assert!(extractable_bits(5.0, 8, 8192, 1.0).is_err());
    assert!(extractable_bits(5.0, 8, 8190, eps).is_err());
    assert!(extractable_bits(9.0, 8, 8192, eps).is_err());
}

#[test]
fn generation_rates() {
    assert!((generation_rate(5120, 8192, 8, 20e9) - 100e9).abs() < 1.0);
    for (h, expected_gbps) in [(5.09, 100.0), (3.70, 71.88), (7.04, 138.75), (2.01, 38.13)] {
        let m = extractable_bits(h, 8, 8192, DEFAULT_EPSILON_HASH).unwrap();
        let r = generation_rate(m, 8192, 8, 20e9) / 1e9;
        assert!((r / expected_gbps - 1.0).abs() < 0.01, "h={h}: {r} Gbps");
    }
}

#[test]
fn photon_number_limits() {
    let p = photon_number_from_factors(1.0, 1.0, 1.0, 1.0);
    assert_eq!(p.n_eff, 0.0);
    assert!(!p.clamped);
    let c: f64 = 20.0;
    let p = photon_number_from_factors(1.0, 1.0 + 1.0 / c, 1.0, 1.0);
    assert!((p.n_eff - 1.0 / (2.0 * c)).abs() < 1e-12);
    let p = photon_number_from_factors(0.99, 1.0, 1.0, 1.0);
    assert!(p.clamped && p.n_eff == 0.0 && p.raw < 0.0);
}

#[test]
fn report_is_consistent() {
    let inputs = ideal_at_optimum(8, 0.0);
    let rep = entropy_report(&inputs, 20e9, 8192, DEFAULT_EPSILON_HASH, EntropyProvenance::default()).unwrap();
    assert!(rep.output_block_bits <= rep.input_block_bits);
    let want = rep.sample_rate_hz * (rep.output_block_bits as f64 / (8192.0 / 8.0));
    assert!((rep.rate_bps - want).abs() < 1e-3);
    assert!((rep.rate_bps / 1e9 - 138.75).abs() / 138.75 < 0.01);
    let js = serde_json::to_string(&rep).unwrap();
    let back: EntropyReport = serde_json::from_str(&js).unwrap();
    assert_eq!(back, rep);
}

#[test]
fn temporal_curve_properties() {
    let factors: Vec<f64> = (0..40).map(|i| 1.0 + 0.25 * i as f64).collect();
    let t = curve_hmin_vs_temporal(&[4, 8, 12, 16], &[0.0, 1.0], &factors).unwrap();
    assert_eq!(t.columns.len(), 8);
    assert!((t.column("N8_dx1").unwrap()[0] - 7.04).abs() < 0.05);
    for bits in [4, 8, 12, 16] {
        let a = t.column(&format!("N{bits}_dx1")).unwrap();
        let b = t.column(&format!("N{bits}_dx2")).unwrap();
        // The balanced u* does not depend on n; at N = 4 it is only ~8 LSB.
        let u_large = bits >= 8;
        for (x, y) in a.iter().zip(b) {
            assert!(y <= x);
            if u_large {
                assert!((x - y - 1.0).abs() < 0.05, "N={bits}: {x} vs {y}");
            }
        }
        for w in a.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }
}

#[test]
fn clearance_curve_properties() {
    let dc: Vec<f64> = (-10..=40).map(|d| d as f64).collect();
    let shapes = [
        ClearanceShape::Flat,
        ClearanceShape::Butterworth {
            order: 2,
            cutoff_fraction: 0.2,
        },
    ];
    let t = curve_hmin_vs_clearance(&[8], &shapes, &dc).unwrap();
    let flat = t.column("N8_flat").unwrap();
    let bw = t.column("N8_butterworth2").unwrap();
    for (f, b) in flat.iter().zip(bw) {
        assert!(b <= f);
    }
    // Negative clearance still leaves usable entropy.
    assert!(flat[0] > 0.0 && dc[0] < 0.0);
    let far = curve_hmin_vs_clearance(&[8], &[ClearanceShape::Flat], &[120.0]).unwrap();
    let ideal = hmin(&ideal_at_optimum(8, 0.0)).unwrap().h_min_bits;
    assert!((far.columns[0].values[0] - ideal).abs() < 1e-4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn monotone_in_photon_number(n in 0.0f64..5.0, dn in 0.0f64..2.0, g in 5.0f64..100.0) {
        let adc = AdcGeometry::ideal(8);
        let a = hmin_iid(&EntropyInputs { n_eff: n, g, adc }).unwrap().h_min_bits;
        let b = hmin_iid(&EntropyInputs { n_eff: n + dn, g, adc }).unwrap().h_min_bits;
        prop_assert!(b <= a + 1e-9);
    }

    #[test]
    fn monotone_in_dnl(n in 0.0f64..2.0, d in 0.0f64..1.0, dd in 0.0f64..1.0, g in 5.0f64..100.0) {
        let adc = AdcGeometry::ideal(8);
        let a = hmin_iid(&EntropyInputs { n_eff: n, g, adc: adc.with_dnl(d) }).unwrap().h_min_bits;
        let b = hmin_iid(&EntropyInputs { n_eff: n, g, adc: adc.with_dnl(d + dd) }).unwrap().h_min_bits;
        prop_assert!(b <= a + 1e-9);
    }

    #[test]
    fn monotone_in_resolution_at_optimal_gain(n in 0.0f64..3.0, bits in 2u8..16) {
        let a = hmin(&ideal_at_optimum(bits, n)).unwrap().h_min_bits;
        let b = hmin(&ideal_at_optimum(bits + 1, n)).unwrap().h_min_bits;
        prop_assert!(b >= a - 1e-9);
    }

    #[test]
    fn gamma_is_increasing(a in 0.0f64..100.0, d in 1e-6f64..10.0) {
        prop_assert!(gamma(a + d).unwrap() > gamma(a).unwrap());
    }
}
