use super::*;
use crate::sim::{simulate_sine_capture, AdcModel, SineSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RATE: f64 = 1e9;

fn capture(adc: &AdcModel, len: usize, noise: f64, seed: u64) -> SampleRecord {
    let r = adc.range();
    let f = coherent_frequency(RATE, len as u64, RATE * 2500.0 / len as f64).unwrap();
    let sine = SineSpec {
        amplitude: 1.02 * r,
        freq_hz: f.freq_hz,
        phase_rad: 0.4,
        offset: 0.0,
    };
    simulate_sine_capture(adc, &sine, RATE, len, noise, seed).unwrap()
}

fn random_dnl(bits: u8, max: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d: Vec<f64> = (0..1usize << bits).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let peak = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for v in &mut d {
        *v *= max / peak;
    }
    d
}

fn opts(min_hits: u64) -> CalibrationOptions {
    CalibrationOptions {
        min_hits,
        ..Default::default()
    }
}

#[test]
fn coherent_frequency_reference_case() {
    let f = coherent_frequency(20e9, 1_600_000_000, 125e3).unwrap();
    assert_eq!(f.cycles, 10001);
    assert!((f.freq_hz - 125_012.5).abs() < 1e-6);
    assert_eq!(gcd(f.cycles, f.record_len), 1);
}

#[test]
fn coherent_frequency_prime_length() {
    // 1_000_003 is prime: the nearest J is always accepted.
    let f = coherent_frequency(1e6, 1_000_003, 1234.4).unwrap();
    assert_eq!(f.cycles, (1234.4f64 * 1_000_003.0 / 1e6).round() as u64);
}

#[test]
fn coherent_frequency_tie_prefers_larger() {
    // M = 12, ideal J = 3 (shares 3): 2 and 4 share 2, so 1 and 5 tie.
    let f = coherent_frequency(12.0, 12, 3.0).unwrap();
    assert_eq!(f.cycles, 5);
    assert!(coherent_frequency(1.0, 2, 0.1).is_err());
    assert!(coherent_frequency(1.0, 100, 0.6).is_err());
}

#[test]
fn null_adc_has_flat_dnl() {
    let adc = AdcModel::ideal(6);
    let rec = capture(&adc, 4_000_000, 0.5, 1);
    let (_, p) = calibrate(&rec, &SineFitOptions::default(), &opts(20_000)).unwrap();
    assert!(p.undersampled_codes().is_empty());
    assert!(p.max_abs_dnl() < 0.02, "{}", p.max_abs_dnl());
    assert!((p.noise_sigma_lsb - 0.5).abs() < 0.05);
}

#[test]
fn injected_dnl_is_recovered() {
    let bits = 6;
    let dnl = random_dnl(bits, 0.074, 9);
    let adc = AdcModel::from_dnl(bits, &dnl).unwrap();
    let truth = adc.dnl();
    let rec = capture(&adc, 4_000_000, 0.5, 2);
    let (_, p) = calibrate(&rec, &SineFitOptions::default(), &opts(20_000)).unwrap();
    for i in 1..truth.len() - 1 {
        assert!((p.dnl[i] - truth[i]).abs() < 0.02, "code {}: {} vs {}", p.codes[i], p.dnl[i], truth[i]);
    }
    assert!((p.max_dnl - adc.max_dnl()).abs() < 0.02);
}

#[test]
fn single_spike_and_alternating_patterns() {
    let bits = 6;
    let mut spike = vec![0.0; 64];
    spike[40] = 0.074;
    let alt: Vec<f64> = (0..64).map(|i| if i % 2 == 0 { 0.05 } else { -0.05 }).collect();
    for (k, dnl) in [spike, alt].into_iter().enumerate() {
        let adc = AdcModel::from_dnl(bits, &dnl).unwrap();
        let truth = adc.dnl();
        let rec = capture(&adc, 4_000_000, 0.7, 10 + k as u64);
        let (_, p) = calibrate(&rec, &SineFitOptions::default(), &opts(20_000)).unwrap();
        for i in 1..63 {
            assert!((p.dnl[i] - truth[i]).abs() < 0.02, "case {k} code {}", p.codes[i]);
        }
    }
}

#[test]
fn noiseless_capture_is_exact() {
    let adc = AdcModel::from_dnl(6, &random_dnl(6, 0.074, 4)).unwrap();
    let truth = adc.dnl();
    let rec = capture(&adc, 2_000_000, 0.0, 5);
    let (_, p) = calibrate(&rec, &SineFitOptions::default(), &opts(10_000)).unwrap();
    assert!(p.noise_sigma_lsb < 0.05);
    for i in 1..63 {
        assert!((p.dnl[i] - truth[i]).abs() < 0.005, "code {}", p.codes[i]);
    }
}

#[test]
fn inl_is_running_sum_of_dnl() {
    let adc = AdcModel::from_dnl(6, &random_dnl(6, 0.05, 2)).unwrap();
    let rec = capture(&adc, 1_000_000, 0.5, 6);
    let (_, p) = calibrate(&rec, &SineFitOptions::default(), &opts(1)).unwrap();
    for i in 1..p.codes.len() - 1 {
        assert!((p.dnl[i] - (p.inl[i] - p.inl[i - 1])).abs() < 1e-12);
    }
    let mut acc = p.inl[0];
    for i in 1..p.codes.len() - 1 {
        acc += p.dnl[i];
        assert!((acc - p.inl[i]).abs() < 1e-9);
    }
}

#[test]
fn edge_codes_and_undersampled_codes_excluded() {
    let mut dnl = vec![0.0; 64];
    dnl[0] = 5.0;
    dnl[63] = 5.0;
    let adc = AdcModel::from_dnl(6, &dnl).unwrap();
    let rec = capture(&adc, 1_000_000, 0.5, 7);
    let (_, p) = calibrate(&rec, &SineFitOptions::default(), &opts(1)).unwrap();
    assert!(!p.valid[0] && !p.valid[63]);
    assert_eq!(p.dnl[0], 0.0);
    assert!(p.max_dnl < 1.0);

    let (_, p) = calibrate(&rec, &SineFitOptions::default(), &opts(u64::MAX)).unwrap();
    assert_eq!(p.undersampled_codes().len(), 62);
    assert_eq!(p.max_dnl, 0.0);
}

#[test]
fn residual_path_matches_streaming_path() {
    let adc = AdcModel::ideal(6);
    let rec = capture(&adc, 500_000, 0.5, 8);
    let fit = sine_fit(&rec, &SineFitOptions::default()).unwrap();
    let a = inl_dnl(&rec, &fit, &opts(1)).unwrap();
    let res = fit.residuals(&rec);
    let b = inl_dnl_from_residuals(rec.samples(), &res, 6, &opts(1)).unwrap();
    assert_eq!(a.hits_per_code, b.hits_per_code);
    assert_eq!(a.heatmap.counts.iter().sum::<u64>(), b.heatmap.counts.iter().sum::<u64>());
    for i in 0..64 {
        assert!((a.dnl[i] - b.dnl[i]).abs() < 1e-6);
        assert!((a.mean_error[i] - b.mean_error[i]).abs() < 1e-9);
    }
    assert!(inl_dnl_from_residuals(rec.samples(), &res[1..], 6, &opts(1)).is_err());
}

#[test]
fn per_code_residuals_are_gaussian() {
    let adc = AdcModel::ideal(6);
    let rec = capture(&adc, 4_000_000, 1.0, 12);
    let (_, p) = calibrate(&rec, &SineFitOptions::default(), &opts(20_000)).unwrap();
    let crit = DnlProfile::jarque_bera_critical_1pct();
    assert!((crit - 9.2103).abs() < 1e-3);
    // Central codes, where the sine density is flat over the noise width.
    let centre = p.codes.iter().position(|&c| c == 0).unwrap();
    let passing = (centre - 8..=centre + 8)
        .filter(|&i| p.jarque_bera[i] < crit)
        .count();
    assert!(passing >= 15, "{passing}/17 codes pass");
}

#[test]
fn heatmap_triples_account_for_hits() {
    let adc = AdcModel::ideal(6);
    let rec = capture(&adc, 200_000, 0.5, 13);
    let (_, p) = calibrate(&rec, &SineFitOptions::default(), &opts(1)).unwrap();
    let total: u64 = p.heatmap.triples().iter().map(|t| t.2).sum();
    // ±4 LSB covers all but the clipped tails.
    assert!(total as f64 > 0.95 * rec.len() as f64);
}
