//! The end-to-end acceptance suite, shared by the `acceptance` test target
//! and `qrng selftest`. Each criterion yields one pass/fail line.

use std::fmt;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::adccal::{self, coherent_frequency, CalibrationOptions};
use crate::entropy::{
    default_clearance_curve, default_temporal_curve, extractable_bits, generation_rate,
    hmin_iid, optimal_gain, AdcGeometry, EntropyInputs, EntropyReport, DEFAULT_BITS,
};
use crate::equalizer::{self, FirFilter};
use crate::error::{Error, Result};
use crate::extract::{self, Bits};
use crate::pipeline::{self, measure_entropy, PipelineConfig};
use crate::sim::{
    gen_gaussian_stream, simulate_capture, simulate_sine_capture, AdcModel, CaptureKind, SineSpec,
};
use crate::spectral::{
    autocorrelation, clearance_profile, conditional_variance, conditional_variance_lpc,
    welch_psd, ClearanceProfile,
};
use crate::stattest;

pub const CRITERIA: u8 = 10;

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} [{}] {}: {} ({:.2} s)",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

const NAMES: [&str; CRITERIA as usize] = [
    "ideal-detector min-entropy",
    "rate arithmetic",
    "conditional-variance oracle equivalence",
    "equalization pipeline ordering",
    "clearance invariance under equalization",
    "ADC calibration closed loop",
    "extractor correctness",
    "output quality",
    "min-entropy curve properties",
    "variance preservation",
];

const TIME_LIMITS_S: [Option<f64>; CRITERIA as usize] = [
    Some(1.0),
    Some(1.0),
    Some(60.0),
    Some(300.0),
    None,
    Some(60.0),
    None,
    None,
    None,
    None,
];

struct Check {
    ok: bool,
    notes: Vec<String>,
}

impl Check {
    fn new() -> Self {
        Check {
            ok: true,
            notes: Vec::new(),
        }
    }

    fn require(&mut self, cond: bool, note: String) {
        if !cond {
            self.ok = false;
            self.notes.push(format!("FAILED {note}"));
        } else {
            self.notes.push(note);
        }
    }

    fn info(&mut self, note: String) {
        self.notes.push(note);
    }
}

fn finish(id: u8, started: Instant, outcome: Result<Check>) -> CriterionResult {
    let elapsed = started.elapsed();
    let idx = (id - 1) as usize;
    let (mut passed, mut detail) = match outcome {
        Ok(c) => (c.ok, c.notes.join("; ")),
        Err(e) => (false, format!("error: {e}")),
    };
    if let Some(limit) = TIME_LIMITS_S[idx] {
        if elapsed.as_secs_f64() > limit {
            passed = false;
            detail.push_str(&format!("; FAILED runtime above {limit} s"));
        }
    }
    CriterionResult {
        id,
        name: NAMES[idx],
        passed,
        detail,
        elapsed,
    }
}

/// Runs every criterion in order.
pub fn run_all() -> Vec<CriterionResult> {
    run_selected(&(1..=CRITERIA).collect::<Vec<_>>())
}

/// Runs the listed criteria; the equalization study behind 4, 5, 8 and 10
/// is computed once and shared (its time is charged to the first user).
pub fn run_selected(ids: &[u8]) -> Vec<CriterionResult> {
    let mut study: Option<std::result::Result<EqualizationStudy, String>> = None;
    let mut out = Vec::new();
    for &id in ids {
        let started = Instant::now();
        let needs_study = matches!(id, 4 | 5 | 8 | 10);
        if needs_study && study.is_none() {
            study = Some(EqualizationStudy::run(&PipelineConfig::reference()).map_err(|e| e.to_string()));
        }
        let st = || -> Result<&EqualizationStudy> {
            study
                .as_ref()
                .expect("study computed")
                .as_ref()
                .map_err(|e| Error::Optimization(format!("equalization study failed: {e}")))
        };
        let outcome = match id {
            1 => ideal_detector(),
            2 => rate_arithmetic(),
            3 => conditional_variance_oracles(),
            4 => st().and_then(equalization_ordering),
            5 => st().and_then(clearance_invariance),
            6 => adc_closed_loop(),
            7 => extractor_correctness(),
            8 => st().and_then(output_quality),
            9 => curve_properties(),
            10 => st().and_then(variance_preservation),
            _ => Err(Error::InvalidInput(format!("no criterion {id}"))),
        };
        if (1..=CRITERIA).contains(&id) {
            out.push(finish(id, started, outcome));
        }
    }
    out
}

fn ideal_detector() -> Result<Check> {
    let adc = AdcGeometry::ideal(8);
    let g = optimal_gain(0.0, &adc)?;
    let h = hmin_iid(&EntropyInputs { n_eff: 0.0, g, adc })?.h_min_bits;
    let mut c = Check::new();
    c.require((h - 7.04).abs() <= 0.05, format!("H_min = {h:.4} bits at g = {g:.4} LSB (7.04 ± 0.05)"));
    Ok(c)
}

fn rate_arithmetic() -> Result<Check> {
    let mut c = Check::new();
    let rate = |h: f64| -> Result<(usize, f64)> {
        let m = extractable_bits(h, 8, 8192, 1e-14)?;
        Ok((m, generation_rate(m, 8192, 8, 20e9) / 1e9))
    };
    let (m, r) = rate(5.09)?;
    c.require(
        (m == 5119 || m == 5120) && (r - 100.0).abs() <= 0.5,
        format!("H=5.09: m={m}, {r:.2} Gbps (100 ± 0.5)"),
    );
    for (h, want, tol) in [(3.70, 71.88, 0.01), (7.04, 138.75, 0.01), (2.01, 38.13, 0.015)] {
        let (m, r) = rate(h)?;
        c.require(
            ((r - want) / want).abs() <= tol,
            format!("H={h}: m={m}, {r:.2} Gbps ({want} ± {}%)", tol * 100.0),
        );
    }
    Ok(c)
}

fn conditional_variance_oracles() -> Result<Check> {
    let mut c = Check::new();
    let n = 10_000_000;
    let e = gen_gaussian_stream(31, n)?;
    let mut ar = vec![0.0; n];
    let mut prev = 0.0;
    for (y, v) in ar.iter_mut().zip(&e) {
        prev = 0.5 * prev + v;
        *y = prev;
    }
    let welch = crate::spectral::WelchParams::default();
    let ls = conditional_variance(&welch_psd(&ar, 1.0, &welch)?)?;
    let lpc = conditional_variance_lpc(&ar, 16)?;
    c.require(
        (ls - 1.0).abs() <= 0.02 && (lpc - 1.0).abs() <= 0.02 && (ls / lpc - 1.0).abs() <= 0.02,
        format!("AR(1) a=0.5: log-spectral {ls:.4}, Levinson {lpc:.4} (analytic 1)"),
    );
    drop(ar);

    let cfg = PipelineConfig::reference();
    let rec = simulate_capture(&cfg.detector, &cfg.adc.model()?, CaptureKind::Homodyne, n, 7)?;
    let x = rec.to_f64();
    let ls = conditional_variance(&welch_psd(&x, rec.sample_rate_hz, &welch)?)?;
    let lpc = conditional_variance_lpc(&x, 64)?;
    c.require(
        (ls / lpc - 1.0).abs() <= 0.02,
        format!("Butterworth capture: log-spectral {ls:.4}, Levinson(64) {lpc:.4} LSB²"),
    );
    Ok(c)
}

/// One equalization stage of the reference detector.
pub struct Stage {
    pub label: &'static str,
    pub filter: Option<FirFilter>,
    pub temporal_factor: f64,
    pub report: EntropyReport,
    /// Clearance from un-requantized equalized streams and the matching
    /// unequalized profile over the same span.
    pub clearance_pair: Option<(ClearanceProfile, ClearanceProfile)>,
    pub max_autocorr: f64,
    pub variance_ratio_fresh: Option<f64>,
    pub variance_gain_design: Option<f64>,
}

/// No equalizer, a 9-tap design up to 0.8·f_N and a 201-tap full-band
/// design, each fitted on one capture and applied to an independent one.
pub struct EqualizationStudy {
    pub config: PipelineConfig,
    pub stages: Vec<Stage>,
}

const AUTOCORR_LAGS: usize = 64;

fn max_abs_autocorr(x: &[f64]) -> Result<f64> {
    let r = autocorrelation(x, AUTOCORR_LAGS)?;
    Ok(r[1..].iter().fold(0.0, |a, v| a.max(v.abs())))
}

impl EqualizationStudy {
    pub fn run(cfg: &PipelineConfig) -> Result<Self> {
        let det = &cfg.detector;
        let adc = cfg.adc.model()?;
        let rate = det.sample_rate_hz;
        let fnyq = rate / 2.0;
        let geometry = cfg.adc_geometry()?;

        let design = simulate_capture(det, &adc, CaptureKind::Homodyne, cfg.captures.homodyne, cfg.seeds.homodyne + 100)?;
        let design_psd = welch_psd(&design.to_f64(), rate, &cfg.welch)?;
        let response = equalizer::estimate_detector_response(&design_psd)?;
        drop(design);

        let hom = simulate_capture(det, &adc, CaptureKind::Homodyne, cfg.captures.homodyne, cfg.seeds.homodyne)?;
        let dark = simulate_capture(det, &adc, CaptureKind::Dark, cfg.captures.dark, cfg.seeds.dark)?;
        let hom_f = hom.to_f64();
        let dark_f = dark.to_f64();

        let mut stages = Vec::new();
        let m0 = measure_entropy(&hom_f, &dark_f, rate, &cfg.welch, geometry, &cfg.entropy)?;
        stages.push(Stage {
            label: "no equalizer",
            filter: None,
            temporal_factor: m0.photon.temporal_factor,
            report: m0.report,
            clearance_pair: None,
            max_autocorr: max_abs_autocorr(&hom_f)?,
            variance_ratio_fresh: None,
            variance_gain_design: None,
        });

        for (label, taps, band) in [
            ("9-tap to 0.8 f_N", 9usize, (0.0, 0.8 * fnyq)),
            ("201-tap full band", 201, (0.0, fnyq)),
        ] {
            let filter = equalizer::design_zf_fir(&response, taps, band)?;
            let filter = equalizer::normalize_alpha(filter, &design_psd)?;
            let gain = equalizer::variance_gain(&filter, &design_psd)?;

            let requant = pipeline::equalize_pair(&hom, &dark, &filter, true)?;
            let m = measure_entropy(&requant.hom, &requant.dark, rate, &cfg.welch, geometry, &cfg.entropy)?;
            drop(requant);

            let real = pipeline::equalize_pair(&hom, &dark, &filter, false)?;
            let hom_t = pipeline::trimmed(&hom_f, &filter);
            let dark_t = pipeline::trimmed(&dark_f, &filter);
            let floor = cfg.entropy.clearance_floor;
            let before = clearance_profile(
                &welch_psd(&hom_t, rate, &cfg.welch)?,
                &welch_psd(&dark_t, rate, &cfg.welch)?,
                floor,
            )?;
            let after = clearance_profile(
                &welch_psd(&real.hom, rate, &cfg.welch)?,
                &welch_psd(&real.dark, rate, &cfg.welch)?,
                floor,
            )?;
            let var = |x: &[f64]| {
                let n = x.len() as f64;
                let mu = x.iter().sum::<f64>() / n;
                x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n
            };
            let ratio = var(&real.hom) / var(&hom_t);
            let ac = max_abs_autocorr(&real.hom)?;
            stages.push(Stage {
                label,
                filter: Some(filter),
                temporal_factor: m.photon.temporal_factor,
                report: m.report,
                clearance_pair: Some((before, after)),
                max_autocorr: ac,
                variance_ratio_fresh: Some(ratio),
                variance_gain_design: Some(gain),
            });
        }
        Ok(EqualizationStudy {
            config: cfg.clone(),
            stages,
        })
    }
}

fn equalization_ordering(st: &EqualizationStudy) -> Result<Check> {
    let mut c = Check::new();
    let tf: Vec<f64> = st.stages.iter().map(|s| s.temporal_factor).collect();
    let h: Vec<f64> = st.stages.iter().map(|s| s.report.h_min_bits).collect();
    c.require(
        tf[0] > tf[1] && tf[1] > tf[2] && tf[2] >= 1.0 - 1e-9 && tf[2] <= 1.05,
        format!("temporal factor {:.3} > {:.4} > {:.5} (full band ≤ 1.05)", tf[0], tf[1], tf[2]),
    );
    c.require(
        h[0] < h[1] && h[1] < h[2],
        format!("H_min {:.3} < {:.3} < {:.3} bits", h[0], h[1], h[2]),
    );
    let adc = st.config.adc_geometry()?;
    let ideal = hmin_iid(&EntropyInputs {
        n_eff: 0.0,
        g: optimal_gain(0.0, &adc)?,
        adc,
    })?
    .h_min_bits;
    c.require(
        h.iter().all(|&v| v <= ideal),
        format!("all stages ≤ ideal-detector {ideal:.3} bits"),
    );
    let (a0, a2) = (st.stages[0].max_autocorr, st.stages[2].max_autocorr);
    c.require(
        a2 <= 0.1 * a0,
        format!("max |ρ(k≥1)| {a0:.3} → {a2:.2e}"),
    );
    c.info(format!(
        "rates {:.2} / {:.2} / {:.2} Gbps",
        st.stages[0].report.rate_bps / 1e9,
        st.stages[1].report.rate_bps / 1e9,
        st.stages[2].report.rate_bps / 1e9
    ));
    Ok(c)
}

fn clearance_invariance(st: &EqualizationStudy) -> Result<Check> {
    let mut c = Check::new();
    for s in &st.stages[1..] {
        let (before, after) = s.clearance_pair.as_ref().expect("equalized stage");
        let (db0, db1) = (before.clearance_db(), after.clearance_db());
        let mut worst = 0.0f64;
        let mut compared = 0usize;
        for i in 0..db0.len() {
            if before.floor_applied[i] || after.floor_applied[i] {
                continue;
            }
            compared += 1;
            worst = worst.max((db0[i] - db1[i]).abs());
        }
        c.require(
            worst <= 0.5 && compared > 0,
            format!("{}: max |ΔC| = {worst:.3} dB over {compared} unfloored bins", s.label),
        );
    }
    Ok(c)
}

fn adc_closed_loop() -> Result<Check> {
    const RATE: f64 = 1e9;
    // Sized so a code narrowed by 7.4% still collects 10⁵ hits at the centre.
    const LEN: usize = 48_000_000;
    const MIN_HITS: u64 = 100_000;
    let mut c = Check::new();
    let bits = 8;
    let mut rng = ChaCha20Rng::seed_from_u64(74);
    let mut dnl: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let peak = dnl.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    dnl.iter_mut().for_each(|v| *v *= 0.074 / peak);

    let run = |adc: &AdcModel, seed: u64| -> Result<adccal::DnlProfile> {
        let f = coherent_frequency(RATE, LEN as u64, RATE * 10_000.0 / LEN as f64)?;
        let sine = SineSpec {
            amplitude: 1.02 * adc.range(),
            freq_hz: f.freq_hz,
            phase_rad: 0.3,
            offset: 0.0,
        };
        let rec = simulate_sine_capture(adc, &sine, RATE, LEN, 0.5, seed)?;
        let opts = CalibrationOptions {
            min_hits: MIN_HITS,
            ..Default::default()
        };
        Ok(adccal::calibrate(&rec, &Default::default(), &opts)?.1)
    };

    let adc = AdcModel::from_dnl(bits, &dnl)?;
    let truth = adc.dnl();
    let p = run(&adc, 5)?;
    let worst = (0..truth.len())
        .filter(|&i| p.valid[i])
        .map(|i| (p.dnl[i] - truth[i]).abs())
        .fold(0.0f64, f64::max);
    let under = p.undersampled_codes().len();
    c.require(
        worst <= 0.02 && under == 0,
        format!(
            "injected max {:.3} LSB recovered within {worst:.4} LSB, {} valid codes, min hits {}",
            adc.max_dnl(),
            p.valid.iter().filter(|&&v| v).count(),
            p.min_hits
        ),
    );
    let null = run(&AdcModel::ideal(bits), 6)?;
    c.require(
        null.max_abs_dnl() < 0.01 && null.undersampled_codes().is_empty(),
        format!("null ADC max |DNL| = {:.4} LSB", null.max_abs_dnl()),
    );
    c.info(format!("{MIN_HITS} hits/code, unscaled thresholds"));
    Ok(c)
}

fn random_bits(rng: &mut ChaCha20Rng, len: usize) -> Result<Bits> {
    Bits::from_words((0..len.div_ceil(64)).map(|_| rng.gen()).collect(), len)
}

fn extractor_correctness() -> Result<Check> {
    let mut c = Check::new();
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    // (n, m, seeds, inputs per seed): 10⁴ (seed, input) pairs in total.
    let plan = [(64, 40, 9000, 1), (256, 128, 900, 1), (8192, 5120, 10, 10)];
    let mut cases = 0;
    let mut mismatches = 0;
    for &(n, m, seeds, inputs) in &plan {
        for _ in 0..seeds {
            let seed = extract::build_seed(&random_bits(&mut rng, n + m - 1)?, n, m)?;
            let rows = extract::dense_rows(&seed);
            for _ in 0..inputs {
                let x = random_bits(&mut rng, n)?;
                let want = extract::dense_mul(&rows, &x)?;
                if extract::extract_block(&x, &seed)? != want || extract::extract_block_portable(&x, &seed)? != want {
                    mismatches += 1;
                }
                cases += 1;
            }
        }
    }
    c.require(mismatches == 0, format!("{mismatches} mismatches against the dense oracle in {cases} cases"));

    let mut lin_fail = 0;
    for &(n, m, reps) in &[(64usize, 40usize, 1000), (8192, 5120, 10)] {
        for _ in 0..reps {
            let seed = extract::build_seed(&random_bits(&mut rng, n + m - 1)?, n, m)?;
            let x = random_bits(&mut rng, n)?;
            let y = random_bits(&mut rng, n)?;
            let lhs = extract::extract_block(&x.xor(&y), &seed)?;
            let rhs = extract::extract_block(&x, &seed)?.xor(&extract::extract_block(&y, &seed)?);
            lin_fail += (lhs != rhs) as usize;
        }
    }
    c.require(lin_fail == 0, format!("linearity failures: {lin_fail}"));

    const TRIALS: u64 = 1_000_000;
    let (n, m) = (64, 8);
    let x = random_bits(&mut rng, n)?;
    let mut y = random_bits(&mut rng, n)?;
    if y == x {
        y.set(0, !y.get(0));
    }
    let mut collisions = 0u64;
    for _ in 0..TRIALS {
        let seed = extract::build_seed(&random_bits(&mut rng, n + m - 1)?, n, m)?;
        collisions += (extract::extract_block(&x, &seed)? == extract::extract_block(&y, &seed)?) as u64;
    }
    let binom = Binomial::new(1.0 / 256.0, TRIALS).expect("valid binomial");
    let (lo, hi) = (binom.inverse_cdf(0.005), binom.inverse_cdf(0.995));
    c.require(
        (lo..=hi).contains(&collisions),
        format!("collisions {collisions}/{TRIALS} at m=8 (99% interval {lo}..={hi})"),
    );

    // Throughput at the production size, informational.
    let (n, m) = (8192, 5120);
    let seed = extract::build_seed(&random_bits(&mut rng, n + m - 1)?, n, m)?;
    let input = random_bits(&mut rng, 1 << 27)?;
    let t = Instant::now();
    let mut sink = std::io::sink();
    let sum = extract::extract_packed(&input, &seed, &mut sink)?;
    let gbps = sum.input_bits_used as f64 / t.elapsed().as_secs_f64() / 1e9;
    c.info(format!(
        "throughput {gbps:.2} Gbps of input on {} thread(s)",
        rayon::current_num_threads()
    ));
    Ok(c)
}

/// Bits extracted for the output-quality criterion.
pub const QUALITY_BITS: u64 = 100_000_000;

fn output_quality(st: &EqualizationStudy) -> Result<Check> {
    let mut c = Check::new();
    let cfg = &st.config;
    let stage = st.stages.last().expect("stages");
    let filter = stage.filter.as_ref().expect("equalized stage");
    let report = &stage.report;
    let (n, m) = (report.input_block_bits, report.output_block_bits);
    if m == 0 {
        return Err(Error::Domain("full-band stage leaves no extractable bits".into()));
    }
    let blocks = (QUALITY_BITS as usize).div_ceil(m);
    let samples = blocks * n / cfg.adc.bits as usize + 2 * filter.edge();
    let adc = cfg.adc.model()?;
    let rec = simulate_capture(&cfg.detector, &adc, CaptureKind::Homodyne, samples, cfg.seeds.homodyne + 200)?;
    let eq = equalizer::apply_fir_record(&rec, filter)?;
    drop(rec);
    let codes = equalizer::requantize(&eq, cfg.adc.bits, CaptureKind::Homodyne, cfg.seeds.homodyne + 200)?;
    drop(eq);
    // Stands in for an externally supplied seed file.
    let mut seed_rng = ChaCha20Rng::seed_from_u64(0x5eed);
    let seed = extract::build_seed(&random_bits(&mut seed_rng, n + m - 1)?, n, m)?;

    let path = std::env::temp_dir().join(format!("qrng-acceptance-{}.bin", std::process::id()));
    let summary = {
        let f = std::fs::File::create(&path)?;
        let mut w = std::io::BufWriter::new(f);
        let s = extract::extract_stream(&codes, report, &seed, &mut w)?;
        std::io::Write::flush(&mut w)?;
        s
    };
    drop(codes);
    let bytes = std::fs::read(&path)?;
    let _ = std::fs::remove_file(&path);
    c.require(
        summary.output_bits >= QUALITY_BITS && bytes.len() as u64 * 8 == summary.output_bits.div_ceil(8) * 8,
        format!(
            "{} bits from {} blocks at H_min {:.3} (m = {m}), file {} bytes",
            summary.output_bits, summary.blocks, report.h_min_bits, bytes.len()
        ),
    );
    let bits = Bits::from_bytes_msb(&bytes);
    let r = stattest::run_all(&bits, stattest::DEFAULT_MAX_LAG, stattest::DEFAULT_ALPHA)?;
    c.require(r.monobit_p > 1e-3, format!("monobit p = {:.3}", r.monobit_p));
    c.require(r.chi2_bytes_p > 1e-3, format!("byte χ² p = {:.3}", r.chi2_bytes_p));
    c.require(
        r.autocorr.p_value > 1e-3,
        format!("autocorr max |ρ| = {:.2e} (p = {:.3})", r.autocorr.max_abs_rho, r.autocorr.p_value),
    );
    c.require(
        r.bias.abs() < 4.0 / (bits.len() as f64).sqrt(),
        format!("bias {:.2e}", r.bias),
    );
    Ok(c)
}

fn curve_properties() -> Result<Check> {
    let mut c = Check::new();
    let t = default_temporal_curve()?;
    let mut monotone = true;
    let mut worst_gap = 0.0f64;
    let mut ordered = true;
    for bits in DEFAULT_BITS {
        let a = t.column(&format!("N{bits}_dx1")).expect("column");
        let b = t.column(&format!("N{bits}_dx2")).expect("column");
        for col in [a, b] {
            monotone &= col.windows(2).all(|w| w[1] <= w[0] + 1e-12);
        }
        ordered &= a.iter().zip(b).all(|(x, y)| y <= x);
        if bits >= 8 {
            for (x, y) in a.iter().zip(b) {
                worst_gap = worst_gap.max((x - y - 1.0).abs());
            }
        }
    }
    c.require(monotone, "non-increasing in temporal factor".into());
    c.require(
        ordered && worst_gap < 0.05,
        format!("Δx=2 trace 1 bit below Δx=1 within {worst_gap:.4} (N ≥ 8)"),
    );

    let t = default_clearance_curve()?;
    let mut below = true;
    let mut sub_zero = true;
    for bits in DEFAULT_BITS {
        let flat = t.column(&format!("N{bits}_flat")).expect("column");
        let bw = t.column(&format!("N{bits}_butterworth2")).expect("column");
        below &= flat.iter().zip(bw).all(|(f, b)| b <= f);
        sub_zero &= t.x.iter().zip(flat).any(|(&db, &h)| db < 0.0 && h > 0.0);
    }
    c.require(below, "Butterworth clearance trace ≤ flat trace".into());
    let at = t.x.iter().position(|&d| d == -3.0).expect("grid has -3 dB");
    c.require(
        sub_zero,
        format!(
            "positive H_min below 0 dB (N=8 flat at -3 dB: {:.3} bits)",
            t.column("N8_flat").expect("column")[at]
        ),
    );
    Ok(c)
}

fn variance_preservation(st: &EqualizationStudy) -> Result<Check> {
    let mut c = Check::new();
    for s in &st.stages[1..] {
        let g = s.variance_gain_design.expect("equalized");
        let r = s.variance_ratio_fresh.expect("equalized");
        c.require(
            (g - 1.0).abs() <= 1e-6 && (r - 1.0).abs() <= 0.01,
            format!("{}: design {:.2e} off, independent capture ratio {r:.5}", s.label, (g - 1.0).abs()),
        );
    }
    Ok(c)
}
