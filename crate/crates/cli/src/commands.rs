use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use serde::{Deserialize, Serialize};
use serde_json::json;

use qrng_core::adccal::{self, coherent_frequency, CalibrationOptions, DnlProfile, SineFit, SineFitOptions};
use qrng_core::entropy::{self, AdcGeometry, EntropyReport};
use qrng_core::equalizer::{self, FirFilter};
use qrng_core::extract::{self, Bits, ExtractionSummary};
use qrng_core::io::{self as qio, Provenance};
use qrng_core::pipeline::{measure_entropy, EntropyConfig, PipelineConfig};
use qrng_core::sim::{self, CaptureKind, SampleRecord, SineSpec};
use qrng_core::spectral::{self, welch_psd, WelchParams, Window};
use qrng_core::stattest::{self, StatReport};
use qrng_core::{acceptance, Error, Result};

use crate::{Command, Figure, SimMode, WelchArgs, WindowArg};

/// JSON written by `entropy`, read back by `extract`.
#[derive(Debug, Serialize, Deserialize)]
pub struct EntropyFile {
    pub report: EntropyReport,
    pub measurement: Measurement,
    pub run: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Measurement {
    pub welch: WelchParams,
    pub clearance_floor: f64,
    pub floored_bins: usize,
    pub total_bins: usize,
    pub dnl_source: Option<String>,
}

/// JSON written by `adc-cal`, read back by `entropy --dnl`.
#[derive(Debug, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub fit: SineFit,
    pub max_dnl: f64,
    pub max_abs_dnl: f64,
    pub undersampled_codes: Vec<i32>,
    pub profile: DnlProfile,
    pub run: Provenance,
}

/// JSON written by `design-eq`, read back by `equalize`.
#[derive(Debug, Serialize, Deserialize)]
pub struct FilterFile {
    pub filter: FirFilter,
    pub flatness_db: (f64, f64),
    pub variance_gain_design: f64,
    pub run: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StatFile {
    #[serde(flatten)]
    pub stats: StatReport,
    pub run: Provenance,
}

pub fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::InitConfig { out } => init_config(&out),
        Command::Simulate {
            config,
            mode,
            count,
            seed,
            out,
            amplitude,
            freq,
            noise,
        } => simulate(config.as_deref(), mode, count, seed, &out, amplitude, freq, noise),
        Command::Psd { input, welch, out } => psd(&input, &welch, &out),
        Command::Clearance {
            signal,
            dark,
            floor,
            welch,
            out,
        } => clearance(&signal, &dark, floor, &welch, &out),
        Command::Entropy {
            signal,
            dark,
            dnl,
            eps,
            block_bits,
            floor,
            welch,
            out,
        } => entropy_cmd(&signal, &dark, dnl.as_deref(), eps, block_bits, floor, &welch, &out),
        Command::Curves { figure, out } => curves(figure, &out),
        Command::AdcCal {
            input,
            min_hits,
            freq_hint,
            noise_sigma,
            out,
            csv,
            heatmap,
        } => adc_cal(&input, min_hits, freq_hint, noise_sigma, &out, csv.as_deref(), heatmap.as_deref()),
        Command::DesignEq {
            signal,
            taps,
            band_low,
            band_high,
            welch,
            out,
        } => design_eq(&signal, taps, band_low, band_high, &welch, &out),
        Command::Equalize { input, filter, out } => equalize(&input, &filter, &out),
        Command::Extract {
            input,
            report,
            seed,
            out,
        } => extract_cmd(&input, &report, &seed, &out),
        Command::Stattest {
            input,
            max_lag,
            alpha,
            out,
        } => stattest_cmd(&input, max_lag, alpha, out.as_deref()),
        Command::Selftest { only } => selftest(&only),
    }
}

fn welch_params(a: &WelchArgs) -> WelchParams {
    WelchParams {
        segment_len: a.segment,
        overlap: a.overlap,
        window: match a.window {
            WindowArg::Hann => Window::Hann,
            WindowArg::Rectangular => Window::Rectangular,
        },
    }
}

/// Hash of the resolved parameters of a command that takes no config file.
fn params_hash(v: &serde_json::Value) -> String {
    qio::sha256_hex(&serde_json::to_vec(v).expect("json value serializes"))
}

fn provenance(command: &str, params: &serde_json::Value, inputs: &[&Path]) -> Result<Provenance> {
    let mut p = Provenance::new(command, Some(params_hash(params)));
    for i in inputs {
        p = p.with_input(i)?;
    }
    Ok(p)
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        None => Ok(PipelineConfig::reference()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| path_err(p, e))?;
            PipelineConfig::from_json(&text).map_err(|e| match e {
                Error::InvalidSpec(m) => Error::InvalidSpec(format!("{}: {m}", p.display())),
                other => other,
            })
        }
    }
}

fn init_config(out: &Path) -> Result<ExitCode> {
    let cfg = PipelineConfig::reference();
    qio::write_json(out, &cfg)?;
    println!("wrote reference config to {} (sha256 {})", out.display(), cfg.hash());
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    config: Option<&Path>,
    mode: SimMode,
    count: usize,
    seed: u64,
    out: &Path,
    amplitude: Option<f64>,
    freq: Option<f64>,
    noise: f64,
) -> Result<ExitCode> {
    let cfg = load_config(config)?;
    let adc = cfg.adc.model()?;
    let rate = cfg.detector.sample_rate_hz;
    let (rec, sine) = match mode {
        SimMode::Homodyne => (sim::simulate_capture(&cfg.detector, &adc, CaptureKind::Homodyne, count, seed)?, None),
        SimMode::Dark => (sim::simulate_capture(&cfg.detector, &adc, CaptureKind::Dark, count, seed)?, None),
        SimMode::Sine => {
            let target = freq.unwrap_or(rate * 1000.0 / count.max(1) as f64);
            let f = coherent_frequency(rate, count as u64, target)?;
            let spec = SineSpec {
                amplitude: amplitude.unwrap_or(1.02 * adc.range()),
                freq_hz: f.freq_hz,
                phase_rad: 0.3,
                offset: 0.0,
            };
            (sim::simulate_sine_capture(&adc, &spec, rate, count, noise, seed)?, Some(spec))
        }
    };
    qio::write_qrs(out, &rec)?;
    let params = json!({
        "config": cfg,
        "mode": format!("{mode:?}"),
        "count": count,
        "seed": seed,
        "sine": sine,
        "noise": if sine.is_some() { Some(noise) } else { None },
    });
    let mut prov = Provenance::new("simulate", Some(params_hash(&params)));
    if let Some(p) = config {
        prov = prov.with_input(p)?;
    }
    qio::write_sidecar(out, &prov)?;
    println!(
        "{} samples, {}-bit, variance {:.6} LSB^2, clipped {:.6}",
        rec.len(),
        rec.bit_depth,
        rec.variance(),
        rec.clip_fraction()
    );
    if let Some(s) = sine {
        println!("sine amplitude {:.3} LSB at {:.6e} Hz", s.amplitude, s.freq_hz);
    }
    Ok(ExitCode::SUCCESS)
}

fn psd(input: &Path, welch: &WelchArgs, out: &Path) -> Result<ExitCode> {
    let rec = qio::read_qrs(input)?;
    let wp = welch_params(welch);
    let est = welch_psd(&rec.to_f64(), rec.sample_rate_hz, &wp)?;
    let prov = provenance("psd", &json!({ "welch": wp }), &[input])?;
    let mut comments = prov.comment_lines();
    comments.push(format!("# sample_rate_hz: {:e}", est.sample_rate_hz));
    comments.push(format!("# segment_len: {} overlap: {} window: {:?}", est.segment_len, est.overlap_fraction, est.window));
    comments.push(format!("# segments: {}", est.n_segments));
    comments.push(format!("# variance_lsb2: {:e}", est.variance()));
    comments.push("# units: LSB^2/Hz, one-sided".into());
    qio::write_csv_file(out, &comments, &["freq_hz", "psd"], &[&est.freq_hz, &est.psd])?;
    println!("{} bins, variance {:.6} LSB^2", est.psd.len(), est.variance());
    Ok(ExitCode::SUCCESS)
}

fn read_pair(signal: &Path, dark: &Path) -> Result<(SampleRecord, SampleRecord)> {
    let hom = qio::read_qrs(signal)?;
    let drk = qio::read_qrs(dark)?;
    if hom.sample_rate_hz != drk.sample_rate_hz || hom.bit_depth != drk.bit_depth {
        return Err(Error::InvalidInput(format!(
            "signal ({} Hz, {}-bit) and dark ({} Hz, {}-bit) captures differ",
            hom.sample_rate_hz, hom.bit_depth, drk.sample_rate_hz, drk.bit_depth
        )));
    }
    Ok((hom, drk))
}

fn clearance(signal: &Path, dark: &Path, floor: f64, welch: &WelchArgs, out: &Path) -> Result<ExitCode> {
    let (hom, drk) = read_pair(signal, dark)?;
    let wp = welch_params(welch);
    let h = welch_psd(&hom.to_f64(), hom.sample_rate_hz, &wp)?;
    let d = welch_psd(&drk.to_f64(), drk.sample_rate_hz, &wp)?;
    let c = spectral::clearance_profile(&h, &d, floor)?;
    let rc = c.rc_one_plus_inverse()?;
    let prov = provenance("clearance", &json!({ "welch": wp, "floor": floor }), &[signal, dark])?;
    let mut comments = prov.comment_lines();
    comments.push(format!("# rc_one_plus_inverse_clearance: {rc:e}"));
    comments.push(format!("# floored_bins: {} of {}", c.floored_bins(), c.freq_hz.len()));
    let db = c.clearance_db();
    let floored: Vec<f64> = c.floor_applied.iter().map(|&f| f as u8 as f64).collect();
    qio::write_csv_file(
        out,
        &comments,
        &["freq_hz", "clearance_linear", "clearance_db", "floored"],
        &[&c.freq_hz, &c.clearance_linear, &db, &floored],
    )?;
    println!("R_c(1+1/C) = {rc:.6}; {} bins floored", c.floored_bins());
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn entropy_cmd(
    signal: &Path,
    dark: &Path,
    dnl: Option<&Path>,
    eps: f64,
    block_bits: usize,
    floor: f64,
    welch: &WelchArgs,
    out: &Path,
) -> Result<ExitCode> {
    // Domain checks before the (expensive) spectral stage.
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("--eps {eps} outside (0, 1)")));
    }
    let (hom, drk) = read_pair(signal, dark)?;
    let mut inputs = vec![signal, dark];
    let mut dnl_max = 0.0;
    if let Some(p) = dnl {
        let cal: CalibrationFile = qio::read_json(p)?;
        if cal.profile.codes.len() != 1usize << hom.bit_depth {
            return Err(Error::InvalidInput(format!(
                "calibration covers {} codes, captures are {}-bit",
                cal.profile.codes.len(),
                hom.bit_depth
            )));
        }
        dnl_max = cal.max_dnl.max(0.0);
        inputs.push(p);
    }
    let wp = welch_params(welch);
    let cfg = EntropyConfig {
        epsilon_hash: eps,
        input_block_bits: block_bits,
        dnl_max,
        clearance_floor: floor,
    };
    let geom = AdcGeometry::ideal(hom.bit_depth).with_dnl(dnl_max);
    let m = measure_entropy(&hom.to_f64(), &drk.to_f64(), hom.sample_rate_hz, &wp, geom, &cfg)?;
    let prov = provenance("entropy", &json!({ "welch": wp, "entropy": cfg }), &inputs)?;
    let file = EntropyFile {
        measurement: Measurement {
            welch: wp,
            clearance_floor: floor,
            floored_bins: m.clearance.floored_bins(),
            total_bins: m.clearance.freq_hz.len(),
            dnl_source: dnl.map(|p| p.display().to_string()),
        },
        report: m.report,
        run: prov,
    };
    qio::write_json(out, &file)?;
    let r = &file.report;
    println!(
        "n_eff {:.6}  g {:.4}  H_min {:.4} bits/sample  m {} of n {}  rate {:.3} Gbps",
        r.inputs.n_eff,
        r.inputs.g,
        r.h_min_bits,
        r.output_block_bits,
        r.input_block_bits,
        r.rate_bps / 1e9
    );
    if file.measurement.floored_bins > 0 {
        eprintln!(
            "warning: clearance floored in {} of {} bins",
            file.measurement.floored_bins, file.measurement.total_bins
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn curves(figure: Figure, out: &Path) -> Result<ExitCode> {
    let (name, table) = match figure {
        Figure::HminVsTc => ("hmin-vs-tc", entropy::default_temporal_curve()?),
        Figure::HminVsClearance => ("hmin-vs-clearance", entropy::default_clearance_curve()?),
    };
    let prov = provenance("curves", &json!({ "figure": name }), &[])?;
    let mut header = vec![table.x_name.as_str()];
    header.extend(table.columns.iter().map(|c| c.name.as_str()));
    let mut cols: Vec<&[f64]> = vec![&table.x];
    cols.extend(table.columns.iter().map(|c| c.values.as_slice()));
    qio::write_csv_file(out, &prov.comment_lines(), &header, &cols)?;
    println!("{} rows, {} curves", table.x.len(), table.columns.len());
    Ok(ExitCode::SUCCESS)
}

fn adc_cal(
    input: &Path,
    min_hits: u64,
    freq_hint: Option<f64>,
    noise_sigma: Option<f64>,
    out: &Path,
    csv: Option<&Path>,
    heatmap: Option<&Path>,
) -> Result<ExitCode> {
    let rec = qio::read_qrs(input)?;
    let fit_opts = SineFitOptions {
        freq_hint_hz: freq_hint,
        ..Default::default()
    };
    let opts = CalibrationOptions {
        min_hits,
        noise_sigma_lsb: noise_sigma,
        ..Default::default()
    };
    let (fit, profile) = adccal::calibrate(&rec, &fit_opts, &opts)?;
    let prov = provenance("adc-cal", &json!({ "fit": fit_opts, "calibration": opts }), &[input])?;
    if let Some(p) = csv {
        let codes: Vec<f64> = profile.codes.iter().map(|&c| c as f64).collect();
        let hits: Vec<f64> = profile.hits_per_code.iter().map(|&h| h as f64).collect();
        let valid: Vec<f64> = profile.valid.iter().map(|&v| v as u8 as f64).collect();
        qio::write_csv_file(
            p,
            &prov.comment_lines(),
            &["code", "inl_lsb", "dnl_lsb", "hits", "valid"],
            &[&codes, &profile.inl, &profile.dnl, &hits, &valid],
        )?;
    }
    if let Some(p) = heatmap {
        let t = profile.heatmap.triples();
        let code: Vec<f64> = t.iter().map(|x| x.0 as f64).collect();
        let err: Vec<f64> = t.iter().map(|x| x.1).collect();
        let count: Vec<f64> = t.iter().map(|x| x.2 as f64).collect();
        qio::write_csv_file(p, &prov.comment_lines(), &["code", "error_lsb", "count"], &[&code, &err, &count])?;
    }
    let file = CalibrationFile {
        fit,
        max_dnl: profile.max_dnl,
        max_abs_dnl: profile.max_abs_dnl(),
        undersampled_codes: profile.undersampled_codes(),
        profile,
        run: prov,
    };
    qio::write_json(out, &file)?;
    println!(
        "sine A={:.3} LSB f={:.6e} Hz, rms residual {:.3} LSB; max DNL {:.4} LSB (|DNL| {:.4})",
        fit.amplitude, fit.freq_hz, fit.rms_residual, file.max_dnl, file.max_abs_dnl
    );
    if !file.undersampled_codes.is_empty() {
        eprintln!(
            "warning: {} codes below {} hits excluded: {:?}",
            file.undersampled_codes.len(),
            min_hits,
            file.undersampled_codes
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn design_eq(
    signal: &Path,
    taps: usize,
    band_low: f64,
    band_high: Option<f64>,
    welch: &WelchArgs,
    out: &Path,
) -> Result<ExitCode> {
    let rec = qio::read_qrs(signal)?;
    let wp = welch_params(welch);
    let psd = welch_psd(&rec.to_f64(), rec.sample_rate_hz, &wp)?;
    let resp = equalizer::estimate_detector_response(&psd)?;
    let band = (band_low, band_high.unwrap_or(rec.sample_rate_hz / 2.0));
    let filter = equalizer::design_zf_fir(&resp, taps, band)?;
    let flatness = equalizer::equalized_flatness_db(&filter, &resp, band);
    let gain = equalizer::variance_gain(&filter, &psd)?;
    let prov = provenance("design-eq", &json!({ "welch": wp, "taps": taps, "band_hz": band }), &[signal])?;
    qio::write_json(
        out,
        &FilterFile {
            filter,
            flatness_db: flatness,
            variance_gain_design: gain,
            run: prov,
        },
    )?;
    println!(
        "{taps} taps over [{:.4e}, {:.4e}] Hz: flatness +{:.3}/-{:.3} dB, variance gain {:.6}",
        band.0, band.1, flatness.0, flatness.1, gain
    );
    Ok(ExitCode::SUCCESS)
}

fn equalize(input: &Path, filter: &Path, out: &Path) -> Result<ExitCode> {
    let rec = qio::read_qrs(input)?;
    let ff: FilterFile = qio::read_json(filter)?;
    ff.filter.validate()?;
    if ff.filter.sample_rate_hz != rec.sample_rate_hz {
        return Err(Error::InvalidInput(format!(
            "filter designed for {} Hz, capture is {} Hz",
            ff.filter.sample_rate_hz, rec.sample_rate_hz
        )));
    }
    let eq = equalizer::apply_fir_record(&rec, &ff.filter)?;
    let q = equalizer::requantize(&eq, rec.bit_depth, rec.capture_kind, rec.rng_seed)?;
    qio::write_qrs(out, &q)?;
    let prov = provenance("equalize", &json!({ "filter_taps": ff.filter.len() }), &[input, filter])?;
    qio::write_sidecar(out, &prov)?;
    println!(
        "{} -> {} samples; variance {:.6} -> {:.6} LSB^2, clipped {:.6}",
        rec.len(),
        q.len(),
        rec.variance(),
        q.variance(),
        q.clip_fraction()
    );
    Ok(ExitCode::SUCCESS)
}

fn extract_cmd(input: &Path, report: &Path, seed_file: &Path, out: &Path) -> Result<ExitCode> {
    let rec = qio::read_qrs(input)?;
    let ef: EntropyFile = qio::read_json(report)?;
    let seed_bytes = std::fs::read(seed_file).map_err(|e| path_err(seed_file, e))?;
    let (n, m) = (ef.report.input_block_bits, ef.report.output_block_bits);
    if m == 0 {
        return Err(Error::InvalidInput(format!(
            "{}: report certifies no extractable bits",
            report.display()
        )));
    }
    let seed = extract::build_seed(&Bits::from_bytes_msb(&seed_bytes), n, m)?;
    let f = File::create(out).map_err(|e| path_err(out, e))?;
    let mut w = BufWriter::new(f);
    let summary: ExtractionSummary = extract::extract_stream(&rec, &ef.report, &seed, &mut w)?;
    w.flush().map_err(|e| path_err(out, e))?;
    drop(w);
    let prov = provenance("extract", &json!({ "n": n, "m": m }), &[input, report, seed_file])?;
    qio::write_sidecar(out, &prov)?;
    println!(
        "{} blocks of {n} bits -> {} bits ({} input bits discarded)",
        summary.blocks, summary.output_bits, summary.discarded_bits
    );
    Ok(ExitCode::SUCCESS)
}

fn path_err(p: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))
}

fn stattest_cmd(input: &Path, max_lag: usize, alpha: f64, out: Option<&Path>) -> Result<ExitCode> {
    let bytes = std::fs::read(input).map_err(|e| path_err(input, e))?;
    let bits = Bits::from_bytes_msb(&bytes);
    let r = stattest::run_all(&bits, max_lag, alpha)?;
    println!(
        "{} bits: monobit p={:.4} (bias {:+.2e}), byte chi2 p={:.4}, autocorr max|rho|={:.2e} at lag {} (p={:.4}) -> {}",
        r.bits,
        r.monobit_p,
        r.bias,
        r.chi2_bytes_p,
        r.autocorr.max_abs_rho,
        r.autocorr.worst_lag,
        r.autocorr.p_value,
        if r.passed { "PASS" } else { "FAIL" }
    );
    let passed = r.passed;
    if let Some(p) = out {
        let prov = provenance("stattest", &json!({ "max_lag": max_lag, "alpha": alpha }), &[input])?;
        qio::write_json(p, &StatFile { stats: r, run: prov })?;
    }
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn selftest(only: &[u8]) -> Result<ExitCode> {
    if let Some(bad) = only.iter().find(|&&id| !(1..=acceptance::CRITERIA).contains(&id)) {
        return Err(Error::InvalidInput(format!(
            "no criterion {bad}; valid ids are 1..={}",
            acceptance::CRITERIA
        )));
    }
    let results = if only.is_empty() {
        acceptance::run_all()
    } else {
        acceptance::run_selected(only)
    };
    let mut all = true;
    for r in &results {
        println!("{r}");
        all &= r.passed;
    }
    let passed = results.iter().filter(|r| r.passed).count();
    println!("{passed}/{} criteria passed", results.len());
    Ok(if all { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
