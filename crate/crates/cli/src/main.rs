//! `qrng` — command-line front end for the QRNG post-processing chain.
//!
//! Exit codes: 0 success, 1 statistical rejection (stattest, selftest),
//! 2 validation error, 3 numerical failure, 4 I/O or format error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use qrng_core::ErrorClass;

#[derive(Parser, Debug)]
#[command(name = "qrng", version, about = "Vacuum-noise QRNG post-processing and certification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimMode {
    Homodyne,
    Dark,
    Sine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    HminVsTc,
    HminVsClearance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WindowArg {
    Hann,
    Rectangular,
}

#[derive(clap::Args, Debug, Clone)]
pub struct WelchArgs {
    /// Welch segment length (power of two).
    #[arg(long, default_value_t = 4096)]
    pub segment: usize,
    /// Fractional segment overlap.
    #[arg(long, default_value_t = 0.5)]
    pub overlap: f64,
    #[arg(long, value_enum, default_value_t = WindowArg::Hann)]
    pub window: WindowArg,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the reference pipeline configuration as JSON.
    InitConfig {
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a homodyne, dark or sine capture into a QRS1 file.
    Simulate {
        /// Pipeline config (the built-in reference when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: SimMode,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Sine amplitude in LSB (default 1.02 × ADC half range).
        #[arg(long)]
        amplitude: Option<f64>,
        /// Sine frequency target in Hz, snapped to a coherent frequency
        /// (default: 1000 periods over the record).
        #[arg(long)]
        freq: Option<f64>,
        /// Gaussian noise added to the sine, LSB.
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
    },
    /// Welch PSD of a capture, as CSV.
    Psd {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        welch: WelchArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Clearance profile of a homodyne/dark pair, as CSV.
    Clearance {
        #[arg(long)]
        signal: PathBuf,
        #[arg(long)]
        dark: PathBuf,
        /// Linear clearance floor.
        #[arg(long, default_value_t = qrng_core::spectral::CLEARANCE_FLOOR)]
        floor: f64,
        #[command(flatten)]
        welch: WelchArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full min-entropy chain from a homodyne/dark pair.
    Entropy {
        #[arg(long)]
        signal: PathBuf,
        #[arg(long)]
        dark: PathBuf,
        /// Calibration JSON from `adc-cal`; its maximum DNL enters the bound.
        #[arg(long)]
        dnl: Option<PathBuf>,
        #[arg(long, default_value_t = qrng_core::entropy::DEFAULT_EPSILON_HASH)]
        eps: f64,
        #[arg(long, default_value_t = qrng_core::entropy::DEFAULT_INPUT_BLOCK_BITS)]
        block_bits: usize,
        #[arg(long, default_value_t = qrng_core::spectral::CLEARANCE_FLOOR)]
        floor: f64,
        #[command(flatten)]
        welch: WelchArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Theoretical min-entropy curves, as CSV.
    Curves {
        #[arg(long, value_enum)]
        figure: Figure,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sine-fit ADC calibration: INL/DNL per code.
    AdcCal {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = qrng_core::adccal::DEFAULT_MIN_HITS)]
        min_hits: u64,
        /// Start the frequency search here instead of from zero crossings.
        #[arg(long)]
        freq_hint: Option<f64>,
        /// Input noise in LSB; estimated from the residuals when omitted.
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV of code, INL, DNL, hits.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Optional CSV of (code, error bin centre, count) triples.
        #[arg(long)]
        heatmap: Option<PathBuf>,
    },
    /// Design a zero-forcing FIR equalizer from a homodyne capture.
    DesignEq {
        #[arg(long)]
        signal: PathBuf,
        #[arg(long, default_value_t = 201)]
        taps: usize,
        /// Lower band edge in Hz.
        #[arg(long, default_value_t = 0.0)]
        band_low: f64,
        /// Upper band edge in Hz (Nyquist when omitted).
        #[arg(long)]
        band_high: Option<f64>,
        #[command(flatten)]
        welch: WelchArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply an equalizer and re-quantize to the input's bit depth.
    Equalize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        filter: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Toeplitz extraction sized by an entropy report.
    Extract {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Seed file; at least n + m − 1 bits, read MSB-first.
        #[arg(long)]
        seed: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monobit, byte chi-square and bit autocorrelation on a raw bit file.
    Stattest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = qrng_core::stattest::DEFAULT_MAX_LAG)]
        max_lag: usize,
        #[arg(long, default_value_t = qrng_core::stattest::DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance suite.
    Selftest {
        /// Comma-separated criterion numbers (all when omitted).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Validation => 2,
                ErrorClass::Numerical => 3,
                ErrorClass::Io => 4,
            })
        }
    }
}
