//! Configuration and end-to-end orchestration: captures → spectra →
//! clearance → effective photon number → min-entropy → extractor sizing,
//! optionally through an equalizer stage.

use serde::{Deserialize, Serialize};

use crate::entropy::{
    self, effective_photon_number, AdcGeometry, EffectivePhotonNumber, EntropyInputs,
    EntropyProvenance, EntropyReport,
};
use crate::equalizer::{self, FirFilter};
use crate::error::{Error, Result};
use crate::io::sha256_hex;
use crate::sim::{AdcModel, DetectorModel, FilterSpec, RealRecord, SampleRecord, ShapeSpec};
use crate::spectral::{
    clearance_profile, welch_psd, ClearanceProfile, SpectralEstimate, WelchParams, CLEARANCE_FLOOR,
};

/// ADC description in configs: a bit depth plus an optional per-code DNL
/// profile (ideal when absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdcSpec {
    pub bits: u8,
    #[serde(default)]
    pub dnl: Option<Vec<f64>>,
}

impl AdcSpec {
    pub fn model(&self) -> Result<AdcModel> {
        match &self.dnl {
            None => {
                if !(1..=16).contains(&self.bits) {
                    return Err(Error::InvalidSpec(format!("adc.bits {} outside 1..=16", self.bits)));
                }
                Ok(AdcModel::ideal(self.bits))
            }
            Some(d) => AdcModel::from_dnl(self.bits, d),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EqualizerConfig {
    pub taps: usize,
    /// Design band in Hz; the full band `[0, f_N]` when absent.
    #[serde(default)]
    pub band_hz: Option<(f64, f64)>,
    /// Re-quantize the equalized stream with an ideal converter.
    #[serde(default = "yes")]
    pub requantize: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyConfig {
    pub epsilon_hash: f64,
    pub input_block_bits: usize,
    /// Maximum DNL used in the bound, LSB.
    #[serde(default)]
    pub dnl_max: f64,
    #[serde(default = "default_floor")]
    pub clearance_floor: f64,
}

fn default_floor() -> f64 {
    CLEARANCE_FLOOR
}

impl Default for EntropyConfig {
    fn default() -> Self {
        EntropyConfig {
            epsilon_hash: entropy::DEFAULT_EPSILON_HASH,
            input_block_bits: entropy::DEFAULT_INPUT_BLOCK_BITS,
            dnl_max: 0.0,
            clearance_floor: CLEARANCE_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub homodyne: u64,
    pub dark: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureLengths {
    pub homodyne: usize,
    pub dark: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub detector: DetectorModel,
    pub adc: AdcSpec,
    #[serde(default)]
    pub welch: WelchParams,
    #[serde(default)]
    pub equalizer: Option<EqualizerConfig>,
    #[serde(default)]
    pub entropy: EntropyConfig,
    pub seeds: Seeds,
    pub captures: CaptureLengths,
}

impl PipelineConfig {
    /// Butterworth(2, f_N/5) detector behind a sharp 8th-order anti-alias
    /// filter at 0.8·f_N, 20 dB flat clearance, 20 GS/s, 8-bit ADC.
    pub fn reference() -> Self {
        let rate = 20e9;
        let fnyq = rate / 2.0;
        PipelineConfig {
            detector: DetectorModel {
                vacuum_gain: 40.0,
                detector_response: FilterSpec::Butterworth {
                    order: 2,
                    cutoff_hz: 0.2 * fnyq,
                },
                clearance_dc_db: 20.0,
                clearance_shape: ShapeSpec::Flat,
                antialias_response: Some(FilterSpec::Butterworth {
                    order: 8,
                    cutoff_hz: 0.8 * fnyq,
                }),
                sample_rate_hz: rate,
            },
            adc: AdcSpec { bits: 8, dnl: None },
            welch: WelchParams::default(),
            equalizer: Some(EqualizerConfig {
                taps: 201,
                band_hz: None,
                requantize: true,
            }),
            entropy: EntropyConfig::default(),
            seeds: Seeds { homodyne: 1, dark: 2 },
            captures: CaptureLengths {
                homodyne: 1 << 22,
                dark: 1 << 22,
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text)
            .map_err(|e| Error::InvalidSpec(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.detector
            .validate()
            .map_err(|e| Error::InvalidSpec(format!("detector: {e}")))?;
        self.adc.model().map_err(|e| Error::InvalidSpec(format!("adc: {e}")))?;
        if let Some(eq) = &self.equalizer {
            if eq.taps % 2 == 0 || !(equalizer::MIN_TAPS..=equalizer::MAX_TAPS).contains(&eq.taps) {
                return Err(Error::InvalidSpec(format!(
                    "equalizer.taps: {} must be odd within {}..={}",
                    eq.taps,
                    equalizer::MIN_TAPS,
                    equalizer::MAX_TAPS
                )));
            }
        }
        let e = &self.entropy;
        if !(e.epsilon_hash > 0.0 && e.epsilon_hash < 1.0) {
            return Err(Error::InvalidSpec(format!(
                "entropy.epsilon_hash: {} outside (0, 1)",
                e.epsilon_hash
            )));
        }
        if e.input_block_bits == 0 || !e.input_block_bits.is_multiple_of(self.adc.bits as usize) {
            return Err(Error::InvalidSpec(format!(
                "entropy.input_block_bits: {} is not a multiple of adc.bits",
                e.input_block_bits
            )));
        }
        if self.captures.homodyne == 0 || self.captures.dark == 0 {
            return Err(Error::InvalidSpec("captures: lengths must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding of the resolved config.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn adc_geometry(&self) -> Result<AdcGeometry> {
        let adc = self.adc.model()?;
        let dnl = self.entropy.dnl_max.max(adc.max_dnl());
        Ok(AdcGeometry::ideal(self.adc.bits).with_dnl(dnl))
    }
}

/// Everything computed from one (homodyne, dark) pair.
#[derive(Debug, Clone)]
pub struct MeasuredEntropy {
    pub hom_psd: SpectralEstimate,
    pub dark_psd: SpectralEstimate,
    pub clearance: ClearanceProfile,
    pub photon: EffectivePhotonNumber,
    pub report: EntropyReport,
}

/// Full measured chain. The vacuum gain entering the bound is inferred from
/// the measurement itself: `g² = σ_M² / (1 + 2n)`.
pub fn measure_entropy(
    hom: &[f64],
    dark: &[f64],
    sample_rate_hz: f64,
    welch: &WelchParams,
    adc: AdcGeometry,
    cfg: &EntropyConfig,
) -> Result<MeasuredEntropy> {
    let hom_psd = welch_psd(hom, sample_rate_hz, welch)?;
    let dark_psd = welch_psd(dark, sample_rate_hz, welch)?;
    let clearance = clearance_profile(&hom_psd, &dark_psd, cfg.clearance_floor)?;
    let photon = effective_photon_number(&hom_psd, &clearance)?;
    let g = (photon.sigma_m2 / (1.0 + 2.0 * photon.n_eff)).sqrt();
    let inputs = EntropyInputs {
        n_eff: photon.n_eff,
        g,
        adc,
    };
    let prov = EntropyProvenance {
        sigma_m2: Some(photon.sigma_m2),
        sigma_mc2: Some(photon.sigma_mc2),
        temporal_factor: Some(photon.temporal_factor),
        rc_clearance: Some(photon.rc_clearance),
        n_eff_raw: Some(photon.raw),
        n_eff_clamped: photon.clamped,
        ..Default::default()
    };
    let report = entropy::entropy_report(
        &inputs,
        sample_rate_hz,
        cfg.input_block_bits,
        cfg.epsilon_hash,
        prov,
    )?;
    Ok(MeasuredEntropy {
        hom_psd,
        dark_psd,
        clearance,
        photon,
        report,
    })
}

/// A homodyne/dark pair after (optional) equalization.
#[derive(Debug, Clone)]
pub struct StageStreams {
    pub hom: Vec<f64>,
    pub dark: Vec<f64>,
    /// Re-quantized homodyne stream, when requested.
    pub hom_codes: Option<SampleRecord>,
}

/// Applies `filter` to both captures. With `requantize`, both streams are
/// passed through an ideal converter of the record's bit depth.
pub fn equalize_pair(
    hom: &SampleRecord,
    dark: &SampleRecord,
    filter: &FirFilter,
    requantize: bool,
) -> Result<StageStreams> {
    let h = equalizer::apply_fir_record(hom, filter)?;
    let d = equalizer::apply_fir_record(dark, filter)?;
    if !requantize {
        return Ok(StageStreams {
            hom: h.samples,
            dark: d.samples,
            hom_codes: None,
        });
    }
    let hq = equalizer::requantize(&h, hom.bit_depth, hom.capture_kind, hom.rng_seed)?;
    let dq = equalizer::requantize(&d, dark.bit_depth, dark.capture_kind, dark.rng_seed)?;
    Ok(StageStreams {
        hom: hq.to_f64(),
        dark: dq.to_f64(),
        hom_codes: Some(hq),
    })
}

/// Trims `(len − 1)/2` samples from each end so unequalized statistics are
/// taken over the same span as equalized ones.
pub fn trimmed(x: &[f64], filter: &FirFilter) -> Vec<f64> {
    let e = filter.edge();
    x[e..x.len() - e].to_vec()
}

pub fn real_record(x: Vec<f64>, rate: f64) -> RealRecord {
    RealRecord {
        samples: x,
        sample_rate_hz: rate,
    }
}
