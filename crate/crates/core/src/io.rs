//! File formats: QRS1 sample files, CSV tables and provenance digests.
//!
//! QRS1 layout (all little-endian, 24-byte header):
//!
//! | offset | size | field            |
//! |--------|------|------------------|
//! | 0      | 4    | magic `QRS1`     |
//! | 4      | 2    | format version    |
//! | 6      | 1    | bit depth        |
//! | 7      | 1    | capture kind     |
//! | 8      | 8    | sample rate, f64 |
//! | 16     | 8    | sample count     |
//!
//! Payload: signed samples, one byte each for bit depths up to 8, two bytes
//! otherwise.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sim::{CaptureKind, SampleRecord};

pub const MAGIC: &[u8; 4] = b"QRS1";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;

pub fn sample_width(bit_depth: u8) -> usize {
    if bit_depth <= 8 {
        1
    } else {
        2
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn encode_qrs(rec: &SampleRecord) -> Vec<u8> {
    let width = sample_width(rec.bit_depth);
    let mut out = Vec::with_capacity(HEADER_LEN + rec.len() * width);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(rec.bit_depth);
    out.push(rec.capture_kind.to_byte());
    out.extend_from_slice(&rec.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(rec.len() as u64).to_le_bytes());
    if width == 1 {
        out.extend(rec.samples().iter().map(|&s| s as i8 as u8));
    } else {
        for s in rec.samples() {
            out.extend_from_slice(&s.to_le_bytes());
        }
    }
    out
}

pub fn decode_qrs(bytes: &[u8]) -> Result<SampleRecord> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "file of {} bytes is shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("bad magic, expected QRS1".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let bit_depth = bytes[6];
    let kind = CaptureKind::from_byte(bytes[7])
        .ok_or_else(|| Error::Format(format!("unknown capture kind {}", bytes[7])))?;
    let rate = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let count = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    if !(1..=16).contains(&bit_depth) {
        return Err(Error::Format(format!("bit depth {bit_depth} outside 1..=16")));
    }
    let width = sample_width(bit_depth);
    let payload = &bytes[HEADER_LEN..];
    let expected = count.checked_mul(width as u64);
    if expected != Some(payload.len() as u64) {
        return Err(Error::Format(format!(
            "payload is {} bytes, header declares {count} samples of {width} byte(s)",
            payload.len()
        )));
    }
    let samples: Vec<i16> = if width == 1 {
        payload.iter().map(|&b| b as i8 as i16).collect()
    } else {
        payload
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]))
            .collect()
    };
    SampleRecord::new(samples, rate, bit_depth, kind, 0).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_qrs(path: &Path, rec: &SampleRecord) -> Result<()> {
    std::fs::write(path, encode_qrs(rec)).map_err(|e| io_err(path, e))
}

pub fn read_qrs(path: &Path) -> Result<SampleRecord> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    decode_qrs(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a real vector's little-endian bytes.
pub fn digest_f64s(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::with_capacity(1 << 20, f);
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = r.read(&mut buf).map_err(|e| io_err(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Who produced a file, from what, under which configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub config_hash: Option<String>,
    pub inputs: Vec<InputDigest>,
}

impl Provenance {
    pub fn new(command: &str, config_hash: Option<String>) -> Self {
        Provenance {
            tool: "qrng".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash,
            inputs: Vec::new(),
        }
    }

    pub fn with_input(mut self, path: &Path) -> Result<Self> {
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(self)
    }

    /// `# key: value` lines for CSV headers.
    pub fn comment_lines(&self) -> Vec<String> {
        let mut v = vec![
            format!("# tool: {} {}", self.tool, self.tool_version),
            format!("# command: {}", self.command),
        ];
        if let Some(h) = &self.config_hash {
            v.push(format!("# config_sha256: {h}"));
        }
        for i in &self.inputs {
            v.push(format!("# input: {} sha256={}", i.path, i.sha256));
        }
        v
    }
}

/// Binary outputs carry provenance in a `<file>.prov.json` sidecar.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".prov.json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub file_sha256: String,
    #[serde(flatten)]
    pub provenance: Provenance,
}

pub fn write_sidecar(path: &Path, prov: &Provenance) -> Result<PathBuf> {
    let side = sidecar_path(path);
    let sc = Sidecar {
        file_sha256: sha256_file(path)?,
        provenance: prov.clone(),
    };
    write_json(&side, &sc)?;
    Ok(side)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| io_err(path, e.into()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Comment-headed CSV with one `x` column and any number of value columns.
pub fn write_csv(
    out: &mut dyn Write,
    comments: &[String],
    header: &[&str],
    columns: &[&[f64]],
) -> std::io::Result<()> {
    for c in comments {
        writeln!(out, "{c}")?;
    }
    writeln!(out, "{}", header.join(","))?;
    let rows = columns.iter().map(|c| c.len()).min().unwrap_or(0);
    let mut line = String::new();
    for r in 0..rows {
        line.clear();
        for (k, c) in columns.iter().enumerate() {
            if k > 0 {
                line.push(',');
            }
            line.push_str(&format!("{:e}", c[r]));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn write_csv_file(
    path: &Path,
    comments: &[String],
    header: &[&str],
    columns: &[&[f64]],
) -> Result<()> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    write_csv(&mut w, comments, header, columns)
        .and_then(|_| w.flush())
        .map_err(|e| io_err(path, e))
}

/// Reads a raw byte file as bits, MSB-first within each byte.
pub fn bytes_to_bits_msb(bytes: &[u8]) -> Vec<u8> {
    bytes
        .iter()
        .flat_map(|&b| (0..8).rev().map(move |k| (b >> k) & 1))
        .collect()
}
