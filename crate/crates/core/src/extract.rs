//! Toeplitz-hashing randomness extraction over GF(2).
//!
//! Seed layout: of the `n + m − 1` raw bits, the first `m` give the first
//! column of the `m × n` matrix top-down, the remaining `n − 1` give the
//! first row left-to-right from column 1. Every diagonal is constant, so
//! `T[i][j] = d(i − j)` with `d(k) = raw[k]` for `k ≥ 0` and
//! `d(k) = raw[m − 1 − k]` for `k < 0`.
//!
//! Sample packing: each sample contributes its low `bit_depth` bits
//! (two's complement), least significant first, samples in time order.
//! Output bits are written most significant first within each byte.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entropy::EntropyReport;
use crate::error::{Error, Result};
use crate::sim::SampleRecord;

/// Blocks hashed per parallel task.
const BLOCKS_PER_TASK: usize = 256;

/// A packed bit vector, bit `i` in word `i / 64` at position `i % 64`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bits {
    words: Vec<u64>,
    len: usize,
}

impl Bits {
    pub fn zeros(len: usize) -> Self {
        Bits {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    /// From a slice of 0/1 values.
    pub fn from_bits(bits: &[u8]) -> Self {
        let mut b = Bits::zeros(bits.len());
        for (i, &v) in bits.iter().enumerate() {
            if v & 1 == 1 {
                b.set(i, true);
            }
        }
        b
    }

    /// Bytes read most significant bit first.
    pub fn from_bytes_msb(bytes: &[u8]) -> Self {
        let mut b = Bits::zeros(bytes.len() * 8);
        for (i, &byte) in bytes.iter().enumerate() {
            for k in 0..8 {
                if (byte >> (7 - k)) & 1 == 1 {
                    b.set(8 * i + k, true);
                }
            }
        }
        b
    }

    pub fn from_words(words: Vec<u64>, len: usize) -> Result<Self> {
        if words.len() != len.div_ceil(64) {
            return Err(Error::SizeMismatch {
                expected: len.div_ceil(64),
                actual: words.len(),
            });
        }
        let mut b = Bits { words, len };
        b.clear_tail();
        Ok(b)
    }

    fn clear_tail(&mut self) {
        if !self.len.is_multiple_of(64) {
            let last = self.words.len() - 1;
            self.words[last] &= (1u64 << (self.len % 64)) - 1;
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, v: bool) {
        let m = 1u64 << (i % 64);
        if v {
            self.words[i / 64] |= m;
        } else {
            self.words[i / 64] &= !m;
        }
    }

    pub fn to_bits(&self) -> Vec<u8> {
        (0..self.len).map(|i| self.get(i) as u8).collect()
    }

    pub fn xor(&self, other: &Bits) -> Bits {
        assert_eq!(self.len, other.len);
        Bits {
            words: self.words.iter().zip(&other.words).map(|(a, b)| a ^ b).collect(),
            len: self.len,
        }
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToeplitzSeed {
    raw: Bits,
    /// Diagonal sequence `s[t] = d(t − (n − 1))`, `t ∈ [0, n + m − 1)`,
    /// packed with `pad` zero words in front and [`TAIL_PAD`] behind so the
    /// product kernels need no bounds checks.
    padded: Vec<u64>,
    pad: usize,
    n: usize,
    m: usize,
}

impl ToeplitzSeed {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed_bits(&self) -> &Bits {
        &self.raw
    }

    /// Matrix entry `T[i][j]` read straight off the documented layout.
    pub fn entry(&self, i: usize, j: usize) -> bool {
        if i >= j {
            self.raw.get(i - j)
        } else {
            self.raw.get(self.m - 1 + (j - i))
        }
    }
}

/// Takes the first `n + m − 1` bits of `raw` as the seed.
pub fn build_seed(raw: &Bits, n: usize, m: usize) -> Result<ToeplitzSeed> {
    if n == 0 || m == 0 || m > n {
        return Err(Error::InvalidInput(format!(
            "Toeplitz dimensions need 0 < m <= n, got n={n}, m={m}"
        )));
    }
    let need = n + m - 1;
    if raw.len() < need {
        return Err(Error::InvalidInput(format!(
            "seed has {} bits, needs n + m - 1 = {need}",
            raw.len()
        )));
    }
    let mut seed_raw = Bits::zeros(need);
    for i in 0..need {
        seed_raw.set(i, raw.get(i));
    }
    let mut diag = Bits::zeros(need);
    for t in 0..need {
        let bit = if t >= n - 1 {
            seed_raw.get(t - (n - 1))
        } else {
            seed_raw.get(m - 1 + (n - 1 - t))
        };
        diag.set(t, bit);
    }
    let pad = n.div_ceil(64) + 1;
    let mut padded = vec![0u64; pad];
    padded.extend_from_slice(&diag.words);
    padded.extend_from_slice(&[0; TAIL_PAD]);
    Ok(ToeplitzSeed {
        raw: seed_raw,
        padded,
        pad,
        n,
        m,
    })
}

const TAIL_PAD: usize = 6;

/// Carry-less 64×64 → 128 multiply in software.
#[inline]
fn clmul_soft(a: u64, b: u64) -> (u64, u64) {
    let (mut lo, mut hi) = (0u64, 0u64);
    let mut b = b;
    while b != 0 {
        let k = b.trailing_zeros();
        lo ^= a << k;
        if k > 0 {
            hi ^= a >> (64 - k);
        }
        b &= b - 1;
    }
    (lo, hi)
}

/// `acc[k − k_lo] = Σ_{a + b = k} s[a] ⊗ x[b]` as 128-bit (lo, hi) pairs.
fn products_soft(seed: &ToeplitzSeed, x: &[u64], k_lo: usize, acc: &mut [(u64, u64)]) {
    for (b, &xb) in x.iter().enumerate() {
        if xb == 0 {
            continue;
        }
        let base = seed.pad + k_lo - b;
        for (k, slot) in acc.iter_mut().enumerate() {
            let (lo, hi) = clmul_soft(seed.padded[base + k], xb);
            slot.0 ^= lo;
            slot.1 ^= hi;
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod fast {
    use std::arch::x86_64::*;

    /// Output positions in the outer loop so four 128-bit accumulators stay
    /// in registers; each load of `s` feeds two carry-less products.
    #[target_feature(enable = "pclmulqdq,sse2")]
    pub(super) unsafe fn products(seed: &super::ToeplitzSeed, x: &[u64], k_lo: usize, acc: &mut [(u64, u64)]) {
        let len = acc.len();
        let xs: Vec<__m128i> = x.iter().map(|&w| _mm_set_epi64x(0, w as i64)).collect();
        let s = seed.padded.as_ptr();
        let mut out = vec![_mm_setzero_si128(); len + 3];
        let mut k = 0;
        while k < len {
            let (mut a0, mut a1, mut a2, mut a3) =
                (_mm_setzero_si128(), _mm_setzero_si128(), _mm_setzero_si128(), _mm_setzero_si128());
            let base = seed.pad + k_lo + k;
            for (b, xv) in xs.iter().enumerate() {
                // SAFETY: base − b + 3 < padded.len() by the padding invariant.
                let p = s.add(base - b);
                let d0 = _mm_loadu_si128(p as *const __m128i);
                let d1 = _mm_loadu_si128(p.add(2) as *const __m128i);
                a0 = _mm_xor_si128(a0, _mm_clmulepi64_si128(d0, *xv, 0x00));
                a1 = _mm_xor_si128(a1, _mm_clmulepi64_si128(d0, *xv, 0x01));
                a2 = _mm_xor_si128(a2, _mm_clmulepi64_si128(d1, *xv, 0x00));
                a3 = _mm_xor_si128(a3, _mm_clmulepi64_si128(d1, *xv, 0x01));
            }
            out[k] = a0;
            out[k + 1] = a1;
            out[k + 2] = a2;
            out[k + 3] = a3;
            k += 4;
        }
        for (slot, r) in acc.iter_mut().zip(&out) {
            slot.0 = _mm_cvtsi128_si64(*r) as u64;
            slot.1 = _mm_cvtsi128_si64(_mm_unpackhi_epi64(*r, *r)) as u64;
        }
    }
}

fn has_clmul() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::is_x86_feature_detected!("pclmulqdq")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

/// Hashes one packed `n`-bit block into `m` bits (`m.div_ceil(64)` words).
fn extract_words(seed: &ToeplitzSeed, x: &[u64], use_fast: bool) -> Vec<u64> {
    let (n, m) = (seed.n, seed.m);
    // y_i is product bit n − 1 + i; product word p = lo(acc[p]) ^ hi(acc[p − 1]).
    let lo_w = (n - 1) / 64;
    let hi_w = (n + m - 2) / 64 + 1;
    let k_lo = lo_w.saturating_sub(1);
    let mut acc = vec![(0u64, 0u64); hi_w - k_lo + 1];
    #[cfg(target_arch = "x86_64")]
    if use_fast {
        // SAFETY: callers only pass use_fast after runtime feature detection.
        unsafe { fast::products(seed, x, k_lo, &mut acc) };
    } else {
        products_soft(seed, x, k_lo, &mut acc);
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        let _ = use_fast;
        products_soft(seed, x, k_lo, &mut acc);
    }
    let word = |p: usize| -> u64 {
        let lo = acc[p - k_lo].0;
        if p > k_lo {
            lo ^ acc[p - 1 - k_lo].1
        } else {
            lo
        }
    };
    let sh = (n - 1) % 64;
    let words = m.div_ceil(64);
    let mut y: Vec<u64> = (0..words)
        .map(|w| {
            let q = lo_w + w;
            if sh == 0 {
                word(q)
            } else {
                (word(q) >> sh) | (word(q + 1) << (64 - sh))
            }
        })
        .collect();
    if m % 64 != 0 {
        y[words - 1] &= (1u64 << (m % 64)) - 1;
    }
    y
}

/// `T·x` over GF(2).
pub fn extract_block(input: &Bits, seed: &ToeplitzSeed) -> Result<Bits> {
    if input.len() != seed.n {
        return Err(Error::SizeMismatch {
            expected: seed.n,
            actual: input.len(),
        });
    }
    let y = extract_words(seed, &input.words, has_clmul());
    Bits::from_words(y, seed.m)
}

/// Same as [`extract_block`] with the portable multiply forced.
pub fn extract_block_portable(input: &Bits, seed: &ToeplitzSeed) -> Result<Bits> {
    if input.len() != seed.n {
        return Err(Error::SizeMismatch {
            expected: seed.n,
            actual: input.len(),
        });
    }
    Bits::from_words(extract_words(seed, &input.words, false), seed.m)
}

/// Reference matrix–vector product, one entry at a time.
pub fn extract_block_naive(input: &Bits, seed: &ToeplitzSeed) -> Result<Bits> {
    if input.len() != seed.n {
        return Err(Error::SizeMismatch {
            expected: seed.n,
            actual: input.len(),
        });
    }
    let mut y = Bits::zeros(seed.m);
    for i in 0..seed.m {
        let mut acc = false;
        for j in 0..seed.n {
            acc ^= seed.entry(i, j) & input.get(j);
        }
        y.set(i, acc);
    }
    Ok(y)
}

/// The full matrix as packed rows, built entry by entry from the seed
/// layout. Used as an oracle at sizes where [`extract_block_naive`] is slow.
pub fn dense_rows(seed: &ToeplitzSeed) -> Vec<Bits> {
    (0..seed.m)
        .map(|i| {
            let mut row = Bits::zeros(seed.n);
            for j in 0..seed.n {
                if seed.entry(i, j) {
                    row.set(j, true);
                }
            }
            row
        })
        .collect()
}

/// Row-by-row GF(2) product with a matrix from [`dense_rows`].
pub fn dense_mul(rows: &[Bits], input: &Bits) -> Result<Bits> {
    let mut y = Bits::zeros(rows.len());
    for (i, row) in rows.iter().enumerate() {
        if row.len() != input.len() {
            return Err(Error::SizeMismatch {
                expected: row.len(),
                actual: input.len(),
            });
        }
        let ones: u32 = row
            .words()
            .iter()
            .zip(input.words())
            .map(|(a, b)| (a & b).count_ones())
            .sum();
        y.set(i, ones % 2 == 1);
    }
    Ok(y)
}

/// Packs samples LSB-first, `bit_depth` bits each.
pub fn pack_samples(samples: &[i16], bit_depth: u8) -> Bits {
    let bd = bit_depth as usize;
    let mut b = Bits::zeros(samples.len() * bd);
    let mask = if bd >= 16 { u16::MAX } else { (1u16 << bd) - 1 };
    for (s, &v) in samples.iter().enumerate() {
        let code = (v as u16) & mask;
        for k in 0..bd {
            if (code >> k) & 1 == 1 {
                b.set(s * bd + k, true);
            }
        }
    }
    b
}

/// Bit `start..start + len` of `src` as a new word vector.
fn bit_slice(src: &[u64], start: usize, len: usize) -> Vec<u64> {
    let words = len.div_ceil(64);
    let (q, sh) = (start / 64, start % 64);
    let mut out: Vec<u64> = (0..words)
        .map(|w| {
            let lo = src.get(q + w).copied().unwrap_or(0);
            if sh == 0 {
                lo
            } else {
                let hi = src.get(q + w + 1).copied().unwrap_or(0);
                (lo >> sh) | (hi << (64 - sh))
            }
        })
        .collect();
    if !len.is_multiple_of(64) {
        out[words - 1] &= (1u64 << (len % 64)) - 1;
    }
    out
}

/// Appends bits MSB-first into bytes.
struct MsbWriter {
    bytes: Vec<u8>,
    cur: u8,
    fill: u32,
}

impl MsbWriter {
    fn new() -> Self {
        MsbWriter {
            bytes: Vec::new(),
            cur: 0,
            fill: 0,
        }
    }

    fn push_words(&mut self, words: &[u64], len: usize) {
        if self.fill == 0 && len.is_multiple_of(8) {
            for i in 0..len / 8 {
                let byte = (words[i / 8] >> (8 * (i % 8))) as u8;
                self.bytes.push(byte.reverse_bits());
            }
            return;
        }
        for i in 0..len {
            let bit = ((words[i / 64] >> (i % 64)) & 1) as u8;
            self.cur |= bit << (7 - self.fill);
            self.fill += 1;
            if self.fill == 8 {
                self.bytes.push(self.cur);
                self.cur = 0;
                self.fill = 0;
            }
        }
    }

    /// Pending partial byte, zero padded, if any.
    fn finish(mut self) -> Vec<u8> {
        if self.fill > 0 {
            self.bytes.push(self.cur);
        }
        self.bytes
    }
}

/// Summary of an extraction run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionSummary {
    pub input_bits_used: u64,
    pub blocks: u64,
    pub output_bits: u64,
    pub discarded_bits: u64,
}

/// Hashes consecutive non-overlapping `n`-bit blocks of `packed` with one
/// seed. A trailing partial block is discarded. Output order follows block
/// order regardless of parallel chunking; a final partial byte (only when
/// `blocks · m` is not a multiple of 8) is zero padded.
pub fn extract_packed(packed: &Bits, seed: &ToeplitzSeed, sink: &mut dyn Write) -> Result<ExtractionSummary> {
    let (n, m) = (seed.n, seed.m);
    let blocks = packed.len() / n;
    let fast = has_clmul();
    let tasks: Vec<usize> = (0..blocks).step_by(BLOCKS_PER_TASK).collect();
    let mut writer = MsbWriter::new();
    // Bounded memory: hash a window of tasks in parallel, then write in order.
    for window in tasks.chunks(rayon::current_num_threads().max(1) * 4) {
        let outs: Vec<Vec<Vec<u64>>> = window
            .par_iter()
            .map(|&first| {
                let last = (first + BLOCKS_PER_TASK).min(blocks);
                (first..last)
                    .map(|b| extract_words(seed, &bit_slice(&packed.words, b * n, n), fast))
                    .collect()
            })
            .collect();
        for task in outs {
            for y in task {
                writer.push_words(&y, m);
            }
        }
        sink.write_all(&writer.bytes)?;
        writer.bytes.clear();
    }
    let tail = writer.finish();
    sink.write_all(&tail)?;
    let used = (blocks * n) as u64;
    Ok(ExtractionSummary {
        input_bits_used: used,
        blocks: blocks as u64,
        output_bits: (blocks * m) as u64,
        discarded_bits: packed.len() as u64 - used,
    })
}

/// Extracts from a (re-quantized) record sized by `report`; returns the
/// number of output bits written.
pub fn extract_stream(
    rec: &SampleRecord,
    report: &EntropyReport,
    seed: &ToeplitzSeed,
    sink: &mut dyn Write,
) -> Result<ExtractionSummary> {
    if report.input_block_bits != seed.n || report.output_block_bits != seed.m {
        return Err(Error::InvalidInput(format!(
            "report sizes (n={}, m={}) do not match seed (n={}, m={})",
            report.input_block_bits, report.output_block_bits, seed.n, seed.m
        )));
    }
    if report.bit_depth != rec.bit_depth as u32 {
        return Err(Error::InvalidInput(format!(
            "report bit depth {} does not match record bit depth {}",
            report.bit_depth, rec.bit_depth
        )));
    }
    extract_packed(&pack_samples(rec.samples(), rec.bit_depth), seed, sink)
}
