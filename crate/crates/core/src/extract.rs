//! Min-entropy estimation and Toeplitz-hashing extraction.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitSequence;
use crate::gf2;

pub const DEFAULT_N_BLOCK: usize = 1_000_000;
/// 2⁻⁵⁰
pub const DEFAULT_EPSILON: f64 = 8.881_784_197_001_252e-16;
/// Fewest bits accepted by [`min_entropy`].
pub const MIN_ENTROPY_BITS: usize = 10_000;
/// Block length for the per-block worst-case entropy.
pub const ENTROPY_AUDIT_BLOCK: usize = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum ExtractError {
    #[error("invalid extractor parameters: {0}")]
    Params(String),
    #[error("block too small: n*h_min = {available:.3} must exceed 2*log2(1/epsilon) = {needed:.3}")]
    BlockTooSmall { available: f64, needed: f64 },
    #[error("seed has {got} bits, need {need}")]
    Seed { got: usize, need: usize },
    #[error("insufficient input: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, ExtractError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub h_min_per_bit: f64,
    pub p_max: f64,
    pub n_bits: u64,
    /// Lowest per-block estimate over consecutive audit blocks.
    pub per_block_min: f64,
    /// Set when every bit has the same value.
    pub constant_input: bool,
}

fn h_of(ones: u64, n: u64) -> (f64, f64) {
    let p1 = ones as f64 / n as f64;
    let p_max = p1.max(1.0 - p1);
    (-p_max.log2(), p_max)
}

pub fn min_entropy(bits: &BitSequence) -> Result<EntropyReport> {
    let n = bits.len();
    if n < MIN_ENTROPY_BITS {
        return Err(ExtractError::Input(format!(
            "min-entropy needs at least {MIN_ENTROPY_BITS} bits, got {n}"
        )));
    }
    let ones = bits.count_ones();
    let (h, p_max) = h_of(ones, n as u64);
    let per_block_min = if n <= ENTROPY_AUDIT_BLOCK {
        h
    } else {
        (0..n / ENTROPY_AUDIT_BLOCK)
            .map(|b| {
                let blk = bits.slice(b * ENTROPY_AUDIT_BLOCK, ENTROPY_AUDIT_BLOCK);
                h_of(blk.count_ones(), ENTROPY_AUDIT_BLOCK as u64).0
            })
            .fold(f64::INFINITY, f64::min)
    };
    Ok(EntropyReport {
        h_min_per_bit: h.max(0.0),
        p_max,
        n_bits: n as u64,
        per_block_min: per_block_min.max(0.0),
        constant_input: ones == 0 || ones == n as u64,
    })
}

/// Leftover-hash output length `floor(n·h − 2·log2(1/ε))`.
pub fn output_length(n: usize, h_min: f64, epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(ExtractError::Params(format!("epsilon {epsilon} outside (0, 1]")));
    }
    if !(0.0..=1.0).contains(&h_min) {
        return Err(ExtractError::Params(format!("h_min {h_min} outside [0, 1]")));
    }
    let available = n as f64 * h_min;
    let needed = -2.0 * epsilon.log2();
    if available <= needed {
        return Err(ExtractError::BlockTooSmall { available, needed });
    }
    Ok(((available - needed).floor() as usize).min(n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractorParams {
    pub n: usize,
    pub m: usize,
    pub epsilon: f64,
    /// `n + m − 1` seed bits; `T[i][j] = seed[m − 1 − i + j]`.
    pub seed: BitSequence,
}

impl ExtractorParams {
    pub fn new(n: usize, m: usize, epsilon: f64, seed: BitSequence) -> Result<Self> {
        if m == 0 || m > n {
            return Err(ExtractError::Params(format!("need 1 <= m <= n, got m={m}, n={n}")));
        }
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(ExtractError::Params(format!("epsilon {epsilon} outside (0, 1]")));
        }
        let need = n + m - 1;
        if seed.len() != need {
            return Err(ExtractError::Seed {
                got: seed.len(),
                need,
            });
        }
        Ok(Self { n, m, epsilon, seed })
    }

    /// Sizes `m` from `h_min` and takes the first `n + m − 1` bits of
    /// `seed_source`.
    pub fn for_entropy(n: usize, h_min: f64, epsilon: f64, seed_source: &BitSequence) -> Result<Self> {
        let m = output_length(n, h_min, epsilon)?;
        let need = n + m - 1;
        if seed_source.len() < need {
            return Err(ExtractError::Seed {
                got: seed_source.len(),
                need,
            });
        }
        Self::new(n, m, epsilon, seed_source.slice(0, need))
    }

    pub fn ratio(&self) -> f64 {
        self.m as f64 / self.n as f64
    }
}

/// A Toeplitz hash with its seed laid out for fast products.
#[derive(Clone, Debug)]
pub struct ToeplitzHasher {
    n: usize,
    m: usize,
    /// Square size in words.
    words: usize,
    /// Products against the generating polynomial.
    product: gf2::MiddleProduct,
}

impl ToeplitzHasher {
    pub fn new(params: &ExtractorParams) -> Self {
        let (n, m) = (params.n, params.m);
        let words = gf2::padded_words(n.max(m).div_ceil(64));
        let big_n = words * 64;
        // As a square middle product, y_i = Σ_j r'[N−1+i−j]·x_j with
        // r'[k] = seed[n+m−2 − (k − (N−n))].
        // Reversing the words gives the seed LSB-first, `pad` zero bits too high.
        let len = n + m - 1;
        let sw = params.seed.words();
        let pad = (sw.len() * 64 - len) as isize;
        let rev: Vec<u64> = sw.iter().rev().copied().collect();
        let mut r = vec![0u64; 2 * words];
        let shift = (big_n - n) as isize - pad;
        let (wq, bq) = (shift.div_euclid(64), shift.rem_euclid(64) as u32);
        for (i, &w) in rev.iter().enumerate() {
            let k = i as isize + wq;
            if (0..r.len() as isize).contains(&k) {
                r[k as usize] |= w << bq;
            }
            if bq > 0 && (0..r.len() as isize).contains(&(k + 1)) {
                r[(k + 1) as usize] |= w >> (64 - bq);
            }
        }
        Self {
            n,
            m,
            words,
            product: gf2::MiddleProduct::new(&r),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn hash(&self, block: &BitSequence) -> Result<BitSequence> {
        if block.len() != self.n {
            return Err(ExtractError::Params(format!(
                "block has {} bits, extractor expects {}",
                block.len(),
                self.n
            )));
        }
        let mut x = vec![0u64; self.words];
        for (dst, &w) in x.iter_mut().zip(block.words()) {
            *dst = w.reverse_bits();
        }
        let mut y = vec![0u64; self.words];
        self.product.apply(&x, &mut y);
        y.truncate(self.m.div_ceil(64));
        for w in &mut y {
            *w = w.reverse_bits();
        }
        Ok(BitSequence::from_words(y, self.m))
    }
}

pub fn toeplitz_extract(block: &BitSequence, params: &ExtractorParams) -> Result<BitSequence> {
    ToeplitzHasher::new(params).hash(block)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub h_min: f64,
    pub n: usize,
    pub m: usize,
    pub ratio: f64,
    pub bits_in: u64,
    pub bits_out: u64,
    /// Acquisition time of the raw bits.
    pub seconds: f64,
    /// Extracted bits per second of acquisition, in Mbit/s.
    pub mbps: f64,
}

/// Extracts every full `n_block` of `raw` with one shared seed.
pub fn extract_stream(
    raw: &BitSequence,
    epsilon: f64,
    n_block: usize,
    seed_source: &BitSequence,
    seconds: f64,
) -> Result<(BitSequence, RatioReport)> {
    if n_block == 0 || raw.len() < n_block {
        return Err(ExtractError::Input(format!(
            "{} raw bits is less than one block of {n_block}",
            raw.len()
        )));
    }
    let h = min_entropy(raw)?.h_min_per_bit;
    let params = ExtractorParams::for_entropy(n_block, h, epsilon, seed_source)?;
    let out = extract_blocks(raw, &params)?;
    let bits_out = out.len() as u64;
    let report = RatioReport {
        h_min: h,
        n: params.n,
        m: params.m,
        ratio: params.ratio(),
        bits_in: raw.len() as u64,
        bits_out,
        seconds,
        mbps: if seconds > 0.0 {
            bits_out as f64 / seconds / 1e6
        } else {
            0.0
        },
    };
    Ok((out, report))
}

/// Hashes consecutive full blocks in parallel, output in block order.
pub fn extract_blocks(raw: &BitSequence, params: &ExtractorParams) -> Result<BitSequence> {
    let hasher = ToeplitzHasher::new(params);
    let blocks = raw.len() / params.n;
    let parts: Vec<BitSequence> = (0..blocks)
        .into_par_iter()
        .map(|b| hasher.hash(&raw.slice(b * params.n, params.n)))
        .collect::<Result<_>>()?;
    let mut out = BitSequence::with_capacity(blocks * params.m);
    for p in &parts {
        out.extend_from(p);
    }
    Ok(out)
}

/// Expands a 256-bit key into `len` seed bits with ChaCha20.
pub fn seed_from_key(key: [u8; 32], len: usize) -> BitSequence {
    let mut rng = ChaCha20Rng::from_seed(key);
    let mut words = vec![0u64; len.div_ceil(64)];
    for w in &mut words {
        *w = rng.next_u64();
    }
    BitSequence::from_words(words, len)
}
