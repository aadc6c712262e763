//! Packed bit sequences.
//!
//! Bits are stored most-significant-bit first in 64-bit words, which makes
//! the on-disk byte order (MSB first within each byte) a plain big-endian
//! dump of the words. Padding bits past `len` are always zero.
//!
//! A bit file is the packed bytes alone; its logical length lives in a
//! sidecar `<file>.json` holding `{"bits": N}`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BitError {
    #[error("length error: {0}")]
    Length(String),
    #[error("invalid bit character {0:?}")]
    BadChar(char),
    #[error("sidecar manifest {path}: {message}")]
    Sidecar { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct BitSequence {
    words: Vec<u64>,
    len: usize,
}

impl std::fmt::Debug for BitSequence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.len <= 128 {
            write!(f, "BitSequence({:?})", self.to_ascii01())
        } else {
            write!(f, "BitSequence(len={}, ones={})", self.len, self.count_ones())
        }
    }
}

#[inline]
fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

impl BitSequence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bits: usize) -> Self {
        Self {
            words: Vec::with_capacity(words_for(bits)),
            len: 0,
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; words_for(len)],
            len,
        }
    }

    /// Builds from MSB-first words, clearing anything past `len`.
    pub fn from_words(mut words: Vec<u64>, len: usize) -> Self {
        assert!(words.len() * 64 >= len, "not enough words for {len} bits");
        words.truncate(words_for(len));
        let mut s = Self { words, len };
        s.clear_padding();
        s
    }

    /// Builds from a slice of 0/1 values; any nonzero byte counts as 1.
    pub fn from_bits(bits: &[u8]) -> Self {
        bits.iter().map(|&b| b != 0).collect()
    }

    pub fn from_ascii01(text: &str) -> Result<Self, BitError> {
        let mut out = BitSequence::with_capacity(text.len());
        for ch in text.chars() {
            match ch {
                '0' => out.push(false),
                '1' => out.push(true),
                c => return Err(BitError::BadChar(c)),
            }
        }
        Ok(out)
    }

    pub fn to_ascii01(&self) -> String {
        self.iter().map(|b| if b { '1' } else { '0' }).collect()
    }

    /// Unpacks MSB-first bytes holding `len` logical bits.
    pub fn from_packed_bytes(bytes: &[u8], len: usize) -> Result<Self, BitError> {
        if bytes.len() != len.div_ceil(8) {
            return Err(BitError::Length(format!(
                "{} bytes cannot hold exactly {len} bits",
                bytes.len()
            )));
        }
        let mut words = Vec::with_capacity(words_for(len));
        let mut chunks = bytes.chunks_exact(8);
        for c in &mut chunks {
            words.push(u64::from_be_bytes(c.try_into().unwrap()));
        }
        let rest = chunks.remainder();
        if !rest.is_empty() {
            let mut buf = [0u8; 8];
            buf[..rest.len()].copy_from_slice(rest);
            words.push(u64::from_be_bytes(buf));
        }
        Ok(Self::from_words(words, len))
    }

    /// MSB-first bytes; trailing pad bits are zero.
    pub fn to_packed_bytes(&self) -> Vec<u8> {
        let n = self.len.div_ceil(8);
        let mut out = Vec::with_capacity(self.words.len() * 8);
        for w in &self.words {
            out.extend_from_slice(&w.to_be_bytes());
        }
        out.truncate(n);
        out
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        (self.words[i / 64] >> (63 - i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, bit: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let mask = 1u64 << (63 - i % 64);
        if bit {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    #[inline]
    pub fn push(&mut self, bit: bool) {
        if self.len.is_multiple_of(64) {
            self.words.push(0);
        }
        if bit {
            let last = self.words.len() - 1;
            self.words[last] |= 1u64 << (63 - self.len % 64);
        }
        self.len += 1;
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| (self.words[i / 64] >> (63 - i % 64)) & 1 == 1)
    }

    /// Copies `len` bits starting at bit `start`.
    pub fn slice(&self, start: usize, len: usize) -> BitSequence {
        assert!(
            start.checked_add(len).is_some_and(|end| end <= self.len),
            "slice {start}+{len} out of range {}",
            self.len
        );
        let nw = words_for(len);
        let q = start / 64;
        let r = start % 64;
        let mut words = Vec::with_capacity(nw);
        if r == 0 {
            words.extend_from_slice(&self.words[q..q + nw]);
        } else {
            for k in 0..nw {
                let hi = self.words[q + k] << r;
                let lo = self.words.get(q + k + 1).map_or(0, |w| w >> (64 - r));
                words.push(hi | lo);
            }
        }
        Self::from_words(words, len)
    }

    /// Appends all bits of `other`.
    pub fn extend_from(&mut self, other: &BitSequence) {
        let r = self.len % 64;
        if r == 0 {
            self.words.extend_from_slice(&other.words);
        } else {
            self.words.reserve(other.words.len());
            for &w in &other.words {
                let last = self.words.len() - 1;
                self.words[last] |= w >> r;
                self.words.push(w << (64 - r));
            }
        }
        self.len += other.len;
        self.words.truncate(words_for(self.len));
        self.clear_padding();
    }

    pub fn truncate(&mut self, len: usize) {
        if len < self.len {
            self.len = len;
            self.words.truncate(words_for(len));
            self.clear_padding();
        }
    }

    /// Bitwise XOR of two equal-length sequences.
    pub fn xor(&self, other: &BitSequence) -> BitSequence {
        assert_eq!(self.len, other.len, "xor of unequal lengths");
        let words = self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| a ^ b)
            .collect();
        Self {
            words,
            len: self.len,
        }
    }

    fn clear_padding(&mut self) {
        let r = self.len % 64;
        if r != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= !0u64 << (64 - r);
            }
        }
    }
}

impl FromIterator<bool> for BitSequence {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        let iter = iter.into_iter();
        let mut out = BitSequence::with_capacity(iter.size_hint().0);
        for b in iter {
            out.push(b);
        }
        out
    }
}

/// Serialized form: logical length plus the packed bytes in hex.
#[derive(Serialize, Deserialize)]
struct BitsRepr {
    bits: u64,
    hex: String,
}

impl Serialize for BitSequence {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        BitsRepr {
            bits: self.len as u64,
            hex: hex::encode(self.to_packed_bytes()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BitSequence {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let r = BitsRepr::deserialize(d)?;
        let bytes = hex::decode(&r.hex).map_err(D::Error::custom)?;
        BitSequence::from_packed_bytes(&bytes, r.bits as usize).map_err(D::Error::custom)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    bits: u64,
}

/// Path of the JSON sidecar carrying a bit file's logical length.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes packed bits to `path` and `{"bits": N}` to its sidecar.
pub fn write_bit_file(path: &Path, bits: &BitSequence) -> io::Result<()> {
    fs::write(path, bits.to_packed_bytes())?;
    let sidecar = serde_json::to_string(&Sidecar {
        bits: bits.len() as u64,
    })
    .expect("sidecar serializes");
    fs::write(sidecar_path(path), sidecar)
}

pub fn read_bit_file(path: &Path) -> Result<BitSequence, BitError> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side)?;
    let meta: Sidecar = serde_json::from_str(&text).map_err(|e| BitError::Sidecar {
        path: side.clone(),
        message: e.to_string(),
    })?;
    let bytes = fs::read(path)?;
    BitSequence::from_packed_bytes(&bytes, meta.bits as usize)
}
