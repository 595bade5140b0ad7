//! Dense packing of bit strings into plaintext polynomials.
//!
//! Bits are cut into `t_bits`-wide chunks, the first bit of each chunk being
//! its most significant bit; the final chunk is zero-padded on the low side.
//! Chunk `j·n + i` becomes coefficient `i` of plaintext polynomial `j`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ring::{HeParams, PolyT};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PackingError {
    #[error("bit string is empty")]
    Empty,
    #[error("invalid character {ch:?} at position {pos} in bit string")]
    InvalidChar { ch: char, pos: usize },
    #[error("bit length {bit_len} needs {expected} polynomials, got {got}")]
    InconsistentLength {
        bit_len: usize,
        expected: usize,
        got: usize,
    },
    #[error("polynomial has dimension {got}, expected {expected}")]
    Dimension { got: usize, expected: usize },
}

/// A non-empty ordered sequence of bits.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitString {
    bits: Vec<bool>,
}

impl BitString {
    pub fn new(bits: Vec<bool>) -> Result<Self, PackingError> {
        if bits.is_empty() {
            return Err(PackingError::Empty);
        }
        Ok(Self { bits })
    }

    /// Parses `'0'`/`'1'` text; ASCII whitespace is ignored.
    pub fn from_ascii(text: &str) -> Result<Self, PackingError> {
        let mut bits = Vec::with_capacity(text.len());
        for (pos, ch) in text.chars().enumerate() {
            match ch {
                '0' => bits.push(false),
                '1' => bits.push(true),
                c if c.is_ascii_whitespace() => {}
                ch => return Err(PackingError::InvalidChar { ch, pos }),
            }
        }
        Self::new(bits)
    }

    /// Eight bits per byte, most significant bit first.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PackingError> {
        Self::new(
            bytes
                .iter()
                .flat_map(|&b| (0..8).rev().map(move |i| (b >> i) & 1 == 1))
                .collect(),
        )
    }

    /// Inverse of [`BitString::from_bytes`]; a partial final byte is zero-padded.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.bits
            .chunks(8)
            .map(|chunk| {
                chunk
                    .iter()
                    .enumerate()
                    .fold(0u8, |acc, (i, &b)| acc | ((b as u8) << (7 - i)))
            })
            .collect()
    }

    pub fn to_ascii(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn into_bits(self) -> Vec<bool> {
        self.bits
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len() <= 128 {
            write!(f, "BitString({})", self.to_ascii())
        } else {
            write!(f, "BitString({} bits)", self.len())
        }
    }
}

/// Bitwise complement.
pub fn negate_bits(bits: &BitString) -> BitString {
    BitString {
        bits: bits.bits.iter().map(|&b| !b).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedMessage {
    pub chunks: Vec<u32>,
    pub original_bit_len: usize,
}

/// Reads `width` bits starting at `start` as an MSB-first integer,
/// treating positions past the end as zero.
pub(crate) fn read_chunk(bits: &[bool], start: usize, width: usize) -> u32 {
    (0..width).fold(0u32, |acc, i| {
        (acc << 1) | bits.get(start + i).copied().unwrap_or(false) as u32
    })
}

pub fn pack(bits: &BitString, params: &HeParams) -> Result<PackedMessage, PackingError> {
    if bits.is_empty() {
        return Err(PackingError::Empty);
    }
    let t = params.t_bits as usize;
    let chunks = (0..bits.len().div_ceil(t))
        .map(|j| read_chunk(&bits.bits, j * t, t))
        .collect();
    Ok(PackedMessage {
        chunks,
        original_bit_len: bits.len(),
    })
}

pub fn to_plaintexts(pm: &PackedMessage, params: &HeParams) -> Vec<PolyT> {
    pm.chunks
        .chunks(params.n)
        .map(|slot| {
            let mut coeffs = slot.to_vec();
            coeffs.resize(params.n, 0);
            PolyT::from_coeffs(params, coeffs).expect("chunks fit in t bits")
        })
        .collect()
}

/// Number of chunks for a bit length.
pub fn chunk_count(bit_len: usize, params: &HeParams) -> usize {
    bit_len.div_ceil(params.t_bits as usize)
}

/// Number of plaintext (and ciphertext) polynomials for a bit length.
pub fn polynomial_count(bit_len: usize, params: &HeParams) -> usize {
    chunk_count(bit_len, params).div_ceil(params.n)
}

/// Polynomial count when every coefficient carries a single bit.
pub fn single_bit_polynomial_count(bit_len: usize, params: &HeParams) -> usize {
    bit_len.div_ceil(params.n)
}

pub fn unpack(
    plaintexts: &[PolyT],
    original_bit_len: usize,
    params: &HeParams,
) -> Result<BitString, PackingError> {
    if original_bit_len == 0 {
        return Err(PackingError::Empty);
    }
    let expected = polynomial_count(original_bit_len, params);
    if plaintexts.len() != expected {
        return Err(PackingError::InconsistentLength {
            bit_len: original_bit_len,
            expected,
            got: plaintexts.len(),
        });
    }
    let t = params.t_bits;
    let mut bits = Vec::with_capacity(plaintexts.len() * params.bits_per_poly());
    for poly in plaintexts {
        if poly.n() != params.n {
            return Err(PackingError::Dimension {
                got: poly.n(),
                expected: params.n,
            });
        }
        for &c in poly.coeffs() {
            bits.extend((0..t).rev().map(|i| (c >> i) & 1 == 1));
        }
    }
    bits.truncate(original_bit_len);
    BitString::new(bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FootprintReport {
    pub plain_bits: u64,
    pub polynomials: u64,
    pub encrypted_bytes: u64,
    pub expansion_factor: f64,
}

impl FootprintReport {
    pub fn plain_bytes(&self) -> f64 {
        self.plain_bits as f64 / 8.0
    }
}

/// Ciphertext payload size (two polynomials of `n` coefficients each) relative
/// to the plaintext size.
pub fn footprint_report(bits: &BitString, params: &HeParams) -> FootprintReport {
    footprint_for_len(bits.len(), params)
}

pub fn footprint_for_len(bit_len: usize, params: &HeParams) -> FootprintReport {
    let polynomials = polynomial_count(bit_len, params) as u64;
    let encrypted_bits = polynomials * 2 * params.n as u64 * params.q_bits as u64;
    FootprintReport {
        plain_bits: bit_len as u64,
        polynomials,
        encrypted_bytes: encrypted_bits / 8,
        expansion_factor: encrypted_bits as f64 / bit_len as f64,
    }
}
