//! Polynomial arithmetic in `Z_q[X]/(X^n + 1)` and `Z_t[X]/(X^n + 1)` with
//! power-of-two moduli.
//!
//! Both moduli are powers of two, so reduction is a bit mask and the
//! scaling factor `Δ = q / t` is an exact shift. Coefficients are stored as
//! `u32`, which caps `q_bits` at 32.

use std::cell::Cell;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Magic prefix of a serialized ring polynomial.
pub const POLY_MAGIC: &[u8; 4] = b"CMPL";
/// Size of the fixed polynomial header: magic plus three `u32` fields.
pub const POLY_HEADER_LEN: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RingError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("modulus mismatch: {left} bits vs {right} bits")]
    ModulusMismatch { left: u32, right: u32 },
    #[error("coefficient {value:#x} at index {index} does not fit in {bits} bits")]
    CoefficientOutOfRange { index: usize, value: u32, bits: u32 },
    #[error("malformed polynomial encoding: {0}")]
    Malformed(String),
    #[error("encoded header (n={n}, q={q_bits}, t={t_bits}) does not match the parameters")]
    ParamsMismatch { n: usize, q_bits: u32, t_bits: u32 },
}

/// Ring parameters shared by every polynomial and ciphertext of a session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeParams {
    /// Ring dimension; a power of two, at least 8.
    pub n: usize,
    /// Ciphertext modulus is `2^q_bits`.
    pub q_bits: u32,
    /// Plaintext modulus is `2^t_bits`.
    pub t_bits: u32,
    /// Standard deviation of the error distribution.
    pub noise_stddev: f64,
}

impl Default for HeParams {
    fn default() -> Self {
        Self {
            n: 1024,
            q_bits: 32,
            t_bits: 16,
            noise_stddev: 3.2,
        }
    }
}

impl HeParams {
    pub fn new(n: usize, q_bits: u32, t_bits: u32, noise_stddev: f64) -> Result<Self, RingError> {
        let params = Self {
            n,
            q_bits,
            t_bits,
            noise_stddev,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), RingError> {
        if !self.n.is_power_of_two() || self.n < 8 {
            return Err(RingError::InvalidParams(format!(
                "ring dimension {} must be a power of two >= 8",
                self.n
            )));
        }
        if self.q_bits == 0 || self.q_bits > 32 {
            return Err(RingError::InvalidParams(format!(
                "q_bits {} must be in 1..=32",
                self.q_bits
            )));
        }
        if self.t_bits == 0 || self.t_bits >= self.q_bits {
            return Err(RingError::InvalidParams(format!(
                "t_bits {} must be in 1..q_bits ({})",
                self.t_bits, self.q_bits
            )));
        }
        if !(self.noise_stddev.is_finite() && self.noise_stddev >= 0.0) {
            return Err(RingError::InvalidParams(format!(
                "noise_stddev {} must be finite and non-negative",
                self.noise_stddev
            )));
        }
        Ok(())
    }

    /// `2^q_bits - 1`.
    pub fn q_mask(&self) -> u32 {
        mask(self.q_bits)
    }

    /// `2^t_bits - 1`; also the value of every match-polynomial coefficient.
    pub fn t_mask(&self) -> u32 {
        mask(self.t_bits)
    }

    /// Scaling factor `Δ = 2^(q_bits - t_bits)`.
    pub fn delta(&self) -> u32 {
        1u32 << (self.q_bits - self.t_bits)
    }

    /// Plaintext bits carried by one fully packed polynomial.
    pub fn bits_per_poly(&self) -> usize {
        self.n * self.t_bits as usize
    }

    /// Bytes used to store one ciphertext coefficient.
    pub fn coeff_bytes(&self) -> usize {
        self.q_bits.div_ceil(8) as usize
    }
}

pub(crate) fn mask(bits: u32) -> u32 {
    if bits >= 32 {
        u32::MAX
    } else {
        (1u32 << bits) - 1
    }
}

/// Lifts a residue mod `2^bits` to the symmetric range `[-2^(bits-1), 2^(bits-1))`.
pub fn centered(value: u32, bits: u32) -> i64 {
    let modulus = 1i64 << bits;
    let v = value as i64;
    if v >= modulus / 2 {
        v - modulus
    } else {
        v
    }
}

fn check_len(len: usize, n: usize) -> Result<(), RingError> {
    if len != n {
        return Err(RingError::DimensionMismatch { left: len, right: n });
    }
    Ok(())
}

fn check_range(coeffs: &[u32], bits: u32) -> Result<(), RingError> {
    let m = mask(bits);
    match coeffs.iter().position(|&c| c > m) {
        Some(index) => Err(RingError::CoefficientOutOfRange {
            index,
            value: coeffs[index],
            bits,
        }),
        None => Ok(()),
    }
}

/// Element of the ciphertext ring `Z_q[X]/(X^n + 1)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PolyQ {
    coeffs: Vec<u32>,
    q_bits: u32,
}

impl PolyQ {
    pub fn zero(params: &HeParams) -> Self {
        Self {
            coeffs: vec![0; params.n],
            q_bits: params.q_bits,
        }
    }

    pub fn constant(params: &HeParams, value: u32) -> Self {
        let mut p = Self::zero(params);
        p.coeffs[0] = value & params.q_mask();
        p
    }

    pub fn from_coeffs(params: &HeParams, coeffs: Vec<u32>) -> Result<Self, RingError> {
        check_len(coeffs.len(), params.n)?;
        check_range(&coeffs, params.q_bits)?;
        Ok(Self {
            coeffs,
            q_bits: params.q_bits,
        })
    }

    /// Builds a polynomial from signed coefficients, reducing each mod q.
    pub fn from_signed(params: &HeParams, values: &[i64]) -> Result<Self, RingError> {
        check_len(values.len(), params.n)?;
        let m = params.q_mask() as i64;
        let coeffs = values
            .iter()
            .map(|&v| (v.rem_euclid(m + 1)) as u32)
            .collect();
        Ok(Self {
            coeffs,
            q_bits: params.q_bits,
        })
    }

    pub fn coeffs(&self) -> &[u32] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<u32> {
        self.coeffs
    }

    pub fn n(&self) -> usize {
        self.coeffs.len()
    }

    pub fn q_bits(&self) -> u32 {
        self.q_bits
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0)
    }

    /// Coefficients in the symmetric range around zero.
    pub fn centered(&self) -> Vec<i64> {
        self.coeffs.iter().map(|&c| centered(c, self.q_bits)).collect()
    }

    /// Largest absolute centered coefficient.
    pub fn inf_norm(&self) -> u64 {
        self.coeffs
            .iter()
            .map(|&c| centered(c, self.q_bits).unsigned_abs())
            .max()
            .unwrap_or(0)
    }

    pub fn encode(&self, params: &HeParams) -> Vec<u8> {
        let width = params.coeff_bytes();
        let mut out = Vec::with_capacity(POLY_HEADER_LEN + width * self.n());
        self.encode_into(params, &mut out);
        out
    }

    pub fn encode_into(&self, params: &HeParams, out: &mut Vec<u8>) {
        let width = params.coeff_bytes();
        out.extend_from_slice(POLY_MAGIC);
        out.extend_from_slice(&(self.n() as u32).to_le_bytes());
        out.extend_from_slice(&params.q_bits.to_le_bytes());
        out.extend_from_slice(&params.t_bits.to_le_bytes());
        for &c in &self.coeffs {
            out.extend_from_slice(&c.to_le_bytes()[..width]);
        }
    }

    /// Decodes one polynomial from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8], params: &HeParams) -> Result<(Self, usize), RingError> {
        if bytes.len() < POLY_HEADER_LEN {
            return Err(RingError::Malformed("truncated header".into()));
        }
        if &bytes[..4] != POLY_MAGIC {
            return Err(RingError::Malformed("bad magic".into()));
        }
        let field = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
        let (n, q_bits, t_bits) = (field(1) as usize, field(2), field(3));
        if n != params.n || q_bits != params.q_bits || t_bits != params.t_bits {
            return Err(RingError::ParamsMismatch { n, q_bits, t_bits });
        }
        let width = params.coeff_bytes();
        let total = POLY_HEADER_LEN + width * n;
        if bytes.len() < total {
            return Err(RingError::Malformed("truncated coefficients".into()));
        }
        let coeffs = bytes[POLY_HEADER_LEN..total]
            .chunks_exact(width)
            .map(|chunk| {
                let mut buf = [0u8; 4];
                buf[..width].copy_from_slice(chunk);
                u32::from_le_bytes(buf)
            })
            .collect::<Vec<_>>();
        check_range(&coeffs, q_bits)?;
        Ok((Self { coeffs, q_bits }, total))
    }
}

/// Element of the plaintext ring `Z_t[X]/(X^n + 1)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PolyT {
    coeffs: Vec<u32>,
    t_bits: u32,
}

impl PolyT {
    pub fn zero(params: &HeParams) -> Self {
        Self {
            coeffs: vec![0; params.n],
            t_bits: params.t_bits,
        }
    }

    /// Polynomial with every coefficient equal to `value mod t`.
    pub fn filled(params: &HeParams, value: u32) -> Self {
        Self {
            coeffs: vec![value & params.t_mask(); params.n],
            t_bits: params.t_bits,
        }
    }

    pub fn from_coeffs(params: &HeParams, coeffs: Vec<u32>) -> Result<Self, RingError> {
        check_len(coeffs.len(), params.n)?;
        check_range(&coeffs, params.t_bits)?;
        Ok(Self {
            coeffs,
            t_bits: params.t_bits,
        })
    }

    pub fn coeffs(&self) -> &[u32] {
        &self.coeffs
    }

    pub fn n(&self) -> usize {
        self.coeffs.len()
    }

    /// Embeds `Δ·m` into the ciphertext ring.
    pub fn scale_to_q(&self, params: &HeParams) -> PolyQ {
        let delta = params.delta();
        PolyQ {
            coeffs: self
                .coeffs
                .iter()
                .map(|&m| m.wrapping_mul(delta) & params.q_mask())
                .collect(),
            q_bits: params.q_bits,
        }
    }

    /// Coefficient-wise sum mod t.
    pub fn add(&self, other: &PolyT) -> Result<PolyT, RingError> {
        same_shape(self.n(), other.n(), self.t_bits, other.t_bits)?;
        let m = mask(self.t_bits);
        Ok(PolyT {
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(&a, &b)| a.wrapping_add(b) & m)
                .collect(),
            t_bits: self.t_bits,
        })
    }

    /// Coefficient-wise difference mod t.
    pub fn sub(&self, other: &PolyT) -> Result<PolyT, RingError> {
        same_shape(self.n(), other.n(), self.t_bits, other.t_bits)?;
        let m = mask(self.t_bits);
        Ok(PolyT {
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(&a, &b)| a.wrapping_sub(b) & m)
                .collect(),
            t_bits: self.t_bits,
        })
    }
}

fn same_shape(n_a: usize, n_b: usize, bits_a: u32, bits_b: u32) -> Result<(), RingError> {
    if n_a != n_b {
        return Err(RingError::DimensionMismatch {
            left: n_a,
            right: n_b,
        });
    }
    if bits_a != bits_b {
        return Err(RingError::ModulusMismatch {
            left: bits_a,
            right: bits_b,
        });
    }
    Ok(())
}

pub fn poly_add(a: &PolyQ, b: &PolyQ) -> Result<PolyQ, RingError> {
    same_shape(a.n(), b.n(), a.q_bits, b.q_bits)?;
    let m = mask(a.q_bits);
    Ok(PolyQ {
        coeffs: a
            .coeffs
            .iter()
            .zip(&b.coeffs)
            .map(|(&x, &y)| x.wrapping_add(y) & m)
            .collect(),
        q_bits: a.q_bits,
    })
}

pub fn poly_sub(a: &PolyQ, b: &PolyQ) -> Result<PolyQ, RingError> {
    same_shape(a.n(), b.n(), a.q_bits, b.q_bits)?;
    let m = mask(a.q_bits);
    Ok(PolyQ {
        coeffs: a
            .coeffs
            .iter()
            .zip(&b.coeffs)
            .map(|(&x, &y)| x.wrapping_sub(y) & m)
            .collect(),
        q_bits: a.q_bits,
    })
}

pub fn poly_neg(a: &PolyQ) -> PolyQ {
    let m = mask(a.q_bits);
    PolyQ {
        coeffs: a.coeffs.iter().map(|&x| x.wrapping_neg() & m).collect(),
        q_bits: a.q_bits,
    }
}

thread_local! {
    static RING_MULS: Cell<u64> = const { Cell::new(0) };
}

/// Number of ring multiplications performed so far on the calling thread.
///
/// Used by tests to show that the search path never multiplies.
pub fn ring_mul_count() -> u64 {
    RING_MULS.with(Cell::get)
}

/// Schoolbook product reduced by `X^n = -1`.
pub fn poly_mul_negacyclic(a: &PolyQ, b: &PolyQ) -> Result<PolyQ, RingError> {
    same_shape(a.n(), b.n(), a.q_bits, b.q_bits)?;
    RING_MULS.with(|c| c.set(c.get() + 1));
    let n = a.n();
    let mut out = vec![0u32; n];
    // Arithmetic mod 2^32 reduces consistently to any smaller power of two.
    for (i, &ai) in a.coeffs.iter().enumerate() {
        if ai == 0 {
            continue;
        }
        let (head, tail) = b.coeffs.split_at(n - i);
        for (o, &bj) in out[i..].iter_mut().zip(head) {
            *o = o.wrapping_add(ai.wrapping_mul(bj));
        }
        for (o, &bj) in out[..i].iter_mut().zip(tail) {
            *o = o.wrapping_sub(ai.wrapping_mul(bj));
        }
    }
    let m = mask(a.q_bits);
    out.iter_mut().for_each(|c| *c &= m);
    Ok(PolyQ {
        coeffs: out,
        q_bits: a.q_bits,
    })
}

pub fn sample_uniform<R: Rng + ?Sized>(params: &HeParams, rng: &mut R) -> PolyQ {
    let m = params.q_mask();
    PolyQ {
        coeffs: (0..params.n).map(|_| rng.random::<u32>() & m).collect(),
        q_bits: params.q_bits,
    }
}

/// Uniform over `{-1, 0, 1}`, embedded as `{q-1, 0, 1}`.
pub fn sample_ternary<R: Rng + ?Sized>(params: &HeParams, rng: &mut R) -> PolyQ {
    let minus_one = params.q_mask();
    PolyQ {
        coeffs: (0..params.n)
            .map(|_| match rng.random_range(0..3u8) {
                0 => minus_one,
                1 => 0,
                _ => 1,
            })
            .collect(),
        q_bits: params.q_bits,
    }
}

/// Tail cut of the error distribution, in standard deviations.
pub const ERROR_TAIL_CUT: f64 = 6.0;

/// Rounded Gaussian with `params.noise_stddev`, rejected beyond
/// `ERROR_TAIL_CUT` standard deviations, reduced mod q.
pub fn sample_error<R: Rng + ?Sized>(params: &HeParams, rng: &mut R) -> PolyQ {
    let sigma = params.noise_stddev;
    if sigma == 0.0 {
        return PolyQ::zero(params);
    }
    let normal = Normal::new(0.0, sigma).expect("validated stddev");
    let bound = (ERROR_TAIL_CUT * sigma).floor();
    let m = params.q_mask();
    let coeffs = (0..params.n)
        .map(|_| loop {
            let x = normal.sample(rng).round();
            if x.abs() <= bound {
                break (x as i64 as u32) & m;
            }
        })
        .collect();
    PolyQ {
        coeffs,
        q_bits: params.q_bits,
    }
}
