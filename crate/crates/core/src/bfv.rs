//! Additive BFV: key generation, encryption, decryption and the
//! homomorphic addition family.
//!
//! Encryption follows the usual RLWE public-key form
//! `c0 = pk0·u + e0 + Δ·m`, `c1 = pk1·u + e1` with a fresh ternary `u`.
//! [`EncryptMode::PaperLiteral`] drops `u` and adds the public key directly,
//! which makes encryption deterministic up to the error terms.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ring::{
    self, poly_add, poly_mul_negacyclic, poly_neg, poly_sub, sample_error, sample_ternary,
    sample_uniform, HeParams, PolyQ, PolyT, RingError, ERROR_TAIL_CUT,
};

pub const CIPHERTEXT_MAGIC: &[u8; 4] = b"CMCT";
pub const SECRET_KEY_MAGIC: &[u8; 4] = b"CMSK";
pub const PUBLIC_KEY_MAGIC: &[u8; 4] = b"CMPK";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HeError {
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error("malformed {what}: {reason}")]
    Malformed { what: &'static str, reason: String },
    #[error("{what} was written under different parameters")]
    ParamsMismatch { what: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncryptMode {
    /// Fresh ternary randomizer per encryption.
    #[default]
    Standard,
    /// `C0 = pk0 + e0 + Δ·M`, `C1 = pk1 + e1`.
    PaperLiteral,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretKey {
    s: PolyQ,
}

impl SecretKey {
    pub fn poly(&self) -> &PolyQ {
        &self.s
    }

    pub fn encode(&self, params: &HeParams) -> Vec<u8> {
        let mut out = header(SECRET_KEY_MAGIC, params);
        self.s.encode_into(params, &mut out);
        out
    }

    pub fn decode(bytes: &[u8], params: &HeParams) -> Result<Self, HeError> {
        let body = check_header(bytes, SECRET_KEY_MAGIC, "secret key", params)?;
        let (s, _) = PolyQ::decode(body, params)?;
        let minus_one = params.q_mask();
        if !s.coeffs().iter().all(|&c| c <= 1 || c == minus_one) {
            return Err(HeError::Malformed {
                what: "secret key",
                reason: "coefficients are not ternary".into(),
            });
        }
        Ok(Self { s })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    pub pk0: PolyQ,
    pub pk1: PolyQ,
}

impl PublicKey {
    pub fn encode(&self, params: &HeParams) -> Vec<u8> {
        let mut out = header(PUBLIC_KEY_MAGIC, params);
        self.pk0.encode_into(params, &mut out);
        self.pk1.encode_into(params, &mut out);
        out
    }

    pub fn decode(bytes: &[u8], params: &HeParams) -> Result<Self, HeError> {
        let body = check_header(bytes, PUBLIC_KEY_MAGIC, "public key", params)?;
        let (pk0, used) = PolyQ::decode(body, params)?;
        let (pk1, _) = PolyQ::decode(&body[used..], params)?;
        Ok(Self { pk0, pk1 })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext {
    pub c0: PolyQ,
    pub c1: PolyQ,
    /// Homomorphic additions applied since encryption.
    pub level: u32,
}

/// Length of the ciphertext header: magic, n, q_bits, t_bits, level.
pub const CIPHERTEXT_HEADER_LEN: usize = 20;

impl Ciphertext {
    /// Noise-free encryption `(Δ·m, 0)`.
    pub fn trivial(params: &HeParams, m: &PolyT) -> Self {
        Self {
            c0: m.scale_to_q(params),
            c1: PolyQ::zero(params),
            level: 0,
        }
    }

    pub fn encode(&self, params: &HeParams) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len(params));
        self.encode_into(params, &mut out);
        out
    }

    pub fn encode_into(&self, params: &HeParams, out: &mut Vec<u8>) {
        out.extend_from_slice(&header(CIPHERTEXT_MAGIC, params));
        out.extend_from_slice(&self.level.to_le_bytes());
        self.c0.encode_into(params, out);
        self.c1.encode_into(params, out);
    }

    pub fn encoded_len(&self, params: &HeParams) -> usize {
        CIPHERTEXT_HEADER_LEN + 2 * (ring::POLY_HEADER_LEN + params.n * params.coeff_bytes())
    }

    /// Decodes one ciphertext from the front of `bytes`; returns it with the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8], params: &HeParams) -> Result<(Self, usize), HeError> {
        let body = check_header(bytes, CIPHERTEXT_MAGIC, "ciphertext", params)?;
        if body.len() < 4 {
            return Err(HeError::Malformed {
                what: "ciphertext",
                reason: "missing level".into(),
            });
        }
        let level = u32::from_le_bytes(body[..4].try_into().unwrap());
        let (c0, a) = PolyQ::decode(&body[4..], params)?;
        let (c1, b) = PolyQ::decode(&body[4 + a..], params)?;
        Ok((Self { c0, c1, level }, CIPHERTEXT_HEADER_LEN + a + b))
    }

    /// Decodes a concatenation of ciphertexts.
    pub fn decode_all(mut bytes: &[u8], params: &HeParams) -> Result<Vec<Self>, HeError> {
        let mut out = Vec::new();
        while !bytes.is_empty() {
            let (ct, used) = Self::decode(bytes, params)?;
            out.push(ct);
            bytes = &bytes[used..];
        }
        Ok(out)
    }
}

fn header(magic: &[u8; 4], params: &HeParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(16);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(params.n as u32).to_le_bytes());
    out.extend_from_slice(&params.q_bits.to_le_bytes());
    out.extend_from_slice(&params.t_bits.to_le_bytes());
    out
}

fn check_header<'a>(
    bytes: &'a [u8],
    magic: &[u8; 4],
    what: &'static str,
    params: &HeParams,
) -> Result<&'a [u8], HeError> {
    if bytes.len() < 16 || &bytes[..4] != magic {
        return Err(HeError::Malformed {
            what,
            reason: "bad magic or truncated header".into(),
        });
    }
    if bytes[4..16] != header(magic, params)[4..16] {
        return Err(HeError::ParamsMismatch { what });
    }
    Ok(&bytes[16..])
}

/// Generates `(s, (pk0, pk1))` with `pk0 = -(pk1·s + e)`.
pub fn keygen<R: Rng + ?Sized>(
    params: &HeParams,
    rng: &mut R,
) -> Result<(SecretKey, PublicKey), HeError> {
    params.validate()?;
    let s = sample_ternary(params, rng);
    let a = sample_uniform(params, rng);
    let e = sample_error(params, rng);
    let pk0 = poly_neg(&poly_add(&poly_mul_negacyclic(&a, &s)?, &e)?);
    let pk = PublicKey { pk0, pk1: a };
    debug_assert!(public_key_residual(&pk, &SecretKey { s: s.clone() })? as f64
        <= ERROR_TAIL_CUT * params.noise_stddev);
    Ok((SecretKey { s }, pk))
}

/// Infinity norm of `pk0 + pk1·s`, which is the key-generation error.
pub fn public_key_residual(pk: &PublicKey, sk: &SecretKey) -> Result<u64, HeError> {
    Ok(poly_add(&pk.pk0, &poly_mul_negacyclic(&pk.pk1, &sk.s)?)?.inf_norm())
}

pub fn encrypt<R: Rng + ?Sized>(
    params: &HeParams,
    m: &PolyT,
    pk: &PublicKey,
    rng: &mut R,
) -> Result<Ciphertext, HeError> {
    encrypt_with_mode(params, m, pk, EncryptMode::Standard, rng)
}

pub fn encrypt_with_mode<R: Rng + ?Sized>(
    params: &HeParams,
    m: &PolyT,
    pk: &PublicKey,
    mode: EncryptMode,
    rng: &mut R,
) -> Result<Ciphertext, HeError> {
    if m.n() != params.n {
        return Err(RingError::DimensionMismatch {
            left: m.n(),
            right: params.n,
        }
        .into());
    }
    let (base0, base1) = match mode {
        EncryptMode::Standard => {
            let u = sample_ternary(params, rng);
            (
                poly_mul_negacyclic(&u, &pk.pk0)?,
                poly_mul_negacyclic(&u, &pk.pk1)?,
            )
        }
        EncryptMode::PaperLiteral => (pk.pk0.clone(), pk.pk1.clone()),
    };
    let e0 = sample_error(params, rng);
    let e1 = sample_error(params, rng);
    let c0 = poly_add(&poly_add(&base0, &e0)?, &m.scale_to_q(params))?;
    let c1 = poly_add(&base1, &e1)?;
    Ok(Ciphertext { c0, c1, level: 0 })
}

/// `c0 + c1·s`, i.e. `Δ·m + noise`.
fn phase(ct: &Ciphertext, sk: &SecretKey) -> Result<PolyQ, HeError> {
    Ok(poly_add(&ct.c0, &poly_mul_negacyclic(&ct.c1, &sk.s)?)?)
}

pub fn decrypt(params: &HeParams, ct: &Ciphertext, sk: &SecretKey) -> Result<PolyT, HeError> {
    let v = phase(ct, sk)?;
    Ok(round_phase(params, &v))
}

fn round_phase(params: &HeParams, v: &PolyQ) -> PolyT {
    let shift = params.q_bits - params.t_bits;
    // t < q, so shift >= 1
    let half = 1u64 << (shift - 1);
    let coeffs = v
        .coeffs()
        .iter()
        .map(|&c| (((c as u64 + half) >> shift) as u32) & params.t_mask())
        .collect();
    PolyT::from_coeffs(params, coeffs).expect("masked to t bits")
}

/// Noise polynomial `c0 + c1·s - Δ·m` relative to a known plaintext.
pub fn noise(
    params: &HeParams,
    ct: &Ciphertext,
    sk: &SecretKey,
    m: &PolyT,
) -> Result<PolyQ, HeError> {
    Ok(poly_sub(&phase(ct, sk)?, &m.scale_to_q(params))?)
}

/// Remaining noise margin in bits, measured against the decrypted plaintext.
pub fn noise_budget(params: &HeParams, ct: &Ciphertext, sk: &SecretKey) -> Result<f64, HeError> {
    let m = decrypt(params, ct, sk)?;
    noise_budget_for(params, ct, sk, &m)
}

/// `log2(Δ/2) - log2(max |noise|)` against the plaintext `m` the caller
/// believes is encrypted. Non-positive means decryption may fail.
pub fn noise_budget_for(
    params: &HeParams,
    ct: &Ciphertext,
    sk: &SecretKey,
    m: &PolyT,
) -> Result<f64, HeError> {
    let magnitude = noise(params, ct, sk, m)?.inf_norm().max(1) as f64;
    let half_delta = (params.delta() as f64) / 2.0;
    Ok(half_delta.log2() - magnitude.log2())
}

/// Anything that can add two ciphertexts coefficient-wise.
pub trait CiphertextAdder {
    fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError>;
}

/// Homomorphic operation counts observed by an [`Evaluator`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub hom_add: u64,
    pub hom_neg: u64,
    pub hom_sub: u64,
}

/// Software evaluator for the additive homomorphic operations; counts every call.
#[derive(Debug, Default)]
pub struct Evaluator {
    params: HeParams,
    hom_add: AtomicU64,
    hom_neg: AtomicU64,
    hom_sub: AtomicU64,
}

impl Evaluator {
    pub fn new(params: HeParams) -> Self {
        Self {
            params,
            ..Default::default()
        }
    }

    pub fn params(&self) -> &HeParams {
        &self.params
    }

    pub fn counts(&self) -> OpCounts {
        OpCounts {
            hom_add: self.hom_add.load(Ordering::Relaxed),
            hom_neg: self.hom_neg.load(Ordering::Relaxed),
            hom_sub: self.hom_sub.load(Ordering::Relaxed),
        }
    }

    pub fn hom_add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        self.hom_add.fetch_add(1, Ordering::Relaxed);
        Ok(Ciphertext {
            c0: poly_add(&a.c0, &b.c0)?,
            c1: poly_add(&a.c1, &b.c1)?,
            level: a.level.max(b.level) + 1,
        })
    }

    pub fn hom_neg(&self, a: &Ciphertext) -> Ciphertext {
        self.hom_neg.fetch_add(1, Ordering::Relaxed);
        Ciphertext {
            c0: poly_neg(&a.c0),
            c1: poly_neg(&a.c1),
            level: a.level,
        }
    }

    /// `a + (-b)`, computed in one pass.
    pub fn hom_sub(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        self.hom_sub.fetch_add(1, Ordering::Relaxed);
        Ok(Ciphertext {
            c0: poly_sub(&a.c0, &b.c0)?,
            c1: poly_sub(&a.c1, &b.c1)?,
            level: a.level.max(b.level) + 1,
        })
    }
}

impl CiphertextAdder for Evaluator {
    fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        self.hom_add(a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn random_plain(params: &HeParams, rng: &mut ChaCha20Rng) -> PolyT {
        let m = params.t_mask();
        PolyT::from_coeffs(params, (0..params.n).map(|_| rng.random::<u32>() & m).collect())
            .unwrap()
    }

    fn setup(seed: u64) -> (HeParams, SecretKey, PublicKey, ChaCha20Rng) {
        let params = HeParams::default();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (sk, pk) = keygen(&params, &mut rng).unwrap();
        (params, sk, pk, rng)
    }

    #[test]
    fn keygen_residual_is_small() {
        let (params, sk, pk, _) = setup(1);
        let residual = public_key_residual(&pk, &sk).unwrap();
        assert!(residual as f64 <= 6.0 * params.noise_stddev);
        assert!(sk.poly().coeffs().iter().all(|&c| c <= 1 || c == u32::MAX));
    }

    #[test]
    fn different_seeds_give_different_keys() {
        let (_, _, pk_a, _) = setup(2);
        let (_, _, pk_b, _) = setup(3);
        assert_ne!(pk_a.pk1, pk_b.pk1);
    }

    #[test]
    fn zero_round_trip() {
        let (params, sk, pk, mut rng) = setup(4);
        let zero = PolyT::zero(&params);
        let ct = encrypt(&params, &zero, &pk, &mut rng).unwrap();
        assert_eq!(decrypt(&params, &ct, &sk).unwrap(), zero);
    }

    #[test]
    fn encryption_is_randomized() {
        let (params, sk, pk, mut rng) = setup(5);
        let m = random_plain(&params, &mut rng);
        let a = encrypt(&params, &m, &pk, &mut rng).unwrap();
        let b = encrypt(&params, &m, &pk, &mut rng).unwrap();
        assert_ne!(a, b);
        assert_eq!(decrypt(&params, &a, &sk).unwrap(), m);
        assert_eq!(decrypt(&params, &b, &sk).unwrap(), m);
    }

    #[test]
    fn literal_mode_still_decrypts() {
        let (params, sk, pk, mut rng) = setup(6);
        for _ in 0..20 {
            let m = random_plain(&params, &mut rng);
            let ct = encrypt_with_mode(&params, &m, &pk, EncryptMode::PaperLiteral, &mut rng).unwrap();
            assert_eq!(decrypt(&params, &ct, &sk).unwrap(), m);
            // the public key shows through the ciphertext apart from small errors
            let diff = poly_sub(&ct.c1, &pk.pk1).unwrap();
            assert!(diff.inf_norm() as f64 <= 6.0 * params.noise_stddev);
        }
    }

    #[test]
    fn trivial_ciphertext_is_exact() {
        let (params, sk, _, mut rng) = setup(7);
        let m = random_plain(&params, &mut rng);
        let ct = Ciphertext::trivial(&params, &m);
        assert_eq!(decrypt(&params, &ct, &sk).unwrap(), m);
        assert_eq!(noise_budget(&params, &ct, &sk).unwrap(), 15.0);
    }

    #[test]
    fn hom_add_and_sub_follow_plaintext() {
        let (params, sk, pk, mut rng) = setup(8);
        let ev = Evaluator::new(params);
        for _ in 0..20 {
            let a = random_plain(&params, &mut rng);
            let b = random_plain(&params, &mut rng);
            let ca = encrypt(&params, &a, &pk, &mut rng).unwrap();
            let cb = encrypt(&params, &b, &pk, &mut rng).unwrap();
            let sum = ev.hom_add(&ca, &cb).unwrap();
            assert_eq!(sum.level, 1);
            assert_eq!(decrypt(&params, &sum, &sk).unwrap(), a.add(&b).unwrap());
            let rev = ev.hom_add(&cb, &ca).unwrap();
            assert_eq!(decrypt(&params, &rev, &sk).unwrap(), a.add(&b).unwrap());
            let diff = ev.hom_sub(&ca, &cb).unwrap();
            assert_eq!(decrypt(&params, &diff, &sk).unwrap(), a.sub(&b).unwrap());
        }
        let counts = ev.counts();
        assert_eq!(counts.hom_add, 40);
        assert_eq!(counts.hom_sub, 20);
    }

    #[test]
    fn identities() {
        let (params, sk, pk, mut rng) = setup(9);
        let ev = Evaluator::new(params);
        let m = random_plain(&params, &mut rng);
        let ct = encrypt(&params, &m, &pk, &mut rng).unwrap();
        let zero = encrypt(&params, &PolyT::zero(&params), &pk, &mut rng).unwrap();
        assert_eq!(decrypt(&params, &ev.hom_add(&ct, &zero).unwrap(), &sk).unwrap(), m);
        assert_eq!(
            decrypt(&params, &ev.hom_sub(&ct, &ct).unwrap(), &sk).unwrap(),
            PolyT::zero(&params)
        );
        let twice = ev.hom_neg(&ev.hom_neg(&ct));
        assert_eq!(decrypt(&params, &twice, &sk).unwrap(), m);
    }

    #[test]
    fn chain_of_64_additions() {
        let (params, sk, pk, mut rng) = setup(10);
        let ev = Evaluator::new(params);
        let checkpoints = [1usize, 2, 4, 8, 16, 32, 64];
        let chains = 8;
        let mut mean = vec![0.0f64; checkpoints.len()];
        for _ in 0..chains {
            let mut expected = PolyT::zero(&params);
            let mut acc = Ciphertext::trivial(&params, &expected);
            let mut next = 0;
            for step in 1..=64 {
                let m = random_plain(&params, &mut rng);
                expected = expected.add(&m).unwrap();
                acc = ev.hom_add(&acc, &encrypt(&params, &m, &pk, &mut rng).unwrap()).unwrap();
                if step == checkpoints[next] {
                    mean[next] += noise_budget_for(&params, &acc, &sk, &expected).unwrap() / chains as f64;
                    next += 1;
                }
            }
            assert_eq!(decrypt(&params, &acc, &sk).unwrap(), expected);
            assert_eq!(acc.level, 64);
        }
        assert!(mean[0] < 15.0);
        assert!(mean.windows(2).all(|w| w[1] <= w[0]), "{mean:?}");
        assert!(mean[mean.len() - 1] > 0.0);
    }

    #[test]
    fn exhausted_budget_breaks_decryption() {
        let (params, sk, _, mut rng) = setup(11);
        let half = params.delta() / 2;
        for (extra, should_decrypt) in [(half / 2, true), (half - 1, true), (half + 1, false), (3 * half / 2, false)] {
            let m = random_plain(&params, &mut rng);
            let mut ct = Ciphertext::trivial(&params, &m);
            let bumped: Vec<u32> = ct.c0.coeffs().iter().map(|&c| c.wrapping_add(extra)).collect();
            ct.c0 = PolyQ::from_coeffs(&params, bumped).unwrap();
            let budget = noise_budget_for(&params, &ct, &sk, &m).unwrap();
            let ok = decrypt(&params, &ct, &sk).unwrap() == m;
            assert_eq!(ok, should_decrypt, "extra = {extra}");
            assert_eq!(budget > 0.0, should_decrypt, "budget = {budget}");
        }
    }

    #[test]
    fn serialization_is_byte_exact() {
        let (params, sk, pk, mut rng) = setup(12);
        let m = random_plain(&params, &mut rng);
        let mut ct = encrypt(&params, &m, &pk, &mut rng).unwrap();
        ct.level = 3;
        let bytes = ct.encode(&params);
        assert_eq!(bytes.len(), ct.encoded_len(&params));
        assert_eq!(&bytes[..4], b"CMCT");
        let (back, used) = Ciphertext::decode(&bytes, &params).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back, ct);
        assert_eq!(back.encode(&params), bytes);

        let two = [bytes.clone(), bytes].concat();
        assert_eq!(Ciphertext::decode_all(&two, &params).unwrap().len(), 2);

        assert_eq!(SecretKey::decode(&sk.encode(&params), &params).unwrap(), sk);
        assert_eq!(PublicKey::decode(&pk.encode(&params), &params).unwrap(), pk);
        assert!(PublicKey::decode(&sk.encode(&params), &params).is_err());
    }
}
