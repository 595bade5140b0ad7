//! Addition-only encrypted exact matching and index generation.
//!
//! The client negates its query `Q` (length `y` bits), replicates it
//! cyclically over the `n·t` plaintext bits of one polynomial to get the
//! pattern `P[i] = Q[i mod y]`, and for each shift `s` encrypts the
//! complement of `P` rotated left by `s` bits. The server adds every
//! database ciphertext to every shifted query ciphertext and nothing else.
//! A result coefficient decrypts to `2^t - 1` exactly when the database
//! chunk equals the corresponding `t` bits of the rotated pattern.
//!
//! Matching semantics: an index `(p, s)` is reported when
//!
//! 1. the rotated pattern, read from ciphertext-local bit position
//!    `p mod n·t`, spells `Q` over `y` bits, and
//! 2. every coefficient that overlaps `[p, p + y)` matched under shift `s`, and
//! 3. `p + y` does not exceed the database length.
//!
//! Every reported index is a true occurrence of `Q`. Conversely, an
//! occurrence is only found if the whole coefficients it touches agree with
//! the replicated pattern, so unaligned occurrences inside otherwise
//! unrelated chunks are not detected.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bfv::{
    decrypt, encrypt_with_mode, Ciphertext, CiphertextAdder, EncryptMode, Evaluator, HeError,
    PublicKey, SecretKey,
};
use crate::packing::{self, read_chunk, BitString, PackingError};
use crate::ring::{HeParams, PolyT};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatchError {
    #[error(transparent)]
    He(#[from] HeError),
    #[error(transparent)]
    Packing(#[from] PackingError),
    #[error("query of {len} bits exceeds the {max}-bit capacity of one polynomial")]
    QueryTooLong { len: usize, max: usize },
    #[error("secret key required for index generation")]
    MissingSecretKey,
    #[error("parameter mismatch: {0}")]
    ParamsMismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncryptedDatabase {
    pub cts: Vec<Ciphertext>,
    pub bit_len: usize,
    pub params: HeParams,
}

/// JSON sidecar describing a stored encrypted database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseManifest {
    pub params: HeParams,
    pub bit_len: usize,
    pub polynomial_count: usize,
}

impl EncryptedDatabase {
    pub fn manifest(&self) -> DatabaseManifest {
        DatabaseManifest {
            params: self.params,
            bit_len: self.bit_len,
            polynomial_count: self.cts.len(),
        }
    }

    pub fn from_parts(
        manifest: &DatabaseManifest,
        cts: Vec<Ciphertext>,
    ) -> Result<Self, MatchError> {
        let expected = packing::polynomial_count(manifest.bit_len, &manifest.params);
        if cts.len() != expected || manifest.polynomial_count != expected {
            return Err(MatchError::ParamsMismatch(format!(
                "{} bits need {expected} ciphertexts, manifest says {}, found {}",
                manifest.bit_len,
                manifest.polynomial_count,
                cts.len()
            )));
        }
        Ok(Self {
            cts,
            bit_len: manifest.bit_len,
            params: manifest.params,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedQuery {
    pub shift: u32,
    pub ct: Ciphertext,
    pub query_bit_len: usize,
}

/// The plaintext `2^t - 1` in every coefficient, and its encryption.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchPolynomialKit {
    pub plaintext: PolyT,
    pub ct: Ciphertext,
}

impl MatchPolynomialKit {
    pub fn new<R: Rng + ?Sized>(
        params: &HeParams,
        pk: &PublicKey,
        mode: EncryptMode,
        rng: &mut R,
    ) -> Result<Self, MatchError> {
        let plaintext = PolyT::filled(params, params.t_mask());
        let ct = encrypt_with_mode(params, &plaintext, pk, mode, rng)?;
        Ok(Self { plaintext, ct })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MatchIndex {
    pub bit_offset: u64,
    pub shift: u32,
    pub span: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectionMode {
    /// Decrypt each result and look for coefficients equal to `2^t - 1`.
    #[default]
    ClientDecrypt,
    /// Subtract the encrypted match polynomial first, then look for zeros.
    Subtract,
}

/// Output of one shifted query against the whole database.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchResult {
    pub shift: u32,
    pub cts: Vec<Ciphertext>,
}

/// Non-negated replicated pattern bit at ciphertext-local position `local`
/// for shift `s`.
#[inline]
fn pattern_bit(query: &[bool], bits_per_poly: usize, local: usize, shift: usize) -> bool {
    query[((local + shift) % bits_per_poly) % query.len()]
}

fn check_query(query: &BitString, params: &HeParams) -> Result<(), MatchError> {
    let max = params.bits_per_poly();
    if query.len() > max {
        return Err(MatchError::QueryTooLong {
            len: query.len(),
            max,
        });
    }
    Ok(())
}

/// Number of distinct shifted query variants: the rotation period of the
/// replicated pattern, capped at `t·⌈y/t⌉`.
pub fn shift_count(query: &BitString, params: &HeParams) -> Result<usize, MatchError> {
    check_query(query, params)?;
    let nt = params.bits_per_poly();
    let t = params.t_bits as usize;
    let cap = t * query.len().div_ceil(t);
    let q = query.bits();
    let rotation_fixes = |r: usize| (0..nt).all(|i| pattern_bit(q, nt, i, 0) == pattern_bit(q, nt, i, r));
    let period = (1..=nt)
        .filter(|r| nt % r == 0)
        .find(|&r| rotation_fixes(r))
        .unwrap_or(nt);
    Ok(period.min(cap))
}

/// Plaintext query polynomials `(shift, ~P rotated left by shift)`.
pub fn query_plaintexts(
    query: &BitString,
    params: &HeParams,
) -> Result<Vec<(u32, PolyT)>, MatchError> {
    let count = shift_count(query, params)?;
    let nt = params.bits_per_poly();
    let t = params.t_bits as usize;
    let q = query.bits();
    (0..count)
        .map(|s| {
            let negated: Vec<bool> = (0..nt).map(|i| !pattern_bit(q, nt, i, s)).collect();
            let coeffs = (0..params.n).map(|c| read_chunk(&negated, c * t, t)).collect();
            Ok((s as u32, PolyT::from_coeffs(params, coeffs).expect("t-bit chunks")))
        })
        .collect()
}

pub fn prepare_database<R: Rng + ?Sized>(
    bits: &BitString,
    pk: &PublicKey,
    params: &HeParams,
    mode: EncryptMode,
    rng: &mut R,
) -> Result<EncryptedDatabase, MatchError> {
    let packed = packing::pack(bits, params)?;
    let cts = packing::to_plaintexts(&packed, params)
        .iter()
        .map(|m| encrypt_with_mode(params, m, pk, mode, rng))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EncryptedDatabase {
        cts,
        bit_len: bits.len(),
        params: *params,
    })
}

pub fn prepare_query<R: Rng + ?Sized>(
    query: &BitString,
    pk: &PublicKey,
    params: &HeParams,
    mode: EncryptMode,
    rng: &mut R,
) -> Result<Vec<PreparedQuery>, MatchError> {
    query_plaintexts(query, params)?
        .into_iter()
        .map(|(shift, m)| {
            Ok(PreparedQuery {
                shift,
                ct: encrypt_with_mode(params, &m, pk, mode, rng)?,
                query_bit_len: query.len(),
            })
        })
        .collect()
}

/// Server side: one homomorphic addition per database ciphertext.
pub fn secure_search<A: CiphertextAdder + ?Sized>(
    adder: &A,
    db: &EncryptedDatabase,
    query: &PreparedQuery,
) -> Result<SearchResult, MatchError> {
    if query.ct.c0.n() != db.params.n || query.ct.c0.q_bits() != db.params.q_bits {
        return Err(MatchError::ParamsMismatch(
            "query ciphertext does not match database parameters".into(),
        ));
    }
    let cts = db
        .cts
        .iter()
        .map(|ct| adder.add(ct, &query.ct))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SearchResult {
        shift: query.shift,
        cts,
    })
}

pub fn search_all<A: CiphertextAdder + ?Sized>(
    adder: &A,
    db: &EncryptedDatabase,
    queries: &[PreparedQuery],
) -> Result<Vec<SearchResult>, MatchError> {
    queries.iter().map(|q| secure_search(adder, db, q)).collect()
}

/// All start positions of `pattern` in `text` (Knuth-Morris-Pratt).
fn find_all(text: &[bool], pattern: &[bool]) -> Vec<usize> {
    let m = pattern.len();
    let mut fail = vec![0usize; m];
    let mut k = 0;
    for i in 1..m {
        while k > 0 && pattern[i] != pattern[k] {
            k = fail[k - 1];
        }
        if pattern[i] == pattern[k] {
            k += 1;
        }
        fail[i] = k;
    }
    let mut hits = Vec::new();
    let mut k = 0;
    for (i, &b) in text.iter().enumerate() {
        while k > 0 && b != pattern[k] {
            k = fail[k - 1];
        }
        if b == pattern[k] {
            k += 1;
        }
        if k == m {
            hits.push(i + 1 - m);
            k = fail[k - 1];
        }
    }
    hits
}

/// Ciphertext-local start positions where the shift-`s` pattern spells the query.
fn aligned_starts(query: &[bool], params: &HeParams, shift: usize) -> Vec<usize> {
    let nt = params.bits_per_poly();
    let text: Vec<bool> = (0..nt + query.len() - 1)
        .map(|l| pattern_bit(query, nt, l % nt, shift))
        .collect();
    find_all(&text, query)
}

/// Turns per-coefficient match flags of one shift into match indices.
fn indices_from_flags(
    flags: &[bool],
    shift: u32,
    query: &[bool],
    bit_len: usize,
    params: &HeParams,
    out: &mut Vec<MatchIndex>,
) {
    let y = query.len();
    if y > bit_len {
        return;
    }
    let t = params.t_bits as usize;
    let nt = params.bits_per_poly();
    let mut prefix = Vec::with_capacity(flags.len() + 1);
    prefix.push(0usize);
    for &f in flags {
        prefix.push(prefix.last().unwrap() + f as usize);
    }
    let starts = aligned_starts(query, params, shift as usize);
    for base in (0..bit_len).step_by(nt) {
        for &local in &starts {
            let p = base + local;
            if p + y > bit_len {
                break;
            }
            let (first, last) = (p / t, (p + y - 1) / t);
            if prefix[last + 1] - prefix[first] == last - first + 1 {
                out.push(MatchIndex {
                    bit_offset: p as u64,
                    shift,
                    span: y as u32,
                });
            }
        }
    }
}

/// Client side: detect match coefficients and map them to bit offsets.
pub fn generate_indices(
    results: &[SearchResult],
    kit: &MatchPolynomialKit,
    db_bit_len: usize,
    query: &BitString,
    sk: Option<&SecretKey>,
    params: &HeParams,
    mode: DetectionMode,
) -> Result<Vec<MatchIndex>, MatchError> {
    let sk = sk.ok_or(MatchError::MissingSecretKey)?;
    check_query(query, params)?;
    let chunks = packing::chunk_count(db_bit_len, params);
    let expected_cts = packing::polynomial_count(db_bit_len, params);
    let evaluator = Evaluator::new(*params);
    let all_ones = params.t_mask();
    let mut out = Vec::new();
    for result in results {
        if result.cts.len() != expected_cts {
            return Err(MatchError::ParamsMismatch(format!(
                "result for shift {} has {} ciphertexts, expected {expected_cts}",
                result.shift,
                result.cts.len()
            )));
        }
        let mut flags = Vec::with_capacity(expected_cts * params.n);
        for ct in &result.cts {
            let (plain, target) = match mode {
                DetectionMode::ClientDecrypt => (decrypt(params, ct, sk)?, all_ones),
                DetectionMode::Subtract => {
                    let diff = evaluator.hom_sub(ct, &kit.ct)?;
                    (decrypt(params, &diff, sk)?, 0)
                }
            };
            flags.extend(plain.coeffs().iter().map(|&c| c == target));
        }
        flags.truncate(chunks);
        indices_from_flags(&flags, result.shift, query.bits(), db_bit_len, params, &mut out);
    }
    out.sort_unstable();
    Ok(out)
}

/// Reference semantics computed bit by bit without packing or encryption.
pub fn plaintext_oracle(
    bits: &BitString,
    query: &BitString,
    params: &HeParams,
) -> Result<Vec<MatchIndex>, MatchError> {
    let shifts = shift_count(query, params)?;
    let (db, q) = (bits.bits(), query.bits());
    let (y, t, nt) = (q.len(), params.t_bits as usize, params.bits_per_poly());
    let mut out = Vec::new();
    if y > db.len() {
        return Ok(out);
    }
    for s in 0..shifts {
        for p in 0..=db.len() - y {
            let spells_query = (0..y).all(|i| q[i] == pattern_bit(q, nt, (p + i) % nt, s));
            if !spells_query {
                continue;
            }
            let lo = (p / t) * t;
            let hi = ((p + y - 1) / t + 1) * t;
            let covered = (lo..hi).all(|x| {
                db.get(x).copied().unwrap_or(false) == pattern_bit(q, nt, x % nt, s)
            });
            if covered {
                out.push(MatchIndex {
                    bit_offset: p as u64,
                    shift: s as u32,
                    span: y as u32,
                });
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Writes the non-negated shift-`s` pattern over whole coefficients
/// `[first_coeff, first_coeff + count)` of `db`, clipped to its length.
/// Test and benchmark helper for planting detectable occurrences.
pub fn plant_pattern(
    db: &mut [bool],
    query: &BitString,
    params: &HeParams,
    shift: usize,
    first_coeff: usize,
    count: usize,
) {
    let t = params.t_bits as usize;
    let nt = params.bits_per_poly();
    let start = first_coeff * t;
    let end = ((first_coeff + count) * t).min(db.len());
    for x in start..end {
        db[x] = pattern_bit(query.bits(), nt, x % nt, shift);
    }
}
