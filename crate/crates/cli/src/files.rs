//! File formats, input/output bookkeeping and run manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use ciphermatch::bfv::{Ciphertext, EncryptMode, HeError, PublicKey, SecretKey};
use ciphermatch::matcher::{DatabaseManifest, EncryptedDatabase, PreparedQuery};
use ciphermatch::packing::{BitString, PackedMessage};
use ciphermatch::ring::{HeParams, RingError};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dna;
use crate::error::{self, coded, Kind};

pub const CONFIG_DIR_ENV: &str = "CIPHERMATCH_CONFIG_DIR";
pub const PACKED_MAGIC: &[u8; 4] = b"CMPM";
pub const SECRET_KEY_FILE: &str = "secret.key";
pub const PUBLIC_KEY_FILE: &str = "public.key";
pub const DB_CTS_FILE: &str = "db.cts";
pub const DB_MANIFEST_FILE: &str = "db.json";
pub const QUERY_CTS_FILE: &str = "query.cts";
pub const QUERY_MANIFEST_FILE: &str = "query.json";
pub const MATCH_CT_FILE: &str = "match.ct";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum InputFormat {
    /// Raw bytes, most significant bit first.
    #[default]
    Bytes,
    /// Text of `0` and `1` characters; whitespace ignored.
    Ascii,
    /// Nucleotides A/C/G/T at two bits each; `>` header lines ignored.
    Dna,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    pub params: Option<HeParams>,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
    pub timestamp_unix: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Tracks every file read and written by one command.
#[derive(Debug, Default)]
pub struct Session {
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
}

impl Session {
    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        if !path.exists() {
            return Err(error::missing(path));
        }
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.push(InputDigest {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    pub fn read_text(&mut self, path: &Path) -> Result<String> {
        let bytes = self.read(path)?;
        String::from_utf8(bytes).map_err(|e| error::format(path.display(), e))
    }

    pub fn read_json<T: for<'de> Deserialize<'de>>(&mut self, path: &Path) -> Result<T> {
        let text = self.read_text(path)?;
        serde_json::from_str(&text).map_err(|e| error::format(path.display(), e))
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(path, text.as_bytes())
    }

    /// Writes the manifest describing this run to `path`.
    pub fn finish(self, path: &Path, params: Option<HeParams>, seed: Option<u64>) -> Result<()> {
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: std::env::args().collect(),
            params,
            seed,
            inputs: self.inputs,
            outputs: self.outputs,
            timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// Sidecar manifest path for a single output file.
pub fn manifest_for(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

pub fn load_params(session: &mut Session, explicit: Option<&Path>) -> Result<HeParams> {
    let path = match explicit {
        Some(p) => Some(p.to_path_buf()),
        None => std::env::var_os(CONFIG_DIR_ENV)
            .map(|dir| Path::new(&dir).join("params.json"))
            .filter(|p| p.exists()),
    };
    let Some(path) = path else {
        return Ok(HeParams::default());
    };
    let params: HeParams = session.read_json(&path)?;
    params.validate().map_err(|e| error::format(path.display(), e))?;
    Ok(params)
}

pub fn require_params(found: &HeParams, expected: &HeParams, what: &str) -> Result<()> {
    if found != expected {
        return Err(coded(
            Kind::ParamsMismatch,
            format!("{what} was produced with {found:?}, but the run uses {expected:?}"),
        ));
    }
    Ok(())
}

pub fn bits_from(bytes: &[u8], format: InputFormat, what: &Path) -> Result<BitString> {
    let bits = match format {
        InputFormat::Bytes => BitString::from_bytes(bytes),
        InputFormat::Ascii => {
            let text = std::str::from_utf8(bytes).map_err(|e| error::format(what.display(), e))?;
            BitString::from_ascii(text)
        }
        InputFormat::Dna => {
            let text = std::str::from_utf8(bytes).map_err(|e| error::format(what.display(), e))?;
            BitString::new(dna::encode(text).map_err(|e| error::format(what.display(), e))?)
        }
    };
    bits.map_err(|e| error::format(what.display(), e))
}

pub fn read_bits(session: &mut Session, path: &Path, format: InputFormat) -> Result<BitString> {
    let bytes = session.read(path)?;
    bits_from(&bytes, format, path)
}

pub fn encode_packed(pm: &PackedMessage, params: &HeParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pm.chunks.len() * 4);
    out.extend_from_slice(PACKED_MAGIC);
    out.extend_from_slice(&params.t_bits.to_le_bytes());
    out.extend_from_slice(&(pm.original_bit_len as u64).to_le_bytes());
    for c in &pm.chunks {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out
}

pub fn decode_packed(bytes: &[u8], params: &HeParams, what: &Path) -> Result<PackedMessage> {
    let bad = |reason: &str| error::format(what.display(), reason);
    if bytes.len() < 16 || &bytes[..4] != PACKED_MAGIC {
        return Err(bad("not a packed message file"));
    }
    let t_bits = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if t_bits != params.t_bits {
        return Err(coded(
            Kind::ParamsMismatch,
            format!("{} was packed with t = 2^{t_bits}, run uses 2^{}", what.display(), params.t_bits),
        ));
    }
    let bit_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() % 4 != 0 {
        return Err(bad("truncated chunk data"));
    }
    let chunks: Vec<u32> = body.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect();
    if chunks.len() != bit_len.div_ceil(t_bits as usize) {
        return Err(bad("chunk count does not match the recorded bit length"));
    }
    if chunks.iter().any(|&c| c > params.t_mask()) {
        return Err(bad("chunk exceeds the plaintext modulus"));
    }
    Ok(PackedMessage {
        chunks,
        original_bit_len: bit_len,
    })
}

pub fn load_secret_key(session: &mut Session, path: &Path, params: &HeParams) -> Result<SecretKey> {
    let bytes = session.read(path)?;
    SecretKey::decode(&bytes, params).map_err(|e| key_error(path, e))
}

pub fn load_public_key(session: &mut Session, path: &Path, params: &HeParams) -> Result<PublicKey> {
    let bytes = session.read(path)?;
    PublicKey::decode(&bytes, params).map_err(|e| key_error(path, e))
}

fn key_error(path: &Path, e: HeError) -> anyhow::Error {
    match e {
        HeError::ParamsMismatch { .. } | HeError::Ring(RingError::ParamsMismatch { .. }) => coded(Kind::ParamsMismatch, format!("{}: {e}", path.display())),
        other => error::format(path.display(), other),
    }
}

pub fn save_database(session: &mut Session, dir: &Path, db: &EncryptedDatabase) -> Result<()> {
    let mut blob = Vec::new();
    for ct in &db.cts {
        ct.encode_into(&db.params, &mut blob);
    }
    session.write(&dir.join(DB_CTS_FILE), &blob)?;
    session.write_json(&dir.join(DB_MANIFEST_FILE), &db.manifest())
}

pub fn load_database(session: &mut Session, dir: &Path, params: &HeParams) -> Result<EncryptedDatabase> {
    let manifest_path = dir.join(DB_MANIFEST_FILE);
    let manifest: DatabaseManifest = session.read_json(&manifest_path)?;
    require_params(&manifest.params, params, "encrypted database")?;
    let cts_path = dir.join(DB_CTS_FILE);
    let blob = session.read(&cts_path)?;
    let cts = Ciphertext::decode_all(&blob, params).map_err(|e| key_error(&cts_path, e))?;
    EncryptedDatabase::from_parts(&manifest, cts).map_err(|e| error::format(dir.display(), e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryManifest {
    pub params: HeParams,
    pub query_bit_len: usize,
    pub shifts: Vec<u32>,
    pub encrypt_mode: EncryptMode,
}

pub fn save_query(
    session: &mut Session,
    dir: &Path,
    params: &HeParams,
    queries: &[PreparedQuery],
    match_ct: &Ciphertext,
    encrypt_mode: EncryptMode,
) -> Result<()> {
    let mut blob = Vec::new();
    for q in queries {
        q.ct.encode_into(params, &mut blob);
    }
    session.write(&dir.join(QUERY_CTS_FILE), &blob)?;
    session.write(&dir.join(MATCH_CT_FILE), &match_ct.encode(params))?;
    let manifest = QueryManifest {
        params: *params,
        query_bit_len: queries.first().map_or(0, |q| q.query_bit_len),
        shifts: queries.iter().map(|q| q.shift).collect(),
        encrypt_mode,
    };
    session.write_json(&dir.join(QUERY_MANIFEST_FILE), &manifest)
}

pub fn load_query(session: &mut Session, dir: &Path, params: &HeParams) -> Result<(QueryManifest, Vec<PreparedQuery>, Ciphertext)> {
    let manifest: QueryManifest = session.read_json(&dir.join(QUERY_MANIFEST_FILE))?;
    require_params(&manifest.params, params, "prepared query")?;
    let cts_path = dir.join(QUERY_CTS_FILE);
    let blob = session.read(&cts_path)?;
    let cts = Ciphertext::decode_all(&blob, params).map_err(|e| key_error(&cts_path, e))?;
    if cts.len() != manifest.shifts.len() {
        return Err(error::format(cts_path.display(), "ciphertext count does not match the shift list"));
    }
    let queries = cts
        .into_iter()
        .zip(&manifest.shifts)
        .map(|(ct, &shift)| PreparedQuery {
            shift,
            ct,
            query_bit_len: manifest.query_bit_len,
        })
        .collect();
    let match_path = dir.join(MATCH_CT_FILE);
    let bytes = session.read(&match_path)?;
    let (match_ct, used) = Ciphertext::decode(&bytes, params).map_err(|e| key_error(&match_path, e))?;
    if used != bytes.len() {
        return Err(error::format(match_path.display(), "trailing bytes"));
    }
    Ok((manifest, queries, match_ct))
}
