use std::path::{Path, PathBuf};

use anyhow::Result;
use ciphermatch::bfv::{keygen as he_keygen, CiphertextAdder, Evaluator};
use ciphermatch::ifp_sim::FlashAdder;
use ciphermatch::matcher::{self, MatchIndex, MatchPolynomialKit};
use ciphermatch::packing::{self, BitString};
use ciphermatch::ring::HeParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::error::{self, coded, Kind};
use crate::files::{self, InputFormat, Session};
use crate::{Common, Engine, Mode};

pub fn seed_of(common: &Common) -> u64 {
    common.seed.unwrap_or_else(rand::random)
}

pub fn rng_for(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn he(e: impl std::fmt::Display) -> anyhow::Error {
    coded(Kind::ParamsMismatch, e.to_string())
}

pub fn keygen(common: &Common, out: &Path) -> Result<()> {
    let mut session = Session::default();
    let params = files::load_params(&mut session, common.params.as_deref())?;
    let seed = seed_of(common);
    let (sk, pk) = he_keygen(&params, &mut rng_for(seed))?;
    session.write(&out.join(files::SECRET_KEY_FILE), &sk.encode(&params))?;
    session.write(&out.join(files::PUBLIC_KEY_FILE), &pk.encode(&params))?;
    session.write_json(&out.join("params.json"), &params)?;
    session.finish(&out.join(files::MANIFEST_FILE), Some(params), Some(seed))?;
    println!("wrote key pair to {}", out.display());
    Ok(())
}

pub fn pack(common: &Common, input: &Path, format: InputFormat, out: &Path) -> Result<()> {
    let mut session = Session::default();
    let params = files::load_params(&mut session, common.params.as_deref())?;
    let bits = files::read_bits(&mut session, input, format)?;
    let pm = packing::pack(&bits, &params).map_err(|e| error::format(input.display(), e))?;
    session.write(out, &files::encode_packed(&pm, &params))?;
    session.finish(&files::manifest_for(out), Some(params), None)?;
    println!("packed {} bits into {} chunks", bits.len(), pm.chunks.len());
    Ok(())
}

pub fn unpack(common: &Common, input: &Path, out: &Path, ascii: bool) -> Result<()> {
    let mut session = Session::default();
    let params = files::load_params(&mut session, common.params.as_deref())?;
    let bytes = session.read(input)?;
    let pm = files::decode_packed(&bytes, &params, input)?;
    let plains = packing::to_plaintexts(&pm, &params);
    let bits = packing::unpack(&plains, pm.original_bit_len, &params).map_err(|e| error::format(input.display(), e))?;
    let body = if ascii {
        let mut s = bits.to_ascii();
        s.push('\n');
        s.into_bytes()
    } else {
        bits.to_bytes()
    };
    session.write(out, &body)?;
    session.finish(&files::manifest_for(out), Some(params), None)?;
    Ok(())
}

pub fn encrypt_db(common: &Common, input: &Path, format: InputFormat, pk_path: &Path, out: &Path, mode: Mode) -> Result<()> {
    let mut session = Session::default();
    let params = files::load_params(&mut session, common.params.as_deref())?;
    let pk = files::load_public_key(&mut session, pk_path, &params)?;
    let bits = files::read_bits(&mut session, input, format)?;
    let seed = seed_of(common);
    let db = matcher::prepare_database(&bits, &pk, &params, mode.encrypt_mode(), &mut rng_for(seed)).map_err(he)?;
    files::save_database(&mut session, out, &db)?;
    let report = packing::footprint_report(&bits, &params);
    session.write_json(&out.join("footprint.json"), &report)?;
    session.finish(&out.join(files::MANIFEST_FILE), Some(params), Some(seed))?;
    println!(
        "encrypted {} bits into {} ciphertexts (expansion {:.3}x)",
        bits.len(),
        db.cts.len(),
        report.expansion_factor
    );
    Ok(())
}

pub fn prepare_query(common: &Common, query_path: &Path, format: InputFormat, pk_path: &Path, out: &Path, mode: Mode) -> Result<()> {
    let mut session = Session::default();
    let params = files::load_params(&mut session, common.params.as_deref())?;
    let pk = files::load_public_key(&mut session, pk_path, &params)?;
    let query = files::read_bits(&mut session, query_path, format)?;
    let seed = seed_of(common);
    let mut rng = rng_for(seed);
    let encrypt_mode = mode.encrypt_mode();
    let prepared = matcher::prepare_query(&query, &pk, &params, encrypt_mode, &mut rng)
        .map_err(|e| error::format(query_path.display(), e))?;
    let kit = MatchPolynomialKit::new(&params, &pk, encrypt_mode, &mut rng).map_err(he)?;
    files::save_query(&mut session, out, &params, &prepared, &kit.ct, encrypt_mode)?;
    session.finish(&out.join(files::MANIFEST_FILE), Some(params), Some(seed))?;
    println!("prepared {} shifted query ciphertexts", prepared.len());
    Ok(())
}

pub struct SearchArgs {
    pub db: PathBuf,
    pub prepared: PathBuf,
    pub query: PathBuf,
    pub format: InputFormat,
    pub secret_key: PathBuf,
    pub mode: Mode,
    pub engine: Engine,
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct SearchReport<'a> {
    db_bit_len: usize,
    ciphertexts: usize,
    shifts: usize,
    hom_add: u64,
    engine: &'static str,
    matches: &'a [MatchIndex],
}

pub fn adder_for(engine: Engine, params: HeParams) -> Box<dyn CiphertextAdder> {
    match engine {
        Engine::Software => Box::new(Evaluator::new(params)),
        Engine::Flash => Box::new(FlashAdder::new(params)),
    }
}

pub fn search(common: &Common, args: &SearchArgs) -> Result<()> {
    let mut session = Session::default();
    let params = files::load_params(&mut session, common.params.as_deref())?;
    // fail fast on the client-side key before the expensive search
    let sk = files::load_secret_key(&mut session, &args.secret_key, &params)?;
    let db = files::load_database(&mut session, &args.db, &params)?;
    let (qm, queries, match_ct) = files::load_query(&mut session, &args.prepared, &params)?;
    let query = files::read_bits(&mut session, &args.query, args.format)?;
    if query.len() != qm.query_bit_len {
        return Err(coded(
            Kind::ParamsMismatch,
            format!("query has {} bits but was prepared for {}", query.len(), qm.query_bit_len),
        ));
    }
    let adder = adder_for(args.engine, params);
    let results = matcher::search_all(adder.as_ref(), &db, &queries).map_err(he)?;
    let kit = MatchPolynomialKit {
        plaintext: ciphermatch::ring::PolyT::filled(&params, params.t_mask()),
        ct: match_ct,
    };
    let matches = matcher::generate_indices(&results, &kit, db.bit_len, &query, Some(&sk), &params, args.mode.detection())
        .map_err(he)?;
    let report = SearchReport {
        db_bit_len: db.bit_len,
        ciphertexts: db.cts.len(),
        shifts: queries.len(),
        hom_add: (db.cts.len() * queries.len()) as u64,
        engine: match args.engine {
            Engine::Software => "software",
            Engine::Flash => "flash",
        },
        matches: &matches,
    };
    session.write_json(&args.out, &report)?;
    session.finish(&files::manifest_for(&args.out), Some(params), None)?;
    println!("{} matches", matches.len());
    Ok(())
}

#[derive(Debug, Serialize)]
struct VerifyCase {
    case: usize,
    db_bits: usize,
    query_bits: usize,
    shifts: usize,
    matches: usize,
    agree: bool,
}

/// One random instance with a few detectable occurrences planted.
pub fn random_case(rng: &mut ChaCha20Rng, params: &HeParams, max_db_bits: usize, query_bits: usize) -> (BitString, BitString) {
    let query = BitString::new((0..query_bits).map(|_| rng.random()).collect()).unwrap();
    let db_bits = rng.random_range(query_bits..=max_db_bits.max(query_bits));
    let mut db: Vec<bool> = (0..db_bits).map(|_| rng.random()).collect();
    let shifts = matcher::shift_count(&query, params).expect("query fits one polynomial");
    let t = params.t_bits as usize;
    let coeffs = db_bits.div_ceil(t);
    for _ in 0..rng.random_range(0..=3) {
        let s = rng.random_range(0..shifts);
        let at = rng.random_range(0..coeffs);
        matcher::plant_pattern(&mut db, &query, params, s, at, query_bits.div_ceil(t) + 1);
    }
    (BitString::new(db).unwrap(), query)
}

pub fn verify(common: &Common, cases: usize, max_db_bits: usize, mode: Mode, engine: Engine, out: Option<&Path>) -> Result<()> {
    let mut session = Session::default();
    let params = files::load_params(&mut session, common.params.as_deref())?;
    let seed = seed_of(common);
    let mut rng = rng_for(seed);
    let (sk, pk) = he_keygen(&params, &mut rng)?;
    let sizes = [1usize, 7, 16, 20, 32, 64, 128, 256];
    let mut rows = Vec::with_capacity(cases);
    for case in 0..cases {
        let y = sizes[case % sizes.len()].min(params.bits_per_poly());
        let (db, query) = random_case(&mut rng, &params, max_db_bits, y);
        let edb = matcher::prepare_database(&db, &pk, &params, mode.encrypt_mode(), &mut rng).map_err(he)?;
        let queries = matcher::prepare_query(&query, &pk, &params, mode.encrypt_mode(), &mut rng).map_err(he)?;
        let kit = MatchPolynomialKit::new(&params, &pk, mode.encrypt_mode(), &mut rng).map_err(he)?;
        let adder = adder_for(engine, params);
        let results = matcher::search_all(adder.as_ref(), &edb, &queries).map_err(he)?;
        let got = matcher::generate_indices(&results, &kit, db.len(), &query, Some(&sk), &params, mode.detection())
            .map_err(he)?;
        let expected = matcher::plaintext_oracle(&db, &query, &params).map_err(he)?;
        rows.push(VerifyCase {
            case,
            db_bits: db.len(),
            query_bits: y,
            shifts: queries.len(),
            matches: expected.len(),
            agree: got == expected,
        });
    }
    let mismatches: Vec<usize> = rows.iter().filter(|r| !r.agree).map(|r| r.case).collect();
    if let Some(path) = out {
        session.write_json(path, &rows)?;
        session.finish(&files::manifest_for(path), Some(params), Some(seed))?;
    }
    println!(
        "verified {cases} cases (seed {seed}): {} agree, {} mismatch",
        cases - mismatches.len(),
        mismatches.len()
    );
    if !mismatches.is_empty() {
        return Err(coded(Kind::VerifyMismatch, format!("oracle mismatch in cases {mismatches:?}")));
    }
    Ok(())
}
