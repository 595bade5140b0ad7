use std::path::Path;
use std::time::Instant;

use anyhow::Result;
use ciphermatch::bfv::{keygen, EncryptMode, Evaluator};
use ciphermatch::cost_model::{self, CostBreakdown, CostConfig, ShiftPolicy, System, Workload as ModelWorkload, GIB};
use ciphermatch::matcher::{self, DetectionMode, MatchPolynomialKit};
use ciphermatch::packing::BitString;
use ciphermatch::ring::HeParams;
use rand::Rng;
use serde::Serialize;

use crate::commands::{rng_for, seed_of};
use crate::dna;
use crate::error::{self, coded, Kind};
use crate::files::{self, Session};
use crate::{Common, Workload};

pub const FUNCTIONAL_CSV: &str = "functional.csv";
pub const FUNCTIONAL_TIMINGS: &str = "functional_timings.json";
pub const MODEL_CSV: &str = "model.csv";
pub const MODEL_JSON: &str = "model.json";

const QUERY_BITS: [usize; 5] = [16, 32, 64, 128, 256];

#[derive(Debug, Serialize)]
struct FunctionalRow {
    workload: &'static str,
    db_bits: usize,
    query_bits: usize,
    ciphertexts: usize,
    shifts: usize,
    hom_add: u64,
    matches: usize,
    oracle_matches: usize,
    agree: bool,
}

#[derive(Debug, Serialize)]
struct Timing {
    query_bits: usize,
    encrypt_db_ms: f64,
    prepare_query_ms: f64,
    search_ms: f64,
    index_gen_ms: f64,
}

#[derive(Debug, Serialize)]
struct ModelReport<'a> {
    scale: &'static str,
    shift_policy: ShiftPolicy,
    config: &'a CostConfig,
    overlap: cost_model::OverlapReport,
    t_bop_add_ns: f64,
    t_bit_add_ns: f64,
    t_bit_add_published_ns: f64,
    e_bit_add_nj: f64,
    e_bit_add_published_nj: f64,
    breakdowns: Vec<(ModelWorkload, CostBreakdown)>,
    rows: &'a [cost_model::SweepRow],
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn name(w: Workload) -> &'static str {
    match w {
        Workload::Dna => "dna",
        Workload::Dbsearch => "dbsearch",
    }
}

/// Desk-scale database plus one query per row, drawn from the database so
/// matches can occur.
fn functional_inputs(workload: Workload, db_bytes: usize, rng: &mut impl Rng) -> (BitString, Vec<BitString>) {
    let db: Vec<bool> = match workload {
        Workload::Dna => dna::encode(&dna::random_sequence(rng, db_bytes * 4)).expect("generated bases"),
        Workload::Dbsearch => (0..db_bytes * 8).map(|_| rng.random()).collect(),
    };
    let sizes: Vec<usize> = match workload {
        Workload::Dna => QUERY_BITS.to_vec(),
        Workload::Dbsearch => vec![16; 4],
    };
    let queries = sizes
        .into_iter()
        .map(|y| {
            let y = y.min(db.len());
            // aligned to the 16-bit coefficient grid so the query is detectable
            let slots = (db.len() - y) / 16;
            let at = 16 * rng.random_range(0..=slots);
            BitString::new(db[at..at + y].to_vec()).unwrap()
        })
        .collect();
    (BitString::new(db).unwrap(), queries)
}

fn model_workloads(workload: Workload) -> Vec<ModelWorkload> {
    match workload {
        Workload::Dna => QUERY_BITS.iter().map(|&q| ModelWorkload::new(128 * GIB, q as u64, 1)).collect(),
        Workload::Dbsearch => [8, 16, 32, 64, 128].iter().map(|&g| ModelWorkload::new(g * GIB, 16, 1000)).collect(),
    }
}

pub fn run(common: &Common, workload: Workload, out: &Path, db_bytes: usize, cost_config: Option<&Path>) -> Result<()> {
    let mut session = Session::default();
    let params: HeParams = files::load_params(&mut session, common.params.as_deref())?;
    let cfg: CostConfig = match cost_config {
        Some(path) => session.read_json(path)?,
        None => CostConfig::default(),
    };
    cfg.validate().map_err(|e| error::format("cost config", e))?;
    if db_bytes == 0 {
        return Err(coded(Kind::Format, "--db-bytes must be positive"));
    }
    let seed = seed_of(common);
    let mut rng = rng_for(seed);

    let (db, queries) = functional_inputs(workload, db_bytes, &mut rng);
    let (sk, pk) = keygen(&params, &mut rng)?;
    let t = Instant::now();
    let edb = matcher::prepare_database(&db, &pk, &params, EncryptMode::Standard, &mut rng)?;
    let encrypt_db_ms = ms(t);
    let kit = MatchPolynomialKit::new(&params, &pk, EncryptMode::Standard, &mut rng)?;
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for query in &queries {
        let t = Instant::now();
        let prepared = matcher::prepare_query(query, &pk, &params, EncryptMode::Standard, &mut rng)?;
        let prepare_query_ms = ms(t);
        let ev = Evaluator::new(params);
        let t = Instant::now();
        let results = matcher::search_all(&ev, &edb, &prepared)?;
        let search_ms = ms(t);
        let t = Instant::now();
        let got = matcher::generate_indices(&results, &kit, db.len(), query, Some(&sk), &params, DetectionMode::ClientDecrypt)?;
        let index_gen_ms = ms(t);
        let expected = matcher::plaintext_oracle(&db, query, &params)?;
        rows.push(FunctionalRow {
            workload: name(workload),
            db_bits: db.len(),
            query_bits: query.len(),
            ciphertexts: edb.cts.len(),
            shifts: prepared.len(),
            hom_add: ev.counts().hom_add,
            matches: got.len(),
            oracle_matches: expected.len(),
            agree: got == expected,
        });
        timings.push(Timing {
            query_bits: query.len(),
            encrypt_db_ms,
            prepare_query_ms,
            search_ms,
            index_gen_ms,
        });
    }
    let mut csv_out = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        csv_out.serialize(row)?;
    }
    session.write(&out.join(FUNCTIONAL_CSV), &csv_out.into_inner()?)?;
    session.write_json(&out.join(FUNCTIONAL_TIMINGS), &timings)?;

    let model = model_workloads(workload);
    let sweep = cost_model::sweep(&model, &System::ALL, &cfg).map_err(|e| error::format("cost model", e))?;
    session.write(
        &out.join(MODEL_CSV),
        cost_model::sweep_csv(&sweep).map_err(|e| error::format("cost model", e))?.as_bytes(),
    )?;
    let mut breakdowns = Vec::new();
    for w in &model {
        for s in System::ALL {
            breakdowns.push((*w, cost_model::cost(s, w, &cfg).map_err(|e| error::format("cost model", e))?));
        }
    }
    let report = ModelReport {
        scale: "analytic model at full evaluation scale; not measured",
        shift_policy: ShiftPolicy::CoefficientAligned,
        config: &cfg,
        overlap: cfg.overlap_report(),
        t_bop_add_ns: cost_model::t_bop_add(&cfg.nand),
        t_bit_add_ns: cost_model::t_bit_add(&cfg.nand),
        t_bit_add_published_ns: cost_model::NandTimingParams::PUBLISHED_T_BIT_ADD_NS,
        e_bit_add_nj: cost_model::e_bit_add(&cfg.nand, cfg.topology.page_bytes),
        e_bit_add_published_nj: cost_model::NandTimingParams::PUBLISHED_E_BIT_ADD_NJ,
        breakdowns,
        rows: &sweep,
    };
    session.write_json(&out.join(MODEL_JSON), &report)?;
    session.finish(&out.join(files::MANIFEST_FILE), Some(params), Some(seed))?;

    let disagree = rows.iter().filter(|r| !r.agree).count();
    println!(
        "{}: {} functional rows at {} plaintext bits ({} disagree with the oracle); {} model rows",
        name(workload),
        rows.len(),
        db.len(),
        disagree,
        sweep.len()
    );
    if disagree > 0 {
        return Err(coded(Kind::VerifyMismatch, "functional run disagrees with the oracle"));
    }
    Ok(())
}
