use std::path::{Path, PathBuf};

use anyhow::Result;
use ciphermatch::ifp_sim::{
    self, from_bit_planes, to_bit_planes, BitVec, IfpError, MicroOp, OpStats, PlaneState, VerticalLayout,
};
use rand::Rng;
use serde::Serialize;

use crate::commands::{rng_for, seed_of};
use crate::error::{self, coded, Kind};
use crate::files::{self, Session};
use crate::Common;

pub struct SimArgs {
    pub program: Option<PathBuf>,
    pub add: bool,
    pub width: usize,
    pub word_bits: u32,
    pub wordlines: usize,
    pub trace: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct LatchDump {
    bitlines: usize,
    trace_len: usize,
    stats: OpStats,
    s_latch: String,
    d_latch: Vec<String>,
    outputs: Vec<String>,
}

#[derive(Debug, Serialize)]
struct AddReport {
    bitlines: usize,
    word_bits: u32,
    lanes_checked: usize,
    correct: bool,
    stats: OpStats,
    sample: Vec<[u32; 3]>,
}

fn hex(v: &BitVec) -> String {
    v.words().iter().map(|w| format!("{w:016x}")).collect()
}

fn dump(state: &PlaneState) -> LatchDump {
    LatchDump {
        bitlines: state.bitlines(),
        trace_len: state.op_trace.len(),
        stats: OpStats::of(&state.op_trace),
        s_latch: hex(&state.s_latch),
        d_latch: state.d_latch.iter().map(hex).collect(),
        outputs: state.outputs.iter().map(hex).collect(),
    }
}

fn sim_error(e: IfpError, what: &Path) -> anyhow::Error {
    match e {
        IfpError::Parse { .. } => error::format(what.display(), e),
        other => coded(Kind::Format, format!("{}: {other}", what.display())),
    }
}

fn trace_lines(ops: &[MicroOp]) -> Result<String> {
    let mut out = String::new();
    for (step, op) in ops.iter().enumerate() {
        let mut value = serde_json::to_value(op)?;
        value["step"] = step.into();
        out.push_str(&serde_json::to_string(&value)?);
        out.push('\n');
    }
    Ok(out)
}

fn random_vec(rng: &mut impl Rng, len: usize) -> BitVec {
    BitVec::from_fn(len, |_| rng.random())
}

pub fn run(common: &Common, args: &SimArgs) -> Result<()> {
    let mut session = Session::default();
    let seed = seed_of(common);
    let mut rng = rng_for(seed);
    if args.width == 0 {
        return Err(coded(Kind::Format, "plane width must be positive"));
    }
    let (state, body) = if args.add {
        if !(1..=32).contains(&args.word_bits) {
            return Err(coded(Kind::Format, "word width must be 1..=32"));
        }
        let mask = if args.word_bits == 32 { u32::MAX } else { (1 << args.word_bits) - 1 };
        let a: Vec<u32> = (0..args.width).map(|_| rng.random::<u32>() & mask).collect();
        let b: Vec<u32> = (0..args.width).map(|_| rng.random::<u32>() & mask).collect();
        let layout = VerticalLayout::new(args.word_bits, args.width);
        let mut state = PlaneState::new(args.word_bits as usize, args.width);
        layout.store(&mut state, &a).map_err(|e| anyhow::anyhow!(e))?;
        let planes = to_bit_planes(&b, args.word_bits, args.width).map_err(|e| anyhow::anyhow!(e))?;
        let sums = from_bit_planes(&state.bit_serial_add(&layout, &planes).map_err(|e| anyhow::anyhow!(e))?, args.width);
        let correct = (0..args.width).all(|i| sums[i] == a[i].wrapping_add(b[i]) & mask);
        let report = AddReport {
            bitlines: args.width,
            word_bits: args.word_bits,
            lanes_checked: args.width,
            correct,
            stats: OpStats::of(&state.op_trace),
            sample: (0..args.width.min(8)).map(|i| [a[i], b[i], sums[i]]).collect(),
        };
        if !correct {
            return Err(coded(Kind::VerifyMismatch, "bit-serial sum differs from integer addition"));
        }
        (state, serde_json::to_string_pretty(&report)?)
    } else {
        let path = args.program.as_deref().expect("clap requires --program without --add");
        let text = session.read_text(path)?;
        let program = ifp_sim::parse_program(&text).map_err(|e| sim_error(e, path))?;
        let mut state = PlaneState::new(args.wordlines, args.width);
        for wl in 0..args.wordlines {
            state.program_wordline(wl, random_vec(&mut rng, args.width)).expect("width matches");
        }
        let pages = program
            .iter()
            .filter_map(|op| match op {
                MicroOp::LoadInput { page } => Some(page + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        for _ in 0..pages {
            state.stage_input(random_vec(&mut rng, args.width)).expect("width matches");
        }
        state.run(&program).map_err(|e| sim_error(e, path))?;
        let text = serde_json::to_string_pretty(&dump(&state))?;
        (state, text)
    };
    if let Some(path) = &args.trace {
        session.write(path, trace_lines(&state.op_trace)?.as_bytes())?;
    }
    match &args.out {
        Some(path) => {
            session.write(path, format!("{body}\n").as_bytes())?;
            session.finish(&files::manifest_for(path), None, Some(seed))?;
        }
        None => println!("{body}"),
    }
    Ok(())
}
