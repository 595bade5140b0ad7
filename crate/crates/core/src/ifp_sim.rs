//! Functional model of a NAND flash plane with one sensing latch and three
//! data latches, able to run bit-serial addition over vertically laid out
//! operands. Timing lives in [`crate::cost_model`].

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bfv::{Ciphertext, CiphertextAdder, HeError};
use crate::ring::{HeParams, PolyQ};

pub const DEFAULT_BITLINES: usize = 32768;
pub const PAGE_BYTES: usize = 4096;
pub const DATA_LATCHES: usize = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IfpError {
    #[error("wordline {wl} out of range ({wordlines} wordlines)")]
    WordlineOutOfRange { wl: usize, wordlines: usize },
    #[error("data latch {0} out of range")]
    LatchOutOfRange(usize),
    #[error("input page {0} has not been staged")]
    InputMissing(usize),
    #[error("width mismatch: expected {expected} bitlines, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("layout mismatch: {0}")]
    Layout(String),
    #[error("page must be {PAGE_BYTES} bytes, got {0}")]
    PageSize(usize),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    He(#[from] HeError),
}

/// Fixed-width bit vector, one bit per bitline.
#[derive(Clone, PartialEq, Eq)]
pub struct BitVec {
    words: Vec<u64>,
    len: usize,
}

impl BitVec {
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut v = Self::from_fn(len, |_| true);
        v.clear_tail();
        v
    }

    pub fn from_fn(len: usize, mut f: impl FnMut(usize) -> bool) -> Self {
        let mut v = Self::zeros(len);
        for i in 0..len {
            if f(i) {
                v.words[i / 64] |= 1 << (i % 64);
            }
        }
        v
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        Self::from_fn(bits.len(), |i| bits[i])
    }

    fn clear_tail(&mut self) {
        if self.len % 64 != 0 {
            let last = self.words.len() - 1;
            self.words[last] &= (1u64 << (self.len % 64)) - 1;
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, bit: bool) {
        let mask = 1 << (i % 64);
        if bit {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    /// Backing words, bitline `i` at bit `i % 64` of word `i / 64`.
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn zip_with(&mut self, other: &BitVec, f: impl Fn(u64, u64) -> u64) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a = f(*a, *b);
        }
    }
}

impl fmt::Debug for BitVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitVec[{}; ones={}]", self.len, self.count_ones())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum MicroOp {
    /// S := cells[wl]
    ReadWl { wl: usize },
    /// S := staged input page
    LoadInput { page: usize },
    /// D[d] := S
    CopyS2D { d: usize },
    /// S := D[d]
    CopyD2S { d: usize },
    /// S := S & D[d]
    AndSD { d: usize },
    /// D[d] := S | D[d]
    OrSD { d: usize },
    /// D1 := D1 ^ D2
    XorD1D2,
    /// emit D[d] to the output buffer
    OutputD { d: usize },
}

impl MicroOp {
    fn latch(&self) -> Option<usize> {
        match *self {
            MicroOp::CopyS2D { d }
            | MicroOp::CopyD2S { d }
            | MicroOp::AndSD { d }
            | MicroOp::OrSD { d }
            | MicroOp::OutputD { d } => Some(d),
            _ => None,
        }
    }
}

impl fmt::Display for MicroOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MicroOp::ReadWl { wl } => write!(f, "READ wl={wl}"),
            MicroOp::LoadInput { page } => write!(f, "LOAD page={page}"),
            MicroOp::CopyS2D { d } => write!(f, "COPY_S2D d={d}"),
            MicroOp::CopyD2S { d } => write!(f, "COPY_D2S d={d}"),
            MicroOp::AndSD { d } => write!(f, "AND_SD d={d}"),
            MicroOp::OrSD { d } => write!(f, "OR_SD d={d}"),
            MicroOp::XorD1D2 => write!(f, "XOR_D1D2"),
            MicroOp::OutputD { d } => write!(f, "OUTPUT d={d}"),
        }
    }
}

impl FromStr for MicroOp {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, String> {
        let mut parts = line.split_whitespace();
        let name = parts.next().ok_or("empty line")?.to_ascii_uppercase();
        let mut arg: Option<(String, usize)> = None;
        for part in parts {
            if arg.is_some() {
                return Err(format!("unexpected argument `{part}`"));
            }
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got `{part}`"))?;
            let value = value
                .parse()
                .map_err(|_| format!("`{value}` is not a non-negative integer"))?;
            arg = Some((key.to_ascii_lowercase(), value));
        }
        let want = |key: &str, default: Option<usize>| -> Result<usize, String> {
            match (&arg, default) {
                (Some((k, v)), _) if k == key => Ok(*v),
                (Some((k, _)), _) => Err(format!("{name} takes `{key}=`, not `{k}=`")),
                (None, Some(v)) => Ok(v),
                (None, None) => Err(format!("{name} needs `{key}=`")),
            }
        };
        Ok(match name.as_str() {
            "READ" => MicroOp::ReadWl { wl: want("wl", None)? },
            "LOAD" => MicroOp::LoadInput { page: want("page", Some(0))? },
            "COPY_S2D" => MicroOp::CopyS2D { d: want("d", None)? },
            "COPY_D2S" => MicroOp::CopyD2S { d: want("d", None)? },
            "AND_SD" => MicroOp::AndSD { d: want("d", Some(1))? },
            "OR_SD" => MicroOp::OrSD { d: want("d", None)? },
            "OUTPUT" => MicroOp::OutputD { d: want("d", Some(1))? },
            "XOR_D1D2" => {
                if arg.is_some() {
                    return Err("XOR_D1D2 takes no arguments".into());
                }
                MicroOp::XorD1D2
            }
            other => return Err(format!("unknown micro-op `{other}`")),
        })
    }
}

/// Parses one micro-op per line; `#` starts a comment.
pub fn parse_program(text: &str) -> Result<Vec<MicroOp>, IfpError> {
    let mut ops = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let op = line.parse().map_err(|msg| IfpError::Parse { line: i + 1, msg })?;
        ops.push(op);
    }
    Ok(ops)
}

pub fn format_program(ops: &[MicroOp]) -> String {
    ops.iter().map(|op| format!("{op}\n")).collect()
}

/// Operation counts by category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpStats {
    pub read_wl: u64,
    pub load_input: u64,
    pub transfers: u64,
    pub and_or: u64,
    pub xor: u64,
    pub outputs: u64,
}

impl OpStats {
    pub fn of(ops: &[MicroOp]) -> Self {
        let mut s = Self::default();
        for op in ops {
            s.record(op);
        }
        s
    }

    fn record(&mut self, op: &MicroOp) {
        match op {
            MicroOp::ReadWl { .. } => self.read_wl += 1,
            MicroOp::LoadInput { .. } => self.load_input += 1,
            MicroOp::CopyS2D { .. } | MicroOp::CopyD2S { .. } => self.transfers += 1,
            MicroOp::AndSD { .. } | MicroOp::OrSD { .. } => self.and_or += 1,
            MicroOp::XorD1D2 => self.xor += 1,
            MicroOp::OutputD { .. } => self.outputs += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.read_wl + self.load_input + self.transfers + self.and_or + self.xor + self.outputs
    }

    pub fn merge(&mut self, other: &OpStats) {
        self.read_wl += other.read_wl;
        self.load_input += other.load_input;
        self.transfers += other.transfers;
        self.and_or += other.and_or;
        self.xor += other.xor;
        self.outputs += other.outputs;
    }
}

/// One plane: SLC cells plus the latch stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlaneState {
    pub cells: Vec<BitVec>,
    pub s_latch: BitVec,
    pub d_latch: [BitVec; DATA_LATCHES],
    pub op_trace: Vec<MicroOp>,
    pub inputs: Vec<BitVec>,
    pub outputs: Vec<BitVec>,
    bitlines: usize,
}

impl PlaneState {
    pub fn new(wordlines: usize, bitlines: usize) -> Self {
        let z = BitVec::zeros(bitlines);
        Self {
            cells: vec![z.clone(); wordlines],
            s_latch: z.clone(),
            d_latch: [z.clone(), z.clone(), z],
            op_trace: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            bitlines,
        }
    }

    pub fn bitlines(&self) -> usize {
        self.bitlines
    }

    pub fn wordlines(&self) -> usize {
        self.cells.len()
    }

    fn check_width(&self, v: &BitVec) -> Result<(), IfpError> {
        if v.len() != self.bitlines {
            return Err(IfpError::WidthMismatch {
                expected: self.bitlines,
                got: v.len(),
            });
        }
        Ok(())
    }

    pub fn program_wordline(&mut self, wl: usize, data: BitVec) -> Result<(), IfpError> {
        self.check_width(&data)?;
        let wordlines = self.cells.len();
        let cell = self
            .cells
            .get_mut(wl)
            .ok_or(IfpError::WordlineOutOfRange { wl, wordlines })?;
        *cell = data;
        Ok(())
    }

    /// Makes a page available to `LoadInput`; returns its index.
    pub fn stage_input(&mut self, page: BitVec) -> Result<usize, IfpError> {
        self.check_width(&page)?;
        self.inputs.push(page);
        Ok(self.inputs.len() - 1)
    }

    /// Zeroes all latches, as at the start of a new addition.
    pub fn reset_latches(&mut self) {
        let z = BitVec::zeros(self.bitlines);
        self.s_latch = z.clone();
        self.d_latch = [z.clone(), z.clone(), z];
    }

    pub fn apply(&mut self, op: MicroOp) -> Result<(), IfpError> {
        if let Some(d) = op.latch() {
            if d >= DATA_LATCHES {
                return Err(IfpError::LatchOutOfRange(d));
            }
        }
        match op {
            MicroOp::ReadWl { wl } => {
                let wordlines = self.cells.len();
                let row = self
                    .cells
                    .get(wl)
                    .ok_or(IfpError::WordlineOutOfRange { wl, wordlines })?;
                self.s_latch.clone_from(row);
            }
            MicroOp::LoadInput { page } => {
                let input = self.inputs.get(page).ok_or(IfpError::InputMissing(page))?;
                self.s_latch.clone_from(input);
            }
            MicroOp::CopyS2D { d } => self.d_latch[d].clone_from(&self.s_latch),
            MicroOp::CopyD2S { d } => self.s_latch.clone_from(&self.d_latch[d]),
            MicroOp::AndSD { d } => self.s_latch.zip_with(&self.d_latch[d], |s, x| s & x),
            MicroOp::OrSD { d } => {
                let s = &self.s_latch;
                self.d_latch[d].zip_with(s, |x, s| x | s);
            }
            MicroOp::XorD1D2 => {
                let [_, d1, d2] = &mut self.d_latch;
                d1.zip_with(d2, |a, b| a ^ b);
            }
            MicroOp::OutputD { d } => self.outputs.push(self.d_latch[d].clone()),
        }
        self.op_trace.push(op);
        Ok(())
    }

    pub fn run(&mut self, ops: &[MicroOp]) -> Result<(), IfpError> {
        ops.iter().try_for_each(|&op| self.apply(op))
    }

    /// One full-adder step: operand bit A from `a_wl`, bit B from staged
    /// input `b_page`, carry in and out through D2. Returns the sum bits.
    pub fn bit_add_step(&mut self, a_wl: usize, b_page: usize) -> Result<BitVec, IfpError> {
        let before = self.outputs.len();
        self.run(&bit_add_program(a_wl, b_page))?;
        debug_assert_eq!(self.outputs.len(), before + 1);
        Ok(self.outputs.pop().expect("program ends with an output"))
    }

    /// `A + B mod 2^w` per bitline, where A is stored per `layout` and
    /// `b_planes` holds B's bit planes LSB first. Returns the sum planes.
    pub fn bit_serial_add(
        &mut self,
        layout: &VerticalLayout,
        b_planes: &[BitVec],
    ) -> Result<Vec<BitVec>, IfpError> {
        layout.check(self)?;
        if b_planes.len() != layout.word_bits as usize {
            return Err(IfpError::Layout(format!(
                "{} operand planes for {}-bit words",
                b_planes.len(),
                layout.word_bits
            )));
        }
        self.reset_latches();
        let mut sums = Vec::with_capacity(b_planes.len());
        for (bit, plane) in b_planes.iter().enumerate() {
            let page = self.stage_input(plane.clone())?;
            sums.push(self.bit_add_step(layout.base_wordline + bit, page)?);
        }
        self.inputs.clear();
        Ok(sums)
    }
}

/// The 13 micro-ops of one bit-serial addition step.
pub fn bit_add_program(a_wl: usize, b_page: usize) -> [MicroOp; 13] {
    use MicroOp::*;
    [
        LoadInput { page: b_page }, // S = B
        CopyS2D { d: 1 },           // D1 = B
        AndSD { d: 2 },             // S = B·C
        XorD1D2,                    // D1 = B ^ C
        CopyS2D { d: 0 },           // D0 = B·C
        ReadWl { wl: a_wl },        // S = A
        CopyS2D { d: 2 },           // D2 = A
        AndSD { d: 1 },             // S = A·(B ^ C)
        XorD1D2,                    // D1 = A ^ B ^ C
        CopyS2D { d: 2 },           // D2 = A·(B ^ C)
        CopyD2S { d: 0 },           // S = B·C
        OrSD { d: 2 },              // D2 = carry out
        OutputD { d: 1 },
    ]
}

/// Coefficient `i` on bitline `i`, bit `j` (LSB first) on wordline `base + j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerticalLayout {
    pub base_wordline: usize,
    pub word_bits: u32,
    pub bitlines: usize,
}

impl VerticalLayout {
    pub fn new(word_bits: u32, bitlines: usize) -> Self {
        Self {
            base_wordline: 0,
            word_bits,
            bitlines,
        }
    }

    fn check(&self, state: &PlaneState) -> Result<(), IfpError> {
        if !(1..=32).contains(&self.word_bits) {
            return Err(IfpError::Layout(format!("word width {}", self.word_bits)));
        }
        if self.bitlines != state.bitlines() {
            return Err(IfpError::WidthMismatch {
                expected: state.bitlines(),
                got: self.bitlines,
            });
        }
        let needed = self.base_wordline + self.word_bits as usize;
        if needed > state.wordlines() {
            return Err(IfpError::WordlineOutOfRange {
                wl: needed - 1,
                wordlines: state.wordlines(),
            });
        }
        Ok(())
    }

    /// Programs `words` (at most `bitlines` of them) into the plane.
    pub fn store(&self, state: &mut PlaneState, words: &[u32]) -> Result<(), IfpError> {
        self.check(state)?;
        for (j, plane) in to_bit_planes(words, self.word_bits, self.bitlines)?
            .into_iter()
            .enumerate()
        {
            state.program_wordline(self.base_wordline + j, plane)?;
        }
        Ok(())
    }

    pub fn load(&self, state: &PlaneState, count: usize) -> Result<Vec<u32>, IfpError> {
        self.check(state)?;
        let rows = &state.cells[self.base_wordline..self.base_wordline + self.word_bits as usize];
        Ok(from_bit_planes(rows, count))
    }
}

/// Bit planes (LSB first) of `words`, padded with zero bitlines.
pub fn to_bit_planes(words: &[u32], word_bits: u32, bitlines: usize) -> Result<Vec<BitVec>, IfpError> {
    if words.len() > bitlines {
        return Err(IfpError::WidthMismatch {
            expected: bitlines,
            got: words.len(),
        });
    }
    let mut planes = vec![BitVec::zeros(bitlines); word_bits as usize];
    for (k, group) in words.chunks(64).enumerate() {
        for (j, plane) in planes.iter_mut().enumerate() {
            let mut packed = 0u64;
            for (i, &w) in group.iter().enumerate() {
                packed |= (((w >> j) & 1) as u64) << i;
            }
            plane.words[k] = packed;
        }
    }
    Ok(planes)
}

pub fn from_bit_planes(planes: &[BitVec], count: usize) -> Vec<u32> {
    let mut out = vec![0u32; count];
    for (k, group) in out.chunks_mut(64).enumerate() {
        for (j, plane) in planes.iter().enumerate() {
            let packed = plane.words[k];
            for (i, w) in group.iter_mut().enumerate() {
                *w |= (((packed >> i) & 1) as u32) << j;
            }
        }
    }
    out
}

/// Homomorphic addition executed inside simulated planes. Coefficients of
/// `c0 ‖ c1` occupy consecutive bitlines; one plane per `bitlines` of them.
pub fn hom_add_in_flash(
    params: &HeParams,
    a: &Ciphertext,
    b: &Ciphertext,
    bitlines: usize,
    stats: &mut OpStats,
) -> Result<Ciphertext, IfpError> {
    for ct in [a, b] {
        if ct.c0.n() != params.n || ct.c1.n() != params.n || ct.c0.q_bits() != params.q_bits {
            return Err(IfpError::Layout("ciphertext does not match parameters".into()));
        }
    }
    let flat = |ct: &Ciphertext| [ct.c0.coeffs(), ct.c1.coeffs()].concat();
    let (fa, fb) = (flat(a), flat(b));
    let layout = VerticalLayout::new(params.q_bits, bitlines);
    let mut sum = Vec::with_capacity(fa.len());
    for (ca, cb) in fa.chunks(bitlines).zip(fb.chunks(bitlines)) {
        let mut plane = PlaneState::new(params.q_bits as usize, bitlines);
        layout.store(&mut plane, ca)?;
        let b_planes = to_bit_planes(cb, params.q_bits, bitlines)?;
        let out = plane.bit_serial_add(&layout, &b_planes)?;
        sum.extend(from_bit_planes(&out, ca.len()));
        stats.merge(&OpStats::of(&plane.op_trace));
    }
    let (s0, s1) = sum.split_at(params.n);
    let poly = |c: &[u32]| PolyQ::from_coeffs(params, c.to_vec()).map_err(HeError::from);
    Ok(Ciphertext {
        c0: poly(s0)?,
        c1: poly(s1)?,
        level: a.level.max(b.level) + 1,
    })
}

/// [`CiphertextAdder`] backed by the plane simulator; accumulates op counts.
#[derive(Debug)]
pub struct FlashAdder {
    params: HeParams,
    bitlines: usize,
    adds: AtomicU64,
    ops: std::sync::Mutex<OpStats>,
}

impl FlashAdder {
    pub fn new(params: HeParams) -> Self {
        Self::with_bitlines(params, DEFAULT_BITLINES)
    }

    pub fn with_bitlines(params: HeParams, bitlines: usize) -> Self {
        Self {
            params,
            bitlines,
            adds: AtomicU64::new(0),
            ops: Default::default(),
        }
    }

    pub fn additions(&self) -> u64 {
        self.adds.load(Ordering::Relaxed)
    }

    pub fn op_stats(&self) -> OpStats {
        *self.ops.lock().expect("stats lock")
    }
}

impl CiphertextAdder for FlashAdder {
    fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        let mut stats = OpStats::default();
        let out = hom_add_in_flash(&self.params, a, b, self.bitlines, &mut stats).map_err(|e| match e {
            IfpError::He(he) => he,
            other => HeError::Malformed {
                what: "flash addition",
                reason: other.to_string(),
            },
        })?;
        self.adds.fetch_add(1, Ordering::Relaxed);
        self.ops.lock().expect("stats lock").merge(&stats);
        Ok(out)
    }
}

fn page_words(page: &[u8]) -> Result<Vec<u32>, IfpError> {
    if page.len() != PAGE_BYTES {
        return Err(IfpError::PageSize(page.len()));
    }
    Ok(page
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

/// Transposes each 32×32 bit block of a 4 KiB page of little-endian u32
/// words: bit `c` of word `32k + r` becomes bit `r` of word `32k + c`.
/// Applying it twice gives back the input.
pub fn transpose_page(page: &[u8]) -> Result<Vec<u8>, IfpError> {
    let words = page_words(page)?;
    let mut out = vec![0u32; words.len()];
    for (block_in, block_out) in words.chunks_exact(32).zip(out.chunks_exact_mut(32)) {
        for (r, &w) in block_in.iter().enumerate() {
            for (c, o) in block_out.iter_mut().enumerate() {
                *o |= ((w >> c) & 1) << r;
            }
        }
    }
    Ok(out.iter().flat_map(|w| w.to_le_bytes()).collect())
}

/// Gathers a transposed page into 32 wordline rows of 1024 bitlines:
/// row `j` holds bit `j` of every original word.
pub fn transposed_page_to_wordlines(page: &[u8]) -> Result<Vec<BitVec>, IfpError> {
    let words = page_words(page)?;
    let bitlines = words.len();
    Ok((0..32)
        .map(|j| BitVec::from_fn(bitlines, |i| (words[(i / 32) * 32 + j] >> (i % 32)) & 1 == 1))
        .collect())
}
