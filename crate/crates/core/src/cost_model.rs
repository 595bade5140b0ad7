//! Analytic latency and energy models for the four evaluated systems.
//!
//! All durations are nanoseconds and all energies nanojoules, as `f64`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("unknown system `{0}` (expected cm-sw, cm-pum, cm-pum-ssd or cm-ifp)")]
    UnknownSystem(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("csv output failed: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyBasis {
    /// One operation on one page, issued on a channel.
    PerChannel,
    /// Scales with the number of KiB processed.
    PerKib,
    /// One page-sized unit of work.
    PerPage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Energy {
    pub nj: f64,
    pub basis: EnergyBasis,
}

impl Energy {
    pub const fn new(nj: f64, basis: EnergyBasis) -> Self {
        Self { nj, basis }
    }

    /// Energy of one operation on a page of `page_bytes`.
    pub fn for_page(&self, page_bytes: u64) -> f64 {
        match self.basis {
            EnergyBasis::PerKib => self.nj * page_bytes as f64 / 1024.0,
            EnergyBasis::PerChannel | EnergyBasis::PerPage => self.nj,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NandTimingParams {
    pub t_read_ns: f64,
    pub t_xor_ns: f64,
    pub t_latch_transfer_ns: f64,
    pub t_and_or_ns: f64,
    pub t_dma_ns: f64,
    pub t_index_gen_ns: f64,
    pub t_transpose_ns: f64,
    pub e_read: Energy,
    pub e_xor: Energy,
    pub e_latch_transfer: Energy,
    pub e_and_or: Energy,
    pub e_dma: Energy,
    pub e_index_gen: Energy,
}

impl Default for NandTimingParams {
    fn default() -> Self {
        use EnergyBasis::*;
        Self {
            t_read_ns: 22_500.0,
            t_xor_ns: 30.0,
            t_latch_transfer_ns: 20.0,
            t_and_or_ns: 20.0,
            t_dma_ns: 3_300.0,
            t_index_gen_ns: 3_420.0,
            t_transpose_ns: 13_600.0,
            e_read: Energy::new(20_500.0, PerChannel),
            e_xor: Energy::new(20.0, PerKib),
            e_latch_transfer: Energy::new(10.0, PerKib),
            e_and_or: Energy::new(10.0, PerKib),
            e_dma: Energy::new(7_656.0, PerChannel),
            e_index_gen: Energy::new(180.0, PerPage),
        }
    }
}

impl NandTimingParams {
    /// Published per-bit addition latency, for comparison with [`t_bit_add`].
    pub const PUBLISHED_T_BIT_ADD_NS: f64 = 29_380.0;
    /// Published per-bit addition energy, for comparison with [`e_bit_add`].
    pub const PUBLISHED_E_BIT_ADD_NJ: f64 = 32_220.0;

    pub fn zeroed() -> Self {
        let z = |e: Energy| Energy::new(0.0, e.basis);
        let d = Self::default();
        Self {
            t_read_ns: 0.0,
            t_xor_ns: 0.0,
            t_latch_transfer_ns: 0.0,
            t_and_or_ns: 0.0,
            t_dma_ns: 0.0,
            t_index_gen_ns: 0.0,
            t_transpose_ns: 0.0,
            e_read: z(d.e_read),
            e_xor: z(d.e_xor),
            e_latch_transfer: z(d.e_latch_transfer),
            e_and_or: z(d.e_and_or),
            e_dma: z(d.e_dma),
            e_index_gen: z(d.e_index_gen),
        }
    }

    fn validate(&self) -> Result<(), CostError> {
        let fields = [
            ("t_read_ns", self.t_read_ns),
            ("t_xor_ns", self.t_xor_ns),
            ("t_latch_transfer_ns", self.t_latch_transfer_ns),
            ("t_and_or_ns", self.t_and_or_ns),
            ("t_dma_ns", self.t_dma_ns),
            ("t_index_gen_ns", self.t_index_gen_ns),
            ("t_transpose_ns", self.t_transpose_ns),
            ("e_read", self.e_read.nj),
            ("e_xor", self.e_xor.nj),
            ("e_latch_transfer", self.e_latch_transfer.nj),
            ("e_and_or", self.e_and_or.nj),
            ("e_dma", self.e_dma.nj),
            ("e_index_gen", self.e_index_gen.nj),
        ];
        positive(&fields)
    }
}

fn positive(fields: &[(&str, f64)]) -> Result<(), CostError> {
    for (name, v) in fields {
        if !(v.is_finite() && *v > 0.0) {
            return Err(CostError::InvalidConfig(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(())
}

/// Latency of one in-flash bulk operation step of bit-serial addition.
pub fn t_bop_add(p: &NandTimingParams) -> f64 {
    p.t_read_ns + 2.0 * p.t_xor_ns + 5.0 * p.t_latch_transfer_ns + 4.0 * p.t_and_or_ns
}

/// Latency of one bit of in-flash addition including the two page DMAs.
pub fn t_bit_add(p: &NandTimingParams) -> f64 {
    t_bop_add(p) + 2.0 * p.t_dma_ns
}

/// Energy of the array-side part of one bit step on a page.
pub fn e_bop_add(p: &NandTimingParams, page_bytes: u64) -> f64 {
    p.e_read.for_page(page_bytes)
        + 2.0 * p.e_xor.for_page(page_bytes)
        + 5.0 * p.e_latch_transfer.for_page(page_bytes)
        + 4.0 * p.e_and_or.for_page(page_bytes)
}

pub fn e_bit_add(p: &NandTimingParams, page_bytes: u64) -> f64 {
    e_bop_add(p, page_bytes) + 2.0 * p.e_dma.for_page(page_bytes) + p.e_index_gen.for_page(page_bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsdTopology {
    pub channels: u64,
    pub dies_per_channel: u64,
    pub planes_per_die: u64,
    pub blocks_per_plane: u64,
    pub wordlines_per_block: u64,
    pub page_bytes: u64,
    pub channel_bw_bytes_per_s: f64,
    pub external_io_bw_bytes_per_s: f64,
}

impl Default for SsdTopology {
    fn default() -> Self {
        Self {
            channels: 8,
            dies_per_channel: 8,
            planes_per_die: 2,
            blocks_per_plane: 2048,
            wordlines_per_block: 196,
            page_bytes: 4096,
            channel_bw_bytes_per_s: 1.2e9,
            external_io_bw_bytes_per_s: 7.0e9,
        }
    }
}

impl SsdTopology {
    pub fn planes(&self) -> u64 {
        self.channels * self.dies_per_channel * self.planes_per_die
    }

    pub fn page_bits(&self) -> u64 {
        self.page_bytes * 8
    }

    /// Coefficient lanes processed concurrently by all planes.
    pub fn lanes(&self) -> u64 {
        self.planes() * self.page_bits()
    }

    fn validate(&self) -> Result<(), CostError> {
        let counts = [
            self.channels,
            self.dies_per_channel,
            self.planes_per_die,
            self.blocks_per_plane,
            self.wordlines_per_block,
            self.page_bytes,
        ];
        if counts.contains(&0) {
            return Err(CostError::InvalidConfig("topology counts must be positive".into()));
        }
        positive(&[
            ("channel_bw_bytes_per_s", self.channel_bw_bytes_per_s),
            ("external_io_bw_bytes_per_s", self.external_io_bw_bytes_per_s),
        ])
    }
}

/// Bit-serial processing-using-DRAM engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DramPumParams {
    pub capacity_bytes: u64,
    pub bandwidth_bytes_per_s: f64,
    pub banks: u64,
    pub row_bits: u64,
    pub t_bbop_ns: f64,
    pub e_bbop_nj: f64,
    pub bbops_per_add_bit: u64,
}

impl DramPumParams {
    pub fn host() -> Self {
        Self {
            capacity_bytes: 32 << 30,
            bandwidth_bytes_per_s: 19.2e9,
            banks: 64,
            row_bits: 65_536,
            t_bbop_ns: 49.0,
            e_bbop_nj: 0.864,
            bbops_per_add_bit: 16,
        }
    }

    pub fn ssd_internal() -> Self {
        Self {
            capacity_bytes: 2 << 30,
            banks: 8,
            row_bits: 8_192,
            ..Self::host()
        }
    }

    pub fn lanes(&self) -> u64 {
        self.banks * self.row_bits
    }

    /// Latency of one 32-bit addition over all lanes.
    pub fn batch_ns(&self, word_bits: u64) -> f64 {
        (word_bits * self.bbops_per_add_bit) as f64 * self.t_bbop_ns
    }

    fn validate(&self, name: &str) -> Result<(), CostError> {
        if self.capacity_bytes == 0 || self.banks == 0 || self.row_bits == 0 || self.bbops_per_add_bit == 0 {
            return Err(CostError::InvalidConfig(format!("{name}: counts must be positive")));
        }
        positive(&[
            ("bandwidth_bytes_per_s", self.bandwidth_bytes_per_s),
            ("t_bbop_ns", self.t_bbop_ns),
            ("e_bbop_nj", self.e_bbop_nj),
        ])
    }
}

/// Host CPU parameters for the software baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HostParams {
    /// Homomorphic addition throughput, 32-bit coefficients per second.
    pub cpu_coeff_adds_per_s: f64,
    pub cpu_power_w: f64,
    pub dram_nj_per_byte: f64,
}

impl Default for HostParams {
    fn default() -> Self {
        Self {
            cpu_coeff_adds_per_s: 2.1e7,
            cpu_power_w: 65.0,
            dram_nj_per_byte: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    pub nand: NandTimingParams,
    pub topology: SsdTopology,
    pub host: HostParams,
    pub host_dram: DramPumParams,
    pub ssd_dram: DramPumParams,
    pub coeff_bits: u64,
    pub ciphertext_bytes: u64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            nand: NandTimingParams::default(),
            topology: SsdTopology::default(),
            host: HostParams::default(),
            host_dram: DramPumParams::host(),
            ssd_dram: DramPumParams::ssd_internal(),
            coeff_bits: 32,
            ciphertext_bytes: 2 * 1024 * 4,
        }
    }
}

impl CostConfig {
    pub fn validate(&self) -> Result<(), CostError> {
        self.nand.validate()?;
        self.topology.validate()?;
        self.host_dram.validate("host_dram")?;
        self.ssd_dram.validate("ssd_dram")?;
        positive(&[
            ("cpu_coeff_adds_per_s", self.host.cpu_coeff_adds_per_s),
            ("cpu_power_w", self.host.cpu_power_w),
            ("dram_nj_per_byte", self.host.dram_nj_per_byte),
        ])?;
        if !(1..=64).contains(&self.coeff_bits) || self.ciphertext_bytes == 0 {
            return Err(CostError::InvalidConfig("coefficient width or ciphertext size".into()));
        }
        Ok(())
    }

    /// Energy of moving one byte out of flash to the controller.
    pub fn flash_read_nj_per_byte(&self) -> f64 {
        let page = self.topology.page_bytes;
        (self.nand.e_read.for_page(page) + self.nand.e_dma.for_page(page)) / page as f64
    }

    /// Transposition and index generation hide behind flash reads.
    pub fn overlap_report(&self) -> OverlapReport {
        OverlapReport {
            t_read_ns: self.nand.t_read_ns,
            t_transpose_ns: self.nand.t_transpose_ns,
            t_index_gen_ns: self.nand.t_index_gen_ns,
            transpose_hidden: self.nand.t_transpose_ns < self.nand.t_read_ns,
            index_gen_hidden: self.nand.t_index_gen_ns < self.nand.t_read_ns,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub t_read_ns: f64,
    pub t_transpose_ns: f64,
    pub t_index_gen_ns: f64,
    pub transpose_hidden: bool,
    pub index_gen_hidden: bool,
}

/// How many shifted query ciphertexts a query of `query_bits` needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftPolicy {
    /// One variant per coefficient the query spans.
    #[default]
    CoefficientAligned,
    /// One variant per bit offset within those coefficients.
    BitLevel,
}

impl ShiftPolicy {
    pub fn shifts(self, query_bits: u64, t_bits: u64) -> u64 {
        let w = query_bits.div_ceil(t_bits);
        match self {
            ShiftPolicy::CoefficientAligned => w,
            ShiftPolicy::BitLevel => w * t_bits,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub encrypted_db_bytes: u64,
    pub query_bits: u64,
    pub num_queries: u64,
    pub shift_count: u64,
}

impl Workload {
    pub fn new(encrypted_db_bytes: u64, query_bits: u64, num_queries: u64) -> Self {
        Self {
            encrypted_db_bytes,
            query_bits,
            num_queries,
            shift_count: ShiftPolicy::default().shifts(query_bits, 16),
        }
    }

    pub fn with_shift_count(mut self, shift_count: u64) -> Self {
        self.shift_count = shift_count;
        self
    }

    fn is_empty(&self) -> bool {
        self.encrypted_db_bytes == 0 || self.num_queries == 0 || self.shift_count == 0
    }
}

pub const GIB: u64 = 1 << 30;

/// Single-query sweep over query sizes at 128 GiB, plus 1000-query sweeps
/// over database sizes with 16-bit queries.
pub fn default_workloads() -> Vec<Workload> {
    let mut w: Vec<Workload> = [16, 32, 64, 128, 256]
        .into_iter()
        .map(|q| Workload::new(128 * GIB, q, 1))
        .collect();
    w.extend([8, 16, 32, 64, 128].into_iter().map(|g| Workload::new(g * GIB, 16, 1000)));
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum System {
    #[serde(rename = "CM-SW")]
    CmSw,
    #[serde(rename = "CM-PuM")]
    CmPum,
    #[serde(rename = "CM-PuM-SSD")]
    CmPumSsd,
    #[serde(rename = "CM-IFP")]
    CmIfp,
}

impl System {
    pub const ALL: [System; 4] = [System::CmSw, System::CmPum, System::CmPumSsd, System::CmIfp];

    pub fn name(self) -> &'static str {
        match self {
            System::CmSw => "CM-SW",
            System::CmPum => "CM-PuM",
            System::CmPumSsd => "CM-PuM-SSD",
            System::CmIfp => "CM-IFP",
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for System {
    type Err = CostError;

    fn from_str(s: &str) -> Result<Self, CostError> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        match key.as_str() {
            "cm-sw" | "sw" => Ok(System::CmSw),
            "cm-pum" | "pum" => Ok(System::CmPum),
            "cm-pum-ssd" | "pum-ssd" => Ok(System::CmPumSsd),
            "cm-ifp" | "ifp" => Ok(System::CmIfp),
            _ => Err(CostError::UnknownSystem(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseCost {
    pub latency_ns: f64,
    pub energy_nj: f64,
}

impl PhaseCost {
    fn scaled(self, k: f64) -> Self {
        Self {
            latency_ns: self.latency_ns * k,
            energy_nj: self.energy_nj * k,
        }
    }

    fn plus(self, o: PhaseCost) -> Self {
        Self {
            latency_ns: self.latency_ns + o.latency_ns,
            energy_nj: self.energy_nj + o.energy_nj,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub system: Option<System>,
    pub storage_read: PhaseCost,
    pub io_transfer: PhaseCost,
    pub dram_transfer: PhaseCost,
    pub compute: PhaseCost,
    pub index_gen: PhaseCost,
    pub assumptions: Vec<String>,
}

impl CostBreakdown {
    pub fn phases(&self) -> [(&'static str, PhaseCost); 5] {
        [
            ("storage_read", self.storage_read),
            ("io_transfer", self.io_transfer),
            ("dram_transfer", self.dram_transfer),
            ("compute", self.compute),
            ("index_gen", self.index_gen),
        ]
    }

    pub fn latency_ns(&self) -> f64 {
        self.phases().iter().map(|(_, p)| p.latency_ns).sum()
    }

    pub fn energy_nj(&self) -> f64 {
        self.phases().iter().map(|(_, p)| p.energy_nj).sum()
    }
}

fn transfer(bytes: f64, bw: f64, nj_per_byte: f64) -> PhaseCost {
    PhaseCost {
        latency_ns: bytes / bw * 1e9,
        energy_nj: bytes * nj_per_byte,
    }
}

/// In-flash passes needed to add one shifted query to the whole database.
pub fn ifp_passes_per_shift(cfg: &CostConfig, encrypted_db_bytes: u64) -> u64 {
    let coeffs = (encrypted_db_bytes * 8).div_ceil(cfg.coeff_bits);
    coeffs.div_ceil(cfg.topology.lanes())
}

fn coeffs(cfg: &CostConfig, w: &Workload) -> u64 {
    (w.encrypted_db_bytes * 8).div_ceil(cfg.coeff_bits)
}

/// How many times the database crosses into a DRAM of `capacity` bytes.
fn fetches(w: &Workload, capacity: u64) -> f64 {
    if w.encrypted_db_bytes <= capacity {
        1.0
    } else {
        w.num_queries as f64
    }
}

fn pum_compute(cfg: &CostConfig, dram: &DramPumParams, w: &Workload) -> PhaseCost {
    let batches = coeffs(cfg, w).div_ceil(dram.lanes()) as f64 * (w.shift_count * w.num_queries) as f64;
    let bbops = (cfg.coeff_bits * dram.bbops_per_add_bit) as f64;
    PhaseCost {
        latency_ns: batches * dram.batch_ns(cfg.coeff_bits),
        energy_nj: batches * bbops * dram.banks as f64 * dram.e_bbop_nj,
    }
}

pub fn cost(system: System, w: &Workload, cfg: &CostConfig) -> Result<CostBreakdown, CostError> {
    cfg.validate()?;
    let mut out = CostBreakdown {
        system: Some(system),
        ..Default::default()
    };
    if w.is_empty() {
        out.assumptions.push("empty workload".into());
        return Ok(out);
    }
    let db = w.encrypted_db_bytes as f64;
    let topo = &cfg.topology;
    let flash_nj = cfg.flash_read_nj_per_byte();
    let shifts_total = (w.shift_count * w.num_queries) as f64;
    match system {
        System::CmSw => {
            let loads = fetches(w, cfg.host_dram.capacity_bytes);
            out.io_transfer = transfer(db, topo.external_io_bw_bytes_per_s, flash_nj).scaled(loads);
            out.dram_transfer =
                transfer(db, cfg.host_dram.bandwidth_bytes_per_s, cfg.host.dram_nj_per_byte).scaled(shifts_total);
            let secs = coeffs(cfg, w) as f64 * shifts_total / cfg.host.cpu_coeff_adds_per_s;
            out.compute = PhaseCost {
                latency_ns: secs * 1e9,
                energy_nj: secs * cfg.host.cpu_power_w * 1e9,
            };
            out.assumptions.extend([
                "flash reads overlap the external I/O stream".to_string(),
                format!("database reloaded per query when larger than {} bytes of DRAM", cfg.host_dram.capacity_bytes),
                "CPU streams the database from DRAM once per shifted query".into(),
                format!("CPU adds {} coefficients/s at {} W", cfg.host.cpu_coeff_adds_per_s, cfg.host.cpu_power_w),
            ]);
        }
        System::CmPum => {
            let loads = fetches(w, cfg.host_dram.capacity_bytes);
            out.io_transfer = transfer(db, topo.external_io_bw_bytes_per_s, flash_nj).scaled(loads);
            out.compute = pum_compute(cfg, &cfg.host_dram, w);
            out.assumptions.extend([
                "flash reads overlap the external I/O stream".to_string(),
                format!("database reloaded per query when larger than {} bytes of DRAM", cfg.host_dram.capacity_bytes),
                format!(
                    "{} lanes, {} bulk bitwise ops per sum bit",
                    cfg.host_dram.lanes(),
                    cfg.host_dram.bbops_per_add_bit
                ),
            ]);
        }
        System::CmPumSsd => {
            let loads = fetches(w, cfg.ssd_dram.capacity_bytes);
            let channel_bw = topo.channels as f64 * topo.channel_bw_bytes_per_s;
            out.storage_read = transfer(db, channel_bw, flash_nj).scaled(loads);
            out.compute = pum_compute(cfg, &cfg.ssd_dram, w);
            out.assumptions.extend([
                "flash array reads overlap channel transfers".to_string(),
                format!("database reloaded per query when larger than {} bytes of SSD DRAM", cfg.ssd_dram.capacity_bytes),
                format!(
                    "{} lanes, {} bulk bitwise ops per sum bit",
                    cfg.ssd_dram.lanes(),
                    cfg.ssd_dram.bbops_per_add_bit
                ),
            ]);
        }
        System::CmIfp => {
            let p = &cfg.nand;
            let page = topo.page_bytes;
            let steps = ifp_passes_per_shift(cfg, w.encrypted_db_bytes) as f64 * shifts_total * cfg.coeff_bits as f64;
            let planes = topo.planes() as f64;
            out.storage_read = PhaseCost {
                latency_ns: steps * p.t_read_ns,
                energy_nj: steps * planes * p.e_read.for_page(page),
            };
            out.compute = PhaseCost {
                latency_ns: steps * (t_bop_add(p) - p.t_read_ns),
                energy_nj: steps * planes * (e_bop_add(p, page) - p.e_read.for_page(page)),
            };
            let query_upload = transfer(
                (w.num_queries * w.shift_count * cfg.ciphertext_bytes) as f64,
                topo.external_io_bw_bytes_per_s,
                0.0,
            );
            out.io_transfer = PhaseCost {
                latency_ns: steps * 2.0 * p.t_dma_ns,
                energy_nj: steps * planes * 2.0 * p.e_dma.for_page(page),
            }
            .plus(query_upload);
            out.index_gen = PhaseCost {
                latency_ns: steps * (p.t_index_gen_ns - p.t_read_ns).max(0.0),
                energy_nj: steps * planes * p.e_index_gen.for_page(page),
            };
            let overlap = cfg.overlap_report();
            out.assumptions.extend([
                format!("{} planes x {} bitlines per pass", topo.planes(), topo.page_bits()),
                format!("{} bit steps of {} ns each per pass", cfg.coeff_bits, t_bit_add(p)),
                format!("index generation hidden behind reads: {}", overlap.index_gen_hidden),
                format!("query transposition hidden behind reads: {}", overlap.transpose_hidden),
                "database resides in flash in vertical layout before the search".into(),
            ]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub system: System,
    pub db_bytes: u64,
    pub query_bits: u64,
    pub num_queries: u64,
    pub latency_ns: f64,
    pub energy_nj: f64,
    pub speedup_vs_cmsw: f64,
}

/// Evaluates every workload on every system; speedups are normalized to CM-SW.
pub fn sweep(workloads: &[Workload], systems: &[System], cfg: &CostConfig) -> Result<Vec<SweepRow>, CostError> {
    let mut rows = Vec::with_capacity(workloads.len() * systems.len());
    for w in workloads {
        let baseline = cost(System::CmSw, w, cfg)?.latency_ns();
        for &system in systems {
            let c = cost(system, w, cfg)?;
            let latency = c.latency_ns();
            rows.push(SweepRow {
                system,
                db_bytes: w.encrypted_db_bytes,
                query_bits: w.query_bits,
                num_queries: w.num_queries,
                latency_ns: latency,
                energy_nj: c.energy_nj(),
                speedup_vs_cmsw: if latency > 0.0 { baseline / latency } else { 0.0 },
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String, CostError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| CostError::Csv(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CostError::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CostError::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> CostConfig {
        CostConfig::default()
    }

    #[test]
    fn formulas_at_defaults() {
        let p = NandTimingParams::default();
        assert_eq!(t_bop_add(&p), 22_740.0);
        assert_eq!(t_bit_add(&p), 29_340.0);
        assert!((t_bit_add(&p) - NandTimingParams::PUBLISHED_T_BIT_ADD_NS).abs() <= 200.0);
        assert_eq!(e_bit_add(&p, 4096), 36_512.0);
        assert_eq!(e_bop_add(&p, 4096), 21_020.0);
    }

    #[test]
    fn zeroed_params_give_zero() {
        let z = NandTimingParams::zeroed();
        assert_eq!(t_bop_add(&z), 0.0);
        assert_eq!(t_bit_add(&z), 0.0);
        assert_eq!(e_bit_add(&z, 4096), 0.0);
    }

    #[test]
    fn formula_linearity() {
        let p = NandTimingParams::default();
        let mut q = p;
        q.t_read_ns *= 2.0;
        assert_eq!(t_bop_add(&q) - t_bop_add(&p), p.t_read_ns);
        let mut no_dma = p;
        no_dma.t_dma_ns = 0.0;
        assert_eq!(t_bit_add(&no_dma), t_bop_add(&p));
        for dma in [1.0, 10.0, 1000.0] {
            let mut d = p;
            d.t_dma_ns = dma;
            assert_eq!(t_bit_add(&d) - t_bop_add(&d), 2.0 * dma);
        }
        let per_kib = |e: &NandTimingParams, page| 2.0 * e.e_xor.for_page(page) + 5.0 * e.e_latch_transfer.for_page(page) + 4.0 * e.e_and_or.for_page(page);
        assert_eq!(per_kib(&p, 8192), 2.0 * per_kib(&p, 4096));
        assert_eq!(e_bit_add(&p, 8192) - e_bit_add(&p, 4096), per_kib(&p, 4096));
    }

    #[test]
    fn zero_workload_costs_nothing() {
        for system in System::ALL {
            for w in [Workload::new(0, 16, 1), Workload::new(GIB, 16, 0), Workload::new(GIB, 16, 1).with_shift_count(0)] {
                let c = cost(system, &w, &cfg()).unwrap();
                assert_eq!(c.latency_ns(), 0.0);
                assert_eq!(c.energy_nj(), 0.0);
            }
        }
    }

    #[test]
    fn system_names_parse() {
        for s in System::ALL {
            assert_eq!(s.name().parse::<System>().unwrap(), s);
        }
        assert_eq!("cm_ifp".parse::<System>().unwrap(), System::CmIfp);
        assert_eq!("gpu".parse::<System>(), Err(CostError::UnknownSystem("gpu".into())));
    }

    /// Plane-by-plane enumeration of the in-flash schedule.
    fn ifp_discrete_event_ns(cfg: &CostConfig, db_bytes: u64, shifts: u64) -> f64 {
        let lanes_per_plane = cfg.topology.page_bits();
        let planes = cfg.topology.planes() as usize;
        let coeffs = (db_bytes * 8).div_ceil(cfg.coeff_bits);
        let mut busy_until = vec![0.0f64; planes];
        let step = t_bit_add(&cfg.nand) * cfg.coeff_bits as f64;
        for _ in 0..shifts {
            // every plane waits for the slowest before the next shifted query
            let start = busy_until.iter().cloned().fold(0.0, f64::max);
            busy_until.iter_mut().for_each(|b| *b = start);
            let mut remaining = coeffs;
            let mut plane = 0;
            while remaining > 0 {
                let take = remaining.min(lanes_per_plane);
                busy_until[plane] += step;
                remaining -= take;
                plane = (plane + 1) % planes;
            }
        }
        busy_until.iter().cloned().fold(0.0, f64::max)
    }

    #[test]
    fn ifp_matches_discrete_event_schedule() {
        let mut c = cfg();
        c.topology.channels = 2;
        c.topology.dies_per_channel = 1;
        c.topology.planes_per_die = 2;
        c.topology.page_bytes = 64;
        let lane_bytes = c.topology.lanes() * 4;
        for db in [1, 4, lane_bytes - 1, lane_bytes, lane_bytes + 1, 7 * lane_bytes + 3, 40 * lane_bytes] {
            for shifts in [1, 3] {
                let w = Workload::new(db, 16, 1).with_shift_count(shifts);
                let b = cost(System::CmIfp, &w, &c).unwrap();
                let array = b.storage_read.latency_ns + b.compute.latency_ns + b.io_transfer.latency_ns
                    - (shifts * c.ciphertext_bytes) as f64 / c.topology.external_io_bw_bytes_per_s * 1e9;
                let oracle = ifp_discrete_event_ns(&c, db, shifts);
                assert!((array - oracle).abs() < 1e-6 * oracle, "db={db} shifts={shifts}: {array} vs {oracle}");
            }
        }
        // flat once all planes are saturated within a pass
        let one = cost(System::CmIfp, &Workload::new(4, 16, 1), &c).unwrap();
        let full = cost(System::CmIfp, &Workload::new(lane_bytes, 16, 1), &c).unwrap();
        assert_eq!(one.compute, full.compute);
    }

    #[test]
    fn breakdown_sums_to_totals() {
        for w in default_workloads() {
            for s in System::ALL {
                let c = cost(s, &w, &cfg()).unwrap();
                let lat: f64 = c.phases().iter().map(|p| p.1.latency_ns).sum();
                assert_eq!(lat, c.latency_ns());
                assert!(c.latency_ns() > 0.0 && c.energy_nj() > 0.0);
                assert!(!c.assumptions.is_empty());
            }
        }
    }

    #[test]
    fn overlap_holds_at_defaults() {
        let r = cfg().overlap_report();
        assert!(r.transpose_hidden && r.index_gen_hidden);
        let b = cost(System::CmIfp, &Workload::new(GIB, 16, 1), &cfg()).unwrap();
        assert_eq!(b.index_gen.latency_ns, 0.0);
        assert!(b.index_gen.energy_nj > 0.0);
    }

    #[test]
    fn csv_has_expected_header() {
        let rows = sweep(&default_workloads(), &System::ALL, &cfg()).unwrap();
        let text = sweep_csv(&rows).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "system,db_bytes,query_bits,num_queries,latency_ns,energy_nj,speedup_vs_cmsw"
        );
        assert!(lines.next().unwrap().starts_with("CM-SW,137438953472,16,1,"));
        assert_eq!(text.lines().count(), 1 + rows.len());
        assert!(rows.iter().filter(|r| r.system == System::CmSw).all(|r| r.speedup_vs_cmsw == 1.0));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut c = cfg();
        c.nand.t_read_ns = 0.0;
        assert!(matches!(cost(System::CmIfp, &Workload::new(1, 16, 1), &c), Err(CostError::InvalidConfig(_))));
        let mut c = cfg();
        c.topology.channels = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn shift_policies() {
        assert_eq!(ShiftPolicy::CoefficientAligned.shifts(16, 16), 1);
        assert_eq!(ShiftPolicy::CoefficientAligned.shifts(20, 16), 2);
        assert_eq!(ShiftPolicy::BitLevel.shifts(256, 16), 256);
        assert_eq!(Workload::new(1, 64, 1).shift_count, 4);
    }

    proptest! {
        #[test]
        fn cost_is_monotone(db in 1u64..(1 << 40), extra in 0u64..(1 << 38), q in 1u64..2000, s in 1u64..32) {
            let c = cfg();
            let base = Workload::new(db, 16, q).with_shift_count(s);
            for system in System::ALL {
                let b = cost(system, &base, &c).unwrap();
                for bigger in [
                    Workload { encrypted_db_bytes: db + extra, ..base },
                    Workload { num_queries: q + 1, ..base },
                    Workload { shift_count: s + 1, ..base },
                ] {
                    let g = cost(system, &bigger, &c).unwrap();
                    prop_assert!(g.latency_ns() >= b.latency_ns());
                    prop_assert!(g.energy_nj() >= b.energy_nj());
                }
            }
        }
    }
}
