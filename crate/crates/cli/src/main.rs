mod bench;
mod commands;
mod dna;
mod error;
mod files;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ciphermatch::bfv::EncryptMode;
use ciphermatch::matcher::DetectionMode;

use crate::files::InputFormat;

#[derive(Debug, Parser)]
#[command(name = "ciphermatch", version, about = "Encrypted exact string matching with addition-only BFV")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// JSON parameter file; defaults to $CIPHERMATCH_CONFIG_DIR/params.json, then built-in defaults
    #[arg(long, global = true)]
    params: Option<PathBuf>,
    /// RNG seed; drawn from the OS and recorded in the manifest when omitted
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Mode {
    /// Decrypt results and look for all-ones coefficients
    #[default]
    ClientDecrypt,
    /// Subtract the encrypted match polynomial, then look for zeros
    Subtract,
    /// Encrypt without the ephemeral public-key blinding term
    PaperLiteralEncrypt,
}

impl Mode {
    pub fn encrypt_mode(self) -> EncryptMode {
        match self {
            Mode::PaperLiteralEncrypt => EncryptMode::PaperLiteral,
            _ => EncryptMode::Standard,
        }
    }

    pub fn detection(self) -> DetectionMode {
        match self {
            Mode::Subtract => DetectionMode::Subtract,
            _ => DetectionMode::ClientDecrypt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Engine {
    #[default]
    Software,
    /// Route every homomorphic addition through the flash plane simulator
    Flash,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Workload {
    Dna,
    Dbsearch,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a key pair
    Keygen {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Pack a bit string into t-bit chunks
    Pack {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: InputFormat,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Unpack chunks back to bytes
    Unpack {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write `0`/`1` text instead of raw bytes
        #[arg(long)]
        ascii: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Pack and encrypt a database into a directory
    #[command(alias = "prepare-db")]
    EncryptDb {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: InputFormat,
        #[arg(long)]
        public_key: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        mode: Mode,
        #[command(flatten)]
        common: Common,
    },
    /// Encrypt every shifted variant of a query plus the match polynomial
    PrepareQuery {
        #[arg(long)]
        query: PathBuf,
        #[arg(long, value_enum, default_value_t = InputFormat::Ascii)]
        format: InputFormat,
        #[arg(long)]
        public_key: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        mode: Mode,
        #[command(flatten)]
        common: Common,
    },
    /// Run the encrypted search and generate match indices
    Search {
        #[arg(long)]
        db: PathBuf,
        /// Directory written by prepare-query
        #[arg(long)]
        prepared: PathBuf,
        /// The plaintext query, needed by the client to map matches to offsets
        #[arg(long)]
        query: PathBuf,
        #[arg(long, value_enum, default_value_t = InputFormat::Ascii)]
        format: InputFormat,
        #[arg(long)]
        secret_key: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        mode: Mode,
        #[arg(long, value_enum, default_value_t)]
        engine: Engine,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compare the encrypted pipeline against the plaintext oracle on random cases
    Verify {
        #[arg(long, default_value_t = 100)]
        cases: usize,
        #[arg(long, default_value_t = 16_384)]
        max_db_bits: usize,
        #[arg(long, value_enum, default_value_t)]
        mode: Mode,
        #[arg(long, value_enum, default_value_t)]
        engine: Engine,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a latch micro-program on a simulated plane
    Simulate {
        /// Micro-program text file
        #[arg(long, conflicts_with = "add", required_unless_present = "add")]
        program: Option<PathBuf>,
        /// Run the built-in bit-serial addition on random operands
        #[arg(long)]
        add: bool,
        /// Bitlines per plane
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 32)]
        word_bits: u32,
        #[arg(long, default_value_t = 32)]
        wordlines: usize,
        /// JSON-lines trace output
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Desk-scale functional runs and full-scale model sweeps
    Bench {
        #[arg(long, value_enum)]
        workload: Workload,
        #[arg(long)]
        out: PathBuf,
        /// Plaintext database size for the functional run
        #[arg(long, default_value_t = 4096)]
        db_bytes: usize,
        /// Cost model configuration JSON
        #[arg(long)]
        cost_config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Keygen { out, common } => commands::keygen(&common, &out),
        Command::Pack { input, format, out, common } => commands::pack(&common, &input, format, &out),
        Command::Unpack { input, out, ascii, common } => commands::unpack(&common, &input, &out, ascii),
        Command::EncryptDb { input, format, public_key, out, mode, common } => {
            commands::encrypt_db(&common, &input, format, &public_key, &out, mode)
        }
        Command::PrepareQuery { query, format, public_key, out, mode, common } => {
            commands::prepare_query(&common, &query, format, &public_key, &out, mode)
        }
        Command::Search { db, prepared, query, format, secret_key, mode, engine, out, common } => commands::search(
            &common,
            &commands::SearchArgs { db, prepared, query, format, secret_key, mode, engine, out },
        ),
        Command::Verify { cases, max_db_bits, mode, engine, out, common } => {
            commands::verify(&common, cases, max_db_bits, mode, engine, out.as_deref())
        }
        Command::Simulate { program, add, width, word_bits, wordlines, trace, out, common } => simulate::run(
            &common,
            &simulate::SimArgs { program, add, width, word_bits, wordlines, trace, out },
        ),
        Command::Bench { workload, out, db_bytes, cost_config, common } => {
            bench::run(&common, workload, &out, db_bytes, cost_config.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(error::exit_code(&err))
        }
    }
}
