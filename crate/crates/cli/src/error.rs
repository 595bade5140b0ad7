use std::fmt;
use std::path::Path;

/// Process exit codes. Usage errors (2) come from clap directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    MissingInput = 3,
    Format = 4,
    ParamsMismatch = 5,
    VerifyMismatch = 6,
}

#[derive(Debug)]
pub struct Coded {
    pub kind: Kind,
    pub msg: String,
}

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for Coded {}

pub fn coded(kind: Kind, msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Coded { kind, msg: msg.into() })
}

pub fn missing(path: &Path) -> anyhow::Error {
    coded(Kind::MissingInput, format!("input not found: {}", path.display()))
}

pub fn format(what: impl fmt::Display, reason: impl fmt::Display) -> anyhow::Error {
    coded(Kind::Format, format!("{what}: {reason}"))
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<Coded>())
        .map_or(1, |c| c.kind as u8)
}
