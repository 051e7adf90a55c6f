use std::fmt;
use std::process::ExitCode;

use mdiqkd::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Data,
    Infeasible,
}

impl Kind {
    pub fn exit_code(self) -> ExitCode {
        ExitCode::from(match self {
            Kind::Config => 2,
            Kind::Data => 3,
            Kind::Infeasible => 4,
        })
    }
}

/// A failure tagged with the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

pub fn config(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        kind: Kind::Config,
        error: e.into(),
    }
}

pub fn data(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        kind: Kind::Data,
        error: e.into(),
    }
}

/// Maps a library error raised while analysing data. Parameter errors are
/// blamed on `fallback`; estimation failures are infeasible analyses.
pub fn core(e: Error, fallback: Kind) -> Failure {
    let kind = match e {
        Error::Inconsistent(_) | Error::Solver(_) => Kind::Infeasible,
        Error::InvalidParameter { .. } | Error::UnresolvableYield | Error::ZeroGain => fallback,
    };
    Failure {
        kind,
        error: e.into(),
    }
}

pub trait Context<T> {
    fn or_config(self, msg: &str) -> CliResult<T>;
    fn or_data(self, msg: &str) -> CliResult<T>;
}

impl<T, E> Context<T> for std::result::Result<T, E>
where
    E: Into<anyhow::Error>,
{
    fn or_config(self, msg: &str) -> CliResult<T> {
        self.map_err(|e| config(e.into().context(msg.to_owned())))
    }

    fn or_data(self, msg: &str) -> CliResult<T> {
        self.map_err(|e| data(e.into().context(msg.to_owned())))
    }
}
