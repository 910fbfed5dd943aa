use std::fmt;

use condscope::io::IoError;
use condscope::metrics::MetricsError;
use condscope::pruning::PruneError;
use condscope::sampler::SampleError;
use condscope::sparse::SparseError;
use condscope::toydit::ToyError;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;

/// A failed command: bad invocation (exit 1) or bad data (exit 2).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<PruneError> for CliError {
    fn from(e: PruneError) -> Self {
        match e {
            PruneError::BadConfig(_) | PruneError::BadSchedule(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SparseError> for CliError {
    fn from(e: SparseError) -> Self {
        match e {
            SparseError::BadParams(_) | SparseError::NonPositiveTau(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ToyError> for CliError {
    fn from(e: ToyError) -> Self {
        match e {
            ToyError::BadConfig(_) | ToyError::BadClassCount(_) | ToyError::BadSchedule(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SampleError> for CliError {
    fn from(e: SampleError) -> Self {
        match e {
            SampleError::BadConfig(_) => CliError::Usage(e.to_string()),
            SampleError::Prune(p) => p.into(),
            SampleError::Toy(t) => t.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}
