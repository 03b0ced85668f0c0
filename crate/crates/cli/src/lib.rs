//! Library surface of the CLI: command implementations, configuration
//! parsing, and the error type carrying machine-readable codes. The `kfo`
//! binary is a thin argument-parsing wrapper over this crate.

pub mod commands;
pub mod config;

use kfo_core::KfoError;

/// CLI error with a machine-readable code; printed as the last stdout line.
#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub exit: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: String) -> Self {
        Self {
            code: "CONFIG_ERROR",
            exit: 2,
            message,
        }
    }

    pub fn io(message: String) -> Self {
        Self {
            code: "IO_ERROR",
            exit: 3,
            message,
        }
    }

    pub fn verify_failed(message: String) -> Self {
        Self {
            code: "VERIFY_FAILED",
            exit: 1,
            message,
        }
    }
}

impl From<KfoError> for CliError {
    fn from(e: KfoError) -> Self {
        let (code, exit) = match &e {
            KfoError::MalformedFile { .. } => ("MALFORMED_FILE", 4),
            KfoError::InvalidConfig { .. } => ("CONFIG_ERROR", 2),
            KfoError::Io(_) => ("IO_ERROR", 3),
            _ => ("COMPUTE_ERROR", 5),
        };
        Self {
            code,
            exit,
            message: e.to_string(),
        }
    }
}

/// Worker-thread count: explicit flag, then `KFO_THREADS`, then the
/// available cores.
pub fn thread_count(flag: Option<usize>) -> usize {
    if let Some(n) = flag {
        return n.max(1);
    }
    if let Ok(env) = std::env::var("KFO_THREADS") {
        if let Ok(n) = env.parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}
