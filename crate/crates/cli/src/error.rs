//! Error classification and process exit codes.

use std::fmt;

/// Exit code when every requested check ran (pass or fail).
pub const EXIT_OK: u8 = 0;
/// Exit code for configuration errors.
pub const EXIT_CONFIG: u8 = 1;
/// Exit code for internal numeric failures.
pub const EXIT_NUMERIC: u8 = 2;

/// A configuration problem detected before any computation runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl ConfigError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }

    pub fn core(e: phforge_core::Error) -> Self {
        Self(e.to_string())
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Exit code for an error chain: configuration problems map to 1,
/// everything raised during a run to 2.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.downcast_ref::<ConfigError>().is_some()) {
        EXIT_CONFIG
    } else {
        EXIT_NUMERIC
    }
}
