use std::fmt;
use std::path::Path;

use sitnikov_core::NumericError;

/// Failures mapped onto exit codes: 2 for usage and validation, 3 for
/// numerical failures.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numeric(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Usage(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

fn is_numerical(e: &NumericError) -> bool {
    match e {
        NumericError::Domain(_) | NumericError::Config(_) => false,
        NumericError::BlowUp { .. } | NumericError::ZeroDilation { .. } | NumericError::InconsistentBracket { .. } => true,
        NumericError::AtPhase { source, .. } => is_numerical(source),
    }
}

impl From<NumericError> for CliError {
    fn from(e: NumericError) -> Self {
        if is_numerical(&e) {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}
