use std::fmt;

use bbm_core::Error;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or parameters; exit code 2.
    Usage(String),
    /// Output, thread-pool or population budget failures; exit code 3.
    Resource(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Resource(_) => 3,
        }
    }

    /// Tags a core parameter error with the config section it came from.
    pub fn in_section(section: &str) -> impl Fn(Error) -> CliError + '_ {
        move |e| match e {
            Error::InvalidParameter { field, reason } => {
                CliError::Usage(format!("invalid value for `{section}.{field}`: {reason}"))
            }
            other => other.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Resource(m) => write!(f, "resource error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Resource(m) => CliError::Resource(m),
            Error::PopulationOverflow { .. }
            | Error::Io(_)
            | Error::AllReplicatesFailed(_)
            | Error::Quadrature(_) => CliError::Resource(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Resource(e.to_string())
    }
}
