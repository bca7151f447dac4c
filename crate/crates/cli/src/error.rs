use std::fmt;

/// Failure of a CLI run, mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or malformed config, missing fields.
    Usage(String),
    Core(calidesign::error::Error),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_validation() => 2,
            CliError::Core(_) | CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Io(msg) => f.write_str(msg),
            CliError::Core(e) => {
                write!(f, "{e}")?;
                if let calidesign::error::Error::NoConvergence { trace } = e {
                    for step in trace {
                        write!(
                            f,
                            "\n  iteration {}: budget {:.0}, SE {:.6}",
                            step.iteration, step.budget, step.se
                        )?;
                    }
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<calidesign::error::Error> for CliError {
    fn from(e: calidesign::error::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
