//! Process exit codes and the error type that carries them.

use std::fmt;

use lgnet::Error;

pub const VERIFICATION: u8 = 1;
pub const BAD_FLAGS: u8 = 2;
pub const BAD_INPUT: u8 = 3;
pub const DIVERGENCE: u8 = 4;

/// Error message plus the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn flag(message: impl Into<String>) -> Self {
        Self::new(BAD_FLAGS, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Divergence { .. } | Error::NonFiniteGradient { .. } => DIVERGENCE,
            Error::Config(_) | Error::InvalidProbability(_) => BAD_FLAGS,
            Error::Shape { .. } | Error::Rank(_) | Error::DegenerateBatch(_) => VERIFICATION,
            _ => BAD_INPUT,
        };
        Self::new(code, e.to_string())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_errors_map_to_exit_codes() {
        let cases = [
            (Error::Divergence { epoch: 2, batch: 5 }, DIVERGENCE),
            (
                Error::NonFiniteGradient {
                    param: 0,
                    name: "w".into(),
                },
                DIVERGENCE,
            ),
            (Error::Config("x".into()), BAD_FLAGS),
            (
                Error::BadMagic {
                    expected: *b"LGND",
                    found: *b"XXXX",
                },
                BAD_INPUT,
            ),
            (
                Error::Stratification {
                    k: 10,
                    class: 1,
                    count: 3,
                },
                BAD_INPUT,
            ),
        ];
        for (err, code) in cases {
            assert_eq!(CliError::from(err).code, code);
        }
    }
}
