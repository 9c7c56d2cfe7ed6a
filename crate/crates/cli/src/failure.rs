use std::fmt::Display;

use hqmm::Error;

/// A message plus the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Display) -> Self {
        Self {
            code: 2,
            message: message.to_string(),
        }
    }

    pub fn runtime(message: impl Display) -> Self {
        Self {
            code: 1,
            message: message.to_string(),
        }
    }

    /// Prefix the message with the index of the sequence that failed.
    pub fn context(self, sequence: usize) -> Self {
        Self {
            message: format!("sequence {sequence}: {}", self.message),
            ..self
        }
    }
}

/// Numerical breakdowns are runtime failures; everything else (bad files,
/// bad parameters, mismatched alphabets) is an input error.
impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::ZeroProbability { .. } | Error::ImpossibleObservation { .. } | Error::Numerical(_) => {
                Failure::runtime(e)
            }
            _ => Failure::usage(e),
        }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::usage(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::usage(e)
    }
}
