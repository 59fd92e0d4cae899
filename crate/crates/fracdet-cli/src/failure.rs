//! Exit-code plumbing. Every subcommand returns `Result<(), Failure>`;
//! the code contract is stable: 0 success, 2 input integrity, 3
//! undefined metric, 4 partial pipeline failure, 1 everything else.

use std::path::Path;

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_UNDEFINED_METRIC: u8 = 3;
pub const EXIT_PARTIAL: u8 = 4;

/// An error tagged with the process exit code it maps to.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub type CmdResult<T = ()> = Result<T, Failure>;

impl Failure {
    /// Broken or missing inputs: unparseable documents, bad flag values,
    /// unknown references. Exit 2.
    pub fn input<E: Into<anyhow::Error>>(error: E) -> Self {
        Failure {
            code: EXIT_INPUT,
            error: error.into(),
        }
    }

    /// A requested metric is undefined on this input (e.g. no ground
    /// truth anywhere). Exit 3.
    pub fn undefined_metric<E: Into<anyhow::Error>>(error: E) -> Self {
        Failure {
            code: EXIT_UNDEFINED_METRIC,
            error: error.into(),
        }
    }

    /// Some corpus images failed while the rest evaluated; outputs were
    /// still written. Exit 4.
    pub fn partial<E: Into<anyhow::Error>>(error: E) -> Self {
        Failure {
            code: EXIT_PARTIAL,
            error: error.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure {
            code: EXIT_OTHER,
            error,
        }
    }
}

/// Reads an input file, classifying any I/O problem as an input error.
pub fn read_input(path: &Path) -> CmdResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::input(anyhow::anyhow!("cannot read {}: {e}", path.display())))
}

/// Writes an output file; failures here are environment problems, not
/// input problems, so they map to exit 1.
pub fn write_output(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    std::fs::write(path, contents.as_ref()).map_err(|e| {
        Failure::from(anyhow::anyhow!(
            "cannot write {}: {e}",
            path.display()
        ))
    })
}

/// Creates an output directory (and parents), mapping failure to exit 1.
pub fn ensure_dir(path: &Path) -> CmdResult {
    std::fs::create_dir_all(path).map_err(|e| {
        Failure::from(anyhow::anyhow!(
            "cannot create directory {}: {e}",
            path.display()
        ))
    })
}
