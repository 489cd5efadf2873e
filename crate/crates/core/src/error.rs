use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("no convergence after {iterations} iterations (last residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("filter fit failed for omega_bm={omega_bm:.1} rad/s, G={g}: {reason}")]
    FitFailure { omega_bm: f64, g: f64, reason: String },

    #[error("training diverged at step {step} (seed {seed}): cost {cost:.3e}")]
    TrainingDiverged { seed: u64, step: usize, cost: f64 },

    #[error("lookup table has {} unstable entries, first (section, g) = {:?}", .0.len(), .0.first())]
    UnstableEntries(Vec<(usize, usize)>),

    #[error("step size underflow at t={t:.6e} s (section {section}, dt={dt:.3e} s)")]
    Stiffness { t: f64, section: usize, dt: f64 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Domain(_)
                | Error::Format(_)
                | Error::Checksum { .. }
                | Error::Io { .. }
                | Error::Parse(_)
        )
    }
}
