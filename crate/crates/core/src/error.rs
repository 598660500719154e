use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("{0} mask is empty after rasterization")]
    EmptyMask(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("dimension mismatch: expected (nx, ny) = {expected:?} ({} values), found {found}", .expected.0 * .expected.1)]
    Dimension { expected: (usize, usize), found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("linear solve did not converge after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular linear system: zero pivot at cell {cell}")]
    Singular { cell: usize },

    #[error("time step to level {level} failed: {source}")]
    Step {
        level: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("base trajectory was not produced by this scenario and control")]
    TrajectoryMismatch,

    #[error("control field does not match the scenario ({0})")]
    ControlMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn at_level(self, level: usize) -> Self {
        Error::Step { level, source: Box::new(self) }
    }

    /// Process exit code for the command-line tool: 1 for bad input, 2 for
    /// numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoConvergence { .. } | Error::Singular { .. } | Error::Step { .. } | Error::TrajectoryMismatch => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}
