use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("negative magnetic field {0} T")]
    NegativeField(f64),

    #[error("time {t} us outside sequence interval [0, {total}] us")]
    TimeOutOfRange { t: f64, total: f64 },

    #[error("closed-form filter is 0/0 at z = {0}")]
    SingularPoint(f64),

    #[error("spectral grid clips {fraction:.3e} of the power ({detail})")]
    ClippedPower { fraction: f64, detail: String },

    #[error("band clipping: {fraction:.3e} of the chi integrand mass lies outside the grid at T = {t_us} us")]
    BandClipping { fraction: f64, t_us: f64 },

    #[error("only {0} noise modes fall inside the band")]
    TooFewModes(usize),

    #[error("no convergence after {iterations} iterations (residual norm {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("coherence does not decay: {0}")]
    NoDecay(String),

    #[error("insufficient coverage: {0}")]
    Coverage(String),

    #[error("schema error in column `{column}`: {message}")]
    Schema { column: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn schema(column: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            column: column.into(),
            message: message.into(),
        }
    }
}
