use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the region where a formula or model is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not converge on [{a}, {b}]: estimate {value}, error {error} after {subdivisions} subdivisions")]
    Quadrature {
        a: f64,
        b: f64,
        value: f64,
        error: f64,
        subdivisions: usize,
    },

    #[error("slope bounds inconsistent with derivative: radicand {radicand} at sigma = {sigma}")]
    InconsistentSlopes { sigma: f64, radicand: f64 },

    #[error("matrix is not symmetric: entry ({row}, {col}) = {upper} but ({col}, {row}) = {lower}")]
    Asymmetric {
        row: usize,
        col: usize,
        upper: f64,
        lower: f64,
    },

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("step size {dt} violates the bound {limit} ({reason})")]
    StepSize {
        dt: f64,
        limit: f64,
        reason: &'static str,
    },

    #[error("simulation blew up at t = {t}: sigma = {sigma}, sigma_dot = {sigma_dot}")]
    BlowUp { t: f64, sigma: f64, sigma_dot: f64 },

    #[error("strict frequency inequality could not be certified: {0}")]
    NotCertified(String),

    #[error("config error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
