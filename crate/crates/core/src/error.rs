use thiserror::Error;

use crate::model::Side;

pub type Result<T> = std::result::Result<T, RefractError>;

#[derive(Debug, Error)]
pub enum RefractError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("no {0} jumps")]
    EmptyMixture(Side),
    #[error("q must be positive (got {0})")]
    NonPositiveQ(f64),
    #[error("exponent pole at z = {re} + {im}i")]
    ExponentPole { re: f64, im: f64 },
    #[error("multiple root near q = {q}: roots {a} and {b} of the {family} family are within the simplicity tolerance; perturb q slightly")]
    MultipleRoot {
        q: String,
        family: &'static str,
        a: String,
        b: String,
    },
    #[error("count mismatch in {family} roots: expected {expected}, found {found}")]
    CountMismatch {
        family: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("root solver failed: {0}")]
    RootSolver(String),
    #[error("{0}")]
    Domain(String),
    #[error("probability {value} outside [0, 1] beyond tolerance")]
    ProbabilityOutOfRange { value: f64 },
    #[error("complex residue {im:e} in a real-valued output ({what})")]
    ComplexResidue { what: &'static str, im: f64 },
    #[error("clustered poles: {0}")]
    ClusteredPoles(String),
    #[error("laplace inversion did not converge: {0}")]
    Inversion(String),
    #[error("MC unsupported for signed/complex mixtures")]
    McUnsupported,
    #[error("cumulant divergent at u = {0}")]
    CumulantDivergent(f64),
    #[error("no martingale Esscher parameter in strip ({lo}, {hi})")]
    NoEsscherRoot { lo: f64, hi: f64 },
    #[error("payoff transform divergent: {0}")]
    PayoffDivergent(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
