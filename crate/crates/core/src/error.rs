use thiserror::Error;

use crate::probe::AssumptionReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty spectrum: at least one atom or interval is required")]
    EmptySpectrum,
    #[error("overlapping spectral components: {0}")]
    OverlappingComponents(String),
    #[error("density h is not strictly positive at nu = {nu} (value {value})")]
    NonPositiveDensity { nu: f64, value: f64 },
    #[error("invalid spectral model: {0}")]
    InvalidSpectrum(String),
    #[error("region lies outside the grid hull [{lo}, {hi}]: {detail}")]
    RegionOutsideHull { lo: f64, hi: f64, detail: String },
    #[error("region is empty")]
    EmptyRegion,
    #[error("region carries zero prior mass")]
    ZeroPriorMass,
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("kernels live on different grids")]
    MismatchedGrids,

    #[error("invalid probe model: {0}")]
    InvalidProbe(String),
    #[error("zero density f(xi|nu) at nu = {nu}, xi = {xi}")]
    ZeroDensity { nu: f64, xi: f64 },
    #[error("nu = {nu} lies outside the probe's extension interval [{lo}, {hi}]")]
    OutsideExtension { nu: f64, lo: f64, hi: f64 },
    #[error("outcome {0} does not belong to the probe's outcome space")]
    ForeignOutcome(String),
    #[error("unsupported density form: {0}")]
    UnsupportedDensity(String),
    #[error("Fisher information is not positive and finite at nu = {nu}: {value}")]
    DegenerateFisher { nu: f64, value: f64 },

    #[error("spectral weights are degenerate (all zero)")]
    DegenerateWeights,
    #[error("posterior normalizer vanished or is not finite")]
    ZeroNormalizer,
    #[error("log-likelihood sums for step {k} are not available (have {available:?})")]
    MissingCheckpoint { k: usize, available: Vec<usize> },

    #[error("interpolation failed: {0}")]
    Interpolation(String),
    #[error("estimate {nu} is not in the interior of an absolutely continuous component")]
    NotInterior { nu: f64 },
    #[error("empty ensemble")]
    EmptyEnsemble,
    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("invalid config: {0}")]
    Config(String),
    #[error("probe failed assumption validation")]
    ValidationFailed(Box<AssumptionReport>),
    #[error("persisted trajectories are missing or inconsistent: {0}")]
    Persistence(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by the inputs (config, spectral or probe declarations,
    /// persisted files) rather than by a failed check.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::EmptySpectrum
                | Error::OverlappingComponents(_)
                | Error::NonPositiveDensity { .. }
                | Error::InvalidSpectrum(_)
                | Error::RegionOutsideHull { .. }
                | Error::EmptyRegion
                | Error::InvalidState(_)
                | Error::InvalidProbe(_)
                | Error::Config(_)
                | Error::Persistence(_)
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}
