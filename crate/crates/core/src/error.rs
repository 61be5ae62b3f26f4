use thiserror::Error;

/// Which coefficient map produced a bad value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum CoefficientKind {
    SlowDrift,
    SlowDiffusion,
    FastDrift,
    FastDiffusion,
}

impl std::fmt::Display for CoefficientKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CoefficientKind::SlowDrift => "b",
            CoefficientKind::SlowDiffusion => "sigma",
            CoefficientKind::FastDrift => "f",
            CoefficientKind::FastDiffusion => "g",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("coefficient {which} is not finite at t={t}, x={x:?}, y={y:?}")]
    NonFiniteCoefficient {
        which: CoefficientKind,
        t: f64,
        x: Vec<f64>,
        y: Vec<f64>,
    },

    #[error("state became non-finite")]
    NonFiniteState,

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("epsilon {eps} outside (0, {eps0})")]
    EpsilonOutOfRange { eps: f64, eps0: f64 },

    #[error("explosion at step {step} (t = {t})")]
    Explosion { step: usize, t: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("lookup at t={t}, x={x:?} is outside the averaged-drift table")]
    OutOfTableRange { t: f64, x: Vec<f64> },

    #[error("table fingerprint {found} does not match expected {expected}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("gap fell below the numerical floor before 3 grid points were available")]
    DegenerateGap,

    #[error("degenerate rate fit: {0}")]
    DegenerateFit(String),

    #[error("model `{0}` provides no K_t(R) process")]
    MissingKProcess(String),

    #[error("coercivity (A_{k}) is not claimed by the model (k_max = {k_max})")]
    UnclaimedCoercivity { k: u32, k_max: u32 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("estimation failed at node {node:?}: {source}")]
    NodeEstimation {
        node: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("table format: {0}")]
    TableFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Errors caused by bad inputs rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::EpsilonOutOfRange { .. }
                | Error::GridMismatch(_)
                | Error::InvalidParams(_)
                | Error::InvalidConfig(_)
                | Error::MissingKProcess(_)
                | Error::UnclaimedCoercivity { .. }
                | Error::FingerprintMismatch { .. }
                | Error::TableFormat(_)
                | Error::Toml(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
