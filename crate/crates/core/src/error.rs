use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("lattice basis is singular (gram determinant {det:e})")]
    SingularBasis { det: f64 },

    #[error("potential coefficient at dual index {index:?} is not reachable by the plane-wave basis")]
    CutoffTooSmall { index: Vec<i64> },

    #[error("band {band} at k = {k:?} is degenerate (gap {gap:e})")]
    DegenerateBand { k: Vec<f64>, band: usize, gap: f64 },

    #[error("energy {energy} lies within {distance:e} of the spectrum at k = {k:?}")]
    NearResonance { k: Vec<f64>, energy: f64, distance: f64 },

    #[error("enumeration needs {required} tuples, budget is {budget}")]
    BudgetExceeded { required: u128, budget: u128 },

    /// The band is flat; `triple` is the canonical nontrivial triple (k1, k2, k3).
    #[error("band {band} is flat (variation {variation:e}); canonical triple returned")]
    FlatBand { band: usize, variation: f64, triple: [Vec<f64>; 3] },

    #[error("resonance function has equal signs at both ends of the search path ({left:e}, {right:e})")]
    SignSearchFailed { left: f64, right: f64 },

    #[error("quadrature resolution {given} per axis is below the aliasing bound {required}")]
    ResolutionTooLow { given: usize, required: usize },

    #[error("field became non-finite at step {step}")]
    NonFiniteField { step: usize },

    #[error("grid incommensurate: {0}")]
    GridIncommensurate(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Tags the error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }

    /// Strips stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
