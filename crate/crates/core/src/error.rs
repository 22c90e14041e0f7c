use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parametric coordinate {0} outside [0, 1]")]
    Domain(f64),
    #[error("point ({0}, {1}) lies outside the physical domain")]
    OutsideDomain(f64, f64),
    #[error("invalid knot vector: {0}")]
    KnotVector(String),
    #[error("derivative order {order} not supported for degree {degree}")]
    UnsupportedDerivative { order: usize, degree: usize },
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("invalid crack: {0}")]
    Crack(String),
    #[error("singular point: {0}")]
    Singular(String),
    #[error("invalid parameter vector: {0}")]
    Parameter(String),
    #[error(
        "linear system is rank deficient ({constrained} constrained dofs, pivot {pivot} failed)"
    )]
    RankDeficient { constrained: usize, pivot: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("clustering failed: {0}")]
    Clustering(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("full-order solve failed at mu = {mu:?}: {source}")]
    Snapshot {
        mu: Vec<f64>,
        #[source]
        source: Box<Error>,
    },
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("empty test set")]
    EmptyTestSet,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("incompatible data: {0}")]
    Incompatible(String),
}

impl Error {
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
