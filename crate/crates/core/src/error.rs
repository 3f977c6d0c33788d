use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("user {user} is not in front of the aperture (e_r·(s_k - r) = {projection:.3e})")]
    UserBehindAperture { user: usize, projection: f64 },

    #[error("channel sample failed for user {user} at node {node}: {source}")]
    ChannelSample {
        user: usize,
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("grid with M = {requested} nodes is not realizable for this aperture; nearest valid values: {nearest:?}")]
    GridNotRealizable { requested: usize, nearest: Vec<usize> },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("power projection is degenerate (total power estimate {total:.3e} <= 0)")]
    ProjectionDegenerate { total: f64 },

    #[error("internal: {0}")]
    Internal(String),

    #[error("ill-conditioned lift: Gram condition number {condition:.3e} exceeds {limit:.1e}")]
    IllConditionedLift { condition: f64, limit: f64 },

    #[error("power bisection did not converge: bracket [{lo:.3e}, {hi:.3e}], power at hi {power_hi:.6e}, budget {budget:.6e}")]
    BisectionFailed {
        lo: f64,
        hi: f64,
        power_hi: f64,
        budget: f64,
    },

    #[error("point ({0:.4}, {1:.4}, {2:.4}) is outside the aperture")]
    OutsideAperture(f64, f64, f64),

    #[error("forward cache does not match the parameters it is used with")]
    StaleCache,

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("degenerate orthogonal component after {attempts} attempts")]
    DegeneratePerp { attempts: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
