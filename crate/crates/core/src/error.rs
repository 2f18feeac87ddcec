use thiserror::Error;

/// Errors raised while building models, solving systems or running learners.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("transition row P(.|s={state}, a={action}) sums to {sum}, expected 1")]
    NonStochasticRow { state: usize, action: usize, sum: f64 },

    #[error("negative probability {value} at (s={state}, a={action}, s'={next})")]
    NegativeProbability {
        state: usize,
        action: usize,
        next: usize,
        value: f64,
    },

    #[error("discount factor {0} is outside the open interval (0, 1)")]
    GammaOutOfRange(f64),

    #[error("|r(s={state}, a={action})| = {value} exceeds the reward bound {r_max}")]
    RewardOutOfBound {
        state: usize,
        action: usize,
        value: f64,
        r_max: f64,
    },

    #[error("policy row for state {state} is not a probability distribution (sum {sum})")]
    InvalidPolicy { state: usize, sum: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("induced chain is not irreducible (smallest stationary mass {min_mass:e})")]
    NotIrreducible { min_mass: f64 },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("feature matrix is rank deficient (smallest singular value {smallest_singular:e})")]
    RankDeficient { smallest_singular: f64 },

    #[error("minimum eigenvalue of the symmetric part of M is {mu:e}; no admissible step size exists")]
    NotPositive { mu: f64 },

    #[error("a projection radius H is required for this quantity")]
    MissingProjectionRadius,

    #[error("step size {beta:e} exceeds the admissible ceiling {ceiling:e}")]
    StepSizeTooLarge { beta: f64, ceiling: f64 },

    #[error("invalid mixing constants: {0}")]
    InvalidMixingConstants(String),

    #[error("critic diverged: tail iterate norm {norm:e} exceeds guard {guard:e}")]
    CriticDiverged { norm: f64, guard: f64 },

    #[error("replication seeds collide; replications would not be independent")]
    SeedCollision,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("failed to parse model file: {0}")]
    FileParse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
