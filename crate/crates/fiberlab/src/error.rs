//! Crate-wide error type.

/// Errors produced by batch construction, gating, and estimation routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A numeric input that must be finite was not.
    #[error("non-finite input: {0}")]
    NonFinite(String),

    /// A configuration value violated its documented range or identity.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Batch structure violated an invariant (duplicate tokens, bad timestep, ...).
    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    /// A policy table is missing an entry required by the batch.
    #[error("policy has no entry for state {state}, action {action}")]
    MissingEntry { state: usize, action: usize },

    /// A state id not present in the batch was queried.
    #[error("unknown state {0}")]
    UnknownState(usize),

    /// A trajectory id not present in the batch was queried.
    #[error("unknown trajectory {0}")]
    UnknownTrajectory(usize),

    /// A ratio tuple entry was non-positive or inconsistent across tokens.
    #[error("invalid ratio at token {token}: {reason}")]
    InvalidRatio { token: usize, reason: String },

    /// A gating map emitted a non-positive or non-finite value.
    #[error("gate produced invalid value {value} at token {token}")]
    GateOutput { token: usize, value: f64 },

    /// An objective evaluation returned a non-finite value during differentiation.
    #[error("non-finite objective at coordinate {coordinate}: {value}")]
    NonFiniteObjective { coordinate: usize, value: f64 },

    /// A bundle, kernel, or fibration chain failed a structural check.
    #[error("invalid bundle: {0}")]
    InvalidBundle(String),

    /// Domain/group assignment inconsistent with the batch.
    #[error("invalid domain assignment: {0}")]
    InvalidAssignment(String),
}

pub type Result<T> = std::result::Result<T, Error>;
