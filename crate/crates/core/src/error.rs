use std::io;

use crate::tensor::{Dims, Label};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid dims: {0}")]
    InvalidDims(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: Dims, actual: Dims },

    #[error("tensor contains non-finite values")]
    NonFinite,

    #[error("mask values must be exactly 0 or 1")]
    NotBinary,

    #[error("direction has zero norm")]
    ZeroDirection,

    #[error("frame {frame} out of range for {frames} frames")]
    FrameOutOfRange { frame: usize, frames: usize },

    #[error("remote victim unavailable: {0}")]
    RemoteUnavailable(String),

    #[error("remote victim rejected request (HTTP {status}): {message}")]
    RemoteRejected { status: u16, message: String },

    #[error("could not bind victim server: {0}")]
    BindFailure(String),

    #[error("no adversarial point found along direction within lambda_max = {lambda_max}")]
    NotAdversarialWithinCap { lambda_max: f64 },

    #[error("every gradient sample failed to reach the decision boundary")]
    AllDrawsFailed,

    #[error("query budget of {budget} exhausted")]
    BudgetExhausted { budget: u64 },

    #[error("starting direction is not adversarial")]
    StartingDirectionNotAdversarial,

    #[error("mask selects no positions")]
    EmptyMask,

    #[error("empty batch")]
    EmptyBatch,

    #[error("requested {requested} candidates but only {available} admissible samples exist")]
    InsufficientCandidates { requested: usize, available: usize },

    #[error("clean sample classified as {got}, expected {expected}")]
    CleanSampleMisclassified { expected: Label, got: Label },

    #[error("no candidate produced a viable initial direction")]
    NoViableInitialization,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
