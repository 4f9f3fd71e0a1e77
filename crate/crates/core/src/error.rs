use thiserror::Error;

use crate::topology::NodeId;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("invalid mesh dimensions {width}x{height}")]
    Dimensions { width: usize, height: usize },
    #[error("role grid assigns {assigned} nodes but the mesh has {expected}")]
    RoleCount { expected: usize, assigned: usize },
    #[error("unknown role character {0:?} (expected C, G or M)")]
    BadRole(char),
    #[error("subnet count must be 2 or 4, got {0}")]
    SubnetCount(usize),
    #[error("default placement needs at least a 2x3 mesh, got {width}x{height}")]
    NoDefaultPlacement { width: usize, height: usize },
    #[error("node {node} is outside the {width}x{height} mesh")]
    OutOfBounds {
        node: NodeId,
        width: usize,
        height: usize,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum KalmanError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("innovation covariance is singular or ill-conditioned (condition number {0:e})")]
    Singular(f64),
}

#[derive(Debug, Error, PartialEq)]
pub enum AllocError {
    #[error("VC count must be at least 2, got {0}")]
    TooFewVcs(usize),
    #[error("invalid VC partition: {0}")]
    Partition(String),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to parse scenario config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Kalman(#[from] KalmanError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
}

/// A broken simulation invariant. Never a legal state; indicates a bug.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("invariant `{invariant}` violated at cycle {cycle}: {detail}")]
pub struct InvariantViolation {
    pub invariant: &'static str,
    pub cycle: u64,
    pub detail: String,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Invariant(#[from] InvariantViolation),
    #[error(transparent)]
    Kalman(#[from] KalmanError),
    #[error("invariant `quiescent drain` violated: network did not drain within {limit} cycles ({outstanding} packets outstanding)")]
    DrainTimeout { limit: u64, outstanding: u64 },
    #[error("comparison configs disagree on {0}")]
    Inconsistent(&'static str),
}
