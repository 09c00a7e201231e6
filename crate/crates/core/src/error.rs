use thiserror::Error;

use crate::tree::NodeId;

/// Every failure the engine can report.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DcError {
    #[error("all particle weights are zero")]
    AllWeightsZero,
    #[error("malformed decomposition tree at node {node}: {reason}")]
    MalformedTree { node: NodeId, reason: String },
    #[error("proposal density vanishes at its own sample (node {node})")]
    ProposalUnsupported { node: NodeId },
    #[error("mixture merge needs {entries} table entries, budget is {budget}")]
    ArityTooLarge { entries: f64, budget: f64 },
    #[error("node {node} has no merge target; mixture merging is unavailable")]
    MergeTargetMissing { node: NodeId },
    #[error("node {node} has no Markov kernel; tempering is unavailable")]
    KernelUnavailable { node: NodeId },
    #[error("child populations have mismatched sizes ({expected} vs {found})")]
    PopulationSizeMismatch { expected: usize, found: usize },
    #[error("population size must be at least 1")]
    EmptyPopulation,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("lattice side {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("quadrature produced a non-finite normalizer")]
    QuadratureNonFinite,
    #[error("variance parameter must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("root message has zero precision; posterior is improper")]
    RootImproperPosterior,
    #[error("no leaf has a non-degenerate observation; posterior is improper")]
    ProprietyViolation,
    #[error("problem too large for exact evaluation: {0}")]
    TooLarge(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("envelope checksum mismatch")]
    ChecksumMismatch,
    #[error("unknown model tag {0}")]
    UnknownModelTag(u8),
    #[error("truncated payload: needed {needed} more bytes")]
    TruncatedPayload { needed: usize },
    #[error("malformed envelope: {0}")]
    MalformedEnvelope(String),
    #[error("worker unreachable: {0}")]
    WorkerUnreachable(String),
    #[error("at node {node}: {source}")]
    AtNode {
        node: NodeId,
        #[source]
        source: Box<DcError>,
    },
}

impl DcError {
    /// Wraps `self` with the id of the node being processed, unless it
    /// already names one.
    pub fn at_node(self, node: NodeId) -> DcError {
        match self {
            e @ DcError::AtNode { .. } => e,
            e @ DcError::MalformedTree { .. } => e,
            e => DcError::AtNode { node, source: Box::new(e) },
        }
    }

    /// Strips any node context, returning the underlying error.
    pub fn root_cause(&self) -> &DcError {
        match self {
            DcError::AtNode { source, .. } => source.root_cause(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, DcError>;
