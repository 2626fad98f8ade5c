use thiserror::Error;

use crate::network::{NodeId, Phase};

/// Failures while reading or validating a feeder description.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parse error in `{field}` (line {line}): {message}")]
    Parse {
        field: String,
        line: usize,
        message: String,
    },
    #[error("line ({from},{to}): real part of the impedance matrix is not positive definite")]
    NotPositiveDefinite { from: NodeId, to: NodeId },
    #[error("line ({from},{to}): impedance matrix is not symmetric")]
    NotSymmetric { from: NodeId, to: NodeId },
    #[error("network is disconnected with all switches closed; unreachable nodes: {0:?}")]
    Disconnected(Vec<NodeId>),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl ModelError {
    pub(crate) fn parse(field: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Parse {
            field: field.into(),
            line: 0,
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum FormulationError {
    #[error("balancing objective: line ({from},{to}) has no finite current cap")]
    MissingCurrentCap { from: NodeId, to: NodeId },
    #[error("balancing objective needs a nonempty set of balanced lines")]
    EmptyBalanceSet,
    #[error("node {0} has no switch-free path to an admissible voltage reference")]
    NoVoltageReference(NodeId),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-convex quadratic form detected in {0}")]
    NonConvex(String),
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("conic backend rejected the problem: {0}")]
    Backend(String),
    #[error("solution is not optimal (status {0})")]
    NotOptimal(String),
    #[error("singular matrix while verifying line {0}")]
    Singular(usize),
    #[error("scalar shrinkage subproblem did not converge: bracket [{lo}, {hi}]")]
    EtaBracket { lo: f64, hi: f64 },
}

/// Failures while evaluating the nonlinear load model on a solution.
#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("node {node} phase {phase}: zero voltage with nonzero load")]
    ZeroVoltage { node: NodeId, phase: Phase },
    #[error("selected topology is disconnected; stranded nodes: {0:?}")]
    Disconnected(Vec<NodeId>),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Formulation(#[from] FormulationError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error("topology is disconnected; stranded nodes: {0:?}")]
    Disconnected(Vec<NodeId>),
    #[error("lambda grid must be strictly increasing with at least two entries")]
    BadLambdaGrid,
    #[error("exhaustive search over {switches} switches ({configurations} configurations) exceeds the guard of {guard}")]
    TooManySwitches {
        switches: usize,
        configurations: f64,
        guard: usize,
    },
    #[error("no initial feasible point for the voltage magnitude bounds (residual slack {0:.3e})")]
    NoInitialPoint(f64),
    #[error("target of {target} closed switches is outside [0, {available}]")]
    BadTarget { target: usize, available: usize },
}
