//! Group-sparse convex reconfiguration of three-phase distribution feeders.
//!
//! A feeder is read into a [`network::NetworkModel`], the reconfiguration
//! problem is assembled as a second-order cone program by [`formulation`],
//! solved and checked against the closed-form multiplier conditions by
//! [`solver`], and driven end to end (topology extraction, sweeps, oracles)
//! by [`pipeline`].

pub mod error;
pub mod feeders;
pub mod formulation;
pub mod load;
pub mod network;
pub mod pipeline;
pub mod solver;
pub mod validation;

pub use error::{EvaluationError, FormulationError, ModelError, PipelineError, SolverError};
pub use formulation::{
    build_p2, DsrProblem, LambdaSpec, MagnitudeBounds, ObjectiveKind, ObjectiveSpec, VoltageBox,
    VoltageSpec,
};
pub use network::{
    parse_network, parse_network_str, LineId, LineMask, NetworkModel, NodeId, Phase, PhaseSet,
};
pub use solver::{solve, PrimalDualSolution, SolveStatus, SolverConfig};
