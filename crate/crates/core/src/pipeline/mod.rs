//! End-to-end drivers: topology extraction, refit, sweeps, automatic weight
//! selection, the SCA loop, the exhaustive oracle and the heuristic baseline.

mod oracle;
mod sca;
mod sweep;

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{PipelineError, SolverError};
use crate::formulation::{loss_watts, DsrProblem, LambdaSpec, ObjectiveSpec, VoltageSpec};
use crate::network::{connected_from_substation, is_radial, unreachable_nodes, LineId, LineMask, NetworkModel};
use crate::solver::{solve, verify_prop1, verify_prop2, PrimalDualSolution, SolverConfig};

pub use oracle::{exhaustive_oracle, heuristic_baseline, Baseline, OracleEntry, OracleResult, ORACLE_GUARD};
pub use sca::{sca_solve, ScaIterate, ScaOptions, ScaOutcome};
pub use sweep::{auto_lambda, lambda_sweep, AutoLambda, SweepPoint, SweepResult};

/// Closed lines and open switches of a solved program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Topology {
    pub closed: Vec<LineId>,
    pub open_switches: Vec<LineId>,
    pub radial: bool,
    pub connected: bool,
}

impl Topology {
    pub fn from_mask(model: &NetworkModel, mask: &LineMask) -> Self {
        let closed: Vec<LineId> = mask.active().collect();
        let open_switches = model
            .switch_lines()
            .into_iter()
            .filter(|id| !mask.is_active(*id))
            .collect();
        Topology {
            closed,
            open_switches,
            radial: is_radial(model, mask),
            connected: connected_from_substation(model, mask),
        }
    }

    pub fn mask(&self, model: &NetworkModel) -> LineMask {
        let mut mask = LineMask::all(model);
        for id in model.line_ids() {
            mask.set(id, false);
        }
        for id in &self.closed {
            mask.set(*id, true);
        }
        mask
    }

    pub fn closed_switches(&self, model: &NetworkModel) -> usize {
        model.switch_lines().len() - self.open_switches.len()
    }

    /// Open switches as `(from, to)` node id pairs.
    pub fn open_pairs(&self, model: &NetworkModel) -> Vec<(u32, u32)> {
        self.open_switches
            .iter()
            .map(|id| {
                let l = model.line(*id);
                (l.from.0, l.to.0)
            })
            .collect()
    }
}

/// Support threshold of a line: `group_eps`, scaled by `sqrt(I_max)` when
/// the line has a finite cap.
pub fn group_threshold(model: &NetworkModel, id: LineId, group_eps: f64) -> f64 {
    let cap = model.i_max_sq_pu(id);
    if cap.is_finite() {
        group_eps * cap.sqrt()
    } else {
        group_eps
    }
}

/// Switched lines whose current group vanishes (or that were out of
/// service) are open; the remaining in-service lines are closed.
pub fn extract_topology(model: &NetworkModel, sol: &PrimalDualSolution, group_eps: f64) -> Topology {
    let mut mask = sol.active.clone();
    for id in model.switch_lines() {
        if sol.current_norm(id) <= group_threshold(model, id, group_eps) {
            mask.set(id, false);
        }
    }
    Topology::from_mask(model, &mask)
}

/// Zero sparsity weight on every line.
pub fn zero_lambda(model: &NetworkModel) -> LambdaSpec {
    LambdaSpec {
        global: 0.0,
        per_line: model.line_ids().map(|id| (id, 0.0)).collect::<BTreeMap<_, _>>(),
    }
}

/// Solution of the unregularized program on a fixed topology.
#[derive(Debug, Clone, Serialize)]
pub struct Refit {
    pub solution: PrimalDualSolution,
    /// Active power loss, watts.
    pub loss_w: f64,
}

/// Re-solves with zero sparsity weights on the closed lines of `topology`.
pub fn refit(
    model: &NetworkModel,
    topology: &Topology,
    objective: &ObjectiveSpec,
    config: &SolverConfig,
) -> Result<Refit, PipelineError> {
    refit_mask(model, &topology.mask(model), objective, config)
}

pub(crate) fn refit_mask(
    model: &NetworkModel,
    mask: &LineMask,
    objective: &ObjectiveSpec,
    config: &SolverConfig,
) -> Result<Refit, PipelineError> {
    let stranded = unreachable_nodes(model, mask);
    if !stranded.is_empty() {
        return Err(PipelineError::Disconnected(stranded));
    }
    let problem = DsrProblem::build(model, objective, &zero_lambda(model), &VoltageSpec::None, mask)?;
    let solution = solve(&problem, config)?;
    if !solution.is_optimal() {
        return Err(SolverError::NotOptimal(format!("{:?}", solution.status)).into());
    }
    let loss_w = loss_watts(model, &solution.xi);
    Ok(Refit { solution, loss_w })
}

/// Regularized solve with topology, refit loss and closed-form residuals.
#[derive(Debug, Clone, Serialize)]
pub struct DsrSolution {
    pub solution: PrimalDualSolution,
    pub topology: Topology,
    /// Loss of the regularized currents, watts.
    pub loss_w: f64,
    /// Loss after refitting the extracted topology, watts.
    pub refit_loss_w: Option<f64>,
    pub prop1_residual: Option<f64>,
    pub prop2_residual: Option<f64>,
}

/// Solves `problem`, extracts the topology, verifies the multiplier
/// conditions and refits when the topology is connected.
pub fn solve_dsr(problem: &DsrProblem<'_>, config: &SolverConfig) -> Result<DsrSolution, PipelineError> {
    let model = problem.model();
    let solution = solve(problem, config)?;
    let topology = extract_topology(model, &solution, config.group_eps);
    let loss_w = loss_watts(model, &solution.xi);
    let (mut p1, mut p2, mut refit_loss) = (None, None, None);
    if solution.is_optimal() {
        p1 = verify_prop1(problem, &solution).ok().map(|r| r.worst);
        p2 = verify_prop2(problem, &solution).ok().map(|r| r.worst);
        if topology.connected {
            refit_loss = Some(refit(model, &topology, &problem.objective, config)?.loss_w);
        }
    }
    Ok(DsrSolution {
        solution,
        topology,
        loss_w,
        refit_loss_w: refit_loss,
        prop1_residual: p1,
        prop2_residual: p2,
    })
}
