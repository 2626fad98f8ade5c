use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::{extract_topology, refit, Topology};
use crate::error::PipelineError;
use crate::formulation::{DsrProblem, LambdaSpec, ObjectiveSpec, VoltageSpec};
use crate::network::{LineMask, NetworkModel};
use crate::solver::{solve, SolveStatus, SolverConfig};

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    /// Global sparsity weight, volts.
    pub lambda: f64,
    pub status: Option<SolveStatus>,
    pub topology: Option<Topology>,
    pub refit_loss_w: Option<f64>,
    /// Smooth part of the regularized optimum, per-unit.
    pub quadratic_part: Option<f64>,
    /// Current magnitude per line and phase, amperes.
    pub currents_a: Vec<Vec<f64>>,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// `(lambda, refit loss)` for points with a successful refit.
    pub fn loss_curve(&self) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .filter_map(|p| p.refit_loss_w.map(|l| (p.lambda, l)))
            .collect()
    }
}

fn sweep_point(
    model: &NetworkModel,
    objective: &ObjectiveSpec,
    base: &LambdaSpec,
    lambda: f64,
    config: &SolverConfig,
) -> SweepPoint {
    let started = Instant::now();
    let mut point = SweepPoint {
        lambda,
        status: None,
        topology: None,
        refit_loss_w: None,
        quadratic_part: None,
        currents_a: Vec::new(),
        wall_time_s: 0.0,
        error: None,
    };
    let spec = LambdaSpec {
        global: lambda,
        per_line: base.per_line.clone(),
    };
    let result = (|| -> Result<(), PipelineError> {
        let problem =
            DsrProblem::build(model, objective, &spec, &VoltageSpec::None, &LineMask::all(model))?;
        let sol = solve(&problem, config)?;
        point.status = Some(sol.status);
        let i_base = model.bases.i_base();
        point.currents_a = sol
            .xi
            .iter()
            .map(|x| {
                let k = x.len() / 2;
                (0..k).map(|p| x[p].hypot(x[k + p]) * i_base).collect()
            })
            .collect();
        if !sol.is_optimal() {
            return Ok(());
        }
        point.quadratic_part = Some(
            model
                .line_ids()
                .map(|id| 0.5 * (sol.xi[id.0].transpose() * problem.hessian(id) * &sol.xi[id.0])[0])
                .sum(),
        );
        let topology = extract_topology(model, &sol, config.group_eps);
        point.topology = Some(topology.clone());
        point.refit_loss_w = Some(refit(model, &topology, objective, config)?.loss_w);
        Ok(())
    })();
    if let Err(e) = result {
        point.error = Some(e.to_string());
    }
    point.wall_time_s = started.elapsed().as_secs_f64();
    point
}

/// Solves, extracts and refits at every weight in `lambdas` (volts,
/// strictly increasing). Points run in parallel; a failing point records
/// its error and the sweep continues.
pub fn lambda_sweep(
    model: &NetworkModel,
    objective: &ObjectiveSpec,
    base: &LambdaSpec,
    lambdas: &[f64],
    config: &SolverConfig,
) -> Result<SweepResult, PipelineError> {
    if lambdas.len() < 2
        || lambdas.windows(2).any(|w| w[0] >= w[1])
        || lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0))
    {
        return Err(PipelineError::BadLambdaGrid);
    }
    let points = lambdas
        .par_iter()
        .map(|&l| sweep_point(model, objective, base, l, config))
        .collect();
    Ok(SweepResult { points })
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum AutoLambda {
    Found {
        lambda: f64,
        topology: Topology,
    },
    /// Target not hit; the last bracket and the closest topology seen.
    Bracket {
        low: (f64, usize),
        high: (f64, usize),
        nearest_lambda: f64,
        nearest: Topology,
    },
}

/// Bisection on the global weight for a topology with `target_closed`
/// closed switches, keeping `count(low) >= target >= count(high)`.
pub fn auto_lambda(
    model: &NetworkModel,
    objective: &ObjectiveSpec,
    base: &LambdaSpec,
    target_closed: usize,
    bounds: (f64, f64),
    config: &SolverConfig,
) -> Result<AutoLambda, PipelineError> {
    let available = model.switch_lines().len();
    if target_closed > available {
        return Err(PipelineError::BadTarget {
            target: target_closed,
            available,
        });
    }
    if !(bounds.0 >= 0.0 && bounds.0 < bounds.1 && bounds.1.is_finite()) {
        return Err(PipelineError::BadLambdaGrid);
    }
    let count = |lambda: f64| -> Result<(usize, Topology), PipelineError> {
        let spec = LambdaSpec {
            global: lambda,
            per_line: base.per_line.clone(),
        };
        let problem =
            DsrProblem::build(model, objective, &spec, &VoltageSpec::None, &LineMask::all(model))?;
        let sol = solve(&problem, config)?;
        if !sol.is_optimal() {
            return Err(crate::error::SolverError::NotOptimal(format!("{:?}", sol.status)).into());
        }
        let topo = extract_topology(model, &sol, config.group_eps);
        Ok((topo.closed_switches(model), topo))
    };
    let (mut lo, mut hi) = bounds;
    let (mut c_lo, t_lo) = count(lo)?;
    let mut nearest = (lo, c_lo, t_lo.clone());
    if c_lo == target_closed {
        return Ok(AutoLambda::Found {
            lambda: lo,
            topology: t_lo,
        });
    }
    let (mut c_hi, t_hi) = count(hi)?;
    let consider = |l: f64, c: usize, t: &Topology, nearest: &mut (f64, usize, Topology)| {
        if c.abs_diff(target_closed) < nearest.1.abs_diff(target_closed) {
            *nearest = (l, c, t.clone());
        }
    };
    consider(hi, c_hi, &t_hi, &mut nearest);
    if c_hi == target_closed {
        return Ok(AutoLambda::Found {
            lambda: hi,
            topology: t_hi,
        });
    }
    if c_lo > target_closed && target_closed > c_hi {
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            let (c, t) = count(mid)?;
            if c == target_closed {
                return Ok(AutoLambda::Found {
                    lambda: mid,
                    topology: t,
                });
            }
            consider(mid, c, &t, &mut nearest);
            if c > target_closed {
                lo = mid;
                c_lo = c;
            } else {
                hi = mid;
                c_hi = c;
            }
        }
    }
    Ok(AutoLambda::Bracket {
        low: (lo, c_lo),
        high: (hi, c_hi),
        nearest_lambda: nearest.0,
        nearest: nearest.2,
    })
}
