use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{PipelineError, SolverError};
use crate::formulation::{check_surrogate, DsrProblem, ScaStage, SurrogateCheck, VoltageSpec};
use crate::solver::{solve, KktResiduals, PrimalDualSolution, SolverConfig};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScaOptions {
    pub max_iter: usize,
    /// Stop when `|f_j - f_{j-1}| <= rel_tol |f_j|`.
    pub rel_tol: f64,
    pub max_feasibility_iter: usize,
    /// Record the three surrogate conditions at every iterate.
    pub check_surrogate: bool,
    /// Random points per bound for the dominance check.
    pub surrogate_samples: usize,
    pub seed: u64,
}

impl Default for ScaOptions {
    fn default() -> Self {
        ScaOptions {
            max_iter: 50,
            rel_tol: 1e-6,
            max_feasibility_iter: 50,
            check_surrogate: false,
            surrogate_samples: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaIterate {
    pub objective: f64,
    /// Smallest `|V| - V_min` over bounded node phases, per-unit.
    pub lower_margin: f64,
    /// Smallest `V_max - |V|`, per-unit.
    pub upper_margin: f64,
    pub surrogate: Option<SurrogateCheck>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaOutcome {
    pub solution: PrimalDualSolution,
    pub history: Vec<ScaIterate>,
    pub feasibility_iterations: usize,
    pub converged: bool,
    /// KKT residuals of the final subproblem linearized at the final point.
    pub final_kkt: KktResiduals,
}

fn margins(problem: &DsrProblem<'_>, xi: &[DVector<f64>]) -> (f64, f64) {
    let VoltageSpec::Magnitude(mb) = &problem.voltage else {
        return (f64::INFINITY, f64::INFINITY);
    };
    let (mut lo, mut hi) = (f64::INFINITY, f64::INFINITY);
    for (i, b) in mb.bounds.iter().enumerate() {
        let (Some((vmin, vmax)), Some(map)) = (b, problem.voltage_map(i)) else {
            continue;
        };
        for p in 0..problem.model().node(i).phases.len() {
            let m = map.magnitude(xi, p);
            lo = lo.min(m - vmin);
            hi = hi.min(vmax - m);
        }
    }
    (lo, hi)
}

fn surrogate_checks(
    problem: &DsrProblem<'_>,
    xi: &[DVector<f64>],
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> SurrogateCheck {
    let mut worst = SurrogateCheck {
        tightness: 0.0,
        dominance: 0.0,
        gradient: 0.0,
    };
    let VoltageSpec::Magnitude(mb) = &problem.voltage else {
        return worst;
    };
    for (i, b) in mb.bounds.iter().enumerate() {
        let (Some((vmin, _)), Some(map)) = (b, problem.voltage_map(i)) else {
            continue;
        };
        for p in 0..problem.model().node(i).phases.len() {
            let c = check_surrogate(map, p, *vmin, xi, samples, 1e-6, rng);
            worst.tightness = worst.tightness.max(c.tightness);
            worst.dominance = worst.dominance.max(c.dominance);
            worst.gradient = worst.gradient.max(c.gradient);
        }
    }
    worst
}

fn require_optimal(sol: &PrimalDualSolution) -> Result<(), PipelineError> {
    if !sol.is_optimal() {
        return Err(SolverError::NotOptimal(format!("{:?}", sol.status)).into());
    }
    Ok(())
}

/// Sequential convex approximation for magnitude lower bounds. `problem`
/// must carry `VoltageSpec::Magnitude`; its lower bounds are replaced by
/// linear surrogates around the current iterate until the objective
/// settles. A phase-one loop on slacked surrogates supplies the initial
/// point when the upper-bound-only solution violates a lower bound.
pub fn sca_solve(
    problem: &DsrProblem<'_>,
    config: &SolverConfig,
    options: &ScaOptions,
) -> Result<ScaOutcome, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let upper = problem.rebuild(ScaStage::UpperOnly)?;
    let mut sol = solve(&upper, config)?;
    require_optimal(&sol)?;

    let mut feasibility_iterations = 0;
    if margins(problem, &sol.xi).0 < -config.tol {
        let mut residual = f64::INFINITY;
        while feasibility_iterations < options.max_feasibility_iter {
            let stage = problem.rebuild(ScaStage::Feasibility(&sol.xi))?;
            let next = solve(&stage, config)?;
            require_optimal(&next)?;
            feasibility_iterations += 1;
            let (off, cnt) = stage.layout().slack.expect("lower bounds present");
            residual = next.x[off..off + cnt].iter().map(|s| s.max(0.0)).sum();
            sol = next;
            if residual <= 1e-10 {
                break;
            }
        }
        if residual > 1e-10 {
            return Err(PipelineError::NoInitialPoint(residual));
        }
    }

    let mut history = Vec::new();
    // slack columns come last, so the prefix is a point of the original program
    let mut previous = upper.program().objective(&sol.x[..upper.program().n]);
    let mut converged = false;
    for _ in 0..options.max_iter {
        let sub = problem.rebuild(ScaStage::Surrogate(&sol.xi))?;
        let surrogate = options
            .check_surrogate
            .then(|| surrogate_checks(problem, &sol.xi, options.surrogate_samples, &mut rng));
        let next = solve(&sub, config)?;
        require_optimal(&next)?;
        let f = next.objective;
        let (lower_margin, upper_margin) = margins(problem, &next.xi);
        history.push(ScaIterate {
            objective: f,
            lower_margin,
            upper_margin,
            surrogate,
        });
        sol = next;
        if (f - previous).abs() <= options.rel_tol * f.abs() {
            converged = true;
            break;
        }
        previous = f;
    }

    let final_kkt = if history.is_empty() {
        sol.kkt
    } else {
        let at_final = problem.rebuild(ScaStage::Surrogate(&sol.xi))?;
        let program = at_final.program();
        let ax = program.a_times(&sol.x);
        let s: Vec<f64> = program.b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        KktResiduals::evaluate(program, &sol.x, &s, &sol.z)
    };
    Ok(ScaOutcome {
        solution: sol,
        history,
        feasibility_iterations,
        converged,
        final_kkt,
    })
}
