//! Conic solve through an interior-point backend, multiplier recovery and
//! residual bookkeeping.

mod polish;
mod verify;

use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::SolverError;
use crate::formulation::{Cone, ConicProgram, DsrProblem, RowTag};
use crate::network::{LineId, LineMask};

pub use verify::{solve_eta, verify_prop1, verify_prop2, LineResidual, VerifyReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: u32,
    /// Per-unit current norm below which a switched line counts as open.
    pub group_eps: f64,
    /// Rescale the program before the interior-point iterations.
    pub equilibrate: bool,
    /// Refine the interior-point solution by Newton steps on the active set.
    pub polish: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-8,
            max_iter: 200,
            group_eps: 1e-6,
            equilibrate: true,
            polish: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.tol > 0.0 && self.group_eps > 0.0 && self.max_iter > 0) {
            return Err(SolverError::Backend(
                "tolerance, group threshold and iteration limit must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

/// Scaled KKT residuals of a standard-form solution.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
    pub gap: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal
            .max(self.dual)
            .max(self.complementarity)
            .max(self.gap)
    }

    pub fn evaluate(program: &ConicProgram, x: &[f64], s: &[f64], z: &[f64]) -> Self {
        let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let ax = program.a_times(x);
        let px = program.p_times(x);
        let atz = program.at_times(z);
        let r_p: Vec<f64> = (0..program.m()).map(|i| ax[i] + s[i] - program.b[i]).collect();
        let r_d: Vec<f64> = (0..program.n).map(|i| px[i] + program.q[i] + atz[i]).collect();
        let xpx: f64 = x.iter().zip(&px).map(|(a, b)| a * b).sum();
        let qx: f64 = x.iter().zip(&program.q).map(|(a, b)| a * b).sum();
        let bz: f64 = program.b.iter().zip(z).map(|(a, b)| a * b).sum();
        let sz: f64 = s.iter().zip(z).map(|(a, b)| a * b).sum();
        let obj = 0.5 * xpx + qx;
        KktResiduals {
            primal: inf(&r_p) / (1.0 + inf(&program.b).max(inf(&ax))),
            dual: inf(&r_d) / (1.0 + inf(&px).max(inf(&program.q)).max(inf(&atz))),
            complementarity: sz.abs() / (1.0 + obj.abs()),
            gap: (xpx + qx + bz).abs() / (1.0 + obj.abs()),
        }
    }
}

/// Primal and dual solution of an assembled program, with multipliers
/// mapped back to network quantities (all per-unit).
#[derive(Debug, Clone, Serialize)]
pub struct PrimalDualSolution {
    pub status: SolveStatus,
    pub objective: f64,
    /// Stacked current per line; zeros for lines out of service.
    pub xi: Vec<DVector<f64>>,
    pub sigma_g: Vec<Option<DVector<f64>>>,
    pub t: Vec<Option<f64>>,
    /// Current-balance multiplier per node.
    pub mu: Vec<DVector<f64>>,
    /// Cap multiplier per line phase, for `1/2 xi' M xi <= 1/2 I_max`.
    pub rho: Vec<Vec<f64>>,
    /// Contribution of voltage-constraint multipliers to each line's
    /// stationarity condition, added to the current-balance term.
    pub mu_voltage: Vec<DVector<f64>>,
    pub kkt: KktResiduals,
    pub iterations: u32,
    pub solve_time_s: f64,
    /// Lines that were in service in the solved program.
    #[serde(skip)]
    pub active: LineMask,
    #[serde(skip)]
    pub x: Vec<f64>,
    #[serde(skip)]
    pub s: Vec<f64>,
    #[serde(skip)]
    pub z: Vec<f64>,
}

impl PrimalDualSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn current_norm(&self, id: LineId) -> f64 {
        self.xi[id.0].norm()
    }
}

fn to_csc(m: usize, n: usize, trip: &[(usize, usize, f64)]) -> CscMatrix<f64> {
    let (mut i, mut j, mut v) = (Vec::new(), Vec::new(), Vec::new());
    for &(r, c, x) in trip {
        i.push(r);
        j.push(c);
        v.push(x);
    }
    CscMatrix::new_from_triplets(m, n, i, j, v)
}

type Raw = (SolveStatus, Vec<f64>, Vec<f64>, Vec<f64>, u32);

fn run_backend(program: &ConicProgram, config: &SolverConfig, equilibrate: bool) -> Result<(Raw, f64), SolverError> {
    let p = to_csc(program.n, program.n, &program.p);
    let a = to_csc(program.m(), program.n, &program.a);
    let cones: Vec<SupportedConeT<f64>> = program
        .cones
        .iter()
        .map(|c| match *c {
            Cone::Zero(d) => SupportedConeT::ZeroConeT(d),
            Cone::Nonnegative(d) => SupportedConeT::NonnegativeConeT(d),
            Cone::SecondOrder(d) => SupportedConeT::SecondOrderConeT(d),
        })
        .collect();
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(config.max_iter)
        .tol_gap_abs(config.tol)
        .tol_gap_rel(config.tol)
        .tol_feas(config.tol)
        .tol_ktratio(config.tol.sqrt().min(1e-6))
        .max_threads(1)
        .equilibrate_enable(equilibrate)
        .build()
        .map_err(|e| SolverError::Backend(format!("{e:?}")))?;
    let mut solver = DefaultSolver::new(&p, &program.q, &a, &program.b, &cones, settings)
        .map_err(|e| SolverError::Backend(format!("{e:?}")))?;
    solver.solve();
    let sol = &solver.solution;
    let kkt = KktResiduals::evaluate(program, &sol.x, &sol.s, &sol.z).max();
    let status = match sol.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        // accept reduced-accuracy exits only when our own residuals agree
        SolverStatus::AlmostSolved if kkt <= 1e2 * config.tol => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            SolveStatus::Unbounded
        }
        _ => SolveStatus::MaxIter,
    };
    Ok((
        (status, sol.x.clone(), sol.s.clone(), sol.z.clone(), sol.iterations),
        kkt,
    ))
}

/// Runs the backend on a standard-form program; returns `(status, x, s, z,
/// iterations)`. A run that stalls without a certificate is repeated with
/// the opposite equilibration setting and the better of the two is kept.
pub fn solve_program(program: &ConicProgram, config: &SolverConfig) -> Result<Raw, SolverError> {
    config.validate()?;
    let (first, kkt) = run_backend(program, config, config.equilibrate)?;
    let (raw, kkt) = if first.0 != SolveStatus::MaxIter {
        (first, kkt)
    } else {
        let (second, kkt2) = run_backend(program, config, !config.equilibrate)?;
        if second.0 != SolveStatus::MaxIter || kkt2 < kkt {
            (second, kkt2)
        } else {
            (first, kkt)
        }
    };
    if !config.polish || !matches!(raw.0, SolveStatus::Optimal | SolveStatus::MaxIter) {
        return Ok(raw);
    }
    match polish::polish(program, &raw.1, &raw.2, &raw.3, kkt) {
        Some(p) => {
            let status = if raw.0 == SolveStatus::MaxIter && p.kkt.max() > config.tol {
                SolveStatus::MaxIter
            } else {
                SolveStatus::Optimal
            };
            Ok((status, p.x, p.s, p.z, raw.4))
        }
        None => Ok(raw),
    }
}

/// Solves the problem and maps multipliers back onto nodes and lines.
pub fn solve(problem: &DsrProblem<'_>, config: &SolverConfig) -> Result<PrimalDualSolution, SolverError> {
    let started = Instant::now();
    let program = problem.program();
    let (status, x, s, z, iterations) = solve_program(program, config)?;
    let model = problem.model();
    let layout = problem.layout();

    let xi = problem.currents(&x);
    let sigma_g = problem.generation(&x);
    let t = layout.t.iter().map(|o| o.map(|off| x[off])).collect();
    let mut mu: Vec<DVector<f64>> = model
        .nodes()
        .iter()
        .map(|n| DVector::zeros(2 * n.phases.len()))
        .collect();
    let mut rho: Vec<Vec<f64>> = model
        .lines()
        .iter()
        .map(|l| vec![0.0; l.phases.len()])
        .collect();
    let mut voltage_row = vec![false; program.m()];
    for block in problem.blocks() {
        match block.tag {
            RowTag::Kcl(node) => {
                mu[node] = DVector::from_column_slice(&z[block.start..block.start + block.len()]);
            }
            RowTag::Cap(id, p) => {
                let cap = model.i_max_sq_pu(id).sqrt();
                // z0 = rho * sqrt(I_max) on an active cap
                rho[id.0][p] = if cap > 0.0 { z[block.start] / cap } else { 0.0 };
            }
            tag if tag.is_voltage() => {
                for r in block.start..block.start + block.len() {
                    voltage_row[r] = true;
                }
            }
            _ => {}
        }
    }
    let mut mu_voltage: Vec<DVector<f64>> = xi.iter().map(|v| DVector::zeros(v.len())).collect();
    let mut col_line = vec![None; program.n];
    for id in problem.mask().active() {
        let off = layout.xi[id.0].expect("active");
        for c in 0..xi[id.0].len() {
            col_line[off + c] = Some((id, c));
        }
    }
    for &(r, c, v) in &program.a {
        if voltage_row[r] {
            if let Some((id, k)) = col_line[c] {
                mu_voltage[id.0][k] -= v * z[r];
            }
        }
    }
    let kkt = KktResiduals::evaluate(program, &x, &s, &z);
    let objective = program.objective(&x);
    Ok(PrimalDualSolution {
        status,
        objective,
        xi,
        sigma_g,
        t,
        mu,
        rho,
        mu_voltage,
        kkt,
        iterations,
        solve_time_s: started.elapsed().as_secs_f64(),
        active: problem.mask().clone(),
        x,
        s,
        z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulation::Cone;

    #[test]
    fn small_socp_matches_closed_form() {
        // minimize 1/2 x^2 + t  s.t.  |x - 2| <= t  -> x = 1, t = 1
        let mut p = ConicProgram::new(2);
        p.p.push((0, 0, 1.0));
        p.q[1] = 1.0;
        p.push_block(
            Cone::SecondOrder(2),
            vec![vec![(1, -1.0)], vec![(0, 1.0)]],
            vec![0.0, 2.0],
        );
        let (status, x, s, z, _) = solve_program(&p, &SolverConfig::default()).unwrap();
        assert_eq!(status, SolveStatus::Optimal);
        assert!((x[0] - 1.0).abs() < 1e-7 && (x[1] - 1.0).abs() < 1e-7);
        assert!(KktResiduals::evaluate(&p, &x, &s, &z).max() < 1e-7);
    }

    #[test]
    fn infeasible_program_is_certified() {
        // x = 1 and x <= 0
        let mut p = ConicProgram::new(1);
        p.push_block(Cone::Zero(1), vec![vec![(0, 1.0)]], vec![1.0]);
        p.push_block(Cone::Nonnegative(1), vec![vec![(0, 1.0)]], vec![0.0]);
        let (status, ..) = solve_program(&p, &SolverConfig::default()).unwrap();
        assert_eq!(status, SolveStatus::Infeasible);
    }
}
