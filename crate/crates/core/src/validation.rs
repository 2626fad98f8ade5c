//! Randomized instances and the property suites run by the `validate`
//! command and the acceptance tests.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{PipelineError, SolverError};
use crate::formulation::{DsrProblem, LambdaSpec, MagnitudeBounds, ObjectiveSpec, VoltageSpec};
use crate::load::{exponential_injection, linear_injection, reconstruct_voltages};
use crate::network::{
    Bases, Line, LineId, LineMask, LoadSpec, NetworkModel, Node, NodeId, Phase, PhaseLoad, PhaseSet,
};
use crate::pipeline::{exhaustive_oracle, heuristic_baseline, sca_solve, solve_dsr, ScaOptions};
use crate::solver::{solve, solve_eta, verify_prop1, verify_prop2, SolverConfig};

/// Shape of a random feeder.
#[derive(Debug, Clone, Copy)]
pub struct InstanceSpec {
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Attempts at adding a switched chord between non-adjacent nodes.
    pub max_chords: usize,
    /// Probability that a tree line also carries a switch.
    pub tree_switch_prob: f64,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        InstanceSpec {
            min_nodes: 3,
            max_nodes: 10,
            max_chords: 3,
            tree_switch_prob: 0.3,
        }
    }
}

/// Solver settings for the randomized suites: tight tolerance, and no
/// rescaling since every quantity is already of order one.
pub fn suite_config() -> SolverConfig {
    SolverConfig {
        tol: 1e-10,
        equilibrate: false,
        ..SolverConfig::default()
    }
}

/// Bases under which per-unit and SI quantities coincide.
pub fn unit_bases() -> Bases {
    Bases {
        v_nominal: 3f64.sqrt(),
        s_base: 1.0,
    }
}

fn random_phases<R: Rng>(rng: &mut R, parent: PhaseSet) -> PhaseSet {
    let avail: Vec<Phase> = parent.iter().collect();
    loop {
        let pick = PhaseSet::from_phases(avail.iter().copied().filter(|_| rng.random_bool(0.6)));
        if !pick.is_empty() {
            return pick;
        }
    }
}

/// `R = B B' + delta I` and a symmetric reactance of similar size.
fn random_impedance<R: Rng>(rng: &mut R, k: usize) -> DMatrix<Complex64> {
    let b = DMatrix::from_fn(k, k, |_, _| rng.random_range(-0.3..0.3));
    let c = DMatrix::from_fn(k, k, |_, _| rng.random_range(-0.3..0.3));
    let r = &b * b.transpose() + DMatrix::identity(k, k) * rng.random_range(0.02..0.1);
    let x = (&c + c.transpose()) * 0.5 + DMatrix::identity(k, k) * rng.random_range(0.05..0.2);
    DMatrix::from_fn(k, k, |i, j| Complex64::new(r[(i, j)], x[(i, j)]))
}

fn new_line(from: u32, to: u32, phases: PhaseSet, z: DMatrix<Complex64>, switchable: bool, open: bool) -> Line {
    let k = phases.len();
    Line {
        from: NodeId(from),
        to: NodeId(to),
        phases,
        impedance_ohm: z,
        impedance: DMatrix::zeros(k, k),
        switchable,
        normally_open: open,
        i_max_amp: None,
        lambda_weight: None,
    }
}

/// Random feeder over [`unit_bases`]: a random tree rooted at a three-phase
/// substation, child phases drawn from the parent's, plus switched chords
/// that are normally open. Loads carry random exponents.
pub fn random_network<R: Rng>(rng: &mut R, spec: &InstanceSpec) -> NetworkModel {
    let n = rng.random_range(spec.min_nodes..=spec.max_nodes);
    let mut nodes = vec![Node {
        id: NodeId(1),
        phases: PhaseSet::ABC,
        is_substation: true,
        load: None,
        dg: None,
    }];
    let mut lines = Vec::new();
    for i in 1..n {
        let parent = rng.random_range(0..i);
        let phases = random_phases(rng, nodes[parent].phases);
        let load = LoadSpec {
            phases: phases
                .iter()
                .map(|phase| PhaseLoad {
                    phase,
                    s: Complex64::new(rng.random_range(0.05..0.6), rng.random_range(0.0..0.3)),
                    kappa: rng.random_range(0..=2),
                    transformer: None,
                })
                .collect(),
        };
        nodes.push(Node {
            id: NodeId(i as u32 + 1),
            phases,
            is_substation: false,
            load: Some(load),
            dg: None,
        });
        let z = random_impedance(rng, phases.len());
        let sw = rng.random_bool(spec.tree_switch_prob);
        lines.push(new_line(parent as u32 + 1, i as u32 + 1, phases, z, sw, false));
    }
    for _ in 0..spec.max_chords {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        let (a, b) = (a.min(b), a.max(b));
        let adjacent = lines
            .iter()
            .any(|l: &Line| (l.from.0, l.to.0) == (a as u32 + 1, b as u32 + 1));
        let common = nodes[a].phases.intersection(nodes[b].phases);
        if a == b || adjacent || common.is_empty() {
            continue;
        }
        let phases = random_phases(rng, common);
        let z = random_impedance(rng, phases.len());
        lines.push(new_line(a as u32 + 1, b as u32 + 1, phases, z, true, true));
    }
    NetworkModel::new(Some("random".into()), unit_bases(), nodes, lines).expect("generated model is valid")
}

/// The five-node meshed example with switches on the three lines out of node 2.
pub fn five_node_example() -> NetworkModel {
    let a = PhaseSet::single(Phase::A);
    let mut nodes = vec![Node {
        id: NodeId(1),
        phases: PhaseSet::ABC,
        is_substation: true,
        load: None,
        dg: None,
    }];
    for (id, p) in [(2u32, 0.2), (3, 0.4), (4, 0.3), (5, 0.5)] {
        nodes.push(Node {
            id: NodeId(id),
            phases: a,
            is_substation: false,
            load: Some(LoadSpec {
                phases: vec![PhaseLoad {
                    phase: Phase::A,
                    s: Complex64::new(p, 0.3 * p),
                    kappa: 0,
                    transformer: None,
                }],
            }),
            dg: None,
        });
    }
    let z = |r: f64| DMatrix::from_element(1, 1, Complex64::new(r, 2.0 * r));
    let lines = vec![
        new_line(1, 2, a, z(0.05), false, false),
        new_line(2, 3, a, z(0.10), true, false),
        new_line(2, 4, a, z(0.30), true, true),
        new_line(2, 5, a, z(0.20), true, true),
        new_line(3, 5, a, z(0.15), false, false),
        new_line(4, 5, a, z(0.12), false, false),
    ];
    NetworkModel::new(Some("five-node".into()), unit_bases(), nodes, lines).expect("valid")
}

/// `g(eta) = eta - (eta/2) mu' (eta Z + lambda^2/2 I)^{-1} mu`.
pub fn eta_objective(mu: &DVector<f64>, z: &DMatrix<f64>, lambda: f64, eta: f64) -> f64 {
    let k = mu.len();
    let m = z * eta + DMatrix::identity(k, k) * (lambda * lambda / 2.0);
    let sol = m.lu().solve(mu).expect("positive definite");
    eta - eta / 2.0 * mu.dot(&sol)
}

/// Independent minimizer of [`eta_objective`]: a uniform grid over a
/// bracket that contains the minimizer, then golden-section refinement.
pub fn eta_oracle(mu: &DVector<f64>, z: &DMatrix<f64>, lambda: f64) -> f64 {
    if mu.norm() <= lambda {
        return 0.0;
    }
    let d_min = SymmetricEigen::new(z.clone()).eigenvalues.min().max(1e-300);
    let hi = (lambda * mu.norm() / (2.0 * d_min)).max(1e-12);
    let g = |e: f64| eta_objective(mu, z, lambda, e);
    let n = 400;
    let step = hi / n as f64;
    let best = (0..=n)
        .map(|i| i as f64 * step)
        .min_by(|a, b| g(*a).total_cmp(&g(*b)))
        .expect("nonempty");
    let (mut a, mut b) = ((best - step).max(0.0), (best + step).min(hi));
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut c, mut d) = (b - r * (b - a), a + r * (b - a));
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..200 {
        if gc < gd {
            b = d;
            d = c;
            gd = gc;
            c = b - r * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + r * (b - a);
            gd = g(d);
        }
    }
    0.5 * (a + b)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PropSuiteReport {
    pub instances: usize,
    /// Instances the backend could not solve to tolerance; not verified.
    pub unsolved: usize,
    pub lines_checked: usize,
    /// Switched lines whose multiplier fell below the weight.
    pub thresholded: usize,
    pub worst_prop1: f64,
    pub worst_prop2: f64,
    /// Largest `|g(eta) - g(eta_oracle)| / max(1, |g|)` over shrinking lines.
    pub worst_eta_value_gap: f64,
    /// Largest relative difference of the two minimizers.
    pub worst_eta_rel: f64,
    pub elapsed_s: f64,
}

/// Closed-form multiplier checks on `count` random instances with random
/// weights in `[0, 10]` volts.
pub fn prop_suite(seed: u64, count: usize, config: &SolverConfig) -> Result<PropSuiteReport, PipelineError> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = PropSuiteReport::default();
    for _ in 0..count {
        let model = random_network(&mut rng, &InstanceSpec::default());
        // skewed towards small weights so shrinkage and thresholding both occur
        let lambda = 10.0 * rng.random::<f64>().powi(3);
        let problem = DsrProblem::build(
            &model,
            &ObjectiveSpec::loss(),
            &LambdaSpec::uniform(lambda),
            &VoltageSpec::None,
            &LineMask::all(&model),
        )?;
        let sol = solve(&problem, config)?;
        if !sol.is_optimal() {
            rep.unsolved += 1;
            continue;
        }
        let p1 = verify_prop1(&problem, &sol)?;
        let p2 = verify_prop2(&problem, &sol)?;
        rep.instances += 1;
        rep.lines_checked += p1.lines.len() + p2.lines.len();
        rep.worst_prop1 = rep.worst_prop1.max(p1.worst);
        rep.worst_prop2 = rep.worst_prop2.max(p2.worst);
        for r in &p2.lines {
            if r.lambda > 0.0 && r.mu_norm <= r.lambda {
                rep.thresholded += 1;
            }
            if r.lambda == 0.0 || r.mu_norm <= r.lambda {
                continue;
            }
            let (mu, zt) = line_mu_and_z(&problem, &sol, r.line);
            let ours = solve_eta(&mu, &zt, r.lambda)?;
            let oracle = eta_oracle(&mu, &zt, r.lambda);
            let go = eta_objective(&mu, &zt, r.lambda, oracle);
            let gs = eta_objective(&mu, &zt, r.lambda, ours);
            rep.worst_eta_value_gap = rep.worst_eta_value_gap.max((gs - go).abs() / go.abs().max(1.0));
            rep.worst_eta_rel = rep
                .worst_eta_rel
                .max((ours - oracle).abs() / ours.abs().max(oracle.abs()).max(1e-300));
        }
    }
    rep.elapsed_s = started.elapsed().as_secs_f64();
    Ok(rep)
}

fn line_mu_and_z(
    problem: &DsrProblem<'_>,
    sol: &crate::solver::PrimalDualSolution,
    id: LineId,
) -> (DVector<f64>, DMatrix<f64>) {
    let model = problem.model();
    let inc = problem.incidence();
    let (m, n) = model.endpoints(id);
    let am = inc.stacked_selection(model, m, id);
    let an = inc.stacked_selection(model, n, id);
    let mu = am.transpose() * &sol.mu[m] - an.transpose() * &sol.mu[n] + &sol.mu_voltage[id.0];
    let line = model.line(id);
    let mut z = problem.hessian(id).clone();
    for (p, rho) in sol.rho[id.0].iter().enumerate() {
        z += line.m_bar(p) * *rho;
    }
    (mu, z)
}

/// Single-phase triangle: substation feeds nodes 2 and 3, which are tied by
/// a switched line.
pub fn random_triangle<R: Rng>(rng: &mut R) -> NetworkModel {
    let a = PhaseSet::single(Phase::A);
    let mut nodes = vec![Node {
        id: NodeId(1),
        phases: PhaseSet::ABC,
        is_substation: true,
        load: None,
        dg: None,
    }];
    for id in [2u32, 3] {
        nodes.push(Node {
            id: NodeId(id),
            phases: a,
            is_substation: false,
            load: Some(LoadSpec {
                phases: vec![PhaseLoad {
                    phase: Phase::A,
                    s: Complex64::new(rng.random_range(0.1..1.0), rng.random_range(0.0..0.5)),
                    kappa: 0,
                    transformer: None,
                }],
            }),
            dg: None,
        });
    }
    let mut z = || random_impedance(rng, 1);
    let lines = vec![
        new_line(1, 2, a, z(), false, false),
        new_line(1, 3, a, z(), false, false),
        new_line(2, 3, a, z(), true, true),
    ];
    NetworkModel::new(Some("triangle".into()), unit_bases(), nodes, lines).expect("valid")
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ThresholdReport {
    pub instances: usize,
    /// Instances skipped because a solve was not certified optimal.
    pub unsolved: usize,
    /// Largest switch current norm when the weight exceeds the threshold.
    pub worst_open_norm: f64,
    /// Largest closed-form residual when it does not.
    pub worst_shrink_residual: f64,
}

/// On random triangles, the tie switch carries no current above the
/// multiplier threshold and follows the scalar shrinkage formula below it.
/// The threshold is the multiplier norm with the switch removed.
pub fn threshold_suite(seed: u64, count: usize, config: &SolverConfig) -> Result<ThresholdReport, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = ThresholdReport::default();
    for _ in 0..count {
        let model = random_triangle(&mut rng);
        let sw = model.switch_lines()[0];
        let open = DsrProblem::build(
            &model,
            &ObjectiveSpec::loss(),
            &LambdaSpec::uniform(0.0),
            &VoltageSpec::None,
            &LineMask::with_open(&model, &[sw]),
        )?;
        let sol = solve(&open, config)?;
        if !sol.is_optimal() {
            rep.unsolved += 1;
            continue;
        }
        let (m, n) = model.endpoints(sw);
        // single-phase nodes: the multiplier difference is the line's
        let threshold = (&sol.mu[m] - &sol.mu[n]).norm() * model.bases.v_phase();
        let (mut open_norm, mut shrink) = (0.0f64, 0.0f64);
        let mut solved = true;
        for (factor, above) in [(1.5, true), (0.5, false)] {
            let lambda = factor * threshold;
            let problem = DsrProblem::build(
                &model,
                &ObjectiveSpec::loss(),
                &LambdaSpec::uniform(lambda),
                &VoltageSpec::None,
                &LineMask::all(&model),
            )?;
            let s = solve(&problem, config)?;
            if !s.is_optimal() {
                solved = false;
                break;
            }
            if above {
                open_norm = s.xi[sw.0].norm();
            } else {
                let r = verify_prop2(&problem, &s)?;
                let line = r.lines.iter().find(|l| l.line == sw).expect("switch checked");
                shrink = line.residual;
            }
        }
        if !solved {
            rep.unsolved += 1;
            continue;
        }
        rep.worst_open_norm = rep.worst_open_norm.max(open_norm);
        rep.worst_shrink_residual = rep.worst_shrink_residual.max(shrink);
        rep.instances += 1;
    }
    Ok(rep)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ScaSuiteReport {
    pub instances: usize,
    pub attempts: usize,
    /// Attempts abandoned because a subproblem was not certified optimal.
    pub unsolved: usize,
    pub max_iterations: usize,
    pub all_converged: bool,
    /// Largest objective increase between consecutive iterates.
    pub worst_increase: f64,
    /// Most negative bound margin of the final iterates.
    pub worst_final_margin: f64,
    pub worst_tightness: f64,
    pub worst_dominance: f64,
    pub worst_gradient: f64,
    pub worst_final_kkt: f64,
}

/// Runs the SCA loop on random radial-core instances whose lower magnitude
/// bound is violated by the unconstrained optimum. The bound is placed a
/// fraction of the way from the lowest voltage to nominal and pulled back
/// when no feasible start exists.
pub fn sca_suite(seed: u64, count: usize, config: &SolverConfig) -> Result<ScaSuiteReport, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = ScaSuiteReport {
        all_converged: true,
        worst_final_margin: f64::INFINITY,
        ..Default::default()
    };
    let spec = InstanceSpec {
        min_nodes: 3,
        max_nodes: 8,
        max_chords: 3,
        tree_switch_prob: 0.0,
    };
    while rep.instances < count && rep.attempts < 20 * count {
        rep.attempts += 1;
        let model = random_network(&mut rng, &spec);
        let lambda = LambdaSpec::uniform(rng.random_range(0.0..0.05));
        // loose bounds: builds the voltage maps without constraining anything
        let plain = DsrProblem::build(
            &model,
            &ObjectiveSpec::loss(),
            &lambda,
            &VoltageSpec::Magnitude(MagnitudeBounds::uniform(&model, 1e-3, 1e3)),
            &LineMask::all(&model),
        )?;
        let base = solve(&plain, config)?;
        if !base.is_optimal() {
            rep.unsolved += 1;
            continue;
        }
        let lowest = (0..model.nodes().len())
            .filter(|i| *i != model.substation())
            .filter_map(|i| {
                let map = plain.voltage_map(i)?;
                Some((0..model.node(i).phases.len()).map(|p| map.magnitude(&base.xi, p)).fold(f64::INFINITY, f64::min))
            })
            .fold(f64::INFINITY, f64::min);
        if !(lowest < 0.999) {
            continue;
        }
        let mut fraction: f64 = *[0.1, 0.25, 0.4].choose(&mut rng).expect("nonempty");
        let outcome = loop {
            let vmin = lowest + fraction * (1.0 - lowest);
            let bounds = MagnitudeBounds::uniform(&model, vmin, 2.0);
            let problem = DsrProblem::build(
                &model,
                &ObjectiveSpec::loss(),
                &lambda,
                &VoltageSpec::Magnitude(bounds),
                &LineMask::all(&model),
            )?;
            let options = ScaOptions {
                check_surrogate: true,
                surrogate_samples: 1000,
                seed: rng.random(),
                ..Default::default()
            };
            match sca_solve(&problem, config, &options) {
                Ok(o) => break Some(o),
                Err(PipelineError::NoInitialPoint(_)) if fraction > 1e-3 => fraction /= 4.0,
                Err(PipelineError::NoInitialPoint(_)) => break None,
                Err(PipelineError::Solver(SolverError::NotOptimal(_))) => {
                    rep.unsolved += 1;
                    break None;
                }
                Err(e) => return Err(e),
            }
        };
        let Some(out) = outcome else { continue };
        rep.instances += 1;
        rep.max_iterations = rep.max_iterations.max(out.history.len());
        rep.all_converged &= out.converged;
        for w in out.history.windows(2) {
            rep.worst_increase = rep.worst_increase.max(w[1].objective - w[0].objective);
        }
        if let Some(last) = out.history.last() {
            rep.worst_final_margin = rep.worst_final_margin.min(last.lower_margin.min(last.upper_margin));
        }
        for it in &out.history {
            if let Some(c) = it.surrogate {
                rep.worst_tightness = rep.worst_tightness.max(c.tightness);
                rep.worst_dominance = rep.worst_dominance.max(c.dominance);
                rep.worst_gradient = rep.worst_gradient.max(c.gradient);
            }
        }
        rep.worst_final_kkt = rep.worst_final_kkt.max(out.final_kkt.max());
    }
    Ok(rep)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct InjectionReport {
    pub instances: usize,
    pub unsolved: usize,
    /// Smallest error ratio between nominal and doubled nominal voltage.
    pub worst_ratio: f64,
    pub mean_ratio: f64,
}

/// Relative gap between exponential-model and linear injections at the
/// voltages reconstructed from the base-configuration solution.
pub fn injection_error(model: &NetworkModel, config: &SolverConfig) -> Result<f64, PipelineError> {
    let mask = LineMask::base_configuration(model);
    let problem = DsrProblem::build(
        model,
        &ObjectiveSpec::loss(),
        &LambdaSpec::uniform(0.0),
        &VoltageSpec::None,
        &mask,
    )?;
    let sol = solve(&problem, config)?;
    if !sol.is_optimal() {
        return Err(SolverError::NotOptimal(format!("{:?}", sol.status)).into());
    }
    let volts = reconstruct_voltages(model, &mask, &sol.xi)?;
    let vn = model.bases.v_nominal;
    let vb = model.bases.v_phase();
    let (mut diff, mut total) = (0.0, 0.0);
    for (i, node) in model.nodes().iter().enumerate() {
        if !node.has_load() {
            continue;
        }
        let v_si: Vec<Complex64> = volts[i].iter().map(|v| v * vb).collect();
        let exact = exponential_injection(node, &v_si, vn)?;
        let lin = linear_injection(node, vn).h;
        let k = node.phases.len();
        for p in 0..k {
            let l = Complex64::new(lin[p], lin[k + p]);
            diff += (exact[p] - l).norm();
            total += l.norm();
        }
    }
    Ok(if total > 0.0 { diff / total } else { 0.0 })
}

/// Doubles the nominal voltage of random instances with loads and
/// impedances held fixed and compares injection errors.
pub fn injection_suite(seed: u64, count: usize, config: &SolverConfig) -> Result<InjectionReport, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = InjectionReport {
        worst_ratio: f64::INFINITY,
        ..Default::default()
    };
    let mut sum = 0.0;
    for _ in 0..count {
        let model = random_network(&mut rng, &InstanceSpec::default());
        let doubled = NetworkModel::new(
            model.name.clone(),
            Bases {
                v_nominal: 2.0 * model.bases.v_nominal,
                s_base: model.bases.s_base,
            },
            model.nodes().to_vec(),
            model.lines().to_vec(),
        )?;
        let (e1, e2) = match (injection_error(&model, config), injection_error(&doubled, config)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(PipelineError::Solver(SolverError::NotOptimal(_))), _)
            | (_, Err(PipelineError::Solver(SolverError::NotOptimal(_)))) => {
                rep.unsolved += 1;
                continue;
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        let ratio = e1 / e2.max(1e-300);
        rep.worst_ratio = rep.worst_ratio.min(ratio);
        sum += ratio;
        rep.instances += 1;
    }
    rep.mean_ratio = sum / rep.instances.max(1) as f64;
    Ok(rep)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct DominanceReport {
    pub instances: usize,
    pub unsolved: usize,
    /// Instances skipped for having more switches than the limit.
    pub skipped: usize,
    /// Instances where the oracle loss exceeded the proposed refit loss.
    pub oracle_violations: usize,
    /// Largest `(oracle - proposed) / proposed`.
    pub worst_oracle_excess: f64,
    /// Instances where the proposed loss exceeded the baseline loss.
    pub baseline_gaps: usize,
    /// Largest `(proposed - baseline) / baseline`.
    pub worst_baseline_gap: f64,
}

/// Compares the refit loss of the extracted topology with the exhaustive
/// oracle over the same class (radial when the extracted topology is
/// radial, connected otherwise) and with the greedy baseline.
pub fn dominance_suite(
    seed: u64,
    count: usize,
    max_switches: usize,
    config: &SolverConfig,
) -> Result<DominanceReport, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = DominanceReport::default();
    let objective = ObjectiveSpec::loss();
    for _ in 0..count {
        let model = random_network(&mut rng, &InstanceSpec::default());
        let lambda = 10.0 * rng.random::<f64>().powi(2);
        if model.switch_lines().len() > max_switches {
            rep.skipped += 1;
            continue;
        }
        let problem = DsrProblem::build(
            &model,
            &objective,
            &LambdaSpec::uniform(lambda),
            &VoltageSpec::None,
            &LineMask::all(&model),
        )?;
        let run = || -> Result<Option<(f64, f64, f64)>, PipelineError> {
            let dsr = solve_dsr(&problem, config)?;
            let Some(proposed) = dsr.refit_loss_w else {
                return Ok(None);
            };
            let oracle = exhaustive_oracle(&model, &objective, dsr.topology.radial, config)?;
            let baseline = heuristic_baseline(&model, &objective, config)?;
            Ok(Some((proposed, oracle.best_loss_w, baseline.loss_w)))
        };
        let (proposed, oracle, baseline) = match run() {
            Ok(Some(v)) => v,
            Ok(None) | Err(PipelineError::Solver(SolverError::NotOptimal(_))) => {
                rep.unsolved += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        rep.instances += 1;
        let excess = (oracle - proposed) / proposed.max(1e-300);
        rep.worst_oracle_excess = rep.worst_oracle_excess.max(excess);
        if oracle > proposed + 1e-9 * proposed.max(1.0) {
            rep.oracle_violations += 1;
        }
        let gap = (proposed - baseline) / baseline.max(1e-300);
        rep.worst_baseline_gap = rep.worst_baseline_gap.max(gap);
        if proposed > baseline + 1e-9 * baseline.max(1.0) {
            rep.baseline_gaps += 1;
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::connected_from_substation;

    #[test]
    fn random_networks_are_valid_and_phase_nested() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let m = random_network(&mut rng, &InstanceSpec::default());
            assert!(connected_from_substation(&m, &LineMask::base_configuration(&m)));
            for l in m.lines() {
                let (a, b) = (m.node_index(l.from).unwrap(), m.node_index(l.to).unwrap());
                assert!(l.phases.is_subset_of(m.node(a).phases));
                assert!(l.phases.is_subset_of(m.node(b).phases));
            }
        }
    }

    #[test]
    fn eta_oracle_agrees_with_bisection() {
        let mu = DVector::from_vec(vec![1.0, -0.5, 0.3, 0.8]);
        let z = DMatrix::from_row_slice(4, 4, &[
            2.0, 0.3, 0.0, 0.0, 0.3, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.3, 0.0, 0.0, 0.3, 1.0,
        ]);
        let lambda = 0.4;
        let a = solve_eta(&mu, &z, lambda).unwrap();
        let b = eta_oracle(&mu, &z, lambda);
        assert!((a - b).abs() <= 1e-7 * a.max(1.0), "{a} {b}");
    }

    #[test]
    fn five_node_example_has_two_cycles() {
        let m = five_node_example();
        assert_eq!(crate::network::enumerate_cycles(&m).len(), 2);
        assert_eq!(m.switch_lines().len(), 3);
    }
}
