mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use gridreconf_core::feeders;
use gridreconf_core::pipeline::{
    auto_lambda, exhaustive_oracle, extract_topology, heuristic_baseline, lambda_sweep, refit, sca_solve,
    solve_dsr, AutoLambda, ScaOptions, Topology,
};
use gridreconf_core::solver::KktResiduals;
use gridreconf_core::validation::{injection_suite, prop_suite, sca_suite, suite_config, threshold_suite};
use gridreconf_core::{
    parse_network, DsrProblem, LambdaSpec, LineMask, MagnitudeBounds, NetworkModel, ObjectiveSpec,
    PipelineError, SolveStatus, SolverConfig, SolverError, VoltageBox, VoltageSpec,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use output::{
    current_rows, deviation, deviation_row, magnitudes, num, OutDir, TopologySummary, CURRENT_HEADER,
    DEVIATION_HEADER, LOSS_HEADER,
};

/// Group-sparse reconfiguration of distribution feeders.
#[derive(Debug, Parser)]
#[command(name = "gridreconf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Options,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the regularized program at one weight, extract and refit the topology.
    Solve,
    /// Solve over a grid of weights.
    Sweep,
    /// Refit every admissible switch configuration.
    Oracle,
    /// Greedy branch-exchange baseline.
    Baseline,
    /// Sequential convex approximation with voltage magnitude bounds.
    Sca,
    /// Run the randomized verification suites.
    Validate,
    /// Describe the input network.
    Report,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Objective {
    Loss,
    Operational,
    Balancing,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Voltage {
    None,
    Box,
    Magnitude,
}

#[derive(Debug, clap::Args)]
struct Options {
    /// Network JSON file, or `builtin:NAME` for a bundled feeder.
    #[arg(long, global = true)]
    input: Option<String>,
    #[arg(long, global = true, value_enum, default_value = "loss")]
    objective: Objective,
    /// Price per watt of losses for the operational and mixed objectives.
    #[arg(long, global = true, default_value_t = 1.0)]
    c0: f64,
    /// Weight of the balancing term in the mixed objective.
    #[arg(long, global = true, default_value_t = 0.5)]
    mix_weight: f64,
    /// Global sparsity weight, volts.
    #[arg(long, global = true, default_value_t = 0.0)]
    lambda: f64,
    /// `lo:hi:n` with log spacing, or `lo:hi:n:lin` for linear spacing.
    #[arg(long, global = true)]
    lambda_grid: Option<String>,
    /// CSV with columns `from,to,lambda_v` overriding per-line weights.
    #[arg(long, global = true)]
    weights: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "none")]
    voltage: Voltage,
    /// Lower voltage bound, per-unit of the phase voltage.
    #[arg(long, global = true, default_value_t = 0.95)]
    vmin: f64,
    /// Upper voltage bound, per-unit of the phase voltage.
    #[arg(long, global = true, default_value_t = 1.05)]
    vmax: f64,
    /// Search the weight for this many closed switches.
    #[arg(long, global = true)]
    target_closed: Option<usize>,
    /// Restrict the oracle to spanning trees.
    #[arg(long, global = true)]
    radial_only: bool,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Instances per validation suite.
    #[arg(long, global = true, default_value_t = 25)]
    count: usize,
}

#[derive(Debug, Deserialize)]
struct WeightRow {
    from: u32,
    to: u32,
    lambda_v: f64,
}

/// Solver status of a command; non-optimal outcomes exit with code 2.
enum Outcome {
    Optimal,
    NotOptimal(String),
}

fn load_network(input: Option<&str>) -> Result<NetworkModel> {
    let input = input.context("--input is required")?;
    match input.strip_prefix("builtin:") {
        Some(name) => Ok(feeders::by_name(name)?),
        None => parse_network(input).with_context(|| format!("reading {input}")),
    }
}

fn objective(opts: &Options, model: &NetworkModel) -> ObjectiveSpec {
    let capped = || -> Vec<_> {
        model
            .line_ids()
            .filter(|id| model.line(*id).i_max_amp.is_some())
            .collect()
    };
    match opts.objective {
        Objective::Loss => ObjectiveSpec::loss(),
        Objective::Operational => ObjectiveSpec::operational(opts.c0),
        Objective::Balancing => ObjectiveSpec::balancing(capped()),
        Objective::Mixed => ObjectiveSpec::mixed(opts.c0, capped(), opts.mix_weight),
    }
}

fn lambda_spec(opts: &Options, model: &NetworkModel) -> Result<LambdaSpec> {
    let mut spec = LambdaSpec::uniform(opts.lambda);
    if let Some(path) = &opts.weights {
        let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        for row in reader.deserialize() {
            let row: WeightRow = row?;
            let id = model
                .find_line(row.from, row.to)
                .or_else(|| model.find_line(row.to, row.from))
                .with_context(|| format!("weights: no line ({},{})", row.from, row.to))?;
            spec.per_line.insert(id, row.lambda_v);
        }
    }
    Ok(spec)
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let (lo, hi, n, linear) = match parts.as_slice() {
        [lo, hi, n] => (lo, hi, n, false),
        [lo, hi, n, "lin"] => (lo, hi, n, true),
        [_, _, _, "log"] => (&parts[0], &parts[1], &parts[2], false),
        _ => bail!("--lambda-grid expects lo:hi:n or lo:hi:n:lin"),
    };
    let (lo, hi): (f64, f64) = (lo.parse()?, hi.parse()?);
    let n: usize = n.parse()?;
    if n < 2 || !(lo < hi) {
        bail!("--lambda-grid needs lo < hi and n >= 2");
    }
    if linear {
        return Ok((0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect());
    }
    if lo <= 0.0 {
        bail!("log-spaced --lambda-grid needs lo > 0; use :lin for a grid starting at zero");
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect())
}

fn solver_config(opts: &Options) -> Result<SolverConfig> {
    let mut config = SolverConfig::default();
    if let Some(tol) = opts.tol {
        config.tol = tol;
    }
    config.validate()?;
    Ok(config)
}

fn voltage_spec(opts: &Options, model: &NetworkModel) -> Result<VoltageSpec> {
    if !(opts.vmin < opts.vmax) {
        bail!("--vmin must be below --vmax");
    }
    Ok(match opts.voltage {
        Voltage::None => VoltageSpec::None,
        Voltage::Box => VoltageSpec::Box(VoltageBox::around_nominal(model, 0.5 * (opts.vmax - opts.vmin))),
        Voltage::Magnitude => VoltageSpec::Magnitude(MagnitudeBounds::uniform(model, opts.vmin, opts.vmax)),
    })
}

fn status_outcome(status: SolveStatus) -> Outcome {
    match status {
        SolveStatus::Optimal => Outcome::Optimal,
        other => Outcome::NotOptimal(format!("{other:?}")),
    }
}

/// Refit loss, currents and deviation of a fixed topology, written as the
/// single-point CSV set.
fn write_fixed(
    out: &OutDir,
    model: &NetworkModel,
    objective: &ObjectiveSpec,
    topo: &Topology,
    lambda: f64,
    currents: &[Vec<f64>],
    config: &SolverConfig,
) -> Result<Option<(f64, KktResiduals)>> {
    out.csv("currents.csv", &CURRENT_HEADER, current_rows(model, lambda, currents))?;
    let fit = if topo.connected {
        Some(refit(model, topo, objective, config)?)
    } else {
        None
    };
    out.csv(
        "loss_curve.csv",
        &LOSS_HEADER,
        fit.iter().map(|f| vec![num(lambda), num(f.loss_w)]),
    )?;
    let dev = fit.as_ref().and_then(|f| deviation(model, topo, &f.solution));
    out.csv("deviation.csv", &DEVIATION_HEADER, dev.iter().map(|d| deviation_row(lambda, d)))?;
    Ok(fit.map(|f| (f.loss_w, f.solution.kkt)))
}

fn cmd_solve(opts: &Options, out: &OutDir) -> Result<Outcome> {
    let model = load_network(opts.input.as_deref())?;
    let config = solver_config(opts)?;
    let objective = objective(opts, &model);
    let mut lambda = lambda_spec(opts, &model)?;
    let started = Instant::now();

    let mut search = None;
    if let Some(target) = opts.target_closed {
        let hi = match &opts.lambda_grid {
            Some(g) => *parse_grid(g)?.last().expect("nonempty"),
            None => 1e4,
        };
        let found = auto_lambda(&model, &objective, &lambda, target, (opts.lambda, hi), &config)?;
        lambda.global = match &found {
            AutoLambda::Found { lambda, .. } => *lambda,
            AutoLambda::Bracket { nearest_lambda, .. } => *nearest_lambda,
        };
        search = Some(found);
    }

    if opts.voltage == Voltage::Magnitude {
        return run_sca(opts, out, &model, &objective, &lambda, &config);
    }
    let problem = DsrProblem::build(
        &model,
        &objective,
        &lambda,
        &voltage_spec(opts, &model)?,
        &LineMask::all(&model),
    )?;
    let dsr = solve_dsr(&problem, &config)?;
    let fixed = write_fixed(
        out,
        &model,
        &objective,
        &dsr.topology,
        lambda.global,
        &magnitudes(&model, &dsr.solution.xi),
        &config,
    )?;
    let sol = &dsr.solution;
    out.json(
        "summary.json",
        &json!({
            "command": "solve",
            "network": model.name,
            "lambda_v": lambda.global,
            "status": sol.status,
            "objective": sol.objective,
            "topology": TopologySummary::new(&model, &dsr.topology),
            "loss_w": dsr.loss_w,
            "refit_loss_w": dsr.refit_loss_w,
            "kkt": sol.kkt,
            "refit_kkt": fixed.map(|f| f.1),
            "prop1_residual": dsr.prop1_residual,
            "prop2_residual": dsr.prop2_residual,
            "iterations": sol.iterations,
            "solve_time_s": sol.solve_time_s,
            "wall_time_s": started.elapsed().as_secs_f64(),
            "lambda_search": search,
        }),
    )?;
    println!(
        "status={:?} open={:?} loss={:.3} kW refit={} kW",
        sol.status,
        dsr.topology.open_pairs(&model),
        dsr.loss_w / 1e3,
        dsr.refit_loss_w.map_or("n/a".into(), |l| format!("{:.3}", l / 1e3)),
    );
    Ok(status_outcome(sol.status))
}

fn run_sca(
    opts: &Options,
    out: &OutDir,
    model: &NetworkModel,
    objective: &ObjectiveSpec,
    lambda: &LambdaSpec,
    config: &SolverConfig,
) -> Result<Outcome> {
    let started = Instant::now();
    let bounds = MagnitudeBounds::uniform(model, opts.vmin, opts.vmax);
    let problem = DsrProblem::build(
        model,
        objective,
        lambda,
        &VoltageSpec::Magnitude(bounds),
        &LineMask::all(model),
    )?;
    let options = ScaOptions {
        check_surrogate: true,
        seed: opts.seed,
        ..Default::default()
    };
    let outcome = sca_solve(&problem, config, &options)?;
    let topo = extract_topology(model, &outcome.solution, config.group_eps);
    let fixed = write_fixed(
        out,
        model,
        objective,
        &topo,
        lambda.global,
        &magnitudes(model, &outcome.solution.xi),
        config,
    )?;
    out.json(
        "summary.json",
        &json!({
            "command": "sca",
            "network": model.name,
            "lambda_v": lambda.global,
            "vmin": opts.vmin,
            "vmax": opts.vmax,
            "status": outcome.solution.status,
            "objective": outcome.solution.objective,
            "converged": outcome.converged,
            "feasibility_iterations": outcome.feasibility_iterations,
            "history": outcome.history,
            "final_kkt": outcome.final_kkt,
            "topology": TopologySummary::new(model, &topo),
            "refit_loss_w": fixed.map(|f| f.0),
            "wall_time_s": started.elapsed().as_secs_f64(),
        }),
    )?;
    println!(
        "converged={} iterations={} open={:?}",
        outcome.converged,
        outcome.history.len(),
        topo.open_pairs(model)
    );
    Ok(status_outcome(outcome.solution.status))
}

fn cmd_sca(opts: &Options, out: &OutDir) -> Result<Outcome> {
    let model = load_network(opts.input.as_deref())?;
    let config = solver_config(opts)?;
    let objective = objective(opts, &model);
    let lambda = lambda_spec(opts, &model)?;
    run_sca(opts, out, &model, &objective, &lambda, &config)
}

fn cmd_sweep(opts: &Options, out: &OutDir) -> Result<Outcome> {
    let model = load_network(opts.input.as_deref())?;
    let config = solver_config(opts)?;
    let objective = objective(opts, &model);
    let base = lambda_spec(opts, &model)?;
    let grid = parse_grid(opts.lambda_grid.as_deref().context("sweep needs --lambda-grid")?)?;
    let started = Instant::now();
    let sweep = lambda_sweep(&model, &objective, &base, &grid, &config)?;

    let mut currents = Vec::new();
    let mut deviations = Vec::new();
    let mut points = Vec::new();
    let mut outcome = Outcome::Optimal;
    for p in &sweep.points {
        currents.extend(current_rows(&model, p.lambda, &p.currents_a));
        let dev = p.topology.as_ref().filter(|t| t.connected).and_then(|t| {
            let fit = refit(&model, t, &objective, &config).ok()?;
            deviation(&model, t, &fit.solution)
        });
        if let Some(d) = &dev {
            deviations.push(deviation_row(p.lambda, d));
        }
        if p.status != Some(SolveStatus::Optimal) {
            outcome = Outcome::NotOptimal(format!("lambda {}: {:?} {:?}", p.lambda, p.status, p.error));
        }
        points.push(json!({
            "lambda_v": p.lambda,
            "status": p.status,
            "topology": p.topology.as_ref().map(|t| TopologySummary::new(&model, t)),
            "refit_loss_w": p.refit_loss_w,
            "quadratic_part": p.quadratic_part,
            "deviation": dev,
            "wall_time_s": p.wall_time_s,
            "error": p.error,
        }));
    }
    out.csv("currents.csv", &CURRENT_HEADER, currents)?;
    out.csv(
        "loss_curve.csv",
        &LOSS_HEADER,
        sweep.loss_curve().into_iter().map(|(l, w)| vec![num(l), num(w)]),
    )?;
    out.csv("deviation.csv", &DEVIATION_HEADER, deviations)?;
    out.json(
        "summary.json",
        &json!({
            "command": "sweep",
            "network": model.name,
            "points": points,
            "wall_time_s": started.elapsed().as_secs_f64(),
        }),
    )?;
    for (l, w) in sweep.loss_curve() {
        println!("lambda={l:.4e} V refit={:.3} kW", w / 1e3);
    }
    Ok(outcome)
}

fn cmd_oracle(opts: &Options, out: &OutDir) -> Result<Outcome> {
    let model = load_network(opts.input.as_deref())?;
    let config = solver_config(opts)?;
    let objective = objective(opts, &model);
    let started = Instant::now();
    let result = exhaustive_oracle(&model, &objective, opts.radial_only, &config)?;
    let fit = refit(&model, &result.best, &objective, &config)?;
    write_fixed(out, &model, &objective, &result.best, 0.0, &magnitudes(&model, &fit.solution.xi), &config)?;
    let failed = result.entries.iter().filter(|e| e.error.is_some()).count();
    out.json(
        "summary.json",
        &json!({
            "command": "oracle",
            "network": model.name,
            "radial_only": opts.radial_only,
            "configurations": result.entries.len(),
            "failed_refits": failed,
            "topology": TopologySummary::new(&model, &result.best),
            "objective": result.best_objective,
            "refit_loss_w": result.best_loss_w,
            "kkt": fit.solution.kkt,
            "wall_time_s": started.elapsed().as_secs_f64(),
        }),
    )?;
    println!(
        "configurations={} best open={:?} loss={:.3} kW",
        result.entries.len(),
        result.best.open_pairs(&model),
        result.best_loss_w / 1e3
    );
    Ok(Outcome::Optimal)
}

fn cmd_baseline(opts: &Options, out: &OutDir) -> Result<Outcome> {
    let model = load_network(opts.input.as_deref())?;
    let config = solver_config(opts)?;
    let objective = objective(opts, &model);
    let started = Instant::now();
    let base = heuristic_baseline(&model, &objective, &config)?;
    let fit = refit(&model, &base.topology, &objective, &config)?;
    write_fixed(out, &model, &objective, &base.topology, 0.0, &magnitudes(&model, &fit.solution.xi), &config)?;
    let opened: Vec<(u32, u32)> = base
        .opened
        .iter()
        .map(|id| (model.line(*id).from.0, model.line(*id).to.0))
        .collect();
    out.json(
        "summary.json",
        &json!({
            "command": "baseline",
            "network": model.name,
            "opened_in_order": opened,
            "topology": TopologySummary::new(&model, &base.topology),
            "objective": base.objective,
            "refit_loss_w": base.loss_w,
            "kkt": fit.solution.kkt,
            "wall_time_s": started.elapsed().as_secs_f64(),
        }),
    )?;
    println!("open={:?} loss={:.3} kW", base.topology.open_pairs(&model), base.loss_w / 1e3);
    Ok(Outcome::Optimal)
}

#[derive(Serialize)]
struct Validation {
    seed: u64,
    count: usize,
    prop: gridreconf_core::validation::PropSuiteReport,
    threshold: gridreconf_core::validation::ThresholdReport,
    sca: gridreconf_core::validation::ScaSuiteReport,
    injection: gridreconf_core::validation::InjectionReport,
}

fn cmd_validate(opts: &Options, out: &OutDir) -> Result<Outcome> {
    let mut config = suite_config();
    if let Some(tol) = opts.tol {
        config.tol = tol;
    }
    config.validate()?;
    let v = Validation {
        seed: opts.seed,
        count: opts.count,
        prop: prop_suite(opts.seed, opts.count, &config)?,
        threshold: threshold_suite(opts.seed, opts.count, &config)?,
        sca: sca_suite(opts.seed, opts.count, &config)?,
        injection: injection_suite(opts.seed, opts.count, &config)?,
    };
    println!(
        "prop1={:.3e} prop2={:.3e} eta_gap={:.3e} (unsolved {})",
        v.prop.worst_prop1, v.prop.worst_prop2, v.prop.worst_eta_value_gap, v.prop.unsolved
    );
    println!(
        "open_norm={:.3e} shrink={:.3e} (unsolved {})",
        v.threshold.worst_open_norm, v.threshold.worst_shrink_residual, v.threshold.unsolved
    );
    println!(
        "sca: c1={:.3e} c2={:.3e} c3={:.3e} increase={:.3e} max_iter={} (unsolved {})",
        v.sca.worst_tightness,
        v.sca.worst_dominance,
        v.sca.worst_gradient,
        v.sca.worst_increase,
        v.sca.max_iterations,
        v.sca.unsolved
    );
    println!(
        "injection ratio worst={:.3} mean={:.3} (unsolved {})",
        v.injection.worst_ratio, v.injection.mean_ratio, v.injection.unsolved
    );
    out.json("summary.json", &v)?;
    let unsolved = v.prop.unsolved + v.threshold.unsolved + v.sca.unsolved + v.injection.unsolved;
    Ok(if unsolved == 0 {
        Outcome::Optimal
    } else {
        Outcome::NotOptimal(format!("{unsolved} suite instances not solved"))
    })
}

fn cmd_report(opts: &Options, out: &OutDir) -> Result<Outcome> {
    let model = load_network(opts.input.as_deref())?;
    let switches = model.switch_lines();
    let normally_open: Vec<(u32, u32)> = model
        .lines()
        .iter()
        .filter(|l| l.normally_open)
        .map(|l| (l.from.0, l.to.0))
        .collect();
    let (mut p, mut q) = (0.0, 0.0);
    for node in model.nodes() {
        for l in node.load.iter().flat_map(|l| &l.phases) {
            p += l.s.re;
            q += l.s.im;
        }
    }
    let loaded = model.nodes().iter().filter(|n| n.has_load()).count();
    let dg = model.nodes().iter().filter(|n| n.dg.is_some()).count();
    let base = Topology::from_mask(&model, &LineMask::base_configuration(&model));
    let summary = json!({
        "command": "report",
        "network": model.name,
        "nodes": model.nodes().len(),
        "lines": model.lines().len(),
        "switches": switches.len(),
        "normally_open": normally_open,
        "loaded_nodes": loaded,
        "dg_nodes": dg,
        "load_p_w": p,
        "load_q_var": q,
        "v_nominal_v": model.bases.v_nominal,
        "s_base_va": model.bases.s_base,
        "base_configuration": TopologySummary::new(&model, &base),
    });
    out.json("summary.json", &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(Outcome::Optimal)
}

fn run(cli: &Cli) -> Result<Outcome> {
    if let Ok(threads) = std::env::var("GRIDRECONF_THREADS") {
        let n: usize = threads.parse().context("GRIDRECONF_THREADS must be a positive integer")?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let out = OutDir::create(Path::new(&cli.opts.out))?;
    let opts = &cli.opts;
    if matches!(opts.objective, Objective::Operational | Objective::Mixed) && !(opts.c0 > 0.0) {
        bail!("--c0 must be positive");
    }
    match cli.command {
        Command::Solve => cmd_solve(opts, &out),
        Command::Sweep => cmd_sweep(opts, &out),
        Command::Oracle => cmd_oracle(opts, &out),
        Command::Baseline => cmd_baseline(opts, &out),
        Command::Sca => cmd_sca(opts, &out),
        Command::Validate => cmd_validate(opts, &out),
        Command::Report => cmd_report(opts, &out),
    }
}

fn not_optimal(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        matches!(
            e.downcast_ref::<PipelineError>(),
            Some(PipelineError::Solver(SolverError::NotOptimal(_)))
        ) || matches!(e.downcast_ref::<SolverError>(), Some(SolverError::NotOptimal(_)))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Optimal) => ExitCode::SUCCESS,
        Ok(Outcome::NotOptimal(why)) => {
            eprintln!("gridreconf: solver did not reach optimality: {why}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("gridreconf: {e:#}");
            ExitCode::from(if not_optimal(&e) { 2 } else { 1 })
        }
    }
}
