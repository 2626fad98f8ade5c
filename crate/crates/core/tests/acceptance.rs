//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria that fail for documented reasons are listed in `EXPECTED_FAIL`;
//! the run fails when any other criterion fails.

use std::collections::BTreeSet;
use std::time::Instant;

use gridreconf_core::feeders;
use gridreconf_core::load::load_deviation;
use gridreconf_core::pipeline::{
    exhaustive_oracle, heuristic_baseline, lambda_sweep, refit, solve_dsr, Topology,
};
use gridreconf_core::validation::{
    dominance_suite, five_node_example, injection_suite, prop_suite, sca_suite, suite_config,
    threshold_suite,
};
use gridreconf_core::{build_p2, LambdaSpec, LineId, LineMask, NetworkModel, ObjectiveSpec, SolverConfig};

const SEED: u64 = 1;

/// Criteria known not to hold with the bundled data, with the reason.
const EXPECTED_FAIL: [(u32, &str); 3] = [
    (4, "group-lasso support on the 33-node feeder is not monotone in lambda"),
    (5, "33-node open sets and losses differ from the published ones"),
    (6, "no 70-node feeder data is bundled"),
];

struct Outcome {
    id: u32,
    pass: bool,
    detail: String,
}

fn report(id: u32, pass: bool, detail: String) -> Outcome {
    println!("C{id} {} {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { id, pass, detail }
}

fn log_grid() -> Vec<f64> {
    std::iter::once(0.0)
        .chain((0..19).map(|k| 10f64.powf(4.0 * k as f64 / 18.0)))
        .collect()
}

/// Open switches as literature labels; the 33-node file numbers nodes from 1.
fn open_set(model: &NetworkModel, topo: &Topology, offset: u32) -> BTreeSet<(u32, u32)> {
    topo.open_pairs(model)
        .into_iter()
        .map(|(a, b)| (a - offset, b - offset))
        .collect()
}

fn pairs(list: &[(u32, u32)]) -> BTreeSet<(u32, u32)> {
    list.iter().copied().collect()
}

fn c1() -> Outcome {
    let rep = prop_suite(SEED, 100, &suite_config()).expect("suite runs");
    let pass = rep.instances == 100
        && rep.worst_prop1 <= 1e-4
        && rep.worst_prop2 <= 1e-4
        && rep.worst_eta_value_gap <= 1e-8
        && rep.elapsed_s <= 120.0;
    report(
        1,
        pass,
        format!(
            "instances={} unsolved={} prop1={:.2e} prop2={:.2e} eta_gap={:.2e} thresholded={} time={:.1}s",
            rep.instances,
            rep.unsolved,
            rep.worst_prop1,
            rep.worst_prop2,
            rep.worst_eta_value_gap,
            rep.thresholded,
            rep.elapsed_s
        ),
    )
}

fn c2() -> Outcome {
    let config = suite_config();
    let rep = threshold_suite(SEED, 50, &config).expect("suite runs");
    let pass = rep.instances == 50
        && rep.worst_open_norm <= config.group_eps
        && rep.worst_shrink_residual <= 1e-5;
    report(
        2,
        pass,
        format!(
            "instances={} unsolved={} open_norm={:.2e} shrink_residual={:.2e}",
            rep.instances, rep.unsolved, rep.worst_open_norm, rep.worst_shrink_residual
        ),
    )
}

fn c3() -> Outcome {
    let config = suite_config();
    let objective = ObjectiveSpec::loss();
    let mut ok = true;
    let mut notes = Vec::new();

    let five = five_node_example();
    let baseline = heuristic_baseline(&five, &objective, &config).expect("baseline");
    for lambda in [0.0, 0.05, 0.2, 1.0, 5.0] {
        let problem = build_p2(&five, &objective, &LambdaSpec::uniform(lambda)).expect("builds");
        let dsr = solve_dsr(&problem, &config).expect("solves");
        let Some(proposed) = dsr.refit_loss_w else {
            ok = false;
            notes.push(format!("five-node lambda={lambda}: no refit"));
            continue;
        };
        let oracle = exhaustive_oracle(&five, &objective, dsr.topology.radial, &config).expect("oracle");
        ok &= oracle.best.connected && oracle.best_loss_w <= proposed * (1.0 + 1e-9);
        if proposed > baseline.loss_w * (1.0 + 1e-9) {
            notes.push(format!(
                "five-node lambda={lambda}: baseline gap {:.2}%",
                100.0 * (proposed / baseline.loss_w - 1.0)
            ));
        }
    }

    let rep = dominance_suite(SEED, 100, 10, &config).expect("suite runs");
    ok &= rep.unsolved == 0 && rep.oracle_violations == 0;
    notes.push(format!(
        "random: instances={} oracle_violations={} baseline_gaps={} worst_gap={:.2}%",
        rep.instances,
        rep.oracle_violations,
        rep.baseline_gaps,
        100.0 * rep.worst_baseline_gap
    ));

    let feeder_config = SolverConfig::default();
    for name in ["ieee37_test1", "ieee37_test2"] {
        let model = feeders::by_name(name).expect("bundled");
        let problem = build_p2(&model, &objective, &LambdaSpec::uniform(1e4)).expect("builds");
        let dsr = solve_dsr(&problem, &feeder_config).expect("solves");
        let proposed = dsr.refit_loss_w.expect("connected");
        let oracle = exhaustive_oracle(&model, &objective, true, &feeder_config).expect("oracle");
        let ratio = proposed / oracle.best_loss_w;
        ok &= oracle.best_loss_w <= proposed * (1.0 + 1e-9) && ratio <= 1.05;
        notes.push(format!(
            "{name}: proposed={:.3}kW oracle={:.3}kW (+{:.2}%)",
            proposed / 1e3,
            oracle.best_loss_w / 1e3,
            100.0 * (ratio - 1.0)
        ));
    }
    report(3, ok, notes.join("; "))
}

fn c4() -> Outcome {
    let config = SolverConfig::default();
    let mut ok = true;
    let mut notes = Vec::new();
    for name in feeders::NAMES {
        let model = feeders::by_name(name).expect("bundled");
        let started = Instant::now();
        let sweep = lambda_sweep(&model, &ObjectiveSpec::loss(), &LambdaSpec::uniform(0.0), &log_grid(), &config)
            .expect("sweep runs");
        let elapsed = started.elapsed().as_secs_f64();
        let complete = sweep.points.iter().all(|p| p.refit_loss_w.is_some());
        let all_closed = sweep.points[0]
            .topology
            .as_ref()
            .is_some_and(|t| t.open_switches.is_empty());
        let curve = sweep.loss_curve();
        let worst_drop = curve
            .windows(2)
            .map(|w| (w[0].1 - w[1].1) / w[0].1)
            .fold(0.0f64, f64::max);
        let monotone = worst_drop <= 1e-8;
        ok &= complete && all_closed && monotone && elapsed <= 300.0;
        notes.push(format!(
            "{name}: monotone={monotone} worst_drop={:.2e} all_closed_at_0={all_closed} time={elapsed:.1}s",
            worst_drop
        ));
    }
    report(4, ok, notes.join("; "))
}

fn c5() -> Outcome {
    let config = SolverConfig::default();
    let objective = ObjectiveSpec::loss();
    let model = feeders::baran33();
    let line = |a: u32, b: u32| -> LineId { model.find_line(a + 1, b + 1).expect("listed line") };

    let started = Instant::now();
    let problem = build_p2(&model, &objective, &LambdaSpec::uniform(200.0)).expect("builds");
    let uniform = solve_dsr(&problem, &config).expect("solves");
    let time = started.elapsed().as_secs_f64();

    let mut weighted = LambdaSpec::uniform(200.0);
    for (a, b) in [(6, 7), (8, 9), (9, 10), (13, 14), (31, 32), (7, 20), (8, 14), (11, 21), (17, 32), (24, 28)] {
        weighted.per_line.insert(line(a, b), 2000.0);
    }
    let problem = build_p2(&model, &objective, &weighted).expect("builds");
    let weighted = solve_dsr(&problem, &config).expect("solves");

    let mut ok = time <= 5.0;
    let mut notes = vec![format!("solve_time={time:.3}s")];
    for (label, dsr, expect, loss_kw) in [
        ("uniform", &uniform, pairs(&[(6, 7), (9, 10), (13, 14), (31, 32), (24, 28)]), 140.28),
        ("weighted", &weighted, pairs(&[(6, 7), (8, 9), (13, 14), (31, 32), (24, 28)]), 139.56),
    ] {
        let got = open_set(&model, &dsr.topology, 1);
        let loss = dsr.refit_loss_w.unwrap_or(f64::NAN) / 1e3;
        let set_ok = got == expect;
        let loss_ok = (loss / loss_kw - 1.0).abs() <= 0.05;
        ok &= set_ok && loss_ok;
        notes.push(format!("{label}: open={got:?} match={set_ok} refit={loss:.2}kW target={loss_kw}kW"));
    }
    for (label, open, loss_kw) in [
        ("published uniform set", [(6, 7), (9, 10), (13, 14), (31, 32), (24, 28)], 140.28),
        ("published weighted set", [(6, 7), (8, 9), (13, 14), (31, 32), (24, 28)], 139.56),
    ] {
        let ids: Vec<LineId> = open.iter().map(|&(a, b)| line(a, b)).collect();
        let topo = Topology::from_mask(&model, &LineMask::with_open(&model, &ids));
        let loss = refit(&model, &topo, &objective, &config).expect("refit").loss_w / 1e3;
        notes.push(format!("{label} refits to {loss:.2}kW vs {loss_kw}kW"));
    }
    report(5, ok, notes.join("; "))
}

fn c6() -> Outcome {
    let pass = feeders::by_name("das70").is_ok();
    report(6, pass, "70-node feeder data is not bundled; nothing to reproduce".into())
}

fn c7() -> Outcome {
    let config = SolverConfig::default();
    let objective = ObjectiveSpec::loss();
    let model = feeders::ieee37_test2();
    let problem = build_p2(&model, &objective, &LambdaSpec::uniform(1e4)).expect("builds");
    let dsr = solve_dsr(&problem, &config).expect("solves");
    let proposed = dsr.refit_loss_w.expect("connected");
    let got = open_set(&model, &dsr.topology, 0);
    let expect = pairs(&[(6, 20), (8, 14), (10, 16), (10, 17), (26, 35), (23, 24), (23, 25), (29, 30)]);
    let exact = got == expect && (proposed / 41.45e3 - 1.0).abs() <= 0.05;

    let oracle = exhaustive_oracle(&model, &objective, true, &config).expect("oracle");
    let original = refit(
        &model,
        &Topology::from_mask(&model, &LineMask::base_configuration(&model)),
        &objective,
        &config,
    )
    .expect("refit")
    .loss_w;
    let ordering = proposed >= oracle.best_loss_w * (1.0 - 1e-9)
        && proposed < original
        && oracle.best_loss_w < original;

    let fit = refit(&model, &dsr.topology, &objective, &config).expect("refit");
    let dev = load_deviation(&model, &dsr.topology.mask(&model), &fit.solution.xi, &fit.solution.sigma_g)
        .expect("deviation");
    let dev_ok = dev.delta_p_w <= 2e3 && dev.delta_q_var <= 1.5e3;
    report(
        7,
        (exact || ordering) && dev_ok,
        format!(
            "exact_match={exact} matched={}/{} proposed={:.3}kW oracle={:.3}kW original={:.3}kW ordering={ordering} dP={:.3}kW dQ={:.3}kVAr",
            got.intersection(&expect).count(),
            expect.len(),
            proposed / 1e3,
            oracle.best_loss_w / 1e3,
            original / 1e3,
            dev.delta_p_w / 1e3,
            dev.delta_q_var / 1e3
        ),
    )
}

fn c8() -> Outcome {
    let rep = sca_suite(SEED, 25, &suite_config()).expect("suite runs");
    let pass = rep.instances == 25
        && rep.all_converged
        && rep.max_iterations <= 50
        && rep.worst_increase <= 1e-9
        && rep.worst_final_margin >= -1e-6
        && rep.worst_tightness <= 1e-9
        && rep.worst_dominance <= 1e-9
        && rep.worst_gradient <= 1e-6;
    report(
        8,
        pass,
        format!(
            "instances={} unsolved={} max_iter={} converged={} increase={:.2e} margin={:.2e} c1={:.2e} c2={:.2e} c3={:.2e}",
            rep.instances,
            rep.unsolved,
            rep.max_iterations,
            rep.all_converged,
            rep.worst_increase,
            rep.worst_final_margin,
            rep.worst_tightness,
            rep.worst_dominance,
            rep.worst_gradient
        ),
    )
}

fn c9() -> Outcome {
    let rep = injection_suite(SEED, 30, &suite_config()).expect("suite runs");
    let pass = rep.instances == 30 && rep.worst_ratio >= 2.0;
    report(
        9,
        pass,
        format!(
            "instances={} unsolved={} worst_ratio={:.2} mean_ratio={:.2}",
            rep.instances, rep.unsolved, rep.worst_ratio, rep.mean_ratio
        ),
    )
}

fn main() {
    let outcomes = [c1(), c2(), c3(), c4(), c5(), c6(), c7(), c8(), c9()];
    let mut regressions = Vec::new();
    for o in &outcomes {
        let expected = EXPECTED_FAIL.iter().find(|(id, _)| *id == o.id);
        match (o.pass, expected) {
            (false, Some((_, why))) => println!("C{} expected failure: {why}", o.id),
            (false, None) => regressions.push(format!("C{}: {}", o.id, o.detail)),
            (true, Some(_)) => println!("C{} now passes; remove it from the expected failures", o.id),
            (true, None) => {}
        }
    }
    let passed = outcomes.iter().filter(|o| o.pass).count();
    println!("{passed}/{} criteria pass", outcomes.len());
    if !regressions.is_empty() {
        eprintln!("unexpected failures:\n{}", regressions.join("\n"));
        std::process::exit(1);
    }
}
