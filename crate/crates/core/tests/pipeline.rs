use gridreconf_core::feeders;
use gridreconf_core::network::{connected_from_substation, unreachable_nodes};
use gridreconf_core::pipeline::{
    auto_lambda, exhaustive_oracle, extract_topology, lambda_sweep, refit, solve_dsr, AutoLambda, Topology,
    ORACLE_GUARD,
};
use gridreconf_core::validation::{five_node_example, random_network, suite_config, InstanceSpec};
use gridreconf_core::{
    build_p2, solve, LambdaSpec, LineMask, NetworkModel, NodeId, ObjectiveSpec, PipelineError, SolverConfig,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn network(seed: u64) -> NetworkModel {
    random_network(&mut ChaCha8Rng::seed_from_u64(seed), &InstanceSpec::default())
}

fn unloaded(model: &NetworkModel) -> NetworkModel {
    let mut nodes = model.nodes().to_vec();
    for n in &mut nodes {
        n.load = None;
    }
    NetworkModel::new(model.name.clone(), model.bases, nodes, model.lines().to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn radial_topologies_are_spanning_trees(seed in 0u64..10_000, lambda in 0.0f64..2.0) {
        let model = network(seed);
        let config = suite_config();
        let problem = build_p2(&model, &ObjectiveSpec::loss(), &LambdaSpec::uniform(lambda)).unwrap();
        let dsr = solve_dsr(&problem, &config).unwrap();
        prop_assume!(dsr.solution.is_optimal());
        let t = &dsr.topology;
        if t.radial {
            prop_assert_eq!(t.closed.len() + 1, model.nodes().len());
            prop_assert!(t.connected);
        }
        prop_assert_eq!(t.connected, unreachable_nodes(&model, &t.mask(&model)).is_empty());
        prop_assert_eq!(t.connected, dsr.refit_loss_w.is_some());
    }

    #[test]
    fn zero_weight_keeps_every_line(seed in 0u64..10_000) {
        let model = network(seed);
        let problem = build_p2(&model, &ObjectiveSpec::loss(), &LambdaSpec::uniform(0.0)).unwrap();
        let sol = solve(&problem, &suite_config()).unwrap();
        prop_assume!(sol.is_optimal());
        let t = extract_topology(&model, &sol, suite_config().group_eps);
        // only lines that carry nothing at the unregularized optimum may drop
        for id in &t.open_switches {
            prop_assert!(sol.current_norm(*id) <= 1e-6);
        }
    }

    #[test]
    fn smooth_part_grows_along_the_sweep(seed in 0u64..10_000) {
        let model = network(seed);
        let grid = [0.0, 0.01, 0.03, 0.1, 0.3, 1.0];
        let sweep = lambda_sweep(&model, &ObjectiveSpec::loss(), &LambdaSpec::default(), &grid, &suite_config()).unwrap();
        let q: Vec<f64> = sweep.points.iter().filter_map(|p| p.quadratic_part).collect();
        prop_assume!(q.len() == grid.len());
        for w in q.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-8 * w[0].abs().max(1e-12), "{:?}", q);
        }
    }

    #[test]
    fn refit_is_stable_under_repeated_extraction(seed in 0u64..10_000, lambda in 0.05f64..1.0) {
        let model = network(seed);
        let config = suite_config();
        let problem = build_p2(&model, &ObjectiveSpec::loss(), &LambdaSpec::uniform(lambda)).unwrap();
        let dsr = solve_dsr(&problem, &config).unwrap();
        prop_assume!(dsr.solution.is_optimal() && dsr.topology.connected);
        let a = refit(&model, &dsr.topology, &ObjectiveSpec::loss(), &config).unwrap();
        let again = Topology::from_mask(&model, &dsr.topology.mask(&model));
        prop_assert_eq!(&again, &dsr.topology);
        let b = refit(&model, &again, &ObjectiveSpec::loss(), &config).unwrap();
        prop_assert_eq!(a.loss_w, b.loss_w);
    }

    #[test]
    fn unloaded_networks_open_every_switch(seed in 0u64..10_000, lambda in 0.01f64..1.0) {
        let model = unloaded(&network(seed));
        let problem = build_p2(&model, &ObjectiveSpec::loss(), &LambdaSpec::uniform(lambda)).unwrap();
        let dsr = solve_dsr(&problem, &suite_config()).unwrap();
        prop_assert!(dsr.solution.is_optimal());
        prop_assert_eq!(dsr.topology.open_switches.len(), model.switch_lines().len());
        prop_assert!(dsr.loss_w.abs() <= 1e-12);
    }

    #[test]
    fn oracle_never_loses_to_the_proposed_topology(seed in 0u64..10_000, lambda in 0.0f64..1.0) {
        let model = network(seed);
        let config = suite_config();
        let problem = build_p2(&model, &ObjectiveSpec::loss(), &LambdaSpec::uniform(lambda)).unwrap();
        let dsr = solve_dsr(&problem, &config).unwrap();
        prop_assume!(dsr.solution.is_optimal());
        let Some(proposed) = dsr.refit_loss_w else { return Ok(()) };
        let oracle = exhaustive_oracle(&model, &ObjectiveSpec::loss(), dsr.topology.radial, &config).unwrap();
        prop_assert!(oracle.best_loss_w <= proposed * (1.0 + 1e-9));
    }
}

#[test]
fn sweep_rejects_bad_grids() {
    let model = five_node_example();
    let config = SolverConfig::default();
    for grid in [vec![1.0], vec![1.0, 1.0], vec![2.0, 1.0], vec![-1.0, 1.0], vec![0.0, f64::NAN]] {
        let r = lambda_sweep(&model, &ObjectiveSpec::loss(), &LambdaSpec::default(), &grid, &config);
        assert!(matches!(r, Err(PipelineError::BadLambdaGrid)), "{grid:?}");
    }
}

#[test]
fn auto_lambda_rejects_unreachable_target() {
    let model = five_node_example();
    let r = auto_lambda(
        &model,
        &ObjectiveSpec::loss(),
        &LambdaSpec::default(),
        4,
        (0.0, 10.0),
        &SolverConfig::default(),
    );
    assert!(matches!(r, Err(PipelineError::BadTarget { target: 4, available: 3 })));
}

#[test]
fn auto_lambda_brackets_the_target() {
    let model = feeders::ieee37_test1();
    let config = SolverConfig::default();
    let target = 4;
    match auto_lambda(&model, &ObjectiveSpec::loss(), &LambdaSpec::default(), target, (0.0, 1e3), &config).unwrap() {
        AutoLambda::Found { lambda, topology } => {
            assert!((0.0..=1e3).contains(&lambda));
            assert_eq!(topology.closed_switches(&model), target);
        }
        AutoLambda::Bracket { low, high, nearest, .. } => {
            assert!(low.0 < high.0);
            assert!(low.1 > target && target > high.1, "{low:?} {high:?}");
            assert!(high.0 - low.0 <= 1e3 * 1e-9, "{low:?} {high:?}");
            assert!(nearest.connected);
        }
    }
}

#[test]
fn oracle_guard_refuses_large_switch_sets() {
    let model = feeders::baran33();
    let r = exhaustive_oracle(&model, &ObjectiveSpec::loss(), true, &SolverConfig::default());
    match r {
        Err(PipelineError::TooManySwitches { switches, guard, .. }) => {
            assert_eq!(switches, 37);
            assert_eq!(guard, ORACLE_GUARD);
        }
        other => panic!("expected guard error, got {:?}", other.map(|o| o.best_loss_w)),
    }
}

#[test]
fn refit_of_disconnected_topology_lists_stranded_nodes() {
    let model = five_node_example();
    let open = [model.find_line(2, 3).unwrap(), model.find_line(2, 4).unwrap(), model.find_line(2, 5).unwrap()];
    let topo = Topology::from_mask(&model, &LineMask::with_open(&model, &open));
    assert!(!topo.connected);
    match refit(&model, &topo, &ObjectiveSpec::loss(), &SolverConfig::default()) {
        Err(PipelineError::Disconnected(nodes)) => assert_eq!(nodes, vec![NodeId(3), NodeId(4), NodeId(5)]),
        other => panic!("expected disconnection, got {:?}", other.map(|r| r.loss_w)),
    }
}

#[test]
fn five_node_example_keeps_far_nodes_fed() {
    let model = five_node_example();
    let config = suite_config();
    for lambda in [0.05, 0.2, 1.0, 5.0] {
        let problem = build_p2(&model, &ObjectiveSpec::loss(), &LambdaSpec::uniform(lambda)).unwrap();
        let dsr = solve_dsr(&problem, &config).unwrap();
        let oracle = exhaustive_oracle(&model, &ObjectiveSpec::loss(), dsr.topology.radial, &config).unwrap();
        assert!(oracle.best.connected);
        if let Some(proposed) = dsr.refit_loss_w {
            assert!(oracle.best_loss_w <= proposed * (1.0 + 1e-9), "lambda {lambda}");
        }
    }
}

#[test]
fn feeders_keep_every_line_without_regularization() {
    for name in feeders::NAMES {
        let model = feeders::by_name(name).unwrap();
        let sweep = lambda_sweep(
            &model,
            &ObjectiveSpec::loss(),
            &LambdaSpec::default(),
            &[0.0, 1e4],
            &SolverConfig::default(),
        )
        .unwrap();
        let first = sweep.points[0].topology.as_ref().unwrap();
        assert!(first.open_switches.is_empty(), "{name}");
        let last = sweep.points[1].topology.as_ref().unwrap();
        assert!(last.connected, "{name}");
        assert!(connected_from_substation(&model, &last.mask(&model)));
    }
}
