use gridreconf_core::pipeline::{sca_solve, ScaOptions};
use gridreconf_core::validation::{random_network, suite_config, InstanceSpec};
use gridreconf_core::{
    solve, DsrProblem, LambdaSpec, LineMask, MagnitudeBounds, NetworkModel, ObjectiveSpec, PipelineError, VoltageSpec,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SPEC: InstanceSpec = InstanceSpec {
    min_nodes: 4,
    max_nodes: 8,
    max_chords: 2,
    tree_switch_prob: 0.0,
};

fn problem(model: &NetworkModel, vmin: f64) -> DsrProblem<'_> {
    DsrProblem::build(
        model,
        &ObjectiveSpec::loss(),
        &LambdaSpec::uniform(0.01),
        &VoltageSpec::Magnitude(MagnitudeBounds::uniform(model, vmin, 2.0)),
        &LineMask::all(model),
    )
    .unwrap()
}

/// Smallest phase magnitude when the lower bound is inactive.
fn lowest_magnitude(model: &NetworkModel) -> f64 {
    let loose = problem(model, 1e-3);
    let sol = solve(&loose, &suite_config()).unwrap();
    assert!(sol.is_optimal());
    (0..model.nodes().len())
        .filter_map(|i| {
            let map = loose.voltage_map(i)?;
            Some((0..model.node(i).phases.len()).map(|p| map.magnitude(&sol.xi, p)).fold(f64::INFINITY, f64::min))
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn binding_lower_bound_converges_to_a_stationary_point() {
    for seed in [4u64, 6, 7, 9] {
        let model = random_network(&mut ChaCha8Rng::seed_from_u64(seed), &SPEC);
        let lowest = lowest_magnitude(&model);
        let vmin = lowest + 0.25 * (1.0 - lowest);
        let options = ScaOptions {
            check_surrogate: true,
            surrogate_samples: 200,
            seed,
            ..Default::default()
        };
        let out = sca_solve(&problem(&model, vmin), &suite_config(), &options).unwrap();
        assert!(out.converged, "seed {seed}");
        for w in out.history.windows(2) {
            assert!(w[1].objective <= w[0].objective + 1e-9, "seed {seed}");
        }
        let last = out.history.last().unwrap();
        assert!(last.lower_margin >= -1e-9, "seed {seed}: {}", last.lower_margin);
        assert!(last.lower_margin <= 1e-6, "seed {seed}: bound should bind");
        assert!(out.final_kkt.max() <= 1e-5, "seed {seed}: {:?}", out.final_kkt);
        for it in &out.history {
            let c = it.surrogate.unwrap();
            assert!(c.tightness <= 1e-9 && c.dominance <= 1e-9 && c.gradient <= 1e-6, "seed {seed}: {c:?}");
        }
    }
}

#[test]
fn unreachable_lower_bound_has_no_initial_point() {
    let model = random_network(&mut ChaCha8Rng::seed_from_u64(0), &SPEC);
    let r = sca_solve(&problem(&model, 0.999999), &suite_config(), &ScaOptions::default());
    assert!(matches!(r, Err(PipelineError::NoInitialPoint(s)) if s > 0.0));
}
