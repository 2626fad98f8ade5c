use gridreconf_core::network::{connected_from_substation, is_radial, unreachable_nodes};
use gridreconf_core::{parse_network_str, LineMask, ModelError, NodeId};

const TWO_PHASE: &str = r#"{
  "v_nominal_kv": 4.16,
  "s_base_kva": 1000,
  "nodes": [
    {"id": 1, "phases": ["a", "b", "c"], "substation": true},
    {"id": 2, "phases": ["a", "b", "c"]},
    {"id": 3, "phases": ["a", "b"], "load": {"a": {"p_kw": 10, "q_kvar": 5}, "b": {"p_kw": 10, "q_kvar": 5}}}
  ],
  "lines": [
    {"from": 1, "to": 2, "phases": ["a", "b", "c"],
     "z_real": [[0.3, 0.1, 0.1], [0.1, 0.3, 0.1], [0.1, 0.1, 0.3]],
     "z_imag": [[0.6, 0.2, 0.2], [0.2, 0.6, 0.2], [0.2, 0.2, 0.6]]},
    {"from": 2, "to": 3, "phases": ["a", "b"], "z_real": [[0.3, 0.1], [0.1, 0.3]], "z_imag": [[0.6, 0.2], [0.2, 0.6]], "switchable": true},
    {"from": 1, "to": 3, "phases": ["a"], "z_real": [[0.5]], "z_imag": [[0.9]], "switchable": true, "normally_open": true}
  ]
}"#;

#[test]
fn a_node_needs_a_path_for_every_phase() {
    let model = parse_network_str(TWO_PHASE).unwrap();
    let main = model.find_line(2, 3).unwrap();
    let tie = model.find_line(1, 3).unwrap();
    // the single-phase tie reaches node 3 but leaves its phase b stranded
    let mask = LineMask::with_open(&model, &[main]);
    assert!(!connected_from_substation(&model, &mask));
    assert_eq!(unreachable_nodes(&model, &mask), vec![NodeId(3)]);

    let mask = LineMask::with_open(&model, &[tie]);
    assert!(connected_from_substation(&model, &mask));
    assert!(is_radial(&model, &mask));
    assert!(is_radial(&model, &LineMask::base_configuration(&model)));
    assert!(!is_radial(&model, &LineMask::all(&model)));
}

#[test]
fn malformed_inputs_are_rejected() {
    for text in [
        "not json",
        r#"{"v_nominal_kv": 4.16, "s_base_kva": 1000, "nodes": [], "lines": []}"#,
        &TWO_PHASE.replace(r#""id": 1, "phases": ["a", "b", "c"], "substation": true"#, r#""id": 1, "phases": ["a", "b", "c"]"#),
        &TWO_PHASE.replace(r#""from": 1, "to": 3"#, r#""from": 1, "to": 9"#),
    ] {
        let r = parse_network_str(text);
        assert!(matches!(r, Err(ModelError::Parse { .. } | ModelError::Invalid(_))), "{text}: {r:?}", r = r.map(|_| ()));
    }
}
