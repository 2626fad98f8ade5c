//! Bundled test feeders.

use crate::error::ModelError;
use crate::network::{parse_network_str, NetworkModel};

const BARAN33: &str = include_str!("../data/baran33.json");
const IEEE37_TEST1: &str = include_str!("../data/ieee37_test1.json");
const IEEE37_TEST2: &str = include_str!("../data/ieee37_test2.json");

pub const NAMES: [&str; 3] = ["baran33", "ieee37_test1", "ieee37_test2"];

/// 33-node radial feeder with five normally-open ties, every branch switchable.
pub fn baran33() -> NetworkModel {
    parse_network_str(BARAN33).expect("bundled feeder is valid")
}

/// Modified IEEE 37-node feeder with eight added tie lines.
pub fn ieee37_test1() -> NetworkModel {
    parse_network_str(IEEE37_TEST1).expect("bundled feeder is valid")
}

/// As [`ieee37_test1`] with four additional sectionalizing switches.
pub fn ieee37_test2() -> NetworkModel {
    parse_network_str(IEEE37_TEST2).expect("bundled feeder is valid")
}

pub fn source(name: &str) -> Option<&'static str> {
    match name {
        "baran33" => Some(BARAN33),
        "ieee37_test1" => Some(IEEE37_TEST1),
        "ieee37_test2" => Some(IEEE37_TEST2),
        _ => None,
    }
}

pub fn by_name(name: &str) -> Result<NetworkModel, ModelError> {
    let text = source(name).ok_or_else(|| {
        ModelError::Invalid(format!(
            "unknown bundled feeder `{name}` (available: {})",
            NAMES.join(", ")
        ))
    })?;
    parse_network_str(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{enumerate_cycles, LineMask, is_radial};

    #[test]
    fn baran_base_configuration_is_radial() {
        let m = baran33();
        assert_eq!(m.nodes().len(), 33);
        assert_eq!(m.lines().len(), 37);
        assert_eq!(m.switch_lines().len(), 37);
        let base = LineMask::base_configuration(&m);
        assert_eq!(base.len() - base.active_count(), 5);
        assert!(is_radial(&m, &base));
        let load: f64 = m
            .nodes()
            .iter()
            .filter_map(|n| n.load.as_ref())
            .flat_map(|l| l.phases.iter())
            .map(|p| p.s.re)
            .sum();
        assert!((load - 3.715e6).abs() < 1e-6);
    }

    #[test]
    fn ieee37_switch_sets() {
        let t1 = ieee37_test1();
        let t2 = ieee37_test2();
        assert_eq!(t1.switch_lines().len(), 8);
        assert_eq!(t2.switch_lines().len(), 12);
        assert_eq!(enumerate_cycles(&t1).len(), 8);
        assert!(is_radial(&t1, &LineMask::base_configuration(&t1)));
        assert!(t1.find_line(8, 14).is_some_and(|id| t1.line(id).switchable));
    }
}
