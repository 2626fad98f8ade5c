//! Load model: exponential voltage dependence, the linear current-injection
//! approximation around nominal voltage, transformer losses and the
//! post-solve load deviation metric.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::EvaluationError;
use crate::network::{
    min_resistance_spanning_tree, unreachable_nodes, Bases, LineMask, NetworkModel, Node,
    PhaseSet, TransformerSpec,
};

/// Affine injection `iota = G sigma_G + h` of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionMap {
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl InjectionMap {
    /// Converts an SI map (amperes per volt-ampere, amperes) to per-unit.
    pub fn to_pu(&self, bases: &Bases) -> InjectionMap {
        InjectionMap {
            g: &self.g * (bases.s_base / bases.i_base()),
            h: &self.h / bases.i_base(),
        }
    }

    pub fn apply(&self, sigma_g: Option<&DVector<f64>>) -> DVector<f64> {
        match sigma_g {
            Some(s) => &self.g * s + &self.h,
            None => self.h.clone(),
        }
    }
}

/// `(sqrt(3)/V_N) [[Re Phi, Im Phi], [Im Phi, -Re Phi]]` over the given phases.
pub fn injection_matrix(phases: PhaseSet, v_nominal: f64) -> DMatrix<f64> {
    let k = phases.len();
    let scale = 3f64.sqrt() / v_nominal;
    let mut g = DMatrix::zeros(2 * k, 2 * k);
    for (i, ph) in phases.iter().enumerate() {
        let r = ph.rotation();
        g[(i, i)] = scale * r.re;
        g[(i, k + i)] = scale * r.im;
        g[(k + i, i)] = scale * r.im;
        g[(k + i, k + i)] = -scale * r.re;
    }
    g
}

/// Stacked SI load power of a node with transformer losses folded in.
pub fn load_power(node: &Node, v_nominal: f64) -> DVector<f64> {
    let k = node.phases.len();
    let mut sigma = DVector::zeros(2 * k);
    if let Some(load) = &node.load {
        for pl in &load.phases {
            let pos = node.phases.position(pl.phase).expect("validated");
            sigma[pos] = match &pl.transformer {
                Some(t) => transformer_adjusted_load(pl.s.re, pl.s.norm(), t, v_nominal),
                None => pl.s.re,
            };
            sigma[k + pos] = pl.s.im;
        }
    }
    sigma
}

/// Linear injection of a node in SI units around nominal voltage `v_nominal`
/// (line-line volts).
pub fn linear_injection(node: &Node, v_nominal: f64) -> InjectionMap {
    let g = injection_matrix(node.phases, v_nominal);
    let h = -(&g * load_power(node, v_nominal));
    InjectionMap { g, h }
}

/// Current drawn by each node phase under the exponential model,
/// `V conj(I) = S |sqrt(3) V / V_N|^kappa`, with SI phasors ordered like the
/// node phases. Returned as injected current (negative of the drawn one).
pub fn exponential_injection(
    node: &Node,
    voltage: &[Complex64],
    v_nominal: f64,
) -> Result<Vec<Complex64>, EvaluationError> {
    let mut out = vec![Complex64::new(0.0, 0.0); node.phases.len()];
    let Some(load) = &node.load else {
        return Ok(out);
    };
    for pl in &load.phases {
        let pos = node.phases.position(pl.phase).expect("validated");
        let v = voltage[pos];
        if pl.s.norm() == 0.0 {
            continue;
        }
        if v.norm() == 0.0 {
            return Err(EvaluationError::ZeroVoltage {
                node: node.id,
                phase: pl.phase,
            });
        }
        let scale = (3f64.sqrt() * v.norm() / v_nominal).powi(pl.kappa as i32);
        out[pos] = -(pl.s * scale / v).conj();
    }
    Ok(out)
}

/// Active power at the transformer primary: secondary demand plus core loss
/// plus copper loss with the current estimated at nominal voltage.
pub fn transformer_adjusted_load(
    p_secondary: f64,
    s_secondary: f64,
    spec: &TransformerSpec,
    v_nominal: f64,
) -> f64 {
    let i = 3f64.sqrt() * s_secondary / v_nominal;
    p_secondary + spec.core_loss_w + i * i * spec.r_ohm
}

/// Mean absolute mismatch between modeled and reconstructed net power over
/// loaded phases, watts and vars.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LoadDeviation {
    pub delta_p_w: f64,
    pub delta_q_var: f64,
}

/// Per-unit phase voltages obtained by propagating the substation nominal
/// voltage along a minimum-resistance spanning tree of the closed lines,
/// `V_n = V_m - Z_mn i_mn`. Phases not fed by their tree line stay nominal.
pub fn reconstruct_voltages(
    model: &NetworkModel,
    closed: &LineMask,
    xi: &[DVector<f64>],
) -> Result<Vec<Vec<Complex64>>, EvaluationError> {
    let stranded = unreachable_nodes(model, closed);
    if !stranded.is_empty() {
        return Err(EvaluationError::Disconnected(stranded));
    }
    let tree = min_resistance_spanning_tree(model, closed);
    let n = model.nodes().len();
    let mut adj = vec![Vec::new(); n];
    for id in tree {
        let (a, b) = model.endpoints(id);
        adj[a].push((b, id));
        adj[b].push((a, id));
    }
    let nominal = |idx: usize| -> Vec<Complex64> {
        model.node(idx).phases.iter().map(|p| p.rotation()).collect()
    };
    let mut volts: Vec<Option<Vec<Complex64>>> = vec![None; n];
    let root = model.substation();
    volts[root] = Some(nominal(root));
    let mut stack = vec![root];
    while let Some(u) = stack.pop() {
        let vu = volts[u].clone().expect("visited");
        for &(v, id) in &adj[u] {
            if volts[v].is_some() {
                continue;
            }
            let line = model.line(id);
            let k = line.phases.len();
            let i: DVector<Complex64> =
                DVector::from_fn(k, |p, _| Complex64::new(xi[id.0][p], xi[id.0][k + p]));
            let drop = &line.impedance * i;
            // Forward traversal subtracts the drop along the line direction.
            let sign = if model.endpoints(id).0 == u { -1.0 } else { 1.0 };
            let mut vv = nominal(v);
            let pu_phases = model.node(u).phases;
            let pv_phases = model.node(v).phases;
            for (p, ph) in line.phases.iter().enumerate() {
                let src = vu[pu_phases.position(ph).expect("validated")];
                vv[pv_phases.position(ph).expect("validated")] = src + drop[p] * sign;
            }
            volts[v] = Some(vv);
            stack.push(v);
        }
    }
    Ok(volts.into_iter().map(|v| v.expect("connected")).collect())
}

/// Compares the modeled net injection `sigma_G - sigma_L` against
/// `V conj(I)` evaluated with reconstructed voltages and the KCL injection of
/// the solved currents. All inputs per-unit; `sigma_g[n]` is absent for
/// nodes without generation.
pub fn load_deviation(
    model: &NetworkModel,
    closed: &LineMask,
    xi: &[DVector<f64>],
    sigma_g: &[Option<DVector<f64>>],
) -> Result<LoadDeviation, EvaluationError> {
    let volts = reconstruct_voltages(model, closed, xi)?;
    let n = model.nodes().len();
    let mut inj: Vec<Vec<Complex64>> = (0..n)
        .map(|i| vec![Complex64::new(0.0, 0.0); model.node(i).phases.len()])
        .collect();
    for id in closed.active() {
        let line = model.line(id);
        let (m, k) = model.endpoints(id);
        let kk = line.phases.len();
        for (p, ph) in line.phases.iter().enumerate() {
            let i = Complex64::new(xi[id.0][p], xi[id.0][kk + p]);
            inj[m][model.node(m).phases.position(ph).expect("validated")] += i;
            inj[k][model.node(k).phases.position(ph).expect("validated")] -= i;
        }
    }
    let s_base = model.bases.s_base;
    let (mut dp, mut dq, mut count) = (0.0, 0.0, 0usize);
    for idx in 0..n {
        let node = model.node(idx);
        let loaded = node.loaded_phases();
        if loaded.is_empty() {
            continue;
        }
        let k = node.phases.len();
        let sl = model.sigma_load(idx);
        for ph in loaded.iter() {
            let pos = node.phases.position(ph).expect("validated");
            let mut p_hat = -sl[pos];
            let mut q_hat = -sl[k + pos];
            if let Some(Some(g)) = sigma_g.get(idx) {
                p_hat += g[pos];
                q_hat += g[k + pos];
            }
            let s = volts[idx][pos] * inj[idx][pos].conj();
            dp += (s.re - p_hat).abs();
            dq += (s.im - q_hat).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Ok(LoadDeviation {
            delta_p_w: 0.0,
            delta_q_var: 0.0,
        });
    }
    Ok(LoadDeviation {
        delta_p_w: dp / count as f64 * s_base,
        delta_q_var: dq / count as f64 * s_base,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{LoadSpec, NodeId, Phase, PhaseLoad};
    use proptest::prelude::*;

    fn node(phases: PhaseSet, loads: Vec<PhaseLoad>) -> Node {
        Node {
            id: NodeId(2),
            phases,
            is_substation: false,
            load: Some(LoadSpec { phases: loads }),
            dg: None,
        }
    }

    fn pq(phase: Phase, p: f64, q: f64, kappa: u8) -> PhaseLoad {
        PhaseLoad {
            phase,
            s: Complex64::new(p, q),
            kappa,
            transformer: None,
        }
    }

    #[test]
    fn single_phase_resistive_load() {
        let n = node(PhaseSet::single(Phase::A), vec![pq(Phase::A, 1e5, 0.0, 0)]);
        let map = linear_injection(&n, 4800.0);
        let expect = -(3f64.sqrt() / 4800.0) * 1e5;
        assert!((map.h[0] - expect).abs() < 1e-12);
        assert!(map.h[1].abs() < 1e-12);
    }

    #[test]
    fn zero_load_injects_nothing() {
        let n = node(PhaseSet::ABC, vec![]);
        assert_eq!(linear_injection(&n, 4800.0).h, DVector::zeros(6));
    }

    #[test]
    fn balanced_load_rotates_with_phase() {
        let loads = Phase::ALL.iter().map(|&p| pq(p, 85e3, 40e3, 0)).collect();
        let n = node(PhaseSet::ABC, loads);
        let h = linear_injection(&n, 4800.0).h;
        let i: Vec<Complex64> = (0..3).map(|p| Complex64::new(h[p], h[3 + p])).collect();
        // same magnitude, 120 degrees apart
        assert!((i[0].norm() - i[1].norm()).abs() < 1e-9);
        let ratio = i[1] / i[0];
        assert!((ratio - Phase::B.rotation()).norm() < 1e-12);
    }

    #[test]
    fn exponential_matches_linear_at_nominal() {
        let n = node(PhaseSet::ABC, Phase::ALL.iter().map(|&p| pq(p, 1e4, 3e3, 0)).collect());
        let vn = 4160.0;
        let v: Vec<Complex64> = Phase::ALL
            .iter()
            .map(|p| p.rotation() * vn / 3f64.sqrt())
            .collect();
        let i = exponential_injection(&n, &v, vn).unwrap();
        let h = linear_injection(&n, vn).h;
        for p in 0..3 {
            assert!((i[p].re - h[p]).abs() < 1e-12);
            assert!((i[p].im - h[3 + p]).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_impedance_current_scales_with_voltage() {
        let n = node(PhaseSet::single(Phase::A), vec![pq(Phase::A, 2e4, 5e3, 2)]);
        let vn = 4160.0;
        let v0 = Complex64::new(vn / 3f64.sqrt(), 0.0);
        let i0 = exponential_injection(&n, &[v0], vn).unwrap()[0];
        let i1 = exponential_injection(&n, &[v0 * 0.95], vn).unwrap()[0];
        assert!((i1 / i0 - 0.95).norm() < 1e-12);
    }

    #[test]
    fn constant_power_recovers_demand() {
        let n = node(PhaseSet::single(Phase::B), vec![pq(Phase::B, 2e4, 5e3, 0)]);
        let vn = 4160.0;
        let v = Complex64::from_polar(0.97 * vn / 3f64.sqrt(), -2.1);
        let i = exponential_injection(&n, &[v], vn).unwrap()[0];
        let s = -(v * i.conj());
        assert!((s - Complex64::new(2e4, 5e3)).norm() < 1e-8);
    }

    #[test]
    fn zero_voltage_is_an_error() {
        let n = node(PhaseSet::single(Phase::A), vec![pq(Phase::A, 1.0, 0.0, 0)]);
        assert!(exponential_injection(&n, &[Complex64::new(0.0, 0.0)], 1.0).is_err());
    }

    #[test]
    fn lossless_transformer_is_transparent() {
        let t = TransformerSpec {
            core_loss_w: 0.0,
            r_ohm: 0.0,
        };
        assert_eq!(transformer_adjusted_load(98e3, 1e5, &t, 4160.0), 98e3);
    }

    #[test]
    fn transformer_at_98_percent_efficiency() {
        // 2 kW total losses split between core and copper
        let vn = 4160.0;
        let s = 98e3;
        let i = 3f64.sqrt() * s / vn;
        let t = TransformerSpec {
            core_loss_w: 1.2e3,
            r_ohm: 0.8e3 / (i * i),
        };
        let p = transformer_adjusted_load(98e3, s, &t, vn);
        assert!((p - 100e3).abs() < 1e-6);
        assert!(p <= 98e3 / 0.98 + 1e-6);
    }

    proptest! {
        #[test]
        fn injection_matrix_is_scaled_orthogonal(
            mask in 1u8..8, vn in 100.0f64..1e5,
        ) {
            let phases = PhaseSet::from_phases(
                Phase::ALL.into_iter().filter(|p| mask & (1 << p.index()) != 0),
            );
            let g = injection_matrix(phases, vn);
            let gtg = g.transpose() * &g;
            let expect = DMatrix::identity(2 * phases.len(), 2 * phases.len()) * (3.0 / (vn * vn));
            prop_assert!((gtg - &expect).norm() <= 1e-12 * expect.norm());
        }

        #[test]
        fn transformer_load_is_monotone(
            p in 0.0f64..1e6, lc in 0.0f64..1e4, r in 0.0f64..10.0,
            dp in 0.0f64..1e5, dl in 0.0f64..1e3, dr in 0.0f64..1.0,
        ) {
            let s = p * 1.1;
            let f = |p: f64, lc: f64, r: f64| transformer_adjusted_load(
                p, s, &TransformerSpec { core_loss_w: lc, r_ohm: r }, 12.47e3);
            let base = f(p, lc, r);
            prop_assert!(f(p + dp, lc, r) >= base);
            prop_assert!(f(p, lc + dl, r) >= base);
            prop_assert!(f(p, lc, r + dr) >= base);
        }
    }
}
