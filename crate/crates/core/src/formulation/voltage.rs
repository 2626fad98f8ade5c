use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::FormulationError;
use crate::network::{switch_free_path, IncidenceMap, LineId, LineMask, NetworkModel};

/// Two-sided bounds on the stacked `[Re; Im]` voltage of each node, per-unit.
/// `None` leaves a node unconstrained; infinite entries are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageBox {
    pub bounds: Vec<Option<(DVector<f64>, DVector<f64>)>>,
}

impl VoltageBox {
    /// `nominal -/+ delta` on every component of every non-substation node.
    pub fn around_nominal(model: &NetworkModel, delta: f64) -> Self {
        let bounds = (0..model.nodes().len())
            .map(|i| {
                if i == model.substation() {
                    return None;
                }
                let nu = model.nominal_voltage(i);
                Some((nu.add_scalar(-delta), nu.add_scalar(delta)))
            })
            .collect();
        VoltageBox { bounds }
    }
}

/// Per-phase voltage magnitude bounds `(V_min, V_max)` per node, per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeBounds {
    pub bounds: Vec<Option<(f64, f64)>>,
}

impl MagnitudeBounds {
    pub fn uniform(model: &NetworkModel, v_min: f64, v_max: f64) -> Self {
        let bounds = (0..model.nodes().len())
            .map(|i| (i != model.substation()).then_some((v_min, v_max)))
            .collect();
        MagnitudeBounds { bounds }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum VoltageSpec {
    #[default]
    None,
    Box(VoltageBox),
    Magnitude(MagnitudeBounds),
}

/// Node voltage as an affine function of the line currents along a
/// switch-free path: `nu_n = nu_ref + sum_l L_l xi_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineVoltage {
    pub reference: usize,
    pub constant: DVector<f64>,
    /// `L_l` maps the stacked current of line `l` to the node's stacked voltage.
    pub terms: Vec<(LineId, DMatrix<f64>)>,
}

impl AffineVoltage {
    pub fn eval(&self, xi: &[DVector<f64>]) -> DVector<f64> {
        let mut v = self.constant.clone();
        for (id, l) in &self.terms {
            v += l * &xi[id.0];
        }
        v
    }

    /// Magnitude of phase `pos` (index within the node's phase set).
    pub fn magnitude(&self, xi: &[DVector<f64>], pos: usize) -> f64 {
        let v = self.eval(xi);
        let k = v.len() / 2;
        v[pos].hypot(v[k + pos])
    }
}

/// Builds the affine voltage map of `target` along a switch-free path. The
/// reference voltage is the nominal phasor, which is exact for the
/// substation and the stated approximation for a loaded fallback node.
pub fn voltage_map(
    model: &NetworkModel,
    incidence: &IncidenceMap,
    mask: &LineMask,
    target: usize,
) -> Result<AffineVoltage, FormulationError> {
    let no_ref = || FormulationError::NoVoltageReference(model.node(target).id);
    let path = switch_free_path(model, incidence, target).ok_or_else(no_ref)?;
    let phases = model.node(target).phases;
    let k = phases.len();
    let reference_nominal = model.nominal_voltage(path.reference);
    let ref_phases = model.node(path.reference).phases;
    let mut constant = DVector::zeros(2 * k);
    for (pos, ph) in phases.iter().enumerate() {
        let r = ref_phases.position(ph).ok_or_else(no_ref)?;
        let kr = ref_phases.len();
        constant[pos] = reference_nominal[r];
        constant[k + pos] = reference_nominal[kr + r];
    }
    let mut terms = Vec::with_capacity(path.steps.len());
    for (id, alpha) in path.steps {
        if !mask.is_active(id) {
            return Err(no_ref());
        }
        let line = model.line(id);
        let kl = line.phases.len();
        let psi = line.psi();
        let mut l = DMatrix::zeros(2 * k, 2 * kl);
        for (pos, ph) in phases.iter().enumerate() {
            let lp = line.phases.position(ph).expect("path lines carry target phases");
            l.row_mut(pos).copy_from(&(psi.row(lp) * alpha));
            l.row_mut(k + pos).copy_from(&(psi.row(kl + lp) * alpha));
        }
        terms.push((id, l));
    }
    Ok(AffineVoltage {
        reference: path.reference,
        constant,
        terms,
    })
}

/// Original lower-bound constraint `f(xi) = V_min^2 - |V_n^phi(xi)|^2 <= 0`.
pub fn lower_bound_value(map: &AffineVoltage, pos: usize, v_min: f64, xi: &[DVector<f64>]) -> f64 {
    let m = map.magnitude(xi, pos);
    v_min * v_min - m * m
}

/// Linear surrogate of the lower bound around `xi_j`:
/// `a' (xi_j - xi) - b + V_min^2` with `a = 2 L' Q v(xi_j)`, `b = |v(xi_j)|^2`.
pub fn lower_bound_surrogate(
    map: &AffineVoltage,
    pos: usize,
    v_min: f64,
    xi_j: &[DVector<f64>],
    xi: &[DVector<f64>],
) -> f64 {
    let vj = map.eval(xi_j);
    let k = vj.len() / 2;
    let (vr, vi) = (vj[pos], vj[k + pos]);
    let mut lin = 0.0;
    for (id, l) in &map.terms {
        let d = &xi_j[id.0] - &xi[id.0];
        let a = (l.row(pos) * vr + l.row(k + pos) * vi) * 2.0;
        lin += (a * d)[0];
    }
    lin - (vr * vr + vi * vi) + v_min * v_min
}

/// Gradient of the surrogate (constant in `xi`), keyed by line.
pub fn surrogate_gradient(
    map: &AffineVoltage,
    pos: usize,
    xi_j: &[DVector<f64>],
) -> Vec<(LineId, DVector<f64>)> {
    let vj = map.eval(xi_j);
    let k = vj.len() / 2;
    map.terms
        .iter()
        .map(|(id, l)| {
            let a = (l.row(pos) * vj[pos] + l.row(k + pos) * vj[k + pos]) * -2.0;
            (*id, a.transpose())
        })
        .collect()
}

/// Worst violations of the three surrogate conditions at `xi_j`:
/// tightness `|f - f~|` at `xi_j`, dominance `max(f - f~, 0)` over random
/// samples around `xi_j`, and the finite-difference gradient mismatch.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SurrogateCheck {
    pub tightness: f64,
    pub dominance: f64,
    pub gradient: f64,
}

pub fn check_surrogate<R: Rng>(
    map: &AffineVoltage,
    pos: usize,
    v_min: f64,
    xi_j: &[DVector<f64>],
    samples: usize,
    step: f64,
    rng: &mut R,
) -> SurrogateCheck {
    let f = |xi: &[DVector<f64>]| lower_bound_value(map, pos, v_min, xi);
    let g = |xi: &[DVector<f64>]| lower_bound_surrogate(map, pos, v_min, xi_j, xi);
    let tightness = (f(xi_j) - g(xi_j)).abs();

    let scale = xi_j.iter().map(|x| x.amax()).fold(0.0, f64::max).max(1e-3);
    let mut dominance = 0.0f64;
    for _ in 0..samples {
        let xi: Vec<DVector<f64>> = xi_j
            .iter()
            .map(|x| x.map(|v| v + scale * rng.random_range(-1.0..1.0)))
            .collect();
        dominance = dominance.max(f(&xi) - g(&xi));
    }

    let grad = surrogate_gradient(map, pos, xi_j);
    let mut gradient = 0.0f64;
    for (id, a) in &grad {
        for c in 0..a.len() {
            let mut plus = xi_j.to_vec();
            let mut minus = xi_j.to_vec();
            plus[id.0][c] += step;
            minus[id.0][c] -= step;
            let fd = (f(&plus) - f(&minus)) / (2.0 * step);
            gradient = gradient.max((fd - a[c]).abs());
        }
    }
    SurrogateCheck {
        tightness,
        dominance,
        gradient,
    }
}
