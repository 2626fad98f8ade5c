//! Three-phase feeder model: nodes, lines, per-unit bases and graph queries.
//!
//! Edges are directed by file order `(from, to)`. Lines are stored sorted by
//! `(from, to)` and a [`LineId`] is the position in that order, so every
//! stacked vector built downstream uses the same deterministic layout.

mod graph;
mod incidence;
mod schema;

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::load;

pub use graph::{
    connected_from_substation, enumerate_cycles, is_radial, min_resistance_spanning_tree,
    switch_free_path, unreachable_nodes, LineMask, SwitchFreePath,
};
pub use incidence::{build_incidence, IncidenceMap};
pub use schema::{parse_network, parse_network_str, serialize_network};

pub type CMatrix = DMatrix<Complex64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Nominal angle in radians: a = 0, b = -120 deg, c = +120 deg.
    pub fn nominal_angle(self) -> f64 {
        match self {
            Phase::A => 0.0,
            Phase::B => -2.0 * PI / 3.0,
            Phase::C => 2.0 * PI / 3.0,
        }
    }

    /// Unit phasor `e^{j angle}`.
    pub fn rotation(self) -> Complex64 {
        Complex64::from_polar(1.0, self.nominal_angle())
    }

    pub fn label(self) -> char {
        match self {
            Phase::A => 'a',
            Phase::B => 'b',
            Phase::C => 'c',
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// Ordered subset of {a, b, c}; iteration is always a < b < c.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub const ABC: PhaseSet = PhaseSet(0b111);

    pub fn empty() -> Self {
        PhaseSet(0)
    }

    pub fn single(phase: Phase) -> Self {
        PhaseSet(1 << phase.index())
    }

    pub fn from_phases<I: IntoIterator<Item = Phase>>(phases: I) -> Self {
        PhaseSet(phases.into_iter().fold(0, |acc, p| acc | (1 << p.index())))
    }

    pub fn contains(self, phase: Phase) -> bool {
        self.0 & (1 << phase.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset_of(self, other: PhaseSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn intersection(self, other: PhaseSet) -> PhaseSet {
        PhaseSet(self.0 & other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }

    /// Position of `phase` within this ordered set.
    pub fn position(self, phase: Phase) -> Option<usize> {
        self.iter().position(|p| p == phase)
    }
}

impl fmt::Debug for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self.iter().map(Phase::label).collect();
        write!(f, "{{{s}}}")
    }
}

impl Serialize for PhaseSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for PhaseSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let phases = Vec::<Phase>::deserialize(deserializer)?;
        Ok(PhaseSet::from_phases(phases))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Position of a line in the sorted line list of a [`NetworkModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LineId(pub usize);

/// Distribution transformer serving a load phase.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerSpec {
    /// No-load core loss, watts.
    pub core_loss_w: f64,
    /// Load-loss resistive coefficient referred to the primary, ohms.
    pub r_ohm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseLoad {
    pub phase: Phase,
    /// Demand at nominal voltage, volt-amperes.
    pub s: Complex64,
    pub kappa: u8,
    pub transformer: Option<TransformerSpec>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadSpec {
    pub phases: Vec<PhaseLoad>,
}

impl LoadSpec {
    pub fn phase(&self, phase: Phase) -> Option<&PhaseLoad> {
        self.phases.iter().find(|l| l.phase == phase)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDg {
    pub phase: Phase,
    pub p_min_w: f64,
    pub p_max_w: f64,
    pub q_min_var: f64,
    pub q_max_var: f64,
    /// Cost per watt supplied.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DgSpec {
    pub phases: Vec<PhaseDg>,
}

impl DgSpec {
    pub fn phase(&self, phase: Phase) -> Option<&PhaseDg> {
        self.phases.iter().find(|d| d.phase == phase)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub phases: PhaseSet,
    pub is_substation: bool,
    pub load: Option<LoadSpec>,
    pub dg: Option<DgSpec>,
}

impl Node {
    /// True when some phase draws a nonzero complex power.
    pub fn has_load(&self) -> bool {
        self.load
            .as_ref()
            .is_some_and(|l| l.phases.iter().any(|p| p.s.norm() > 0.0))
    }

    pub fn loaded_phases(&self) -> PhaseSet {
        self.load.as_ref().map_or(PhaseSet::empty(), |l| {
            PhaseSet::from_phases(l.phases.iter().filter(|p| p.s.norm() > 0.0).map(|p| p.phase))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: NodeId,
    pub to: NodeId,
    pub phases: PhaseSet,
    /// Phase impedance matrix in ohms, as read from the input.
    pub impedance_ohm: CMatrix,
    /// Same matrix in per-unit.
    pub impedance: CMatrix,
    pub switchable: bool,
    /// Open in the base (as-operated) configuration.
    pub normally_open: bool,
    pub i_max_amp: Option<f64>,
    /// Per-line sparsity weight in volts; falls back to the global value.
    pub lambda_weight: Option<f64>,
}

impl Line {
    pub fn resistance(&self) -> DMatrix<f64> {
        self.impedance.map(|z| z.re)
    }

    pub fn reactance(&self) -> DMatrix<f64> {
        self.impedance.map(|z| z.im)
    }

    /// `I_2 (x) Re{Z}`, the loss quadratic form on stacked currents.
    pub fn z_bar(&self) -> DMatrix<f64> {
        kron_i2(&self.resistance())
    }

    /// Real form of the complex voltage drop `Z i` on `[Re; Im]` stacks.
    pub fn psi(&self) -> DMatrix<f64> {
        let r = self.resistance();
        let x = self.reactance();
        let k = self.phases.len();
        let mut psi = DMatrix::zeros(2 * k, 2 * k);
        psi.view_mut((0, 0), (k, k)).copy_from(&r);
        psi.view_mut((0, k), (k, k)).copy_from(&(-&x));
        psi.view_mut((k, 0), (k, k)).copy_from(&x);
        psi.view_mut((k, k), (k, k)).copy_from(&r);
        psi
    }

    /// `I_2 (x) e_phi e_phi^T` for the phase at `position` in the line's phase set.
    pub fn m_bar(&self, position: usize) -> DMatrix<f64> {
        let k = self.phases.len();
        let mut m = DMatrix::zeros(2 * k, 2 * k);
        m[(position, position)] = 1.0;
        m[(k + position, k + position)] = 1.0;
        m
    }
}

/// `I_2 (x) m`.
pub fn kron_i2(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let mut out = DMatrix::zeros(2 * r, 2 * c);
    out.view_mut((0, 0), (r, c)).copy_from(m);
    out.view_mut((r, c), (r, c)).copy_from(m);
    out
}

/// Per-unit system: phase voltage base `V_N / sqrt(3)` and a power base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bases {
    /// Nominal line-line voltage, volts.
    pub v_nominal: f64,
    /// Power base, volt-amperes.
    pub s_base: f64,
}

impl Bases {
    pub fn v_phase(&self) -> f64 {
        self.v_nominal / 3f64.sqrt()
    }

    pub fn i_base(&self) -> f64 {
        self.s_base / self.v_phase()
    }

    pub fn z_base(&self) -> f64 {
        self.v_phase() * self.v_phase() / self.s_base
    }

    /// Nominal line-line voltage in per-unit (always sqrt(3)).
    pub fn v_nominal_pu(&self) -> f64 {
        3f64.sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub name: Option<String>,
    pub bases: Bases,
    nodes: Vec<Node>,
    lines: Vec<Line>,
    index: HashMap<NodeId, usize>,
    substation: usize,
}

impl PartialEq for NetworkModel {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.bases == other.bases
            && self.nodes == other.nodes
            && self.lines == other.lines
    }
}

impl NetworkModel {
    /// Assemble and validate a model. Line impedances in `lines` must carry
    /// `impedance_ohm`; the per-unit copy is recomputed here.
    pub fn new(
        name: Option<String>,
        bases: Bases,
        mut nodes: Vec<Node>,
        mut lines: Vec<Line>,
    ) -> Result<Self, ModelError> {
        if !(bases.v_nominal > 0.0 && bases.s_base > 0.0) {
            return Err(ModelError::Invalid(
                "nominal voltage and power base must be positive".into(),
            ));
        }
        nodes.sort_by_key(|n| n.id);
        lines.sort_by_key(|l| (l.from, l.to));

        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id, i).is_some() {
                return Err(ModelError::Invalid(format!("duplicate node id {}", n.id)));
            }
        }
        let substations: Vec<usize> = nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.is_substation)
            .map(|(i, _)| i)
            .collect();
        if substations.len() != 1 {
            return Err(ModelError::Invalid(format!(
                "expected exactly one substation, found {}",
                substations.len()
            )));
        }
        let substation = substations[0];
        if nodes[substation].phases != PhaseSet::ABC {
            return Err(ModelError::Invalid(
                "substation must carry all three phases".into(),
            ));
        }

        for n in &nodes {
            validate_node(n)?;
        }

        let z_base = bases.z_base();
        for l in &mut lines {
            validate_line(l, &nodes, &index)?;
            l.impedance = l.impedance_ohm.map(|z| z / z_base);
        }

        let model = NetworkModel {
            name,
            bases,
            nodes,
            lines,
            index,
            substation,
        };
        let stranded = unreachable_nodes(&model, &LineMask::all(&model));
        if !stranded.is_empty() {
            return Err(ModelError::Disconnected(stranded));
        }
        Ok(model)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn node(&self, idx: usize) -> &Node {
        &self.nodes[idx]
    }

    pub fn line(&self, id: LineId) -> &Line {
        &self.lines[id.0]
    }

    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn substation(&self) -> usize {
        self.substation
    }

    pub fn line_ids(&self) -> impl Iterator<Item = LineId> {
        (0..self.lines.len()).map(LineId)
    }

    /// Lines equipped with controllable switches (the set `E_R`).
    pub fn switch_lines(&self) -> Vec<LineId> {
        self.line_ids()
            .filter(|id| self.lines[id.0].switchable)
            .collect()
    }

    /// First line joining `from` and `to` in the given direction.
    pub fn find_line(&self, from: u32, to: u32) -> Option<LineId> {
        self.lines
            .iter()
            .position(|l| l.from == NodeId(from) && l.to == NodeId(to))
            .map(LineId)
    }

    /// Line endpoints as node indices.
    pub fn endpoints(&self, id: LineId) -> (usize, usize) {
        let l = &self.lines[id.0];
        (self.index[&l.from], self.index[&l.to])
    }

    /// Squared per-phase current cap in per-unit, `+inf` when uncapped.
    pub fn i_max_sq_pu(&self, id: LineId) -> f64 {
        self.lines[id.0].i_max_amp.map_or(f64::INFINITY, |a| {
            let pu = a / self.bases.i_base();
            pu * pu
        })
    }

    /// Converts a sparsity weight in volts to per-unit.
    pub fn lambda_to_pu(&self, volts: f64) -> f64 {
        volts / self.bases.v_phase()
    }

    /// Stacked `[Re; Im]` load power over the node's phases, per-unit, with
    /// transformer losses folded into the active part.
    pub fn sigma_load(&self, idx: usize) -> DVector<f64> {
        let node = &self.nodes[idx];
        let k = node.phases.len();
        let mut sigma = DVector::zeros(2 * k);
        if let Some(load) = &node.load {
            for pl in &load.phases {
                let pos = node.phases.position(pl.phase).expect("validated");
                let p = match &pl.transformer {
                    Some(t) => load::transformer_adjusted_load(
                        pl.s.re,
                        pl.s.norm(),
                        t,
                        self.bases.v_nominal,
                    ),
                    None => pl.s.re,
                };
                sigma[pos] = p / self.bases.s_base;
                sigma[k + pos] = pl.s.im / self.bases.s_base;
            }
        }
        sigma
    }

    /// Box bounds on the stacked generation vector, per-unit. Phases without
    /// a unit are pinned to zero.
    pub fn sigma_dg_bounds(&self, idx: usize) -> Option<(DVector<f64>, DVector<f64>)> {
        let node = &self.nodes[idx];
        let dg = node.dg.as_ref()?;
        let k = node.phases.len();
        let mut lo = DVector::zeros(2 * k);
        let mut hi = DVector::zeros(2 * k);
        for d in &dg.phases {
            let pos = node.phases.position(d.phase).expect("validated");
            lo[pos] = d.p_min_w / self.bases.s_base;
            hi[pos] = d.p_max_w / self.bases.s_base;
            lo[k + pos] = d.q_min_var / self.bases.s_base;
            hi[k + pos] = d.q_max_var / self.bases.s_base;
        }
        Some((lo, hi))
    }

    /// Nominal phasors `V_N/sqrt(3) e^{j phi}` of a node, stacked `[Re; Im]`, per-unit.
    pub fn nominal_voltage(&self, idx: usize) -> DVector<f64> {
        let phases = self.nodes[idx].phases;
        let k = phases.len();
        let mut nu = DVector::zeros(2 * k);
        for (pos, ph) in phases.iter().enumerate() {
            let r = ph.rotation();
            nu[pos] = r.re;
            nu[k + pos] = r.im;
        }
        nu
    }
}

fn validate_node(n: &Node) -> Result<(), ModelError> {
    if n.id.0 < 1 {
        return Err(ModelError::Invalid("node ids start at 1".into()));
    }
    if n.phases.is_empty() {
        return Err(ModelError::Invalid(format!("node {} has no phases", n.id)));
    }
    if let Some(load) = &n.load {
        for pl in &load.phases {
            if !n.phases.contains(pl.phase) {
                return Err(ModelError::Invalid(format!(
                    "node {}: load on phase {} outside node phases",
                    n.id, pl.phase
                )));
            }
            if pl.kappa > 2 {
                return Err(ModelError::Invalid(format!(
                    "node {}: load exponent {} not in {{0,1,2}}",
                    n.id, pl.kappa
                )));
            }
            if let Some(t) = &pl.transformer {
                if !(t.core_loss_w > 0.0 && t.r_ohm > 0.0) {
                    return Err(ModelError::Invalid(format!(
                        "node {}: transformer core loss and resistance must be positive",
                        n.id
                    )));
                }
            }
        }
    }
    if let Some(dg) = &n.dg {
        for d in &dg.phases {
            if !n.phases.contains(d.phase) {
                return Err(ModelError::Invalid(format!(
                    "node {}: generation on phase {} outside node phases",
                    n.id, d.phase
                )));
            }
            if d.p_min_w > d.p_max_w || d.q_min_var > d.q_max_var {
                return Err(ModelError::Invalid(format!(
                    "node {}: generation bounds are inverted",
                    n.id
                )));
            }
        }
    }
    Ok(())
}

fn validate_line(
    l: &Line,
    nodes: &[Node],
    index: &HashMap<NodeId, usize>,
) -> Result<(), ModelError> {
    if l.from == l.to {
        return Err(ModelError::Invalid(format!("self-loop at node {}", l.from)));
    }
    let (Some(&m), Some(&n)) = (index.get(&l.from), index.get(&l.to)) else {
        return Err(ModelError::Invalid(format!(
            "line ({},{}) references an unknown node",
            l.from, l.to
        )));
    };
    if l.phases.is_empty()
        || !l
            .phases
            .is_subset_of(nodes[m].phases.intersection(nodes[n].phases))
    {
        return Err(ModelError::Invalid(format!(
            "line ({},{}): phases {:?} not shared by both end nodes",
            l.from, l.to, l.phases
        )));
    }
    let k = l.phases.len();
    if l.impedance_ohm.shape() != (k, k) {
        return Err(ModelError::Invalid(format!(
            "line ({},{}): impedance must be {k}x{k}",
            l.from, l.to
        )));
    }
    let z = &l.impedance_ohm;
    let scale = z.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
    for i in 0..k {
        for j in 0..i {
            if (z[(i, j)] - z[(j, i)]).norm() > 1e-9 * scale {
                return Err(ModelError::NotSymmetric {
                    from: l.from,
                    to: l.to,
                });
            }
        }
    }
    let r = z.map(|v| v.re);
    if r.cholesky().is_none() {
        return Err(ModelError::NotPositiveDefinite {
            from: l.from,
            to: l.to,
        });
    }
    if let Some(a) = l.i_max_amp {
        if !(a >= 0.0) {
            return Err(ModelError::Invalid(format!(
                "line ({},{}): negative current cap",
                l.from, l.to
            )));
        }
    }
    if let Some(w) = l.lambda_weight {
        if !(w >= 0.0) {
            return Err(ModelError::Invalid(format!(
                "line ({},{}): negative sparsity weight",
                l.from, l.to
            )));
        }
    }
    Ok(())
}
