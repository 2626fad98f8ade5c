//! Assembly of the group-sparse conic reconfiguration program.
//!
//! Variables are laid out as: the stacked current of every in-service line
//! (line order), the generation vector of the substation and of every node
//! with DG, the epigraph scalar `t` of every switched line with a positive
//! weight, and optional feasibility slacks.

mod program;
mod voltage;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::FormulationError;
use crate::load::{linear_injection, InjectionMap};
use crate::network::{build_incidence, IncidenceMap, LineId, LineMask, NetworkModel};

pub use program::{Cone, ConicProgram};
pub use voltage::{
    check_surrogate, lower_bound_surrogate, lower_bound_value, surrogate_gradient, voltage_map,
    AffineVoltage, MagnitudeBounds, SurrogateCheck, VoltageBox, VoltageSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    #[default]
    Loss,
    Operational,
    Balancing,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    /// Price of one watt of losses (operational cost).
    pub c0: f64,
    pub mix_weight: f64,
    pub balance_set: Vec<LineId>,
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        ObjectiveSpec {
            kind: ObjectiveKind::Loss,
            c0: 1.0,
            mix_weight: 0.5,
            balance_set: Vec::new(),
        }
    }
}

impl ObjectiveSpec {
    pub fn loss() -> Self {
        Self::default()
    }

    pub fn operational(c0: f64) -> Self {
        ObjectiveSpec {
            kind: ObjectiveKind::Operational,
            c0,
            ..Self::default()
        }
    }

    pub fn balancing(balance_set: Vec<LineId>) -> Self {
        ObjectiveSpec {
            kind: ObjectiveKind::Balancing,
            balance_set,
            ..Self::default()
        }
    }

    pub fn mixed(c0: f64, balance_set: Vec<LineId>, mix_weight: f64) -> Self {
        ObjectiveSpec {
            kind: ObjectiveKind::Mixed,
            c0,
            mix_weight,
            balance_set,
        }
    }
}

/// Sparsity weights in volts. Per-line entries override the line's own
/// `lambda_weight`, which overrides the global value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LambdaSpec {
    pub global: f64,
    pub per_line: BTreeMap<LineId, f64>,
}

impl LambdaSpec {
    pub fn uniform(volts: f64) -> Self {
        LambdaSpec {
            global: volts,
            per_line: BTreeMap::new(),
        }
    }

    /// Weight of a line in volts; zero for lines without a switch.
    pub fn resolve(&self, model: &NetworkModel, id: LineId) -> f64 {
        let line = model.line(id);
        if !line.switchable {
            return 0.0;
        }
        self.per_line
            .get(&id)
            .copied()
            .or(line.lambda_weight)
            .unwrap_or(self.global)
    }

    fn validate(&self) -> Result<(), FormulationError> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !ok(self.global) || !self.per_line.values().all(|v| ok(*v)) {
            return Err(FormulationError::InvalidParameter(
                "sparsity weights must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// What a block of constraint rows encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowTag {
    /// Current balance at a node.
    Kcl(usize),
    /// Per-phase current cap `(sqrt(I_max); Re; Im)` in a second-order cone.
    Cap(LineId, usize),
    /// Group epigraph `(t; xi)`.
    Group(LineId),
    DgUpper(usize),
    DgLower(usize),
    BoxUpper(usize),
    BoxLower(usize),
    /// Magnitude upper bound of `(node, phase position)`.
    MagnitudeUpper(usize, usize),
    /// Linearized magnitude lower bound of `(node, phase position)`.
    MagnitudeLower(usize, usize),
    Slack,
}

impl RowTag {
    pub fn is_voltage(self) -> bool {
        matches!(
            self,
            RowTag::BoxUpper(_)
                | RowTag::BoxLower(_)
                | RowTag::MagnitudeUpper(..)
                | RowTag::MagnitudeLower(..)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowBlock {
    pub tag: RowTag,
    pub start: usize,
    /// Component indices (into the node's stacked vector) for box and DG
    /// rows; one entry per row.
    pub components: Vec<usize>,
}

impl RowBlock {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub xi: Vec<Option<usize>>,
    pub sigma: Vec<Option<usize>>,
    pub t: Vec<Option<usize>>,
    pub slack: Option<(usize, usize)>,
    pub n: usize,
}

/// How magnitude bounds enter the program.
#[derive(Debug, Clone, Copy)]
pub enum ScaStage<'x> {
    /// Upper bounds only.
    UpperOnly,
    /// Upper bounds plus the linearized lower bounds at the iterate.
    Surrogate(&'x [DVector<f64>]),
    /// As `Surrogate`, with a nonnegative slack on each lower bound and the
    /// total slack minimized.
    Feasibility(&'x [DVector<f64>]),
}

/// Fully assembled convex reconfiguration program over the in-service lines.
#[derive(Debug, Clone)]
pub struct DsrProblem<'a> {
    model: &'a NetworkModel,
    incidence: IncidenceMap,
    pub objective: ObjectiveSpec,
    pub lambda: LambdaSpec,
    pub voltage: VoltageSpec,
    mask: LineMask,
    layout: Layout,
    program: ConicProgram,
    blocks: Vec<RowBlock>,
    hessians: Vec<DMatrix<f64>>,
    lambda_pu: Vec<f64>,
    voltage_maps: Vec<Option<AffineVoltage>>,
    injections: Vec<InjectionMap>,
}

/// P2 over the whole network without voltage constraints.
pub fn build_p2<'a>(
    model: &'a NetworkModel,
    objective: &ObjectiveSpec,
    lambda: &LambdaSpec,
) -> Result<DsrProblem<'a>, FormulationError> {
    DsrProblem::build(
        model,
        objective,
        lambda,
        &VoltageSpec::None,
        &LineMask::all(model),
    )
}

/// Rebuilds `problem` with two-sided box constraints on reconstructed voltages.
pub fn add_voltage_box<'a>(
    problem: &DsrProblem<'a>,
    bounds: VoltageBox,
) -> Result<DsrProblem<'a>, FormulationError> {
    DsrProblem::build(
        problem.model,
        &problem.objective,
        &problem.lambda,
        &VoltageSpec::Box(bounds),
        &problem.mask,
    )
}

/// The convex subproblem of the magnitude-constrained program at `iterate`.
pub fn build_sca_subproblem<'a>(
    problem: &DsrProblem<'a>,
    iterate: &[DVector<f64>],
) -> Result<DsrProblem<'a>, FormulationError> {
    problem.rebuild(ScaStage::Surrogate(iterate))
}

impl<'a> DsrProblem<'a> {
    pub fn build(
        model: &'a NetworkModel,
        objective: &ObjectiveSpec,
        lambda: &LambdaSpec,
        voltage: &VoltageSpec,
        mask: &LineMask,
    ) -> Result<Self, FormulationError> {
        Self::assemble(model, objective, lambda, voltage, mask, ScaStage::UpperOnly)
    }

    pub fn rebuild(&self, stage: ScaStage<'_>) -> Result<DsrProblem<'a>, FormulationError> {
        Self::assemble(
            self.model,
            &self.objective,
            &self.lambda,
            &self.voltage,
            &self.mask,
            stage,
        )
    }

    fn assemble(
        model: &'a NetworkModel,
        objective: &ObjectiveSpec,
        lambda: &LambdaSpec,
        voltage: &VoltageSpec,
        mask: &LineMask,
        stage: ScaStage<'_>,
    ) -> Result<Self, FormulationError> {
        lambda.validate()?;
        if mask.len() != model.lines().len() {
            return Err(FormulationError::InvalidParameter(
                "line mask does not match the model".into(),
            ));
        }
        if !(0.0..=1.0).contains(&objective.mix_weight) || !(objective.c0 >= 0.0) {
            return Err(FormulationError::InvalidParameter(
                "mix weight must lie in [0, 1] and c0 must be nonnegative".into(),
            ));
        }
        let incidence = build_incidence(model);
        let n_nodes = model.nodes().len();
        let n_lines = model.lines().len();

        let lambda_pu: Vec<f64> = model
            .line_ids()
            .map(|id| {
                if mask.is_active(id) {
                    model.lambda_to_pu(lambda.resolve(model, id))
                } else {
                    0.0
                }
            })
            .collect();

        // variable layout
        let mut n = 0;
        let mut xi = vec![None; n_lines];
        for id in mask.active() {
            xi[id.0] = Some(n);
            n += 2 * model.line(id).phases.len();
        }
        let mut sigma = vec![None; n_nodes];
        for (i, node) in model.nodes().iter().enumerate() {
            if node.is_substation || node.dg.is_some() {
                sigma[i] = Some(n);
                n += 2 * node.phases.len();
            }
        }
        let mut t = vec![None; n_lines];
        for id in mask.active() {
            if lambda_pu[id.0] > 0.0 {
                t[id.0] = Some(n);
                n += 1;
            }
        }
        let lower_count = match (voltage, stage) {
            (VoltageSpec::Magnitude(mb), ScaStage::Feasibility(_)) => mb
                .bounds
                .iter()
                .enumerate()
                .filter_map(|(i, b)| b.map(|_| model.node(i).phases.len()))
                .sum(),
            _ => 0,
        };
        let slack = (lower_count > 0).then_some((n, lower_count));
        n += lower_count;
        let layout = Layout {
            xi,
            sigma,
            t,
            slack,
            n,
        };

        let hessians = line_hessians(model, objective, mask)?;
        let mut program = ConicProgram::new(n);
        let feasibility = matches!(stage, ScaStage::Feasibility(_));
        let objective_scale = if feasibility { 1e-6 } else { 1.0 };
        for id in mask.active() {
            let off = layout.xi[id.0].expect("active");
            program.add_quadratic(off, &(&hessians[id.0] * objective_scale));
            if let Some(tt) = layout.t[id.0] {
                program.q[tt] = lambda_pu[id.0] * objective_scale;
            }
        }
        if matches!(objective.kind, ObjectiveKind::Operational | ObjectiveKind::Mixed) {
            let w = if objective.kind == ObjectiveKind::Mixed {
                objective.mix_weight
            } else {
                1.0
            };
            for (i, node) in model.nodes().iter().enumerate() {
                if let (Some(off), Some(dg)) = (layout.sigma[i], &node.dg) {
                    for d in &dg.phases {
                        let pos = node.phases.position(d.phase).expect("validated");
                        program.q[off + pos] += w * d.cost * objective_scale;
                    }
                }
            }
        }
        if let Some((off, cnt)) = layout.slack {
            for j in 0..cnt {
                program.q[off + j] = 1.0;
            }
        }

        let mut blocks = Vec::new();
        let injections: Vec<InjectionMap> = model
            .nodes()
            .iter()
            .map(|node| linear_injection(node, model.bases.v_nominal).to_pu(&model.bases))
            .collect();

        // current balance: sum_in A xi - sum_out A xi + G sigma = -h
        for (i, node) in model.nodes().iter().enumerate() {
            let k = node.phases.len();
            let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); 2 * k];
            let mut add_line = |id: LineId, sign: f64| {
                let Some(off) = layout.xi[id.0] else { return };
                let kl = model.line(id).phases.len();
                for (p, &r) in incidence.rows(model, i, id).iter().enumerate() {
                    rows[r].push((off + p, sign));
                    rows[k + r].push((off + kl + p, sign));
                }
            };
            for &id in incidence.incoming(i) {
                add_line(id, 1.0);
            }
            for &id in incidence.outgoing(i) {
                add_line(id, -1.0);
            }
            if let Some(off) = layout.sigma[i] {
                let g = &injections[i].g;
                for (r, row) in rows.iter_mut().enumerate() {
                    for c in 0..2 * k {
                        row.push((off + c, g[(r, c)]));
                    }
                }
            }
            let b: Vec<f64> = (-&injections[i].h).iter().copied().collect();
            let start = program.push_block(Cone::Zero(2 * k), rows, b);
            blocks.push(RowBlock {
                tag: RowTag::Kcl(i),
                start,
                components: (0..2 * k).collect(),
            });
        }

        // generation boxes; the substation is unbounded
        for (i, node) in model.nodes().iter().enumerate() {
            if node.is_substation {
                continue;
            }
            let (Some(off), Some((lo, hi))) = (layout.sigma[i], model.sigma_dg_bounds(i)) else {
                continue;
            };
            let (mut up_rows, mut up_b, mut up_c) = (Vec::new(), Vec::new(), Vec::new());
            let (mut lo_rows, mut lo_b, mut lo_c) = (Vec::new(), Vec::new(), Vec::new());
            for c in 0..lo.len() {
                if hi[c].is_finite() {
                    up_rows.push(vec![(off + c, 1.0)]);
                    up_b.push(hi[c]);
                    up_c.push(c);
                }
                if lo[c].is_finite() {
                    lo_rows.push(vec![(off + c, -1.0)]);
                    lo_b.push(-lo[c]);
                    lo_c.push(c);
                }
            }
            if !up_c.is_empty() {
                let start = program.push_block(Cone::Nonnegative(up_c.len()), up_rows, up_b);
                blocks.push(RowBlock {
                    tag: RowTag::DgUpper(i),
                    start,
                    components: up_c,
                });
            }
            if !lo_c.is_empty() {
                let start = program.push_block(Cone::Nonnegative(lo_c.len()), lo_rows, lo_b);
                blocks.push(RowBlock {
                    tag: RowTag::DgLower(i),
                    start,
                    components: lo_c,
                });
            }
        }

        // group epigraphs and per-phase caps
        for id in mask.active() {
            let off = layout.xi[id.0].expect("active");
            let kl = model.line(id).phases.len();
            if let Some(tt) = layout.t[id.0] {
                let mut rows = vec![vec![(tt, -1.0)]];
                for c in 0..2 * kl {
                    rows.push(vec![(off + c, -1.0)]);
                }
                let start =
                    program.push_block(Cone::SecondOrder(2 * kl + 1), rows, vec![0.0; 2 * kl + 1]);
                blocks.push(RowBlock {
                    tag: RowTag::Group(id),
                    start,
                    components: (0..2 * kl + 1).collect(),
                });
            }
            let cap = model.i_max_sq_pu(id);
            if cap.is_finite() {
                for p in 0..kl {
                    let rows = vec![vec![], vec![(off + p, -1.0)], vec![(off + kl + p, -1.0)]];
                    let start =
                        program.push_block(Cone::SecondOrder(3), rows, vec![cap.sqrt(), 0.0, 0.0]);
                    blocks.push(RowBlock {
                        tag: RowTag::Cap(id, p),
                        start,
                        components: vec![0, 1, 2],
                    });
                }
            }
        }

        // voltage constraints
        let mut voltage_maps = vec![None; n_nodes];
        let constrained: Vec<usize> = match voltage {
            VoltageSpec::None => Vec::new(),
            VoltageSpec::Box(vb) => {
                check_len(vb.bounds.len(), n_nodes)?;
                (0..n_nodes).filter(|&i| vb.bounds[i].is_some()).collect()
            }
            VoltageSpec::Magnitude(mb) => {
                check_len(mb.bounds.len(), n_nodes)?;
                (0..n_nodes).filter(|&i| mb.bounds[i].is_some()).collect()
            }
        };
        for &i in &constrained {
            voltage_maps[i] = Some(voltage_map(model, &incidence, mask, i)?);
        }
        let map_rows = |map: &AffineVoltage, comp: usize, sign: f64| -> Vec<(usize, f64)> {
            let mut row = Vec::new();
            for (id, l) in &map.terms {
                let off = layout.xi[id.0].expect("path lines are active");
                for c in 0..l.ncols() {
                    row.push((off + c, sign * l[(comp, c)]));
                }
            }
            row
        };
        let mut slack_next = layout.slack.map(|(o, _)| o);
        for &i in &constrained {
            let map = voltage_maps[i].as_ref().expect("built above");
            let k = model.node(i).phases.len();
            match voltage {
                VoltageSpec::Box(vb) => {
                    let (lo, hi) = vb.bounds[i].as_ref().expect("constrained");
                    if lo.len() != 2 * k || hi.len() != 2 * k || (0..2 * k).any(|c| lo[c] > hi[c]) {
                        return Err(FormulationError::InvalidParameter(format!(
                            "voltage box of node {} is malformed",
                            model.node(i).id
                        )));
                    }
                    let mut push = |upper: bool| {
                        let (mut rows, mut b, mut comps) = (Vec::new(), Vec::new(), Vec::new());
                        for c in 0..2 * k {
                            let bound = if upper { hi[c] } else { lo[c] };
                            if !bound.is_finite() {
                                continue;
                            }
                            if upper {
                                rows.push(map_rows(map, c, 1.0));
                                b.push(hi[c] - map.constant[c]);
                            } else {
                                rows.push(map_rows(map, c, -1.0));
                                b.push(map.constant[c] - lo[c]);
                            }
                            comps.push(c);
                        }
                        if !comps.is_empty() {
                            let start =
                                program.push_block(Cone::Nonnegative(comps.len()), rows, b);
                            blocks.push(RowBlock {
                                tag: if upper {
                                    RowTag::BoxUpper(i)
                                } else {
                                    RowTag::BoxLower(i)
                                },
                                start,
                                components: comps,
                            });
                        }
                    };
                    push(true);
                    push(false);
                }
                VoltageSpec::Magnitude(mb) => {
                    let (vmin, vmax) = mb.bounds[i].expect("constrained");
                    if !(0.0 < vmin && vmin <= vmax) {
                        return Err(FormulationError::InvalidParameter(format!(
                            "magnitude bounds of node {} must satisfy 0 < min <= max",
                            model.node(i).id
                        )));
                    }
                    for p in 0..k {
                        if vmax.is_finite() {
                            let rows = vec![vec![], map_rows(map, p, -1.0), map_rows(map, k + p, -1.0)];
                            let b = vec![vmax, map.constant[p], map.constant[k + p]];
                            let start = program.push_block(Cone::SecondOrder(3), rows, b);
                            blocks.push(RowBlock {
                                tag: RowTag::MagnitudeUpper(i, p),
                                start,
                                components: vec![0, 1, 2],
                            });
                        }
                        let iterate = match stage {
                            ScaStage::UpperOnly => continue,
                            ScaStage::Surrogate(x) | ScaStage::Feasibility(x) => x,
                        };
                        // -a' xi <= |v_j|^2 - a' xi_j - V_min^2
                        let grad = surrogate_gradient(map, p, iterate);
                        let mut row = Vec::new();
                        let mut a_dot_xj = 0.0;
                        for (id, g) in &grad {
                            let off = layout.xi[id.0].expect("path lines are active");
                            for c in 0..g.len() {
                                // g = -a
                                row.push((off + c, g[c]));
                                a_dot_xj -= g[c] * iterate[id.0][c];
                            }
                        }
                        let vj = map.eval(iterate);
                        let bj = vj[p] * vj[p] + vj[k + p] * vj[k + p];
                        if let Some(s) = slack_next.as_mut() {
                            row.push((*s, -1.0));
                            let start = program.push_block(
                                Cone::Nonnegative(2),
                                vec![row, vec![(*s, -1.0)]],
                                vec![bj - a_dot_xj - vmin * vmin, 0.0],
                            );
                            blocks.push(RowBlock {
                                tag: RowTag::MagnitudeLower(i, p),
                                start,
                                components: vec![0],
                            });
                            blocks.push(RowBlock {
                                tag: RowTag::Slack,
                                start: start + 1,
                                components: vec![0],
                            });
                            *s += 1;
                        } else {
                            let start = program.push_block(
                                Cone::Nonnegative(1),
                                vec![row],
                                vec![bj - a_dot_xj - vmin * vmin],
                            );
                            blocks.push(RowBlock {
                                tag: RowTag::MagnitudeLower(i, p),
                                start,
                                components: vec![0],
                            });
                        }
                    }
                }
                VoltageSpec::None => unreachable!(),
            }
        }

        Ok(DsrProblem {
            model,
            incidence,
            objective: objective.clone(),
            lambda: lambda.clone(),
            voltage: voltage.clone(),
            mask: mask.clone(),
            layout,
            program,
            blocks,
            hessians,
            lambda_pu,
            voltage_maps,
            injections,
        })
    }

    pub fn model(&self) -> &'a NetworkModel {
        self.model
    }

    pub fn incidence(&self) -> &IncidenceMap {
        &self.incidence
    }

    pub fn mask(&self) -> &LineMask {
        &self.mask
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn program(&self) -> &ConicProgram {
        &self.program
    }

    pub fn blocks(&self) -> &[RowBlock] {
        &self.blocks
    }

    /// Hessian `H` of the smooth cost on the line's current, `1/2 xi' H xi`.
    pub fn hessian(&self, id: LineId) -> &DMatrix<f64> {
        &self.hessians[id.0]
    }

    /// Sparsity weight of the line in per-unit volts (zero when absent).
    pub fn lambda_pu(&self, id: LineId) -> f64 {
        self.lambda_pu[id.0]
    }

    pub fn voltage_map(&self, node: usize) -> Option<&AffineVoltage> {
        self.voltage_maps[node].as_ref()
    }

    pub fn injection(&self, node: usize) -> &InjectionMap {
        &self.injections[node]
    }

    /// Splits a primal vector into per-line stacked currents; inactive lines
    /// carry zeros.
    pub fn currents(&self, x: &[f64]) -> Vec<DVector<f64>> {
        self.model
            .line_ids()
            .map(|id| {
                let k = 2 * self.model.line(id).phases.len();
                match self.layout.xi[id.0] {
                    Some(off) => DVector::from_column_slice(&x[off..off + k]),
                    None => DVector::zeros(k),
                }
            })
            .collect()
    }

    pub fn generation(&self, x: &[f64]) -> Vec<Option<DVector<f64>>> {
        (0..self.model.nodes().len())
            .map(|i| {
                self.layout.sigma[i].map(|off| {
                    let k = 2 * self.model.node(i).phases.len();
                    DVector::from_column_slice(&x[off..off + k])
                })
            })
            .collect()
    }

    /// Packs per-line currents into a primal vector (other entries zero).
    pub fn pack_currents(&self, xi: &[DVector<f64>]) -> Vec<f64> {
        let mut x = vec![0.0; self.layout.n];
        for id in self.mask.active() {
            let off = self.layout.xi[id.0].expect("active");
            x[off..off + xi[id.0].len()].copy_from_slice(xi[id.0].as_slice());
        }
        x
    }

    pub fn to_json(&self) -> String {
        self.program.to_json()
    }
}

fn check_len(got: usize, want: usize) -> Result<(), FormulationError> {
    if got != want {
        return Err(FormulationError::InvalidParameter(format!(
            "voltage bounds given for {got} nodes, model has {want}"
        )));
    }
    Ok(())
}

/// Per-line Hessian of the smooth part of the cost, checked for convexity.
fn line_hessians(
    model: &NetworkModel,
    objective: &ObjectiveSpec,
    mask: &LineMask,
) -> Result<Vec<DMatrix<f64>>, FormulationError> {
    let needs_balance = matches!(objective.kind, ObjectiveKind::Balancing | ObjectiveKind::Mixed);
    if needs_balance && objective.balance_set.is_empty() {
        return Err(FormulationError::EmptyBalanceSet);
    }
    let mut balance = vec![false; model.lines().len()];
    if needs_balance {
        for id in &objective.balance_set {
            if id.0 >= balance.len() {
                return Err(FormulationError::InvalidParameter(format!(
                    "balance set references unknown line {}",
                    id.0
                )));
            }
            if !model.i_max_sq_pu(*id).is_finite() || model.i_max_sq_pu(*id) <= 0.0 {
                let l = model.line(*id);
                return Err(FormulationError::MissingCurrentCap {
                    from: l.from,
                    to: l.to,
                });
            }
            balance[id.0] = true;
        }
    }
    let mut out = Vec::with_capacity(model.lines().len());
    for id in model.line_ids() {
        let line = model.line(id);
        let k = line.phases.len();
        let z_bar = line.z_bar();
        let bal = || -> DMatrix<f64> {
            let mut h = DMatrix::zeros(2 * k, 2 * k);
            if balance[id.0] {
                let cap = model.i_max_sq_pu(id);
                for p in 0..k {
                    h += line.m_bar(p) * (2.0 / cap);
                }
            }
            h
        };
        let h = match objective.kind {
            ObjectiveKind::Loss => z_bar,
            ObjectiveKind::Operational => z_bar * (2.0 * objective.c0),
            ObjectiveKind::Balancing => bal(),
            ObjectiveKind::Mixed => {
                z_bar * (2.0 * objective.c0 * objective.mix_weight)
                    + bal() * (1.0 - objective.mix_weight)
            }
        };
        if mask.is_active(id) {
            let eig = SymmetricEigen::new(h.clone()).eigenvalues;
            let scale = eig.amax().max(1e-300);
            if eig.min() < -1e-10 * scale {
                return Err(FormulationError::NonConvex(format!(
                    "cost of line ({},{})",
                    line.from, line.to
                )));
            }
        }
        out.push(h);
    }
    Ok(out)
}

/// Loss of the given currents in watts, `sum xi' Zbar xi` scaled to SI.
pub fn loss_watts(model: &NetworkModel, xi: &[DVector<f64>]) -> f64 {
    let pu: f64 = model
        .line_ids()
        .map(|id| {
            let x = &xi[id.0];
            (x.transpose() * model.line(id).z_bar() * x)[0]
        })
        .sum();
    pu * model.bases.s_base
}
