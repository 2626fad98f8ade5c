use rayon::prelude::*;
use serde::Serialize;

use super::{refit_mask, Topology};
use crate::error::PipelineError;
use crate::formulation::ObjectiveSpec;
use crate::network::{connected_from_substation, enumerate_cycles, is_radial, LineId, LineMask, NetworkModel};
use crate::solver::SolverConfig;

/// Largest switch count accepted by [`exhaustive_oracle`].
pub const ORACLE_GUARD: usize = 25;

#[derive(Debug, Clone, Serialize)]
pub struct OracleEntry {
    /// Bit `k` set when the `k`-th switch is open.
    pub open_mask: u64,
    pub open_switches: Vec<LineId>,
    pub objective: Option<f64>,
    pub loss_w: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleResult {
    pub best: Topology,
    pub best_objective: f64,
    pub best_loss_w: f64,
    /// Every evaluated configuration, ordered by `open_mask`.
    pub entries: Vec<OracleEntry>,
}

fn mask_for(model: &NetworkModel, switches: &[LineId], bits: u64) -> LineMask {
    let mut mask = LineMask::all(model);
    for (k, id) in switches.iter().enumerate() {
        if bits >> k & 1 == 1 {
            mask.set(*id, false);
        }
    }
    mask
}

/// Refits every admissible switch configuration and returns the one with the
/// smallest objective. With `radial_only`, only spanning trees are
/// admissible; otherwise any configuration reaching every node is.
pub fn exhaustive_oracle(
    model: &NetworkModel,
    objective: &ObjectiveSpec,
    radial_only: bool,
    config: &SolverConfig,
) -> Result<OracleResult, PipelineError> {
    let switches = model.switch_lines();
    let k = switches.len();
    if k > ORACLE_GUARD {
        return Err(PipelineError::TooManySwitches {
            switches: k,
            configurations: 2f64.powi(k as i32),
            guard: ORACLE_GUARD,
        });
    }
    let pos: Vec<Option<usize>> = {
        let mut pos = vec![None; model.lines().len()];
        for (j, id) in switches.iter().enumerate() {
            pos[id.0] = Some(j);
        }
        pos
    };
    // each cycle of a spanning tree's complement needs an open switch
    let cycle_bits: Vec<u64> = if radial_only {
        enumerate_cycles(model)
            .iter()
            .map(|c| c.iter().filter_map(|id| pos[id.0]).fold(0u64, |m, j| m | 1 << j))
            .collect()
    } else {
        Vec::new()
    };
    let open_needed = model.lines().len() + 1 - model.nodes().len();

    let mut entries: Vec<OracleEntry> = (0..1u64 << k)
        .into_par_iter()
        .filter(|&bits| {
            if radial_only {
                bits.count_ones() as usize == open_needed
                    && cycle_bits.iter().all(|c| c & bits != 0)
                    && is_radial(model, &mask_for(model, &switches, bits))
            } else {
                connected_from_substation(model, &mask_for(model, &switches, bits))
            }
        })
        .map(|bits| {
            let mask = mask_for(model, &switches, bits);
            let open_switches = switches
                .iter()
                .enumerate()
                .filter(|(j, _)| bits >> j & 1 == 1)
                .map(|(_, id)| *id)
                .collect();
            let mut entry = OracleEntry {
                open_mask: bits,
                open_switches,
                objective: None,
                loss_w: None,
                error: None,
            };
            match refit_mask(model, &mask, objective, config) {
                Ok(r) => {
                    entry.objective = Some(r.solution.objective);
                    entry.loss_w = Some(r.loss_w);
                }
                Err(e) => entry.error = Some(e.to_string()),
            }
            entry
        })
        .collect();
    entries.sort_by_key(|e| e.open_mask);

    let best = entries
        .iter()
        .filter_map(|e| e.objective.map(|o| (o, e)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, e)| e)
        .ok_or_else(|| {
            let stranded = crate::network::unreachable_nodes(model, &mask_for(model, &switches, (1u64 << k) - 1));
            PipelineError::Disconnected(stranded)
        })?;
    let topology = Topology::from_mask(model, &mask_for(model, &switches, best.open_mask));
    let (best_objective, best_loss_w) = (best.objective.expect("filtered"), best.loss_w.expect("filtered"));
    Ok(OracleResult {
        best: topology,
        best_objective,
        best_loss_w,
        entries,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Baseline {
    pub topology: Topology,
    /// Switches in the order they were opened.
    pub opened: Vec<LineId>,
    pub objective: f64,
    pub loss_w: f64,
}

/// Greedy branch exchange: starting with every line closed, repeatedly open
/// the closed switch carrying the smallest `|xi|^2` whose removal keeps all
/// nodes connected, until the network is radial.
pub fn heuristic_baseline(
    model: &NetworkModel,
    objective: &ObjectiveSpec,
    config: &SolverConfig,
) -> Result<Baseline, PipelineError> {
    let mut mask = LineMask::all(model);
    let mut opened = Vec::new();
    let mut fit = refit_mask(model, &mask, objective, config)?;
    while !is_radial(model, &mask) {
        let choice = model
            .switch_lines()
            .into_iter()
            .filter(|id| mask.is_active(*id))
            .filter(|id| {
                let mut trial = mask.clone();
                trial.set(*id, false);
                connected_from_substation(model, &trial)
            })
            .map(|id| (fit.solution.xi[id.0].norm_squared(), id))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let Some((_, id)) = choice else {
            break;
        };
        mask.set(id, false);
        opened.push(id);
        fit = refit_mask(model, &mask, objective, config)?;
    }
    Ok(Baseline {
        topology: Topology::from_mask(model, &mask),
        opened,
        objective: fit.solution.objective,
        loss_w: fit.loss_w,
    })
}
