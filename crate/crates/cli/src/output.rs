use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gridreconf_core::load::load_deviation;
use gridreconf_core::pipeline::Topology;
use gridreconf_core::{NetworkModel, PrimalDualSolution};
use nalgebra::DVector;
use serde::Serialize;

/// Fixed numeric format for every CSV value: 12 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.11e}")
}

pub struct OutDir(PathBuf);

impl OutDir {
    pub fn create(path: &Path) -> Result<Self> {
        fs::create_dir_all(path).with_context(|| format!("creating output directory {}", path.display()))?;
        Ok(OutDir(path.to_path_buf()))
    }

    pub fn json(&self, name: &str, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        let path = self.0.join(name);
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn csv(&self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let path = self.0.join(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Serialize)]
pub struct TopologySummary {
    pub open_switches: Vec<(u32, u32)>,
    pub closed_switches: usize,
    pub closed_lines: usize,
    pub radial: bool,
    pub connected: bool,
}

impl TopologySummary {
    pub fn new(model: &NetworkModel, topo: &Topology) -> Self {
        TopologySummary {
            open_switches: topo.open_pairs(model),
            closed_switches: topo.closed_switches(model),
            closed_lines: topo.closed.len(),
            radial: topo.radial,
            connected: topo.connected,
        }
    }
}

pub const CURRENT_HEADER: [&str; 6] = ["lambda_v", "line", "from", "to", "phase", "current_a"];

/// One row per line phase: `lambda, line, from, to, phase, |I|`.
pub fn current_rows(model: &NetworkModel, lambda: f64, magnitudes: &[Vec<f64>]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (k, mags) in magnitudes.iter().enumerate() {
        let line = &model.lines()[k];
        for (phase, m) in line.phases.iter().zip(mags) {
            rows.push(vec![
                num(lambda),
                k.to_string(),
                line.from.0.to_string(),
                line.to.0.to_string(),
                phase.label().to_string(),
                num(*m),
            ]);
        }
    }
    rows
}

/// Per-phase current magnitudes in amperes.
pub fn magnitudes(model: &NetworkModel, xi: &[DVector<f64>]) -> Vec<Vec<f64>> {
    let i_base = model.bases.i_base();
    xi.iter()
        .map(|x| {
            let k = x.len() / 2;
            (0..k).map(|p| x[p].hypot(x[k + p]) * i_base).collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Deviation {
    pub delta_p_w: f64,
    pub delta_q_var: f64,
}

/// Load-model deviation of a refit solution; `None` when the voltages
/// cannot be reconstructed.
pub fn deviation(model: &NetworkModel, topo: &Topology, sol: &PrimalDualSolution) -> Option<Deviation> {
    load_deviation(model, &topo.mask(model), &sol.xi, &sol.sigma_g)
        .ok()
        .map(|d| Deviation {
            delta_p_w: d.delta_p_w,
            delta_q_var: d.delta_q_var,
        })
}

pub const DEVIATION_HEADER: [&str; 3] = ["lambda_v", "delta_p_w", "delta_q_var"];

pub fn deviation_row(lambda: f64, d: &Deviation) -> Vec<String> {
    vec![num(lambda), num(d.delta_p_w), num(d.delta_q_var)]
}

pub const LOSS_HEADER: [&str; 2] = ["lambda_v", "refit_loss_w"];
