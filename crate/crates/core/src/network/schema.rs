//! JSON feeder format.
//!
//! Powers are given in kW/kvar per phase, impedances in ohms (explicit
//! `z_real`/`z_imag` matrices) or in ohms per mile through a `configs` table
//! plus `length_ft`. Loads are wye-connected; `"connection": "delta"` is
//! rejected.

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{
    Bases, CMatrix, DgSpec, Line, LoadSpec, NetworkModel, Node, NodeId, Phase, PhaseDg, PhaseLoad,
    PhaseSet, TransformerSpec,
};
use crate::error::ModelError;

const FEET_PER_MILE: f64 = 5280.0;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    v_nominal_kv: f64,
    s_base_kva: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    configs: BTreeMap<String, ConfigEntry>,
    nodes: Vec<NodeEntry>,
    lines: Vec<LineEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigEntry {
    /// Phases the matrix rows refer to; defaults to a, b, c.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phases: Option<PhaseSet>,
    z_real: Vec<Vec<f64>>,
    z_imag: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeEntry {
    id: u32,
    phases: PhaseSet,
    #[serde(default, skip_serializing_if = "is_false")]
    substation: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    load: Option<BTreeMap<Phase, LoadEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dg: Option<BTreeMap<Phase, DgEntry>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadEntry {
    p_kw: f64,
    q_kvar: f64,
    #[serde(default)]
    kappa: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    connection: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    transformer: Option<TransformerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformerEntry {
    core_loss_kw: f64,
    r_ohm: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DgEntry {
    #[serde(default)]
    p_min_kw: f64,
    p_max_kw: f64,
    #[serde(default)]
    q_min_kvar: f64,
    #[serde(default)]
    q_max_kvar: f64,
    #[serde(default)]
    cost: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LineEntry {
    from: u32,
    to: u32,
    phases: PhaseSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    z_real: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    z_imag: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    length_ft: Option<f64>,
    #[serde(default, skip_serializing_if = "is_false")]
    switchable: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    normally_open: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    i_max_amp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda_weight: Option<f64>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

pub fn parse_network(path: impl AsRef<Path>) -> Result<NetworkModel, ModelError> {
    let text = std::fs::read_to_string(path)?;
    parse_network_str(&text)
}

pub fn parse_network_str(text: &str) -> Result<NetworkModel, ModelError> {
    let file: NetworkFile = serde_json::from_str(text).map_err(|e| ModelError::Parse {
        field: field_from_serde(&e),
        line: e.line(),
        message: e.to_string(),
    })?;
    from_file(file)
}

fn field_from_serde(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    // serde reports e.g. "missing field `p_max_kw` at line 3 column 5"
    msg.split('`').nth(1).unwrap_or("<document>").to_string()
}

fn complex_matrix(
    field: &str,
    re: &[Vec<f64>],
    im: &[Vec<f64>],
    k: usize,
) -> Result<CMatrix, ModelError> {
    let ok = |m: &[Vec<f64>]| m.len() == k && m.iter().all(|r| r.len() == k);
    if !ok(re) || !ok(im) {
        return Err(ModelError::parse(
            field,
            format!("impedance matrices must be {k}x{k}"),
        ));
    }
    Ok(CMatrix::from_fn(k, k, |i, j| Complex64::new(re[i][j], im[i][j])))
}

fn from_file(file: NetworkFile) -> Result<NetworkModel, ModelError> {
    let bases = Bases {
        v_nominal: file.v_nominal_kv * 1e3,
        s_base: file.s_base_kva * 1e3,
    };

    let mut nodes = Vec::with_capacity(file.nodes.len());
    for (i, n) in file.nodes.into_iter().enumerate() {
        let load = match n.load {
            None => None,
            Some(map) => {
                let mut phases = Vec::new();
                for (phase, l) in map {
                    if let Some(c) = &l.connection {
                        if c != "wye" {
                            return Err(ModelError::parse(
                                format!("nodes[{i}].load.{phase}.connection"),
                                format!("only wye-connected loads are supported, got `{c}`"),
                            ));
                        }
                    }
                    phases.push(PhaseLoad {
                        phase,
                        s: Complex64::new(l.p_kw * 1e3, l.q_kvar * 1e3),
                        kappa: l.kappa,
                        transformer: l.transformer.map(|t| TransformerSpec {
                            core_loss_w: t.core_loss_kw * 1e3,
                            r_ohm: t.r_ohm,
                        }),
                    });
                }
                Some(LoadSpec { phases })
            }
        };
        let dg = n.dg.map(|map| DgSpec {
            phases: map
                .into_iter()
                .map(|(phase, d)| PhaseDg {
                    phase,
                    p_min_w: d.p_min_kw * 1e3,
                    p_max_w: d.p_max_kw * 1e3,
                    q_min_var: d.q_min_kvar * 1e3,
                    q_max_var: d.q_max_kvar * 1e3,
                    cost: d.cost,
                })
                .collect(),
        });
        nodes.push(Node {
            id: NodeId(n.id),
            phases: n.phases,
            is_substation: n.substation,
            load,
            dg,
        });
    }

    let mut lines = Vec::with_capacity(file.lines.len());
    for (i, l) in file.lines.into_iter().enumerate() {
        let field = format!("lines[{i}] ({},{})", l.from, l.to);
        let k = l.phases.len();
        let impedance_ohm = match (&l.z_real, &l.z_imag, &l.config_id) {
            (Some(re), Some(im), None) => complex_matrix(&field, re, im, k)?,
            (None, None, Some(cfg)) => {
                let entry = file.configs.get(cfg).ok_or_else(|| {
                    ModelError::parse(format!("{field}.config_id"), format!("unknown config `{cfg}`"))
                })?;
                let length = l.length_ft.ok_or_else(|| {
                    ModelError::parse(format!("{field}.length_ft"), "required with config_id")
                })?;
                let cfg_phases = entry.phases.unwrap_or(PhaseSet::ABC);
                let full = complex_matrix(
                    &format!("configs.{cfg}"),
                    &entry.z_real,
                    &entry.z_imag,
                    cfg_phases.len(),
                )?;
                if !l.phases.is_subset_of(cfg_phases) {
                    return Err(ModelError::parse(
                        format!("{field}.phases"),
                        format!("config `{cfg}` does not cover the line phases"),
                    ));
                }
                let idx: Vec<usize> = l
                    .phases
                    .iter()
                    .map(|p| cfg_phases.position(p).expect("subset"))
                    .collect();
                let scale = length / FEET_PER_MILE;
                CMatrix::from_fn(k, k, |a, b| full[(idx[a], idx[b])] * scale)
            }
            _ => {
                return Err(ModelError::parse(
                    field,
                    "give either z_real and z_imag, or config_id with length_ft",
                ))
            }
        };
        lines.push(Line {
            from: NodeId(l.from),
            to: NodeId(l.to),
            phases: l.phases,
            impedance: impedance_ohm.clone(),
            impedance_ohm,
            switchable: l.switchable,
            normally_open: l.normally_open,
            i_max_amp: l.i_max_amp,
            lambda_weight: l.lambda_weight,
        });
    }

    NetworkModel::new(file.name, bases, nodes, lines)
}

/// Writes the model back to the JSON format with explicit ohm matrices.
pub fn serialize_network(model: &NetworkModel) -> String {
    let nodes = model
        .nodes()
        .iter()
        .map(|n| NodeEntry {
            id: n.id.0,
            phases: n.phases,
            substation: n.is_substation,
            load: n.load.as_ref().map(|l| {
                l.phases
                    .iter()
                    .map(|p| {
                        (
                            p.phase,
                            LoadEntry {
                                p_kw: p.s.re / 1e3,
                                q_kvar: p.s.im / 1e3,
                                kappa: p.kappa,
                                connection: None,
                                transformer: p.transformer.as_ref().map(|t| TransformerEntry {
                                    core_loss_kw: t.core_loss_w / 1e3,
                                    r_ohm: t.r_ohm,
                                }),
                            },
                        )
                    })
                    .collect()
            }),
            dg: n.dg.as_ref().map(|d| {
                d.phases
                    .iter()
                    .map(|p| {
                        (
                            p.phase,
                            DgEntry {
                                p_min_kw: p.p_min_w / 1e3,
                                p_max_kw: p.p_max_w / 1e3,
                                q_min_kvar: p.q_min_var / 1e3,
                                q_max_kvar: p.q_max_var / 1e3,
                                cost: p.cost,
                            },
                        )
                    })
                    .collect()
            }),
        })
        .collect();
    let lines = model
        .lines()
        .iter()
        .map(|l| {
            let k = l.phases.len();
            let rows = |f: fn(&Complex64) -> f64| -> Vec<Vec<f64>> {
                (0..k)
                    .map(|i| (0..k).map(|j| f(&l.impedance_ohm[(i, j)])).collect())
                    .collect()
            };
            LineEntry {
                from: l.from.0,
                to: l.to.0,
                phases: l.phases,
                z_real: Some(rows(|z| z.re)),
                z_imag: Some(rows(|z| z.im)),
                config_id: None,
                length_ft: None,
                switchable: l.switchable,
                normally_open: l.normally_open,
                i_max_amp: l.i_max_amp,
                lambda_weight: l.lambda_weight,
            }
        })
        .collect();
    let file = NetworkFile {
        name: model.name.clone(),
        description: None,
        v_nominal_kv: model.bases.v_nominal / 1e3,
        s_base_kva: model.bases.s_base / 1e3,
        configs: BTreeMap::new(),
        nodes,
        lines,
    };
    serde_json::to_string_pretty(&file).expect("network serializes")
}
