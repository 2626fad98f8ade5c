use nalgebra::DMatrix;

use super::{kron_i2, LineId, NetworkModel};

/// Per-node incoming/outgoing line lists and the phase-selection maps that
/// place line-phase vectors into node-phase vectors for current balance.
#[derive(Debug, Clone)]
pub struct IncidenceMap {
    incoming: Vec<Vec<LineId>>,
    outgoing: Vec<Vec<LineId>>,
    /// For every line: row of each line phase inside the `from` node and
    /// inside the `to` node.
    rows_from: Vec<Vec<usize>>,
    rows_to: Vec<Vec<usize>>,
}

pub fn build_incidence(model: &NetworkModel) -> IncidenceMap {
    let n = model.nodes().len();
    let mut incoming = vec![Vec::new(); n];
    let mut outgoing = vec![Vec::new(); n];
    let mut rows_from = Vec::with_capacity(model.lines().len());
    let mut rows_to = Vec::with_capacity(model.lines().len());
    for id in model.line_ids() {
        let (m, k) = model.endpoints(id);
        outgoing[m].push(id);
        incoming[k].push(id);
        let line = model.line(id);
        let pm = model.node(m).phases;
        let pk = model.node(k).phases;
        rows_from.push(
            line.phases
                .iter()
                .map(|p| pm.position(p).expect("validated"))
                .collect(),
        );
        rows_to.push(
            line.phases
                .iter()
                .map(|p| pk.position(p).expect("validated"))
                .collect(),
        );
    }
    IncidenceMap {
        incoming,
        outgoing,
        rows_from,
        rows_to,
    }
}

impl IncidenceMap {
    /// Lines `(j, n)` ending at node `n`.
    pub fn incoming(&self, node: usize) -> &[LineId] {
        &self.incoming[node]
    }

    /// Lines `(n, k)` leaving node `n`.
    pub fn outgoing(&self, node: usize) -> &[LineId] {
        &self.outgoing[node]
    }

    /// Row positions of the line's phases within node `node`, which must be
    /// one of the line's end points.
    pub fn rows(&self, model: &NetworkModel, node: usize, line: LineId) -> &[usize] {
        let (m, _) = model.endpoints(line);
        if m == node {
            &self.rows_from[line.0]
        } else {
            &self.rows_to[line.0]
        }
    }

    /// `A_mn^(n)`: `|P_n| x |P_mn|` 0/1 matrix.
    pub fn selection(&self, model: &NetworkModel, node: usize, line: LineId) -> DMatrix<f64> {
        let rows = self.rows(model, node, line);
        let mut a = DMatrix::zeros(model.node(node).phases.len(), rows.len());
        for (col, &row) in rows.iter().enumerate() {
            a[(row, col)] = 1.0;
        }
        a
    }

    /// `I_2 (x) A_mn^(n)` acting on stacked `[Re; Im]` vectors.
    pub fn stacked_selection(
        &self,
        model: &NetworkModel,
        node: usize,
        line: LineId,
    ) -> DMatrix<f64> {
        kron_i2(&self.selection(model, node, line))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::parse_network_str;

    const TOY: &str = r#"{
        "v_nominal_kv": 4.8, "s_base_kva": 1000,
        "nodes": [
            {"id": 1, "phases": ["a","b","c"], "substation": true},
            {"id": 2, "phases": ["a","b","c"]},
            {"id": 3, "phases": ["b"], "load": {"b": {"p_kw": 10, "q_kvar": 2}}}
        ],
        "lines": [
            {"from": 1, "to": 2, "phases": ["a","b","c"],
             "z_real": [[1,0.1,0.1],[0.1,1,0.1],[0.1,0.1,1]],
             "z_imag": [[0.5,0,0],[0,0.5,0],[0,0,0.5]]},
            {"from": 2, "to": 3, "phases": ["b"], "z_real": [[1]], "z_imag": [[0.3]]}
        ]
    }"#;

    #[test]
    fn full_phase_line_selects_identity() {
        let model = parse_network_str(TOY).unwrap();
        let inc = build_incidence(&model);
        let a = inc.selection(&model, 1, LineId(0));
        assert_eq!(a, DMatrix::identity(3, 3));
    }

    #[test]
    fn single_phase_line_selects_its_row() {
        let model = parse_network_str(TOY).unwrap();
        let inc = build_incidence(&model);
        let a = inc.selection(&model, 1, LineId(1));
        assert_eq!(a.shape(), (3, 1));
        assert_eq!(a.column(0).as_slice(), &[0.0, 1.0, 0.0]);
        // at the single-phase end the map is the 1x1 identity
        assert_eq!(inc.selection(&model, 2, LineId(1)), DMatrix::identity(1, 1));
        assert_eq!(inc.incoming(2), &[LineId(1)]);
        assert_eq!(inc.outgoing(1), &[LineId(1)]);
    }
}
