use std::collections::VecDeque;

use super::{IncidenceMap, LineId, NetworkModel, NodeId, Phase};

/// Which lines are in service. Open switches are simply inactive lines; line
/// ids stay stable across masks.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LineMask(Vec<bool>);

impl LineMask {
    pub fn all(model: &NetworkModel) -> Self {
        LineMask(vec![true; model.lines().len()])
    }

    pub fn with_open(model: &NetworkModel, open: &[LineId]) -> Self {
        let mut mask = Self::all(model);
        for id in open {
            mask.0[id.0] = false;
        }
        mask
    }

    /// Base configuration: every `normally_open` line out of service.
    pub fn base_configuration(model: &NetworkModel) -> Self {
        LineMask(model.lines().iter().map(|l| !l.normally_open).collect())
    }

    pub fn is_active(&self, id: LineId) -> bool {
        self.0[id.0]
    }

    pub fn set(&mut self, id: LineId, active: bool) {
        self.0[id.0] = active;
    }

    pub fn active_count(&self) -> usize {
        self.0.iter().filter(|a| **a).count()
    }

    pub fn active(&self) -> impl Iterator<Item = LineId> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(|(i, _)| LineId(i))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn adjacency(model: &NetworkModel, mask: &LineMask) -> Vec<Vec<(usize, LineId)>> {
    let mut adj = vec![Vec::new(); model.nodes().len()];
    for id in mask.active() {
        let (m, n) = model.endpoints(id);
        adj[m].push((n, id));
        adj[n].push((m, id));
    }
    adj
}

/// A node is reached when each of its phases is joined to the substation by
/// in-service lines carrying that phase.
fn reachable(model: &NetworkModel, mask: &LineMask) -> Vec<bool> {
    let adj = adjacency(model, mask);
    let n = model.nodes().len();
    let mut reached = vec![true; n];
    for phase in Phase::ALL {
        let mut seen = vec![false; n];
        let root = model.substation();
        seen[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &(v, id) in &adj[u] {
                if !seen[v] && model.line(id).phases.contains(phase) {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        for (i, node) in model.nodes().iter().enumerate() {
            if node.phases.contains(phase) && !seen[i] {
                reached[i] = false;
            }
        }
    }
    reached
}

/// Nodes with a phase that has no path to the substation over in-service
/// lines carrying it.
pub fn unreachable_nodes(model: &NetworkModel, mask: &LineMask) -> Vec<NodeId> {
    reachable(model, mask)
        .iter()
        .enumerate()
        .filter(|(_, r)| !**r)
        .map(|(i, _)| model.node(i).id)
        .collect()
}

pub fn connected_from_substation(model: &NetworkModel, mask: &LineMask) -> bool {
    reachable(model, mask).iter().all(|r| *r)
}

/// Connected and exactly `|N| - 1` lines in service.
pub fn is_radial(model: &NetworkModel, mask: &LineMask) -> bool {
    mask.active_count() + 1 == model.nodes().len() && connected_from_substation(model, mask)
}

/// Fundamental cycle basis: breadth-first spanning tree from the substation
/// plus one cycle per chord. Each cycle lists the chord first, then the tree
/// lines joining its end points.
pub fn enumerate_cycles(model: &NetworkModel) -> Vec<Vec<LineId>> {
    let mask = LineMask::all(model);
    let adj = adjacency(model, &mask);
    let n = model.nodes().len();
    let mut parent: Vec<Option<(usize, LineId)>> = vec![None; n];
    let mut depth = vec![usize::MAX; n];
    let mut in_tree = vec![false; model.lines().len()];
    let root = model.substation();
    depth[root] = 0;
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for &(v, id) in &adj[u] {
            if depth[v] == usize::MAX {
                depth[v] = depth[u] + 1;
                parent[v] = Some((u, id));
                in_tree[id.0] = true;
                queue.push_back(v);
            }
        }
    }

    let mut cycles = Vec::new();
    for id in model.line_ids() {
        if in_tree[id.0] {
            continue;
        }
        let (mut a, mut b) = model.endpoints(id);
        let mut left = Vec::new();
        let mut right = Vec::new();
        while a != b {
            if depth[a] >= depth[b] {
                let (p, l) = parent[a].expect("non-root has a parent");
                left.push(l);
                a = p;
            } else {
                let (p, l) = parent[b].expect("non-root has a parent");
                right.push(l);
                b = p;
            }
        }
        let mut cycle = vec![id];
        cycle.extend(left);
        cycle.extend(right.into_iter().rev());
        cycles.push(cycle);
    }
    cycles
}

/// Undirected path from a voltage reference to a target over lines without
/// switches. `steps` run from the reference towards the target; the sign is
/// `+1` when the step traverses its line against the line direction and `-1`
/// otherwise, so that `nu_target = nu_ref + sum(alpha * Psi * xi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchFreePath {
    pub reference: usize,
    pub steps: Vec<(LineId, f64)>,
}

/// Finds the reference for voltage reconstruction at `target`: the substation
/// when reachable through switch-free lines, otherwise the nearest node with a
/// nonzero load. Only lines carrying every phase of the target are used.
pub fn switch_free_path(
    model: &NetworkModel,
    incidence: &IncidenceMap,
    target: usize,
) -> Option<SwitchFreePath> {
    let need = model.node(target).phases;
    let n = model.nodes().len();
    let mut parent: Vec<Option<(usize, LineId)>> = vec![None; n];
    let mut dist = vec![usize::MAX; n];
    dist[target] = 0;
    let mut order = vec![target];
    let mut queue = VecDeque::from([target]);
    while let Some(u) = queue.pop_front() {
        let lines = incidence.incoming(u).iter().chain(incidence.outgoing(u));
        let mut next: Vec<(usize, LineId)> = lines
            .filter(|id| {
                let l = model.line(**id);
                !l.switchable && need.is_subset_of(l.phases)
            })
            .map(|id| {
                let (a, b) = model.endpoints(*id);
                (if a == u { b } else { a }, *id)
            })
            .collect();
        next.sort_by_key(|(v, id)| (*v, *id));
        for (v, id) in next {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                parent[v] = Some((u, id));
                order.push(v);
                queue.push_back(v);
            }
        }
    }

    let reference = if dist[model.substation()] != usize::MAX {
        model.substation()
    } else {
        // BFS order is nondecreasing in distance; ties go to the lower index
        // through the stable sort below.
        let mut loaded: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&v| model.node(v).has_load())
            .collect();
        loaded.sort_by_key(|&v| (dist[v], v));
        *loaded.first()?
    };

    // Walk parents from the reference back to the target; that walk already
    // runs reference -> target.
    let mut steps = Vec::new();
    let mut u = reference;
    while u != target {
        let (p, id) = parent[u].expect("reached nodes have parents");
        let line = model.line(id);
        let (from, _) = model.endpoints(id);
        let forward = from == u && model.node(p).id == line.to;
        steps.push((id, if forward { -1.0 } else { 1.0 }));
        u = p;
    }
    Some(SwitchFreePath { reference, steps })
}

/// Spanning tree of the in-service lines with minimum total resistance
/// (mean diagonal of `Re{Z}`), Kruskal with ties broken by line id.
pub fn min_resistance_spanning_tree(model: &NetworkModel, mask: &LineMask) -> Vec<LineId> {
    let mut edges: Vec<(f64, LineId)> = mask
        .active()
        .map(|id| {
            let l = model.line(id);
            let r = l.resistance();
            (r.trace() / l.phases.len() as f64, id)
        })
        .collect();
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut uf: Vec<usize> = (0..model.nodes().len()).collect();
    fn find(uf: &mut [usize], mut x: usize) -> usize {
        while uf[x] != x {
            uf[x] = uf[uf[x]];
            x = uf[x];
        }
        x
    }
    let mut tree = Vec::new();
    for (_, id) in edges {
        let (a, b) = model.endpoints(id);
        let (ra, rb) = (find(&mut uf, a), find(&mut uf, b));
        if ra != rb {
            uf[ra] = rb;
            tree.push(id);
        }
    }
    tree.sort();
    tree
}
