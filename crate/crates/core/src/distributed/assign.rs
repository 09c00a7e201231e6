//! Static assignment of subtrees to workers.

use crate::tree::{NodeId, Topology};

/// Which worker evaluates every vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerAssignment {
    /// Shallowest depth with at least as many vertices as workers.
    pub cut_depth: usize,
    pub workers: usize,
    /// Owner of every vertex, indexed by node id.
    pub owners: Vec<usize>,
    /// Network address of every worker (empty for in-process runs).
    pub roster: Vec<String>,
}

impl WorkerAssignment {
    pub fn owner(&self, v: NodeId) -> usize {
        self.owners[v]
    }

    /// Edges whose endpoints live on different workers.
    pub fn crossing_edges(&self, topo: &Topology) -> usize {
        (0..topo.len())
            .filter(|&v| topo.parent(v).is_some_and(|p| self.owners[p] != self.owners[v]))
            .count()
    }

    /// Edges whose child end is at or above the cut depth.
    pub fn edges_above_cut(&self, topo: &Topology) -> usize {
        (0..topo.len()).filter(|&v| topo.parent(v).is_some() && topo.depth(v) <= self.cut_depth).count()
    }

    pub fn with_roster(mut self, roster: Vec<String>) -> Self {
        self.roster = roster;
        self
    }
}

/// Cuts the tree at the shallowest depth holding at least `workers`
/// vertices and deals those vertices out round-robin by id.
///
/// Descendants inherit the owner of their cut vertex. A vertex above the cut
/// is owned by the owner of its first child, so the first branch never ships
/// its population; a leaf above the cut continues the round-robin. When no
/// depth is wide enough the widest one is used and surplus workers idle.
pub fn assign_subtrees(topo: &Topology, workers: usize) -> WorkerAssignment {
    let workers = workers.max(1);
    let counts: Vec<usize> = (0..topo.levels()).map(|d| topo.nodes_at_depth(d).len()).collect();
    let cut_depth = counts.iter().position(|&c| c >= workers).unwrap_or_else(|| {
        let widest = counts.iter().copied().max().unwrap_or(1);
        counts.iter().position(|&c| c == widest).unwrap_or(0)
    });
    let mut owners = vec![usize::MAX; topo.len()];
    let mut next = 0usize;
    let mut cut: Vec<NodeId> = topo.nodes_at_depth(cut_depth);
    cut.sort_unstable();
    for v in cut {
        for u in topo.subtree(v) {
            owners[u] = next % workers;
        }
        next += 1;
    }
    for &v in topo.post_order() {
        if owners[v] != usize::MAX {
            continue;
        }
        owners[v] = match topo.children(v).first() {
            Some(&c) => owners[c],
            None => {
                next += 1;
                (next - 1) % workers
            }
        };
    }
    WorkerAssignment { cut_depth, workers, owners, roster: Vec::new() }
}
