//! Periodic square lattices and their recursive block decompositions.
//!
//! A [`SiteModel`] supplies per-site and per-edge log factors. A
//! [`LatticeTree`] turns it into a [`TreeModel`] whose nodes are rectangular
//! blocks of sites: leaves are single sites drawn from the site initializer,
//! and every internal node reintroduces the edges that join its children.

use std::fmt::Debug;

use rand::Rng;

use crate::annealing::MarkovKernelSpec;
use crate::error::{DcError, Result};
use crate::particle::DcRng;
use crate::tree::{KernelStats, NodeId, Topology, TreeModel};

/// Rectangular grid with periodic nearest-neighbour edges.
///
/// Each site `k` owns the edge to its right and the edge below it, so a grid
/// with both sides at least 2 has exactly `2·rows·cols` edges. A side of
/// length 2 produces doubled edges; a side of length 1 produces none.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
}

impl Grid {
    pub fn square(m: usize) -> Self {
        Self { rows: m, cols: m }
    }

    pub fn sites(&self) -> usize {
        self.rows * self.cols
    }

    pub fn site(&self, r: usize, c: usize) -> usize {
        r * self.cols + c
    }

    /// Edge `2k` joins `k` to its right neighbour, edge `2k+1` to the site below.
    pub fn edge(&self, id: usize) -> Option<(usize, usize)> {
        let k = id / 2;
        let (r, c) = (k / self.cols, k % self.cols);
        if id % 2 == 0 {
            (self.cols >= 2).then(|| (k, self.site(r, (c + 1) % self.cols)))
        } else {
            (self.rows >= 2).then(|| (k, self.site((r + 1) % self.rows, c)))
        }
    }

    /// All edges as site pairs.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..2 * self.sites()).filter_map(|e| self.edge(e)).collect()
    }
}

/// Per-site and per-edge factors of a pairwise lattice model.
pub trait SiteModel: Send + Sync {
    type Value: Copy + Send + Sync + PartialEq + Debug + 'static;

    fn grid(&self) -> Grid;
    /// Log unary factor of `site` at `x`.
    fn unary(&self, site: usize, x: Self::Value) -> f64;
    /// Log edge factor.
    fn pair(&self, a: Self::Value, b: Self::Value) -> f64;
    /// Draw from the leaf initializer of `site`.
    fn sample_initial(&self, site: usize, rng: &mut DcRng) -> Self::Value;
    /// Log density of the leaf initializer.
    fn log_initial(&self, site: usize, x: Self::Value) -> f64;
    /// Symmetric single-site move.
    fn propose_move(&self, site: usize, x: Self::Value, rng: &mut DcRng) -> Self::Value;
    fn kernel(&self) -> MarkovKernelSpec;
}

/// How a lattice is split into blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LatticeScheme {
    /// Halve one axis per level, alternating columns then rows.
    #[default]
    Bisection,
    /// Halve both axes at once, giving up to four children.
    Quadrisection,
    /// Quadrisection with two edge-free dummy nodes pairing the quadrants,
    /// so every merge is binary.
    BinaryWithDummies,
    /// A single root whose children are all the sites.
    Flat,
}

impl std::str::FromStr for LatticeScheme {
    type Err = DcError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bisection" => Ok(Self::Bisection),
            "quadrisection" => Ok(Self::Quadrisection),
            "binary-with-dummies" => Ok(Self::BinaryWithDummies),
            "flat" => Ok(Self::Flat),
            other => Err(DcError::InvalidConfig(format!("unknown lattice scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Block {
    r0: usize,
    c0: usize,
    h: usize,
    w: usize,
}

impl Block {
    fn split_cols(self) -> [Block; 2] {
        let left = self.w / 2;
        [
            Block { w: left, ..self },
            Block { c0: self.c0 + left, w: self.w - left, ..self },
        ]
    }

    fn split_rows(self) -> [Block; 2] {
        let top = self.h / 2;
        [
            Block { h: top, ..self },
            Block { r0: self.r0 + top, h: self.h - top, ..self },
        ]
    }
}

/// One node of a lattice decomposition.
#[derive(Debug, Clone)]
pub struct LatticeNode {
    /// Global site ids, in the order they appear in the node state.
    pub sites: Vec<usize>,
    /// Start of each child's segment in the node state.
    pub child_offsets: Vec<usize>,
    /// Global ids of every edge whose factor this node's target includes.
    pub edge_ids: Vec<usize>,
    /// Edges first included at this node, as local position pairs.
    pub new_edges: Vec<(u32, u32)>,
    /// The same edges as `(child, position, child, position)`.
    pub new_edges_by_child: Vec<(u32, u32, u32, u32)>,
    /// Edges of this node's target, as local position pairs.
    pub edges: Vec<(u32, u32)>,
    adj_start: Vec<u32>,
    adj: Vec<(u32, bool)>,
    pub dummy: bool,
}

impl LatticeNode {
    /// Neighbours of local position `i` along this node's edges, flagged
    /// when the edge is new at this node.
    pub fn neighbours(&self, i: usize) -> &[(u32, bool)] {
        &self.adj[self.adj_start[i] as usize..self.adj_start[i + 1] as usize]
    }
}

/// A lattice model arranged as a tree of blocks.
#[derive(Debug, Clone)]
pub struct LatticeTree<K: SiteModel> {
    pub model: K,
    pub scheme: LatticeScheme,
    topology: Topology,
    nodes: Vec<LatticeNode>,
}

struct Proto {
    block: Block,
    children: Vec<usize>,
    dummy: bool,
}

fn build_protos(grid: Grid, scheme: LatticeScheme) -> (Vec<Proto>, usize) {
    let root_block = Block { r0: 0, c0: 0, h: grid.rows, w: grid.cols };
    let mut protos = vec![Proto { block: root_block, children: vec![], dummy: false }];
    if scheme == LatticeScheme::Flat {
        if grid.sites() > 1 {
            for r in 0..grid.rows {
                for c in 0..grid.cols {
                    protos.push(Proto { block: Block { r0: r, c0: c, h: 1, w: 1 }, children: vec![], dummy: false });
                    let id = protos.len() - 1;
                    protos[0].children.push(id);
                }
            }
        }
        return (protos, 0);
    }
    let mut work = vec![(0usize, 0usize)];
    while let Some((id, depth)) = work.pop() {
        let b = protos[id].block;
        if b.h * b.w == 1 {
            continue;
        }
        let parts: Vec<Block> = match scheme {
            LatticeScheme::Bisection => {
                let cols_first = depth % 2 == 0;
                if (cols_first && b.w >= 2) || b.h < 2 {
                    b.split_cols().to_vec()
                } else {
                    b.split_rows().to_vec()
                }
            }
            LatticeScheme::Quadrisection | LatticeScheme::BinaryWithDummies => match (b.h >= 2, b.w >= 2) {
                (true, true) => {
                    let [top, bottom] = b.split_rows();
                    let [tl, tr] = top.split_cols();
                    let [bl, br] = bottom.split_cols();
                    vec![tl, tr, bl, br]
                }
                (false, _) => b.split_cols().to_vec(),
                (true, false) => b.split_rows().to_vec(),
            },
            LatticeScheme::Flat => unreachable!(),
        };
        if scheme == LatticeScheme::BinaryWithDummies && parts.len() == 4 {
            for pair in parts.chunks(2) {
                let hull = Block {
                    r0: pair[0].r0,
                    c0: pair[0].c0,
                    h: pair[0].h,
                    w: pair[0].w + pair[1].w,
                };
                protos.push(Proto { block: hull, children: vec![], dummy: true });
                let dummy_id = protos.len() - 1;
                protos[id].children.push(dummy_id);
                for &p in pair {
                    protos.push(Proto { block: p, children: vec![], dummy: false });
                    let cid = protos.len() - 1;
                    protos[dummy_id].children.push(cid);
                    work.push((cid, depth + 1));
                }
            }
        } else {
            for p in parts {
                protos.push(Proto { block: p, children: vec![], dummy: false });
                let cid = protos.len() - 1;
                protos[id].children.push(cid);
                work.push((cid, depth + 1));
            }
        }
    }
    (protos, 0)
}

impl<K: SiteModel> LatticeTree<K> {
    /// Decomposes a square lattice whose side is a power of two.
    pub fn new(model: K, scheme: LatticeScheme) -> Result<Self> {
        let g = model.grid();
        if g.rows != g.cols || !g.rows.is_power_of_two() {
            return Err(DcError::NotPowerOfTwo(if g.rows.is_power_of_two() { g.cols } else { g.rows }));
        }
        Self::new_general(model, scheme)
    }

    /// Decomposes any rectangular lattice, splitting odd sides into floor
    /// and ceiling halves.
    pub fn new_general(model: K, scheme: LatticeScheme) -> Result<Self> {
        let grid = model.grid();
        if grid.sites() == 0 {
            return Err(DcError::DimensionMismatch { expected: 1, found: 0 });
        }
        let (protos, root) = build_protos(grid, scheme);
        let children: Vec<Vec<usize>> = protos.iter().map(|p| p.children.clone()).collect();
        let topology = Topology::new(children, root)?;

        let mut nodes: Vec<Option<LatticeNode>> = vec![None; protos.len()];
        let mut position = vec![u32::MAX; grid.sites()];
        for &v in topology.post_order() {
            let p = &protos[v];
            let (sites, child_offsets) = if p.children.is_empty() {
                (vec![grid.site(p.block.r0, p.block.c0)], vec![])
            } else {
                let mut sites = Vec::new();
                let mut offsets = Vec::new();
                for &c in &p.children {
                    offsets.push(sites.len());
                    sites.extend_from_slice(&nodes[c].as_ref().expect("child built").sites);
                }
                (sites, offsets)
            };
            for (i, &s) in sites.iter().enumerate() {
                position[s] = i as u32;
            }
            let mut child_edges: Vec<usize> = p
                .children
                .iter()
                .flat_map(|&c| nodes[c].as_ref().expect("child built").edge_ids.iter().copied())
                .collect();
            child_edges.sort_unstable();
            let mut new_ids = Vec::new();
            if !p.dummy && !p.children.is_empty() {
                for &s in &sites {
                    for e in [2 * s, 2 * s + 1] {
                        if let Some((_, b)) = grid.edge(e) {
                            let inside = position[b] != u32::MAX;
                            // Edges inside an edge-free dummy child are picked up here too.
                            if inside && child_edges.binary_search(&e).is_err() {
                                new_ids.push(e);
                            }
                        }
                    }
                }
            }
            let mut edge_ids = child_edges;
            edge_ids.extend_from_slice(&new_ids);
            edge_ids.sort_unstable();

            let local = |e: usize| {
                let (a, b) = grid.edge(e).expect("edge exists");
                (position[a], position[b])
            };
            let new_edges: Vec<(u32, u32)> = new_ids.iter().map(|&e| local(e)).collect();
            let edges: Vec<(u32, u32)> = edge_ids.iter().map(|&e| local(e)).collect();
            let split = |pos: u32| -> (u32, u32) {
                let ci = child_offsets.partition_point(|&o| o <= pos as usize) - 1;
                (ci as u32, pos - child_offsets[ci] as u32)
            };
            let new_edges_by_child = new_edges
                .iter()
                .map(|&(a, b)| {
                    let (ca, ia) = split(a);
                    let (cb, ib) = split(b);
                    (ca, ia, cb, ib)
                })
                .collect();

            let mut sorted_new = new_ids.clone();
            sorted_new.sort_unstable();
            let mut lists: Vec<Vec<(u32, bool)>> = vec![Vec::new(); sites.len()];
            for (&e, &(a, b)) in edge_ids.iter().zip(&edges) {
                let is_new = sorted_new.binary_search(&e).is_ok();
                lists[a as usize].push((b, is_new));
                lists[b as usize].push((a, is_new));
            }
            let mut adj_start = Vec::with_capacity(sites.len() + 1);
            let mut adj = Vec::new();
            for l in lists {
                adj_start.push(adj.len() as u32);
                adj.extend(l);
            }
            adj_start.push(adj.len() as u32);

            for &s in &sites {
                position[s] = u32::MAX;
            }
            nodes[v] = Some(LatticeNode {
                sites,
                child_offsets,
                edge_ids,
                new_edges,
                new_edges_by_child,
                edges,
                adj_start,
                adj,
                dummy: p.dummy,
            });
        }
        let nodes = nodes.into_iter().map(|n| n.expect("every node built")).collect();
        Ok(Self { model, scheme, topology, nodes })
    }

    /// One Metropolis–Hastings update of local position `i` of a state of
    /// `node`, reversible with respect to the bridge at exponent `alpha`.
    /// Returns whether the move was accepted.
    pub fn site_update(&self, node: NodeId, alpha: f64, x: &mut [K::Value], i: usize, rng: &mut DcRng) -> bool {
        let n = &self.nodes[node];
        let s = n.sites[i];
        let old = x[i];
        let new = self.model.propose_move(s, old, rng);
        let mut delta = self.model.unary(s, new) - self.model.unary(s, old);
        for &(j, is_new) in n.neighbours(i) {
            let xj = x[j as usize];
            let d = self.model.pair(new, xj) - self.model.pair(old, xj);
            delta += if is_new { alpha * d } else { d };
        }
        let u: f64 = rng.random();
        let accepted = delta >= 0.0 || u.ln() < delta;
        if accepted {
            x[i] = new;
        }
        accepted
    }

    pub fn node(&self, v: NodeId) -> &LatticeNode {
        &self.nodes[v]
    }

    pub fn grid(&self) -> Grid {
        self.model.grid()
    }

    /// Root state rearranged into row-major site order.
    pub fn to_grid(&self, root_state: &[K::Value]) -> Vec<K::Value> {
        let root = &self.nodes[self.topology.root()];
        let mut out = root_state.to_vec();
        for (i, &s) in root.sites.iter().enumerate() {
            out[s] = root_state[i];
        }
        out
    }

    /// Row-major configuration rearranged into root-state order.
    pub fn from_grid(&self, grid_values: &[K::Value]) -> Vec<K::Value> {
        self.nodes[self.topology.root()].sites.iter().map(|&s| grid_values[s]).collect()
    }

    /// Full-model log density of a row-major configuration.
    pub fn log_gamma_grid(&self, x: &[K::Value]) -> f64 {
        let g = self.grid();
        let unary: f64 = x.iter().enumerate().map(|(k, &v)| self.model.unary(k, v)).sum();
        let pairs: f64 = g.edges().iter().map(|&(a, b)| self.model.pair(x[a], x[b])).sum();
        unary + pairs
    }

    /// Number of edges first included at each depth, listed per node.
    pub fn new_edges_by_depth(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.topology.levels()];
        for v in 0..self.nodes.len() {
            out[self.topology.depth(v)].push(self.nodes[v].new_edges.len());
        }
        out
    }
}

impl<K: SiteModel> TreeModel for LatticeTree<K> {
    type State = Vec<K::Value>;

    fn topology(&self) -> &Topology {
        &self.topology
    }

    fn log_gamma(&self, node: NodeId, x: &Self::State) -> f64 {
        let n = &self.nodes[node];
        let unary: f64 = n.sites.iter().zip(x).map(|(&s, &v)| self.model.unary(s, v)).sum();
        let pairs: f64 = n.edges.iter().map(|&(a, b)| self.model.pair(x[a as usize], x[b as usize])).sum();
        unary + pairs
    }

    fn propose(&self, node: NodeId, children: &[&Self::State], rng: &mut DcRng) -> Result<Self::State> {
        let n = &self.nodes[node];
        if children.is_empty() {
            return Ok(vec![self.model.sample_initial(n.sites[0], rng)]);
        }
        let mut x = Vec::with_capacity(n.sites.len());
        for c in children {
            x.extend_from_slice(c);
        }
        if x.len() != n.sites.len() {
            return Err(DcError::DimensionMismatch { expected: n.sites.len(), found: x.len() });
        }
        Ok(x)
    }

    fn log_increment(&self, node: NodeId, x: &Self::State) -> f64 {
        let n = &self.nodes[node];
        if n.child_offsets.is_empty() {
            let s = n.sites[0];
            return self.model.unary(s, x[0]) - self.model.log_initial(s, x[0]);
        }
        n.new_edges.iter().map(|&(a, b)| self.model.pair(x[a as usize], x[b as usize])).sum()
    }

    fn coupling(&self, node: NodeId, children: &[&Self::State]) -> Option<f64> {
        let n = &self.nodes[node];
        Some(
            n.new_edges_by_child
                .iter()
                .map(|&(ca, ia, cb, ib)| self.model.pair(children[ca as usize][ia as usize], children[cb as usize][ib as usize]))
                .sum(),
        )
    }

    fn mcmc_sweep(&self, node: NodeId, alpha: f64, x: &mut Self::State, rng: &mut DcRng) -> Result<KernelStats> {
        let mut stats = KernelStats::default();
        for i in 0..x.len() {
            stats.proposed += 1;
            stats.accepted += u64::from(self.site_update(node, alpha, x, i, rng));
        }
        Ok(stats)
    }

    fn incremental_dim(&self, node: NodeId) -> usize {
        usize::from(self.nodes[node].child_offsets.is_empty())
    }

    fn state_dim(&self, _node: NodeId, x: &Self::State) -> usize {
        x.len()
    }

    fn site_count(&self, node: NodeId) -> usize {
        self.nodes[node].sites.len()
    }
}
