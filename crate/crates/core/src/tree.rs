//! Trees of auxiliary targets and the basic divide-and-conquer recursion.
//!
//! A [`TreeModel`] owns a [`Topology`] together with the unnormalized target,
//! proposal and (optionally) merge target and Markov kernel of every node.
//! [`dc_sir`] walks the tree bottom-up with an explicit work-list, so tree
//! depth never touches the call stack.

use crate::annealing::{self, TemperingConfig};
use crate::error::{DcError, Result};
use crate::particle::{
    ess, fold_logz, resample_indices, stage, DcRng, ParticlePopulation, ResampleScheme, SeedPath,
};

pub type NodeId = usize;

/// Shape of a rooted tree with stable node ids `0..len`.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    children: Vec<Vec<NodeId>>,
    parent: Vec<Option<NodeId>>,
    depth: Vec<usize>,
    paths: Vec<Vec<u32>>,
    post_order: Vec<NodeId>,
    root: NodeId,
}

impl Topology {
    /// Builds a topology from per-node child lists.
    ///
    /// Every node must be reachable from `root` exactly once.
    pub fn new(children: Vec<Vec<NodeId>>, root: NodeId) -> Result<Self> {
        let n = children.len();
        if root >= n {
            return Err(DcError::MalformedTree { node: root, reason: "root id out of range".into() });
        }
        let mut parent = vec![None; n];
        let mut depth = vec![0usize; n];
        let mut paths: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut seen = vec![false; n];
        seen[root] = true;
        let mut stack = vec![root];
        let mut pre_order = Vec::with_capacity(n);
        while let Some(v) = stack.pop() {
            pre_order.push(v);
            for (k, &c) in children[v].iter().enumerate() {
                if c >= n {
                    return Err(DcError::MalformedTree { node: v, reason: format!("child id {c} out of range") });
                }
                if seen[c] {
                    return Err(DcError::MalformedTree { node: c, reason: "node reached twice".into() });
                }
                seen[c] = true;
                parent[c] = Some(v);
                depth[c] = depth[v] + 1;
                let mut p = paths[v].clone();
                p.push(k as u32);
                paths[c] = p;
                stack.push(c);
            }
        }
        if let Some(orphan) = seen.iter().position(|s| !s) {
            return Err(DcError::MalformedTree { node: orphan, reason: "unreachable from root".into() });
        }
        let post_order = post_order_of(&children, root);
        Ok(Self { children, parent, depth, paths, post_order, root })
    }

    /// `root = 0 -> 1 -> ... -> len-1` with node `len-1` the only leaf.
    pub fn chain(len: usize) -> Self {
        assert!(len >= 1, "chain needs at least one node");
        let children = (0..len).map(|i| if i + 1 < len { vec![i + 1] } else { vec![] }).collect();
        Self::new(children, 0).expect("chain is a valid tree")
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn children(&self, node: NodeId) -> &[NodeId] {
        &self.children[node]
    }

    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        self.parent[node]
    }

    pub fn is_leaf(&self, node: NodeId) -> bool {
        self.children[node].is_empty()
    }

    /// Distance from the root (root has depth 0).
    pub fn depth(&self, node: NodeId) -> usize {
        self.depth[node]
    }

    /// Number of levels, so a lone leaf has depth 1.
    pub fn levels(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0) + 1
    }

    /// Child-index path from the root.
    pub fn path(&self, node: NodeId) -> &[u32] {
        &self.paths[node]
    }

    /// Children before parents.
    pub fn post_order(&self) -> &[NodeId] {
        &self.post_order
    }

    pub fn nodes_at_depth(&self, d: usize) -> Vec<NodeId> {
        (0..self.len()).filter(|&v| self.depth[v] == d).collect()
    }

    /// Post-ordered node ids of the subtree rooted at `node`.
    pub fn subtree(&self, node: NodeId) -> Vec<NodeId> {
        post_order_of(&self.children, node)
    }

    pub fn leaves(&self) -> Vec<NodeId> {
        self.post_order.iter().copied().filter(|&v| self.is_leaf(v)).collect()
    }

    /// Stream address of `node` under `master_seed`.
    pub fn seed_path(&self, master_seed: u64, node: NodeId) -> SeedPath {
        SeedPath::with_path(master_seed, self.paths[node].clone())
    }
}

fn post_order_of(children: &[Vec<NodeId>], root: NodeId) -> Vec<NodeId> {
    let mut out = Vec::new();
    let mut stack = vec![(root, 0usize)];
    while let Some((v, next)) = stack.pop() {
        if next < children[v].len() {
            stack.push((v, next + 1));
            stack.push((children[v][next], 0));
        } else {
            out.push(v);
        }
    }
    out
}

/// Counts reported by one application of a Markov kernel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KernelStats {
    pub proposed: u64,
    pub accepted: u64,
}

impl std::ops::AddAssign for KernelStats {
    fn add_assign(&mut self, o: Self) {
        self.proposed += o.proposed;
        self.accepted += o.accepted;
    }
}

/// A tree of auxiliary targets.
///
/// The state of an internal node is the concatenation of its children's
/// states plus an optional incremental component drawn by [`propose`].
///
/// [`propose`]: TreeModel::propose
pub trait TreeModel: Sync {
    type State: Clone + Send + Sync;

    fn topology(&self) -> &Topology;

    /// `log γ_t(x)` for the full state of `node`.
    fn log_gamma(&self, node: NodeId, state: &Self::State) -> f64;

    /// Concatenates child states and draws the incremental component.
    /// Leaves receive an empty child slice.
    fn propose(&self, node: NodeId, children: &[&Self::State], rng: &mut DcRng) -> Result<Self::State>;

    /// `log γ_t(x) - Σ_c log γ_c(x_c) - log q_t(x̃ | x_c)` for a full state.
    fn log_increment(&self, node: NodeId, state: &Self::State) -> f64;

    /// `log π̌_t - Σ_c log γ_c` on concatenated child states, where π̌_t is the
    /// node target marginalized over its incremental space. `None` when the
    /// model cannot evaluate it.
    fn coupling(&self, _node: NodeId, _children: &[&Self::State]) -> Option<f64> {
        None
    }

    /// One sweep of a kernel reversible with respect to the bridge density
    /// at exponent `alpha` (see [`annealing::bridge_log_density`]).
    fn mcmc_sweep(&self, node: NodeId, _alpha: f64, _state: &mut Self::State, _rng: &mut DcRng) -> Result<KernelStats> {
        Err(DcError::KernelUnavailable { node })
    }

    /// Dimension of the incremental component at `node`.
    fn incremental_dim(&self, node: NodeId) -> usize;

    /// Total dimension of a node state.
    fn state_dim(&self, node: NodeId, state: &Self::State) -> usize;

    /// Number of coordinates a kernel sweep updates at `node`.
    fn site_count(&self, node: NodeId) -> usize;
}

/// Shape summary returned by [`validate_tree`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeSummary {
    pub node_count: usize,
    pub depth: usize,
}

/// Checks leaf proposals and dimension bookkeeping on one sampled state per node.
pub fn validate_tree<M: TreeModel>(model: &M, seed: u64) -> Result<TreeSummary> {
    let topo = model.topology();
    let mut sampled: Vec<Option<M::State>> = vec![None; topo.len()];
    for &v in topo.post_order() {
        let kids = topo.children(v);
        if kids.is_empty() && model.incremental_dim(v) == 0 {
            return Err(DcError::MalformedTree { node: v, reason: "leaf without a proposal".into() });
        }
        let child_states: Vec<M::State> = kids
            .iter()
            .map(|&c| sampled[c].take().expect("post-order visits children first"))
            .collect();
        let refs: Vec<&M::State> = child_states.iter().collect();
        let mut rng = topo.seed_path(seed, v).stage(stage::propose()).rng();
        let s = model.propose(v, &refs, &mut rng).map_err(|e| e.at_node(v))?;
        let expected: usize =
            kids.iter().zip(&child_states).map(|(&c, cs)| model.state_dim(c, cs)).sum::<usize>() + model.incremental_dim(v);
        let found = model.state_dim(v, &s);
        if expected != found {
            return Err(DcError::MalformedTree {
                node: v,
                reason: format!("state dimension {found} != children {expected}"),
            });
        }
        if model.log_gamma(v, &s).is_nan() {
            return Err(DcError::MalformedTree { node: v, reason: "log target is NaN".into() });
        }
        sampled[v] = Some(s);
    }
    Ok(TreeSummary { node_count: topo.len(), depth: topo.levels() })
}

/// One merged draw: an index into each child population.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedTuple {
    /// Position of the chosen particle in each child population.
    pub child_indices: Vec<usize>,
    /// Log-weight the tuple carries as a draw from the merge target
    /// (zero after resampling).
    pub log_weight: f64,
    /// `-log[π̌_t / Π_c γ_c]` at this tuple (zero for the product merge).
    pub log_correction: f64,
}

/// Tuples plus the running log normalizer they inherit.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    pub tuples: Vec<MergedTuple>,
    pub log_z_hat: f64,
}

fn check_sizes<S>(child_pops: &[&ParticlePopulation<S>], n: usize) -> Result<()> {
    for p in child_pops {
        if p.len() != n {
            return Err(DcError::PopulationSizeMismatch { expected: n, found: p.len() });
        }
    }
    Ok(())
}

/// Independent resampling of every child, aligned by index.
///
/// With `ess_fraction = Some(f)` a child whose ESS is at least `f·N` is not
/// resampled; its weights travel with the tuples instead.
pub fn merge_basic<S>(
    child_pops: &[&ParticlePopulation<S>],
    scheme: ResampleScheme,
    node_seed: &SeedPath,
    ess_fraction: Option<f64>,
) -> Result<MergeOutcome> {
    let n = child_pops.first().map(|p| p.len()).ok_or(DcError::EmptyPopulation)?;
    check_sizes(child_pops, n)?;
    let mut log_z_hat = 0.0;
    let mut columns: Vec<Vec<usize>> = Vec::with_capacity(child_pops.len());
    let mut carried: Vec<Option<&[f64]>> = Vec::with_capacity(child_pops.len());
    for (c, pop) in child_pops.iter().enumerate() {
        let keep = match ess_fraction {
            Some(f) => ess(&pop.log_weights)? >= f * n as f64,
            None => false,
        };
        if keep {
            log_z_hat += pop.log_z_hat;
            columns.push((0..n).collect());
            carried.push(Some(&pop.log_weights));
        } else {
            log_z_hat += fold_logz(pop)?;
            let mut rng = node_seed.stage(stage::resample_child(c)).rng();
            columns.push(resample_indices(&pop.log_weights, n, scheme, &mut rng)?);
            carried.push(None);
        }
    }
    let tuples = (0..n)
        .map(|i| {
            let child_indices: Vec<usize> = columns.iter().map(|col| col[i]).collect();
            let log_weight = carried
                .iter()
                .zip(&child_indices)
                .map(|(w, &j)| w.map_or(0.0, |w| w[j]))
                .sum();
            MergedTuple { child_indices, log_weight, log_correction: 0.0 }
        })
        .collect();
    Ok(MergeOutcome { tuples, log_z_hat })
}

fn tuple_refs<'a, S>(child_pops: &[&'a ParticlePopulation<S>], t: &MergedTuple) -> Vec<&'a S> {
    child_pops.iter().zip(&t.child_indices).map(|(p, &i)| &p.states[i]).collect()
}

/// Draws the incremental component for every tuple without weighting.
pub fn propose_tuples<M: TreeModel>(
    model: &M,
    node: NodeId,
    child_pops: &[&ParticlePopulation<M::State>],
    tuples: &[MergedTuple],
    rng: &mut DcRng,
) -> Result<Vec<M::State>> {
    tuples
        .iter()
        .map(|t| {
            if t.child_indices.len() != child_pops.len() {
                return Err(DcError::DimensionMismatch { expected: child_pops.len(), found: t.child_indices.len() });
            }
            model.propose(node, &tuple_refs(child_pops, t), rng)
        })
        .collect()
}

/// Proposes and weights every tuple against `γ_t`.
pub fn propose_and_weight<M: TreeModel>(
    model: &M,
    node: NodeId,
    child_pops: &[&ParticlePopulation<M::State>],
    merge: &MergeOutcome,
    rng: &mut DcRng,
) -> Result<ParticlePopulation<M::State>> {
    let states = propose_tuples(model, node, child_pops, &merge.tuples, rng)?;
    let mut log_weights = Vec::with_capacity(states.len());
    for (s, t) in states.iter().zip(&merge.tuples) {
        let inc = model.log_increment(node, s);
        if inc.is_nan() || inc == f64::INFINITY {
            return Err(DcError::ProposalUnsupported { node });
        }
        log_weights.push(t.log_weight + t.log_correction + inc);
    }
    if log_weights.iter().all(|w| *w == f64::NEG_INFINITY) {
        return Err(DcError::AllWeightsZero);
    }
    ParticlePopulation::new(states, log_weights, merge.log_z_hat)
}

/// How child populations are combined at an internal node.
#[derive(Debug, Clone, PartialEq)]
pub enum MergeStrategy {
    /// Independent resampling of every child.
    Basic,
    /// Sampling from the reweighted product table.
    Mixture(AlphaStarRule),
}

/// Choice of the warm-start exponent for mixture merging.
#[derive(Debug, Clone, PartialEq)]
pub enum AlphaStarRule {
    Fixed(f64),
    /// Largest exponent keeping every per-child marginal CESS above
    /// `cess_threshold·n`, evaluated on the first `subsample` particles of
    /// each child (0 means all).
    Adaptive { cess_threshold: f64, subsample: usize },
}

/// Full configuration of a divide-and-conquer run.
#[derive(Debug, Clone, PartialEq)]
pub struct DcConfig {
    pub n: usize,
    pub scheme: ResampleScheme,
    pub merge: MergeStrategy,
    pub tempering: Option<TemperingConfig>,
    /// Upper bound on `N^C` table entries for mixture merging.
    pub mixture_budget: f64,
    /// Skip resampling children whose ESS is at least this fraction of N.
    pub child_ess_fraction: Option<f64>,
}

impl DcConfig {
    /// Product merge, direct importance weighting.
    pub fn dc_sir(n: usize) -> Self {
        Self {
            n,
            scheme: ResampleScheme::default(),
            merge: MergeStrategy::Basic,
            tempering: None,
            mixture_budget: 1e7,
            child_ess_fraction: None,
        }
    }

    /// Mixture merge with the full node target, no tempering.
    pub fn dc_mix(n: usize) -> Self {
        Self { merge: MergeStrategy::Mixture(AlphaStarRule::Fixed(1.0)), ..Self::dc_sir(n) }
    }

    /// Product merge followed by adaptive tempering.
    pub fn dc_ann(n: usize) -> Self {
        Self { tempering: Some(TemperingConfig::default()), ..Self::dc_sir(n) }
    }

    /// Mixture merge with an adapted warm start, then adaptive tempering.
    pub fn dc_mix_ann(n: usize) -> Self {
        Self {
            merge: MergeStrategy::Mixture(AlphaStarRule::Adaptive { cess_threshold: 0.95, subsample: 256 }),
            tempering: Some(TemperingConfig::default()),
            ..Self::dc_sir(n)
        }
    }
}

/// What happened at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeReport {
    pub node: NodeId,
    pub depth: usize,
    pub alpha_star: Option<f64>,
    pub temper_steps: usize,
    pub kernel: KernelStats,
    /// Site updates per particle spent at this node.
    pub site_updates_per_particle: f64,
    pub log_z: f64,
}

/// Root population, its estimate of `log Z`, and per-node reports.
#[derive(Debug, Clone)]
pub struct DcOutput<S> {
    pub population: ParticlePopulation<S>,
    pub log_z: f64,
    pub reports: Vec<NodeReport>,
}

impl<S> DcOutput<S> {
    /// Kernel site updates per particle divided by `sites`.
    pub fn site_updates_per_site(&self, sites: usize) -> f64 {
        self.reports.iter().map(|r| r.site_updates_per_particle).sum::<f64>() / sites as f64
    }
}

/// Produces the population of `node` from its children's populations.
///
/// This is the unit of work shared by the serial recursion and the
/// distributed workers.
pub fn process_node<M: TreeModel>(
    model: &M,
    node: NodeId,
    child_pops: &[ParticlePopulation<M::State>],
    cfg: &DcConfig,
    master_seed: u64,
) -> Result<(ParticlePopulation<M::State>, NodeReport)> {
    let topo = model.topology();
    let seed = topo.seed_path(master_seed, node);
    let refs: Vec<&ParticlePopulation<M::State>> = child_pops.iter().collect();
    let mut report = NodeReport {
        node,
        depth: topo.depth(node),
        alpha_star: None,
        temper_steps: 0,
        kernel: KernelStats::default(),
        site_updates_per_particle: 0.0,
        log_z: 0.0,
    };
    if cfg.n == 0 {
        return Err(DcError::EmptyPopulation);
    }

    if refs.is_empty() {
        let merge = MergeOutcome {
            tuples: vec![MergedTuple { child_indices: vec![], log_weight: 0.0, log_correction: 0.0 }; cfg.n],
            log_z_hat: 0.0,
        };
        let mut rng = seed.stage(stage::propose()).rng();
        let pop = propose_and_weight(model, node, &refs, &merge, &mut rng)?;
        report.log_z = fold_logz(&pop)?;
        return Ok((pop, report));
    }

    let (merge, alpha_star) = match &cfg.merge {
        MergeStrategy::Basic => (merge_basic(&refs, cfg.scheme, &seed, cfg.child_ess_fraction)?, 0.0),
        MergeStrategy::Mixture(rule) => {
            let a = match rule {
                AlphaStarRule::Fixed(a) => *a,
                AlphaStarRule::Adaptive { cess_threshold, subsample } => {
                    annealing::adapt_alpha_star(model, node, &refs, *cess_threshold, *subsample, cfg.mixture_budget)?
                }
            };
            report.alpha_star = Some(a);
            let mix = annealing::mixture_merge(model, node, &refs, a, cfg.mixture_budget, &seed)?;
            (mix.merge, a)
        }
    };

    let mut rng = seed.stage(stage::propose()).rng();
    let pop = match &cfg.tempering {
        None => propose_and_weight(model, node, &refs, &merge, &mut rng)?,
        Some(tcfg) => {
            let states = propose_tuples(model, node, &refs, &merge.tuples, &mut rng)?;
            let log_weights = merge.tuples.iter().map(|t| t.log_weight).collect();
            let start = ParticlePopulation::new(states, log_weights, merge.log_z_hat)?;
            let (pop, trace) = annealing::run_annealing(model, node, start, alpha_star, tcfg, &seed)?;
            report.temper_steps = trace.alphas.len();
            report.kernel = trace.kernel;
            report.site_updates_per_particle =
                (trace.alphas.len() * tcfg.sweeps_per_step * model.site_count(node)) as f64;
            pop
        }
    };
    report.log_z = fold_logz(&pop)?;
    Ok((pop, report))
}

/// Runs the recursion over the whole tree.
pub fn dc_sir<M: TreeModel>(model: &M, cfg: &DcConfig, master_seed: u64) -> Result<DcOutput<M::State>> {
    let topo = model.topology();
    dc_sir_subtree(model, topo.root(), cfg, master_seed)
}

/// Runs the recursion over the subtree rooted at `top`.
pub fn dc_sir_subtree<M: TreeModel>(
    model: &M,
    top: NodeId,
    cfg: &DcConfig,
    master_seed: u64,
) -> Result<DcOutput<M::State>> {
    let topo = model.topology();
    let mut done: Vec<Option<ParticlePopulation<M::State>>> = vec![None; topo.len()];
    let mut reports = Vec::new();
    for v in topo.subtree(top) {
        let kids: Vec<ParticlePopulation<M::State>> =
            topo.children(v).iter().map(|&c| done[c].take().expect("children finish first")).collect();
        let (pop, rep) = process_node(model, v, &kids, cfg, master_seed).map_err(|e| e.at_node(v))?;
        reports.push(rep);
        done[v] = Some(pop);
    }
    let population = done[top].take().expect("top node processed");
    let log_z = fold_logz(&population)?;
    Ok(DcOutput { population, log_z, reports })
}
