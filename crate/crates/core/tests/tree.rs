mod common;

use dcsmc::baselines::sir::{run_sir, SequentialTarget, SirConfig};
use dcsmc::models::{IsingLattice, LatticeScheme, LatticeTree};
use dcsmc::models::lattice::Grid;
use dcsmc::particle::stage;
use dcsmc::tree::{KernelStats, Topology};
use dcsmc::{
    dc_sir, dc_sir_subtree, merge_basic, process_node, validate_tree, DcConfig, DcError, DcRng, NodeId,
    ParticlePopulation, ResampleScheme, Result, SeedPath, TreeModel,
};
use rand::Rng;
use rand_distr::StandardNormal;

use common::chi_square_p;

/// Gaussian random walk observed with unit noise. Node `len-1` is the leaf
/// and draws the first coordinate; every other node appends one coordinate
/// from the walk transition.
struct WalkChain {
    topo: Topology,
    obs: Vec<Option<f64>>,
}

fn ln_std_normal(z: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * z * z
}

impl WalkChain {
    fn new(obs: Vec<Option<f64>>) -> Self {
        Self { topo: Topology::chain(obs.len()), obs }
    }

    fn likelihood(&self, node: NodeId, x: f64) -> f64 {
        self.obs[node].map_or(0.0, |y| ln_std_normal(y - x))
    }
}

impl TreeModel for WalkChain {
    type State = Vec<f64>;

    fn topology(&self) -> &Topology {
        &self.topo
    }

    /// Coordinates are stored leaf first, so coordinate `k` belongs to node `len-1-k`.
    fn log_gamma(&self, _node: NodeId, x: &Vec<f64>) -> f64 {
        let len = self.obs.len();
        let mut total = ln_std_normal(x[0]) + self.likelihood(len - 1, x[0]);
        for k in 1..x.len() {
            total += ln_std_normal(x[k] - x[k - 1]) + self.likelihood(len - 1 - k, x[k]);
        }
        total
    }

    fn propose(&self, _node: NodeId, children: &[&Vec<f64>], rng: &mut DcRng) -> Result<Vec<f64>> {
        let z: f64 = rng.sample(StandardNormal);
        Ok(match children.first() {
            None => vec![z],
            Some(prev) => {
                let mut x = (*prev).clone();
                x.push(prev.last().unwrap() + z);
                x
            }
        })
    }

    fn log_increment(&self, node: NodeId, x: &Vec<f64>) -> f64 {
        self.likelihood(node, *x.last().unwrap())
    }

    fn incremental_dim(&self, _node: NodeId) -> usize {
        1
    }

    fn state_dim(&self, _node: NodeId, x: &Vec<f64>) -> usize {
        x.len()
    }

    fn site_count(&self, _node: NodeId) -> usize {
        1
    }
}

/// The same walk as a plain sequence of targets, written independently of
/// the tree machinery.
struct WalkSequence<'a> {
    chain: &'a WalkChain,
}

impl SequentialTarget for WalkSequence<'_> {
    type State = Vec<f64>;

    fn steps(&self) -> usize {
        self.chain.obs.len()
    }

    fn propose(&self, _step: usize, prev: Option<&Vec<f64>>, rng: &mut DcRng) -> Result<Vec<f64>> {
        let z: f64 = rng.sample(StandardNormal);
        let mut x = prev.cloned().unwrap_or_default();
        x.push(x.last().copied().unwrap_or(0.0) + z);
        Ok(x)
    }

    fn log_increment(&self, step: usize, x: &Vec<f64>) -> f64 {
        let len = self.chain.obs.len();
        self.chain.obs[len - 1 - step].map_or(0.0, |y| ln_std_normal(y - x[step]))
    }

    fn seed(&self, master_seed: u64, step: usize) -> SeedPath {
        let len = self.chain.obs.len();
        self.chain.topo.seed_path(master_seed, len - 1 - step)
    }
}

#[test]
fn chain_tree_reduces_to_sir_bit_for_bit() {
    let chain = WalkChain::new(vec![Some(0.3), None, Some(-1.2), Some(2.0), Some(0.1), None, Some(0.7)]);
    for seed in [1u64, 7, 1 << 40] {
        for scheme in [ResampleScheme::Systematic, ResampleScheme::Multinomial, ResampleScheme::Residual] {
            let mut cfg = DcConfig::dc_sir(50);
            cfg.scheme = scheme;
            let tree = dc_sir(&chain, &cfg, seed).unwrap();
            let sir_cfg = SirConfig { scheme, ..SirConfig::new(50) };
            let (pop, log_z) = run_sir(&WalkSequence { chain: &chain }, &sir_cfg, seed).unwrap();
            assert_eq!(tree.log_z.to_bits(), log_z.to_bits());
            assert_eq!(tree.population.states, pop.states);
            let bits = |w: &[f64]| w.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&tree.population.log_weights), bits(&pop.log_weights));
        }
    }
}

#[test]
fn perfect_leaf_proposal_gives_unit_estimate() {
    let single = WalkChain::new(vec![None]);
    for seed in 0..5 {
        let out = dc_sir(&single, &DcConfig::dc_sir(17), seed).unwrap();
        assert_eq!(out.log_z, 0.0);
    }
}

#[test]
fn single_leaf_is_valid_with_depth_one() {
    let tree = LatticeTree::new(IsingLattice::square(1, 0.4), LatticeScheme::Bisection).unwrap();
    let s = validate_tree(&tree, 0).unwrap();
    assert_eq!((s.node_count, s.depth), (1, 1));
}

#[test]
fn sixty_four_lattice_has_depth_thirteen() {
    let tree = LatticeTree::new(IsingLattice::square(64, 0.44), LatticeScheme::Bisection).unwrap();
    let s = validate_tree(&tree, 3).unwrap();
    assert_eq!(s.depth, 13);
    assert_eq!(s.node_count, 2 * 64 * 64 - 1);
}

/// A leaf that proposes nothing.
struct Barren(Topology);

impl TreeModel for Barren {
    type State = ();
    fn topology(&self) -> &Topology {
        &self.0
    }
    fn log_gamma(&self, _: NodeId, _: &()) -> f64 {
        0.0
    }
    fn propose(&self, _: NodeId, _: &[&()], _: &mut DcRng) -> Result<()> {
        Ok(())
    }
    fn log_increment(&self, _: NodeId, _: &()) -> f64 {
        0.0
    }
    fn incremental_dim(&self, _: NodeId) -> usize {
        0
    }
    fn state_dim(&self, _: NodeId, _: &()) -> usize {
        0
    }
    fn site_count(&self, _: NodeId) -> usize {
        0
    }
}

#[test]
fn leaf_without_proposal_is_malformed() {
    let model = Barren(Topology::new(vec![vec![1, 2], vec![], vec![]], 0).unwrap());
    assert!(matches!(validate_tree(&model, 0), Err(DcError::MalformedTree { node: 1, .. })));
}

#[test]
fn topology_rejects_cycles_and_orphans() {
    assert!(Topology::new(vec![vec![1], vec![0]], 0).is_err());
    assert!(Topology::new(vec![vec![1], vec![], vec![]], 0).is_err());
}

fn unit_pop(n: usize) -> ParticlePopulation<usize> {
    ParticlePopulation::new((0..n).collect(), vec![0.0; n], 0.0).unwrap()
}

#[test]
fn merge_basic_tuples_follow_the_product_law() {
    let (a, b) = (unit_pop(2), unit_pop(2));
    for scheme in [ResampleScheme::Systematic, ResampleScheme::Multinomial] {
        let mut counts = [0u64; 4];
        for r in 0..100_000 {
            let seed = SeedPath::new(21).child(r);
            let m = merge_basic(&[&a, &b], scheme, &seed, None).unwrap();
            let t = &m.tuples[0].child_indices;
            counts[2 * t[0] + t[1]] += 1;
        }
        let p = chi_square_p(&counts, &[1.0; 4]);
        assert!(p > 1e-3, "{scheme:?}: {counts:?}");
        for c in counts {
            let sd = (100_000.0f64 * 0.25 * 0.75).sqrt();
            assert!((c as f64 - 25_000.0).abs() <= 3.0 * sd, "{scheme:?}: {counts:?}");
        }
    }
}

#[test]
fn merge_basic_with_one_child_is_resampling() {
    let lw = vec![0.0, -1.0, 2.0, 0.5];
    let p = ParticlePopulation::new(vec![10, 11, 12, 13], lw.clone(), 0.25).unwrap();
    let seed = SeedPath::new(4);
    let m = merge_basic(&[&p], ResampleScheme::Systematic, &seed, None).unwrap();
    let mut rng = seed.stage(stage::resample_child(0)).rng();
    let idx = dcsmc::particle::resample_indices(&lw, 4, ResampleScheme::Systematic, &mut rng).unwrap();
    let got: Vec<usize> = m.tuples.iter().map(|t| t.child_indices[0]).collect();
    assert_eq!(got, idx);
    assert_eq!(m.log_z_hat, dcsmc::fold_logz(&p).unwrap());
}

#[test]
fn degenerate_children_give_identical_tuples() {
    let mut w = vec![f64::NEG_INFINITY; 5];
    w[3] = 0.0;
    let a = ParticlePopulation::new((0..5).collect::<Vec<usize>>(), w.clone(), 0.0).unwrap();
    w.swap(3, 1);
    let b = ParticlePopulation::new((0..5).collect::<Vec<usize>>(), w, 0.0).unwrap();
    let m = merge_basic(&[&a, &b], ResampleScheme::Multinomial, &SeedPath::new(0), None).unwrap();
    assert!(m.tuples.iter().all(|t| t.child_indices == vec![3, 1]));
}

#[test]
fn merge_basic_rejects_unequal_sizes() {
    let r = merge_basic(&[&unit_pop(3), &unit_pop(4)], ResampleScheme::Systematic, &SeedPath::new(0), None);
    assert!(matches!(r, Err(DcError::PopulationSizeMismatch { .. })));
}

#[test]
fn one_edge_merge_weight_matches_hand_computation() {
    let beta = 0.37;
    let tree = LatticeTree::new_general(IsingLattice { grid: Grid { rows: 1, cols: 2 }, beta }, LatticeScheme::Bisection)
        .unwrap();
    let root = tree.topology().root();
    let kids = tree.topology().children(root).to_vec();
    assert_eq!(kids.len(), 2);
    let mut rng = SeedPath::new(0).rng();
    // Uniform proposals on {-1, +1} against a unit leaf target: weight 2.
    let leaf = tree.propose(kids[0], &[], &mut rng).unwrap();
    assert!((tree.log_increment(kids[0], &leaf) - 2f64.ln()).abs() < 1e-15);
    for (a, b) in [(1i8, 1i8), (1, -1), (-1, 1), (-1, -1)] {
        let x = tree.propose(root, &[&vec![a], &vec![b]], &mut rng).unwrap();
        // A periodic row of two sites joins them twice.
        let expected = 2.0 * beta * f64::from(a * b);
        assert!((tree.log_increment(root, &x) - expected).abs() < 1e-15, "{a} {b}");
    }
}

#[test]
fn subtree_order_does_not_change_the_result() {
    let tree = LatticeTree::new(IsingLattice::square(4, 0.44), LatticeScheme::Bisection).unwrap();
    let cfg = DcConfig::dc_sir(32);
    let whole = dc_sir(&tree, &cfg, 5).unwrap();
    let root = tree.topology().root();
    let kids = tree.topology().children(root).to_vec();
    let mut parts: Vec<_> = kids.iter().rev().map(|&c| dc_sir_subtree(&tree, c, &cfg, 5).unwrap().population).collect();
    parts.reverse();
    let (pop, _) = process_node(&tree, root, &parts, &cfg, 5).unwrap();
    assert_eq!(pop.states, whole.population.states);
    assert_eq!(dcsmc::fold_logz(&pop).unwrap().to_bits(), whole.log_z.to_bits());
}

/// `model` with the root target multiplied by `exp(shift)`.
struct RootScaled<'a, M> {
    inner: &'a M,
    shift: f64,
}

impl<M: TreeModel> TreeModel for RootScaled<'_, M> {
    type State = M::State;
    fn topology(&self) -> &Topology {
        self.inner.topology()
    }
    fn log_gamma(&self, node: NodeId, s: &M::State) -> f64 {
        self.inner.log_gamma(node, s) + if node == self.topology().root() { self.shift } else { 0.0 }
    }
    fn propose(&self, node: NodeId, children: &[&M::State], rng: &mut DcRng) -> Result<M::State> {
        self.inner.propose(node, children, rng)
    }
    fn log_increment(&self, node: NodeId, s: &M::State) -> f64 {
        self.inner.log_increment(node, s) + if node == self.topology().root() { self.shift } else { 0.0 }
    }
    fn mcmc_sweep(&self, node: NodeId, alpha: f64, s: &mut M::State, rng: &mut DcRng) -> Result<KernelStats> {
        self.inner.mcmc_sweep(node, alpha, s, rng)
    }
    fn incremental_dim(&self, node: NodeId) -> usize {
        self.inner.incremental_dim(node)
    }
    fn state_dim(&self, node: NodeId, s: &M::State) -> usize {
        self.inner.state_dim(node, s)
    }
    fn site_count(&self, node: NodeId) -> usize {
        self.inner.site_count(node)
    }
}

#[test]
fn scaling_the_root_target_scales_the_estimate() {
    let tree = LatticeTree::new(IsingLattice::square(4, 0.3), LatticeScheme::Bisection).unwrap();
    let cfg = DcConfig::dc_sir(64);
    let base = dc_sir(&tree, &cfg, 8).unwrap();
    let scaled = dc_sir(&RootScaled { inner: &tree, shift: 3.5 }, &cfg, 8).unwrap();
    assert!((scaled.log_z - base.log_z - 3.5).abs() < 1e-12);
    let (a, b) = (base.population.normalized_weights().unwrap(), scaled.population.normalized_weights().unwrap());
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn small_lattice_estimate_is_unbiased() {
    let lattice = IsingLattice::square(2, 0.44);
    let tree = LatticeTree::new(lattice, LatticeScheme::Bisection).unwrap();
    let log_z = dcsmc::models::brute_force_log_z(&lattice).unwrap();
    let ratios: Vec<f64> = (0..2000)
        .map(|r| (dc_sir(&tree, &DcConfig::dc_sir(32), SeedPath::new(2).stage(stage::replicate(r)).derive_u64()).unwrap().log_z - log_z).exp())
        .collect();
    common::assert_within_sigma(&ratios, 1.0, 3.0, "2x2 dc-sir");
}
