//! Standard adaptive-tempering SMC sampler on the full model.

use crate::annealing::{run_annealing, TemperingConfig};
use crate::error::{DcError, Result};
use crate::particle::{fold_logz, stage, ParticlePopulation};
use crate::tree::{KernelStats, TreeModel};

/// Result of [`std_smc_run`].
#[derive(Debug, Clone)]
pub struct StdSmcOutput<S> {
    pub population: ParticlePopulation<S>,
    pub log_z: f64,
    pub alphas: Vec<f64>,
    pub kernel: KernelStats,
    /// Kernel updates per site per particle.
    pub site_updates_per_site: f64,
}

/// Tempers from the product of leaf initializers to the root target.
///
/// `model` must be a star: a root whose children are all leaves (a single
/// leaf is also accepted). The leaves provide the initializer and the root
/// provides the target and the kernel.
pub fn std_smc_run<M: TreeModel>(
    model: &M,
    n: usize,
    tempering: &TemperingConfig,
    master_seed: u64,
) -> Result<StdSmcOutput<M::State>> {
    let topo = model.topology();
    let root = topo.root();
    if n == 0 {
        return Err(DcError::EmptyPopulation);
    }
    if topo.children(root).iter().any(|&c| !topo.is_leaf(c)) {
        return Err(DcError::InvalidConfig("the standard sampler needs a star-shaped decomposition".into()));
    }
    let leaves = topo.children(root);
    let root_seed = topo.seed_path(master_seed, root);
    let mut log_weights = vec![0.0; n];
    let mut leaf_states: Vec<Vec<M::State>> = Vec::with_capacity(leaves.len());
    for &leaf in leaves {
        let mut rng = topo.seed_path(master_seed, leaf).stage(stage::propose()).rng();
        let mut col = Vec::with_capacity(n);
        for w in log_weights.iter_mut() {
            let s = model.propose(leaf, &[], &mut rng)?;
            *w += model.log_increment(leaf, &s);
            col.push(s);
        }
        leaf_states.push(col);
    }
    let mut rng = root_seed.stage(stage::propose()).rng();
    let states = (0..n)
        .map(|i| {
            let kids: Vec<&M::State> = leaf_states.iter().map(|col| &col[i]).collect();
            model.propose(root, &kids, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    if leaves.is_empty() {
        for (w, s) in log_weights.iter_mut().zip(&states) {
            *w = model.log_increment(root, s);
        }
        let population = ParticlePopulation::new(states, log_weights, 0.0)?;
        let log_z = fold_logz(&population)?;
        return Ok(StdSmcOutput { population, log_z, alphas: vec![], kernel: KernelStats::default(), site_updates_per_site: 0.0 });
    }
    let start = ParticlePopulation::new(states, log_weights, 0.0)?;
    let (population, trace) = run_annealing(model, root, start, 0.0, tempering, &root_seed)?;
    let log_z = fold_logz(&population)?;
    let site_updates_per_site = (trace.alphas.len() * tempering.sweeps_per_step) as f64;
    Ok(StdSmcOutput { population, log_z, alphas: trace.alphas, kernel: trace.kernel, site_updates_per_site })
}
