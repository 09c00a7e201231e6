//! Single-population SIR that grows a forest in post-order.
//!
//! Step `k` handles the `k`-th node of a post-order traversal: a leaf pushes
//! a fresh proposal, an internal node pops the trees of its children and
//! joins them. The forest is a persistent stack, so resampling copies only
//! pointers.

use std::sync::Arc;

use super::sir::{run_sir, SequentialTarget, SirConfig};
use crate::error::Result;
use crate::particle::{DcRng, ParticlePopulation, SeedPath};
use crate::tree::{NodeId, TreeModel};

/// Partial forest: the roots built so far, most recent on top.
#[derive(Debug)]
pub struct Forest<S> {
    pub top: S,
    pub rest: Option<Arc<Forest<S>>>,
}

/// The post-order sequence of a tree model as a [`SequentialTarget`].
pub struct PostOrderTarget<'a, M: TreeModel> {
    model: &'a M,
    order: Vec<NodeId>,
}

impl<'a, M: TreeModel> PostOrderTarget<'a, M> {
    pub fn new(model: &'a M) -> Self {
        Self { model, order: model.topology().post_order().to_vec() }
    }
}

impl<M: TreeModel> SequentialTarget for PostOrderTarget<'_, M> {
    type State = Arc<Forest<M::State>>;

    fn steps(&self) -> usize {
        self.order.len()
    }

    fn propose(&self, step: usize, prev: Option<&Self::State>, rng: &mut DcRng) -> Result<Self::State> {
        let node = self.order[step];
        let arity = self.model.topology().children(node).len();
        let mut popped: Vec<&M::State> = Vec::with_capacity(arity);
        let mut rest = prev;
        for _ in 0..arity {
            let f = rest.expect("post-order keeps every child on the stack");
            popped.push(&f.top);
            rest = f.rest.as_ref();
        }
        popped.reverse();
        let top = self.model.propose(node, &popped, rng)?;
        Ok(Arc::new(Forest { top, rest: rest.cloned() }))
    }

    fn log_increment(&self, step: usize, state: &Self::State) -> f64 {
        self.model.log_increment(self.order[step], &state.top)
    }

    fn seed(&self, master_seed: u64, step: usize) -> SeedPath {
        self.model.topology().seed_path(master_seed, self.order[step])
    }
}

/// Runs the post-order baseline and returns root states with `log Ẑ`.
pub fn postorder_smc_run<M: TreeModel>(
    model: &M,
    cfg: &SirConfig,
    master_seed: u64,
) -> Result<(ParticlePopulation<M::State>, f64)> {
    let (pop, log_z) = run_sir(&PostOrderTarget::new(model), cfg, master_seed)?;
    let states = pop.states.iter().map(|f| f.top.clone()).collect();
    Ok((ParticlePopulation::new(states, pop.log_weights, pop.log_z_hat)?, log_z))
}
