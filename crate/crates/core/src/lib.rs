//! Divide-and-conquer sequential Monte Carlo.
//!
//! Independent weighted particle populations are built at the leaves of a
//! tree of auxiliary targets and merged upward until the root population
//! approximates the full model. The crate provides the particle layer, the
//! tree recursion, tempered and mixture merges, three model families,
//! baseline samplers and a population-level distributed executor.

pub mod annealing;
pub mod baselines;
pub mod distributed;
pub mod error;
pub mod models;
pub mod particle;
pub mod tree;

pub use annealing::{
    adapt_alpha_star, adapt_next_alpha, bridge_log_density, mixture_merge, run_annealing, smc_sampler_weight,
    AnnealingPlan, MarkovKernelSpec, Schedule, TemperingConfig,
};
pub use error::{DcError, Result};
pub use particle::{
    cess, ess, fold_logz, log_mean_exp, log_sum_exp, normalize, resample, resample_with, DcRng, ParticlePopulation,
    ResampleScheme, SeedPath,
};
pub use tree::{
    dc_sir, dc_sir_subtree, merge_basic, process_node, propose_and_weight, validate_tree, AlphaStarRule, DcConfig,
    DcOutput, KernelStats, MergeStrategy, MergedTuple, NodeId, NodeReport, Topology, TreeModel,
};
