//! Comparison samplers.

pub mod mcmc;
pub mod postorder;
pub mod sir;
pub mod std_smc;

pub use mcmc::{autoregressive_ess, mh_chain_run, ChainDiagnostics, ChainModel, ChainRun, HierGibbs, LatticeChain};
pub use postorder::{postorder_smc_run, PostOrderTarget};
pub use sir::{run_sir, SequentialTarget, SirConfig};
pub use std_smc::{std_smc_run, StdSmcOutput};
