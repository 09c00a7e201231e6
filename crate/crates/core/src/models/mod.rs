//! Concrete model families.

pub mod gsm;
pub mod hier;
pub mod ising;
pub mod lattice;
pub mod oracle;
pub mod quad;

pub use gsm::{gsm_site_init, GaussianSquaredLattice, SiteInit};
pub use hier::{
    hier_leaf_proposal, hier_upward_message, ChildInput, GaussianMessage, HierKind, HierNode, HierState,
    HierarchicalBinomial,
};
pub use ising::{ising_energy, single_flip_kernel, IsingLattice};
pub use lattice::{Grid, LatticeNode, LatticeScheme, LatticeTree, SiteModel};
pub use oracle::{brute_force_log_z, ising_enumerate, BruteForce};
