//! Population-level distribution of the recursion over workers.
//!
//! The tree is cut at a fixed depth and each worker evaluates whole
//! subtrees. Populations cross worker boundaries only along tree edges above
//! the cut, as checksummed binary envelopes. Every random draw is keyed by
//! its node's seed path, so the result matches a serial run bit for bit.

pub mod assign;
pub mod exec;
pub mod transport;
pub mod wire;

pub use assign::{assign_subtrees, WorkerAssignment};
pub use exec::{collect_outcomes, run_distributed, run_worker, DistributedOutput, TransferStats, TransportKind, WorkerOutcome};
pub use transport::{channel_network, read_frame, send_tcp, write_frame, ChannelEndpoint, Endpoint, TcpEndpoint};
pub use wire::{decode_population, encode_population, PopulationEnvelope, Reader, WireModel};
