//! Running the recursion across workers.

use std::collections::HashMap;
use std::net::TcpListener;

use super::assign::WorkerAssignment;
use super::transport::{channel_network, Endpoint, TcpEndpoint};
use super::wire::{decode_population, encode_population, PopulationEnvelope, WireModel};
use crate::error::{DcError, Result};
use crate::particle::{fold_logz, ParticlePopulation};
use crate::tree::{process_node, DcConfig, DcOutput, NodeId, NodeReport};

/// Traffic generated by one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TransferStats {
    pub envelopes: usize,
    /// Particle states shipped between workers.
    pub states: usize,
    pub bytes: usize,
}

impl std::ops::AddAssign for TransferStats {
    fn add_assign(&mut self, o: Self) {
        self.envelopes += o.envelopes;
        self.states += o.states;
        self.bytes += o.bytes;
    }
}

/// What one worker produced.
#[derive(Debug, Clone)]
pub struct WorkerOutcome<S> {
    pub rank: usize,
    /// Root population, present only on the root's owner.
    pub root: Option<ParticlePopulation<S>>,
    pub reports: Vec<NodeReport>,
    pub sent: TransferStats,
}

/// Evaluates every vertex owned by the endpoint's rank, in post-order,
/// receiving child populations owned elsewhere and shipping populations
/// whose parent is owned elsewhere.
pub fn run_worker<M: WireModel>(
    model: &M,
    cfg: &DcConfig,
    assignment: &WorkerAssignment,
    endpoint: &dyn Endpoint,
    master_seed: u64,
) -> Result<WorkerOutcome<M::State>> {
    let topo = model.topology();
    let rank = endpoint.rank();
    let mut local: HashMap<NodeId, ParticlePopulation<M::State>> = HashMap::new();
    let mut arrived: HashMap<NodeId, PopulationEnvelope> = HashMap::new();
    let mut outcome = WorkerOutcome { rank, root: None, reports: Vec::new(), sent: TransferStats::default() };
    for &v in topo.post_order().iter().filter(|&&v| assignment.owner(v) == rank) {
        let mut kids = Vec::with_capacity(topo.children(v).len());
        for &c in topo.children(v) {
            if assignment.owner(c) == rank {
                kids.push(local.remove(&c).expect("local child finished earlier in post-order"));
                continue;
            }
            while !arrived.contains_key(&c) {
                let env = PopulationEnvelope::from_bytes(&endpoint.recv()?)?;
                arrived.insert(env.node, env);
            }
            let env = arrived.remove(&c).expect("just checked");
            if env.seed != topo.seed_path(master_seed, c) {
                return Err(DcError::MalformedEnvelope(format!("seed lineage mismatch for node {c}")));
            }
            kids.push(decode_population(model, &env)?);
        }
        let (pop, report) = process_node(model, v, &kids, cfg, master_seed).map_err(|e| e.at_node(v))?;
        outcome.reports.push(report);
        match topo.parent(v) {
            Some(p) if assignment.owner(p) != rank => {
                let bytes = encode_population(model, v, &pop, master_seed).to_bytes();
                endpoint.send(assignment.owner(p), &bytes)?;
                outcome.sent += TransferStats { envelopes: 1, states: pop.len(), bytes: bytes.len() };
            }
            Some(_) => {
                local.insert(v, pop);
            }
            None => outcome.root = Some(pop),
        }
    }
    Ok(outcome)
}

/// How workers talk to each other in [`run_distributed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    InProcess,
    /// Loopback TCP sockets on ephemeral ports.
    Socket,
}

/// Root result and traffic of a distributed run.
#[derive(Debug, Clone)]
pub struct DistributedOutput<S> {
    /// Reports are in post-order, as in a serial run.
    pub output: DcOutput<S>,
    pub transfer: TransferStats,
}

/// Runs every worker of `assignment` on its own thread of this process.
pub fn run_distributed<M: WireModel>(
    model: &M,
    cfg: &DcConfig,
    assignment: &WorkerAssignment,
    transport: TransportKind,
    master_seed: u64,
) -> Result<DistributedOutput<M::State>> {
    let endpoints: Vec<Box<dyn Endpoint>> = match transport {
        TransportKind::InProcess => {
            channel_network(assignment.workers).into_iter().map(|e| Box::new(e) as Box<dyn Endpoint>).collect()
        }
        TransportKind::Socket => {
            let listeners = (0..assignment.workers)
                .map(|_| TcpListener::bind("127.0.0.1:0"))
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(|e| DcError::WorkerUnreachable(e.to_string()))?;
            let roster = listeners
                .iter()
                .map(|l| l.local_addr().map(|a| a.to_string()))
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(|e| DcError::WorkerUnreachable(e.to_string()))?;
            listeners
                .into_iter()
                .enumerate()
                .map(|(rank, l)| TcpEndpoint::new(rank, l, roster.clone()).map(|e| Box::new(e) as Box<dyn Endpoint>))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let outcomes: Vec<Result<WorkerOutcome<M::State>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = endpoints
            .into_iter()
            .map(|ep| scope.spawn(move || run_worker(model, cfg, assignment, ep.as_ref(), master_seed)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(DcError::WorkerUnreachable("worker panicked".into()))))
            .collect()
    });
    collect_outcomes(model, outcomes)
}

/// Merges worker outcomes into the result a serial run would report.
pub fn collect_outcomes<M: WireModel>(
    model: &M,
    outcomes: Vec<Result<WorkerOutcome<M::State>>>,
) -> Result<DistributedOutput<M::State>> {
    let topo = model.topology();
    let mut position = vec![0usize; topo.len()];
    for (i, &v) in topo.post_order().iter().enumerate() {
        position[v] = i;
    }
    let mut transfer = TransferStats::default();
    let mut reports = Vec::new();
    let mut root = None;
    for o in outcomes {
        let o = o?;
        transfer += o.sent;
        reports.extend(o.reports);
        if o.root.is_some() {
            root = o.root;
        }
    }
    reports.sort_by_key(|r| position[r.node]);
    let population = root.ok_or_else(|| DcError::WorkerUnreachable("no worker produced the root".into()))?;
    let log_z = fold_logz(&population)?;
    Ok(DistributedOutput { output: DcOutput { population, log_z, reports }, transfer })
}
