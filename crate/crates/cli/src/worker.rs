//! Worker processes and the driver side of a multi-process run.
//!
//! A worker listens on a control address. For every replicate the driver
//! opens one control connection per worker and exchanges JSON frames:
//!
//! 1. driver sends `Hello`; the worker binds a fresh data socket and answers
//!    `Ready` with its address;
//! 2. driver sends `Job` with the config text, the replicate seed, the
//!    worker's rank and the data addresses of all ranks;
//! 3. the workers exchange population envelopes directly with each other and
//!    each answers `Done` (or `Failed`) on its control connection.
//!
//! Config paths must resolve on every worker host.

use std::net::{TcpListener, TcpStream};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use dcsmc::distributed::{assign_subtrees, read_frame, run_worker, write_frame, TcpEndpoint, WireModel};

use crate::config::{ExperimentConfig, ModelKind};
use crate::error::{CliError, Result};
use crate::runner::{summarize_root, LoadedModel, NodeSummary, PopulationSummary, RootPopulation};

/// Environment variable holding a worker's control address.
pub const BIND_ENV: &str = "DCSMC_BIND";
pub const DEFAULT_BIND: &str = "127.0.0.1:7878";
/// How long the driver keeps retrying a worker that is not yet listening.
pub const CONNECT_PATIENCE: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Control {
    Hello,
    Ready { data_addr: String },
    Job { config: String, seed: u64, rank: usize, roster: Vec<String> },
    Done { rank: usize, nodes: Vec<NodeSummary>, root: Option<PopulationSummary>, states_sent: usize },
    Failed { rank: usize, message: String },
}

fn send(stream: &mut TcpStream, msg: &Control) -> Result<()> {
    let bytes = serde_json::to_vec(msg)?;
    write_frame(stream, &bytes).map_err(|e| CliError::Protocol(e.to_string()))
}

fn receive(stream: &mut TcpStream) -> Result<Control> {
    match read_frame(stream).map_err(|e| CliError::Protocol(e.to_string()))? {
        Some(bytes) => Ok(serde_json::from_slice(&bytes)?),
        None => Err(CliError::Protocol("connection closed".into())),
    }
}

/// Control address from `DCSMC_BIND`, then the config, then the default.
pub fn bind_address(cfg: Option<&ExperimentConfig>) -> String {
    std::env::var(BIND_ENV)
        .ok()
        .filter(|s| !s.is_empty())
        .or_else(|| cfg.and_then(|c| c.distributed.bind.clone()))
        .unwrap_or_else(|| DEFAULT_BIND.to_string())
}

/// Serves jobs on `listener`, stopping after `max_jobs` when given.
pub fn serve(listener: TcpListener, max_jobs: Option<usize>) -> Result<()> {
    let mut cache: Option<(String, LoadedModel)> = None;
    let mut served = 0;
    while max_jobs.map_or(true, |m| served < m) {
        let (mut stream, _) = listener.accept().map_err(|e| CliError::io("control socket", e))?;
        if let Err(e) = handle_job(&mut stream, &mut cache) {
            eprintln!("job failed: {e}");
        }
        served += 1;
    }
    Ok(())
}

fn handle_job(stream: &mut TcpStream, cache: &mut Option<(String, LoadedModel)>) -> Result<()> {
    if receive(stream)? != Control::Hello {
        return Err(CliError::Protocol("expected hello".into()));
    }
    let ip = stream.local_addr().map_err(|e| CliError::io("control socket", e))?.ip();
    let data = TcpListener::bind((ip, 0)).map_err(|e| CliError::io("data socket", e))?;
    let data_addr = data.local_addr().map_err(|e| CliError::io("data socket", e))?.to_string();
    send(stream, &Control::Ready { data_addr })?;
    let Control::Job { config, seed, rank, roster } = receive(stream)? else {
        return Err(CliError::Protocol("expected a job".into()));
    };
    let reply = match execute(&config, seed, rank, roster, data, cache) {
        Ok(done) => done,
        Err(e) => Control::Failed { rank, message: e.to_string() },
    };
    send(stream, &reply)
}

fn execute(
    config: &str,
    seed: u64,
    rank: usize,
    roster: Vec<String>,
    data: TcpListener,
    cache: &mut Option<(String, LoadedModel)>,
) -> Result<Control> {
    let cfg = ExperimentConfig::parse_with_default(config, ModelKind::Ising)?;
    if cache.as_ref().map_or(true, |(text, _)| text != config) {
        *cache = Some((config.to_string(), LoadedModel::load(&cfg)?));
    }
    let loaded = &cache.as_ref().expect("filled above").1;
    let endpoint = TcpEndpoint::new(rank, data, roster)?;
    match loaded {
        LoadedModel::Ising(t) => work(t, loaded, &cfg, &endpoint, seed, |p| RootPopulation::Ising(p)),
        LoadedModel::Gsm(t) => work(t, loaded, &cfg, &endpoint, seed, |p| RootPopulation::Gsm(p)),
        LoadedModel::Hier { model, .. } => work(model, loaded, &cfg, &endpoint, seed, |p| RootPopulation::Hier(p)),
    }
}

fn work<M: WireModel>(
    model: &M,
    loaded: &LoadedModel,
    cfg: &ExperimentConfig,
    endpoint: &TcpEndpoint,
    seed: u64,
    root: impl Fn(&dcsmc::ParticlePopulation<M::State>) -> RootPopulation<'_>,
) -> Result<Control> {
    let workers = cfg.distributed.roster.len().max(1);
    let assignment = assign_subtrees(model.topology(), workers);
    let outcome = run_worker(model, &cfg.dc_config(), &assignment, endpoint, seed)?;
    let root_summary = match &outcome.root {
        Some(pop) => Some(summarize_root(loaded, root(pop), dcsmc::fold_logz(pop)?)?),
        None => None,
    };
    Ok(Control::Done {
        rank: outcome.rank,
        nodes: outcome.reports.iter().map(Into::into).collect(),
        root: root_summary,
        states_sent: outcome.sent.states,
    })
}

fn connect(addr: &str) -> Result<TcpStream> {
    let started = std::time::Instant::now();
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if started.elapsed() >= CONNECT_PATIENCE => {
                return Err(CliError::Engine(dcsmc::DcError::WorkerUnreachable(format!("{addr}: {e}"))))
            }
            Err(_) => std::thread::sleep(Duration::from_millis(50)),
        }
    }
}

/// Runs one replicate on the roster in `cfg` and gathers the root summary
/// and per-node reports (sorted by node id).
pub fn run_remote(cfg: &ExperimentConfig, seed: u64) -> Result<(PopulationSummary, Vec<NodeSummary>)> {
    let roster = &cfg.distributed.roster;
    let text = cfg.to_toml()?;
    let mut streams = Vec::with_capacity(roster.len());
    let mut data_roster = Vec::with_capacity(roster.len());
    for addr in roster {
        let mut s = connect(addr)?;
        send(&mut s, &Control::Hello)?;
        match receive(&mut s)? {
            Control::Ready { data_addr } => data_roster.push(data_addr),
            other => return Err(CliError::Protocol(format!("expected ready from {addr}, got {other:?}"))),
        }
        streams.push(s);
    }
    for (rank, s) in streams.iter_mut().enumerate() {
        send(s, &Control::Job { config: text.clone(), seed, rank, roster: data_roster.clone() })?;
    }
    let mut nodes = Vec::new();
    let mut root = None;
    let mut failure = None;
    for s in &mut streams {
        match receive(s)? {
            Control::Done { nodes: n, root: r, .. } => {
                nodes.extend(n);
                root = root.or(r);
            }
            Control::Failed { rank, message } => {
                failure.get_or_insert(format!("worker {rank}: {message}"));
            }
            other => return Err(CliError::Protocol(format!("unexpected reply {other:?}"))),
        }
    }
    if let Some(msg) = failure {
        return Err(CliError::Protocol(msg));
    }
    nodes.sort_by_key(|n| n.node);
    let root = root.ok_or_else(|| CliError::Protocol("no worker reported the root".into()))?;
    Ok((root, nodes))
}
