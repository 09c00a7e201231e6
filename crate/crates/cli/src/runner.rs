//! Replicated runs and their CSV and JSON output.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use dcsmc::baselines::{mh_chain_run, postorder_smc_run, std_smc_run, ChainRun, HierGibbs, LatticeChain, SirConfig};
use dcsmc::models::{
    GaussianSquaredLattice, Grid, HierKind, HierarchicalBinomial, IsingLattice, LatticeTree, SiteModel,
};
use dcsmc::particle::stage;
use dcsmc::{dc_sir, ess, NodeId, NodeReport, ParticlePopulation, SeedPath, TreeModel};

use crate::config::{ExperimentConfig, Method, ModelKind};
use crate::dataset::{ingest_dataset, IngestReport};
use crate::error::{CliError, Result};
use crate::lattice_obs::read_grid;
use crate::summary::{summarize_columns, ColumnSummary};

/// Sweeps of exact Gibbs sampling used to simulate a latent field.
pub const SIMULATION_SWEEPS: usize = 500;

/// Energy used as the lattice test function.
pub trait LatticeEnergy: SiteModel
where
    Self::Value: Into<f64>,
{
    fn energy(&self, grid: &[f64]) -> f64;
}

impl LatticeEnergy for IsingLattice {
    fn energy(&self, grid: &[f64]) -> f64 {
        -self.grid.edges().iter().map(|&(a, b)| grid[a] * grid[b]).sum::<f64>()
    }
}

/// Half the quadratic prior energy of the latent field.
impl LatticeEnergy for GaussianSquaredLattice {
    fn energy(&self, grid: &[f64]) -> f64 {
        0.5 * self.prior_energy(grid)
    }
}

/// A model built from a config.
pub enum LoadedModel {
    Ising(LatticeTree<IsingLattice>),
    Gsm(LatticeTree<GaussianSquaredLattice>),
    Hier { model: HierarchicalBinomial, ingest: IngestReport, targets: Vec<NodeId> },
}

impl LoadedModel {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let p = &cfg.model;
        match p.kind {
            ModelKind::Ising => {
                let lattice = IsingLattice { grid: Grid::square(p.m), beta: p.beta };
                Ok(LoadedModel::Ising(LatticeTree::new_general(lattice, cfg.scheme()?)?))
            }
            ModelKind::Gsm => {
                let grid = Grid::square(p.m);
                let y = match &p.observations {
                    Some(path) => read_grid(path, p.m)?,
                    None => {
                        GaussianSquaredLattice::simulate(grid, p.lambda1, p.lambda2, p.obs_sd, SIMULATION_SWEEPS, p.data_seed).1
                    }
                };
                let model =
                    GaussianSquaredLattice::new(grid, p.lambda1, p.lambda2, p.obs_sd, y)?.with_proposal_sd(p.proposal_sd);
                Ok(LoadedModel::Gsm(LatticeTree::new_general(model, cfg.scheme()?)?))
            }
            ModelKind::Hier => {
                let path = p.dataset.as_ref().ok_or_else(|| CliError::InvalidConfig("model.dataset is unset".into()))?;
                let (model, ingest) = ingest_dataset(path)?;
                let targets = if p.nodes.is_empty() {
                    let root = model.topology().root();
                    std::iter::once(root).chain(model.topology().children(root).iter().copied()).collect()
                } else {
                    p.nodes
                        .iter()
                        .map(|label| {
                            model.find(label).ok_or_else(|| CliError::InvalidConfig(format!("no node labelled `{label}`")))
                        })
                        .collect::<Result<Vec<_>>>()?
                };
                Ok(LoadedModel::Hier { model, ingest, targets })
            }
        }
    }

    /// Number of coordinates per-site effort is divided by.
    pub fn sites(&self) -> usize {
        match self {
            LoadedModel::Ising(t) => t.grid().sites(),
            LoadedModel::Gsm(t) => t.grid().sites(),
            LoadedModel::Hier { model, .. } => model.topology().len(),
        }
    }

    pub fn levels(&self) -> usize {
        match self {
            LoadedModel::Ising(t) => t.topology().levels(),
            LoadedModel::Gsm(t) => t.topology().levels(),
            LoadedModel::Hier { model, .. } => model.topology().levels(),
        }
    }

    /// Names of the test-function columns, in output order.
    pub fn estimate_columns(&self) -> Vec<String> {
        match self {
            LoadedModel::Ising(_) | LoadedModel::Gsm(_) => vec!["energy_mean".into()],
            LoadedModel::Hier { model, targets, .. } => {
                let mut cols = Vec::new();
                for &t in targets {
                    let label = &model.node(t).label;
                    cols.push(format!("theta_mean[{label}]"));
                    cols.push(format!("theta_var[{label}]"));
                    if model.node(t).kind == HierKind::Internal {
                        cols.push(format!("sigma2_mean[{label}]"));
                        cols.push(format!("sigma2_var[{label}]"));
                    }
                }
                cols
            }
        }
    }
}

/// What a worker reports about each node it processed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub node: NodeId,
    pub depth: usize,
    pub alpha_star: Option<f64>,
    pub site_updates_per_particle: f64,
    pub proposed: u64,
    pub accepted: u64,
}

impl From<&NodeReport> for NodeSummary {
    fn from(r: &NodeReport) -> Self {
        NodeSummary {
            node: r.node,
            depth: r.depth,
            alpha_star: r.alpha_star,
            site_updates_per_particle: r.site_updates_per_particle,
            proposed: r.kernel.proposed,
            accepted: r.kernel.accepted,
        }
    }
}

/// Test-function estimates from a final population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSummary {
    pub log_z: f64,
    pub ess: f64,
    pub estimates: Vec<f64>,
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Replicate {
    pub index: usize,
    pub seed: u64,
    pub log_z: Option<f64>,
    pub ess: Option<f64>,
    pub estimates: Vec<f64>,
    pub site_updates_per_site: Option<f64>,
    pub alpha_star_by_level: Vec<Option<f64>>,
    pub acceptance_rate: Option<f64>,
    pub error: Option<String>,
    pub wall_clock_s: f64,
}

impl Replicate {
    fn from_population(summary: PopulationSummary) -> Self {
        Replicate { log_z: Some(summary.log_z), ess: Some(summary.ess), estimates: summary.estimates, ..Default::default() }
    }

    /// Fills effort columns from per-node summaries, summed in node-id order
    /// so local and multi-process runs agree to the bit.
    pub fn with_nodes(mut self, nodes: &[NodeSummary], sites: usize, levels: usize) -> Self {
        let mut nodes = nodes.to_vec();
        nodes.sort_by_key(|r| r.node);
        let total: f64 = nodes.iter().map(|r| r.site_updates_per_particle).sum();
        self.site_updates_per_site = Some(total / sites as f64);
        self.alpha_star_by_level = (0..levels)
            .map(|d| {
                let a: Vec<f64> = nodes.iter().filter(|r| r.depth == d).filter_map(|r| r.alpha_star).collect();
                (!a.is_empty()).then(|| a.iter().sum::<f64>() / a.len() as f64)
            })
            .collect();
        let (p, a) = nodes.iter().fold((0, 0), |(p, a), r| (p + r.proposed, a + r.accepted));
        self.acceptance_rate = (p > 0).then(|| a as f64 / p as f64);
        self
    }
}

/// Seed of replicate `r` under `master`.
pub fn replicate_seed(master: u64, r: usize) -> u64 {
    SeedPath::new(master).stage(stage::replicate(r)).derive_u64()
}

fn lattice_summary<K: LatticeEnergy>(
    tree: &LatticeTree<K>,
    pop: &ParticlePopulation<Vec<K::Value>>,
    log_z: f64,
) -> Result<PopulationSummary>
where
    K::Value: Into<f64>,
{
    let energy = pop.expectation(|s| {
        let grid: Vec<f64> = tree.to_grid(s).into_iter().map(Into::into).collect();
        tree.model.energy(&grid)
    })?;
    Ok(PopulationSummary { log_z, ess: ess(&pop.log_weights)?, estimates: vec![energy] })
}

fn hier_summary(
    model: &HierarchicalBinomial,
    targets: &[NodeId],
    pop: &ParticlePopulation<<HierarchicalBinomial as TreeModel>::State>,
    log_z: f64,
) -> Result<PopulationSummary> {
    let w = pop.normalized_weights()?;
    let mut estimates = Vec::new();
    for &t in targets {
        let (mut m1, mut m2) = (0.0, 0.0);
        for (wi, s) in w.iter().zip(&pop.states) {
            let (mean, var) = model.conditional_theta(s, t)?;
            m1 += wi * mean;
            m2 += wi * (var + mean * mean);
        }
        estimates.extend([m1, m2 - m1 * m1]);
        if model.node(t).kind == HierKind::Internal {
            let s1 = pop.expectation(|s| model.value_at(s, t))?;
            let s2 = pop.expectation(|s| model.value_at(s, t).powi(2))?;
            estimates.extend([s1, s2 - s1 * s1]);
        }
    }
    Ok(PopulationSummary { log_z, ess: ess(&pop.log_weights)?, estimates })
}

/// Summary of a root population, shared by local runs and the worker that
/// owns the root.
pub fn summarize_root(
    loaded: &LoadedModel,
    pop: RootPopulation<'_>,
    log_z: f64,
) -> Result<PopulationSummary> {
    match (loaded, pop) {
        (LoadedModel::Ising(t), RootPopulation::Ising(p)) => lattice_summary(t, p, log_z),
        (LoadedModel::Gsm(t), RootPopulation::Gsm(p)) => lattice_summary(t, p, log_z),
        (LoadedModel::Hier { model, targets, .. }, RootPopulation::Hier(p)) => hier_summary(model, targets, p, log_z),
        _ => Err(CliError::Protocol("population does not belong to the loaded model".into())),
    }
}

/// Borrowed root population of any supported model.
pub enum RootPopulation<'a> {
    Ising(&'a ParticlePopulation<Vec<i8>>),
    Gsm(&'a ParticlePopulation<Vec<f64>>),
    Hier(&'a ParticlePopulation<<HierarchicalBinomial as TreeModel>::State>),
}

fn chain_moments(run: &ChainRun, f: impl Fn(&[f64]) -> f64) -> (f64, f64) {
    let vals: Vec<f64> = run.trace.iter().map(|r| f(r)).collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    (mean, vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
}

fn chain_replicate(run: &ChainRun, estimates: Vec<f64>, iterations: usize) -> Replicate {
    Replicate {
        ess: run.diagnostics.ess.iter().copied().reduce(f64::min),
        estimates,
        site_updates_per_site: Some(iterations as f64),
        acceptance_rate: Some(run.diagnostics.acceptance_rate),
        ..Default::default()
    }
}

fn run_lattice<K: LatticeEnergy>(
    tree: &LatticeTree<K>,
    root: impl Fn(&ParticlePopulation<Vec<K::Value>>) -> RootPopulation<'_>,
    loaded: &LoadedModel,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Replicate>
where
    K::Value: Into<f64>,
{
    let m = &cfg.method;
    let (sites, levels) = (loaded.sites(), loaded.levels());
    Ok(match m.name {
        Method::DcSir | Method::DcMix | Method::DcAnn | Method::DcMixAnn => {
            let out = dc_sir(tree, &cfg.dc_config(), seed)?;
            let nodes: Vec<NodeSummary> = out.reports.iter().map(Into::into).collect();
            Replicate::from_population(summarize_root(loaded, root(&out.population), out.log_z)?)
                .with_nodes(&nodes, sites, levels)
        }
        Method::StdSmc => {
            let out = std_smc_run(tree, m.n, &cfg.tempering(), seed)?;
            let mut r = Replicate::from_population(summarize_root(loaded, root(&out.population), out.log_z)?);
            r.site_updates_per_site = Some(out.site_updates_per_site);
            r.acceptance_rate = (out.kernel.proposed > 0).then(|| out.kernel.accepted as f64 / out.kernel.proposed as f64);
            r
        }
        Method::Postorder => {
            let (pop, log_z) = postorder_smc_run(tree, &SirConfig::new(m.n), seed)?;
            let mut r = Replicate::from_population(summarize_root(loaded, root(&pop), log_z)?);
            r.site_updates_per_site = Some(0.0);
            r
        }
        Method::Mh => {
            let run = mh_chain_run(&LatticeChain { tree }, m.iterations, m.burn_in, seed)?;
            let (energy, _) = chain_moments(&run, |g| tree.model.energy(g));
            chain_replicate(&run, vec![energy], m.iterations)
        }
        Method::Gibbs => return Err(CliError::InvalidConfig("gibbs applies to the hierarchical model only".into())),
    })
}

fn run_hier(
    model: &HierarchicalBinomial,
    targets: &[NodeId],
    loaded: &LoadedModel,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Replicate> {
    let m = &cfg.method;
    Ok(match m.name {
        Method::DcSir => {
            let out = dc_sir(model, &cfg.dc_config(), seed)?;
            let nodes: Vec<NodeSummary> = out.reports.iter().map(Into::into).collect();
            Replicate::from_population(hier_summary(model, targets, &out.population, out.log_z)?).with_nodes(
                &nodes,
                loaded.sites(),
                loaded.levels(),
            )
        }
        Method::Postorder => {
            let (pop, log_z) = postorder_smc_run(model, &SirConfig::new(m.n), seed)?;
            let mut r = Replicate::from_population(hier_summary(model, targets, &pop, log_z)?);
            r.site_updates_per_site = Some(0.0);
            r
        }
        Method::Gibbs => {
            let run = mh_chain_run(&HierGibbs { model }, m.iterations, m.burn_in, seed)?;
            let len = model.topology().len();
            let mut est = Vec::new();
            for &t in targets {
                let (a, b) = chain_moments(&run, |r| r[t]);
                est.extend([a, b]);
                if model.node(t).kind == HierKind::Internal {
                    let (a, b) = chain_moments(&run, |r| r[len + t]);
                    est.extend([a, b]);
                }
            }
            chain_replicate(&run, est, m.iterations)
        }
        other => {
            return Err(CliError::InvalidConfig(format!("{} is not available for the hierarchical model", other.name())))
        }
    })
}

/// Runs one replicate locally, or on the worker roster when one is set and
/// the method is a divide-and-conquer variant.
pub fn run_replicate(loaded: &LoadedModel, cfg: &ExperimentConfig, index: usize) -> Replicate {
    let seed = replicate_seed(cfg.run.seed, index);
    let started = Instant::now();
    let result = if !cfg.distributed.roster.is_empty() && is_dc(cfg.method.name) {
        crate::worker::run_remote(cfg, seed).map(|(summary, nodes)| {
            Replicate::from_population(summary).with_nodes(&nodes, loaded.sites(), loaded.levels())
        })
    } else {
        match loaded {
            LoadedModel::Ising(t) => run_lattice(t, |p| RootPopulation::Ising(p), loaded, cfg, seed),
            LoadedModel::Gsm(t) => run_lattice(t, |p| RootPopulation::Gsm(p), loaded, cfg, seed),
            LoadedModel::Hier { model, targets, .. } => run_hier(model, targets, loaded, cfg, seed),
        }
    };
    let mut rep = result.unwrap_or_else(|e| Replicate { error: Some(e.to_string()), ..Default::default() });
    rep.index = index;
    rep.seed = seed;
    rep.wall_clock_s = started.elapsed().as_secs_f64();
    rep
}

pub(crate) fn is_dc(m: Method) -> bool {
    matches!(m, Method::DcSir | Method::DcMix | Method::DcAnn | Method::DcMixAnn)
}

/// Header of the results table.
pub fn csv_header(estimate_columns: &[String]) -> Vec<String> {
    let mut h: Vec<String> = ["method", "n", "replicate", "seed", "log_z", "ess"].map(String::from).to_vec();
    h.extend(estimate_columns.iter().cloned());
    h.extend(["site_updates_per_site", "alpha_star_by_level", "acceptance_rate", "error", "wall_clock_s"].map(String::from));
    h
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

/// Writes one row per replicate; the wall-clock column is last.
pub fn write_csv<W: Write>(out: W, cfg: &ExperimentConfig, columns: &[String], reps: &[Replicate]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(columns))?;
    let n = if cfg.method.name.is_chain() { cfg.method.iterations } else { cfg.method.n };
    for r in reps {
        let mut row = vec![
            cfg.method.name.name().to_string(),
            n.to_string(),
            r.index.to_string(),
            r.seed.to_string(),
            opt(r.log_z),
            opt(r.ess),
        ];
        if r.estimates.len() == columns.len() {
            row.extend(r.estimates.iter().map(|v| v.to_string()));
        } else {
            row.extend(columns.iter().map(|_| String::new()));
        }
        row.push(opt(r.site_updates_per_site));
        row.push(r.alpha_star_by_level.iter().map(|a| opt(*a)).collect::<Vec<_>>().join(";"));
        row.push(opt(r.acceptance_rate));
        row.push(r.error.clone().unwrap_or_default());
        row.push(r.wall_clock_s.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io("results", e))?;
    Ok(())
}

/// The JSON side file.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub model: ModelKind,
    pub method: &'static str,
    pub n: usize,
    pub master_seed: u64,
    pub replicates: usize,
    pub failures: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<IngestReport>,
    pub columns: std::collections::BTreeMap<String, ColumnSummary>,
}

pub fn experiment_summary(
    cfg: &ExperimentConfig,
    loaded: &LoadedModel,
    columns: &[String],
    reps: &[Replicate],
) -> ExperimentSummary {
    let ok: Vec<&Replicate> = reps.iter().filter(|r| r.error.is_none()).collect();
    let col = |f: &dyn Fn(&Replicate) -> Option<f64>| ok.iter().filter_map(|r| f(r)).collect::<Vec<f64>>();
    let mut data = vec![
        ("log_z".to_string(), col(&|r| r.log_z)),
        ("ess".to_string(), col(&|r| r.ess)),
        ("site_updates_per_site".to_string(), col(&|r| r.site_updates_per_site)),
        ("acceptance_rate".to_string(), col(&|r| r.acceptance_rate)),
        ("wall_clock_s".to_string(), col(&|r| Some(r.wall_clock_s))),
    ];
    for (j, name) in columns.iter().enumerate() {
        data.push((name.clone(), col(&|r| r.estimates.get(j).copied())));
    }
    ExperimentSummary {
        model: cfg.model.kind,
        method: cfg.method.name.name(),
        n: if cfg.method.name.is_chain() { cfg.method.iterations } else { cfg.method.n },
        master_seed: cfg.run.seed,
        replicates: reps.len(),
        failures: reps.len() - ok.len(),
        dataset: match loaded {
            LoadedModel::Hier { ingest, .. } => Some(ingest.clone()),
            _ => None,
        },
        columns: summarize_columns(&data),
    }
}

/// Files written by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub replicates: Vec<Replicate>,
}

/// Runs every replicate and writes `<model>_<method>.csv` and
/// `<model>_<method>_summary.json` into `out_dir`. A failing replicate is
/// recorded in its row and does not stop the batch.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let loaded = LoadedModel::load(cfg)?;
    let columns = loaded.estimate_columns();
    let replicates: Vec<Replicate> = (0..cfg.run.replicates).map(|r| run_replicate(&loaded, cfg, r)).collect();
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir.display(), e))?;
    let stem = format!("{}_{}", cfg.model.kind, cfg.method.name.name());
    let csv = out_dir.join(format!("{stem}.csv"));
    let json = out_dir.join(format!("{stem}_summary.json"));
    let file = std::fs::File::create(&csv).map_err(|e| CliError::io(csv.display(), e))?;
    write_csv(std::io::BufWriter::new(file), cfg, &columns, &replicates)?;
    let summary = experiment_summary(cfg, &loaded, &columns, &replicates);
    std::fs::write(&json, serde_json::to_string_pretty(&summary)?).map_err(|e| CliError::io(json.display(), e))?;
    Ok(ExperimentOutput { csv, json, replicates })
}
