//! Mixture merging, tempering inside a node and the adaptive choices that
//! drive both.
//!
//! Exponents use one scale for the whole node: the bridge at exponent `a` is
//! `(1 - a) log π_base + a log γ_t`, where `π_base` is the child product times
//! the incremental proposal. A mixture merge with warm start `a★` therefore
//! hands over particles distributed according to the bridge at `a★`, and
//! tempering continues from there to `a = 1`.

use rand::Rng;

use crate::error::{DcError, Result};
use crate::particle::{
    cess, ess, log_mean_exp, log_sum_exp, normalize, resample_with, stage, ParticlePopulation, SeedPath,
};
use crate::tree::{KernelStats, MergeOutcome, MergedTuple, NodeId, TreeModel};

/// How the next exponent is picked.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    /// Bisection on the conditional ESS.
    Adaptive { cess_threshold: f64 },
    /// Explicit exponents; those at or below the starting point are skipped
    /// and a final 1 is appended when missing.
    Fixed(Vec<f64>),
}

/// Settings for tempering inside a node.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperingConfig {
    pub schedule: Schedule,
    /// Resample when ESS drops below this fraction of N.
    pub resample_ess_fraction: Option<f64>,
    pub sweeps_per_step: usize,
    /// Smallest exponent increment the adaptive schedule may take.
    pub floor_step: f64,
}

impl Default for TemperingConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule::Adaptive { cess_threshold: 0.995 },
            resample_ess_fraction: Some(0.5),
            sweeps_per_step: 1,
            floor_step: 1e-4,
        }
    }
}

/// The exponents a tempering run actually used.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnealingPlan {
    pub alpha_star: f64,
    pub alphas: Vec<f64>,
    pub cess_threshold: Option<f64>,
    pub mcmc_sweeps_per_step: usize,
    pub resample_ess_fraction: Option<f64>,
}

/// Kinds of Markov kernel the bundled models provide.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarkovKernelSpec {
    /// Deterministic sign flip of one spin at a time.
    SingleFlip,
    /// Gaussian random walk on one coordinate at a time.
    RandomWalk { proposal_sd: f64 },
    /// Whatever the model supplies.
    ModelSupplied,
}

/// Log bridge density at exponent `alpha`.
pub fn bridge_log_density<M: TreeModel>(model: &M, node: NodeId, alpha: f64, state: &M::State) -> f64 {
    let log_gamma = model.log_gamma(node, state);
    let log_base = log_gamma - model.log_increment(node, state);
    (1.0 - alpha) * log_base + alpha * log_gamma
}

/// Incremental log weight of an SMC-sampler step with a reversible kernel.
pub fn smc_sampler_weight<M: TreeModel>(
    model: &M,
    node: NodeId,
    state: &M::State,
    alpha_prev: f64,
    alpha_next: f64,
) -> f64 {
    step_weight(model.log_increment(node, state), alpha_prev, alpha_next)
}

fn step_weight(increment: f64, alpha_prev: f64, alpha_next: f64) -> f64 {
    let delta = alpha_next - alpha_prev;
    if delta == 0.0 {
        0.0
    } else {
        delta * increment
    }
}

/// Next exponent after `current` keeping the CESS at least
/// `threshold · N`, but never advancing less than `floor_step`.
pub fn adapt_next_alpha(
    log_weights: &[f64],
    increments: &[f64],
    current: f64,
    threshold: f64,
    floor_step: f64,
) -> Result<f64> {
    let w = normalize(log_weights)?;
    let n = w.len() as f64;
    let target = threshold * n;
    let remaining = 1.0 - current;
    let passes = |delta: f64| -> Result<bool> {
        let inc: Vec<f64> = increments.iter().map(|&a| step_weight(a, 0.0, delta)).collect();
        Ok(cess(&w, &inc)? >= target)
    };
    if passes(remaining)? {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0, remaining);
    for _ in 0..100 {
        if hi - lo <= 1e-9 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if passes(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((current + lo.max(floor_step)).min(1.0))
}

/// Table size guard for `n^arity` entries.
fn check_budget(n: usize, arity: usize, budget: f64) -> Result<()> {
    let entries = (n as f64).powi(arity as i32);
    if entries > budget {
        return Err(DcError::ArityTooLarge { entries, budget });
    }
    Ok(())
}

/// Mixed-radix decoding of `k` into per-child indices (child 0 most significant).
fn decode(mut k: usize, n: usize, out: &mut [usize]) {
    for slot in out.iter_mut().rev() {
        *slot = k % n;
        k /= n;
    }
}

/// Minimum over children of the marginal CESS of the exponent-`alpha`
/// reweighting of the product of `child_weights`.
///
/// `coupling_table[k]` is the log coupling at the tuple whose mixed-radix
/// index is `k`.
pub fn marginal_cess(child_weights: &[Vec<f64>], coupling_table: &[f64], alpha: f64) -> Result<f64> {
    let arity = child_weights.len();
    let n = child_weights.first().map(|w| w.len()).ok_or(DcError::EmptyPopulation)?;
    let shift = coupling_table
        .iter()
        .map(|&g| alpha * g)
        .filter(|x| x.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if shift == f64::NEG_INFINITY {
        return Err(DcError::AllWeightsZero);
    }
    let mut acc = vec![vec![0.0f64; n]; arity];
    let mut idx = vec![0usize; arity];
    for (k, &g) in coupling_table.iter().enumerate() {
        decode(k, n, &mut idx);
        let e = (alpha * g - shift).exp();
        if e == 0.0 {
            continue;
        }
        for c in 0..arity {
            let mut others = e;
            for (d, &i) in idx.iter().enumerate() {
                if d != c {
                    others *= child_weights[d][i];
                }
            }
            acc[c][idx[c]] += others;
        }
    }
    let mut worst = f64::INFINITY;
    for c in 0..arity {
        let log_a: Vec<f64> = acc[c].iter().map(|x| x.ln()).collect();
        let v = cess(&child_weights[c], &log_a)?;
        worst = worst.min(v);
    }
    Ok(worst)
}

/// Bisection for the warm-start exponent on an explicit coupling table.
pub fn alpha_star_from_table(child_weights: &[Vec<f64>], coupling_table: &[f64], threshold: f64) -> Result<f64> {
    const TOL: f64 = 1e-3;
    let n = child_weights.first().map(|w| w.len()).ok_or(DcError::EmptyPopulation)? as f64;
    let target = threshold * n;
    let passes = |a: f64| -> bool { marginal_cess(child_weights, coupling_table, a).map(|v| v >= target).unwrap_or(false) };
    if passes(1.0) {
        return Ok(1.0);
    }
    if !passes(TOL) {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (TOL, 1.0);
    while hi - lo > TOL {
        let mid = 0.5 * (lo + hi);
        if passes(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

fn coupling_or_err<M: TreeModel>(model: &M, node: NodeId, refs: &[&M::State]) -> Result<f64> {
    model.coupling(node, refs).ok_or(DcError::MergeTargetMissing { node })
}

/// Warm-start exponent for the mixture merge at `node`.
///
/// Only the first `subsample` particles of each child enter the table
/// (`0` means all of them).
pub fn adapt_alpha_star<M: TreeModel>(
    model: &M,
    node: NodeId,
    child_pops: &[&ParticlePopulation<M::State>],
    threshold: f64,
    subsample: usize,
    budget: f64,
) -> Result<f64> {
    let n = child_pops.first().map(|p| p.len()).ok_or(DcError::EmptyPopulation)?;
    let m = if subsample == 0 { n } else { n.min(subsample) };
    let arity = child_pops.len();
    check_budget(m, arity, budget)?;
    let child_weights: Vec<Vec<f64>> =
        child_pops.iter().map(|p| normalize(&p.log_weights[..m])).collect::<Result<_>>()?;
    let total = m.pow(arity as u32);
    let mut table = Vec::with_capacity(total);
    let mut idx = vec![0usize; arity];
    let mut refs: Vec<&M::State> = Vec::with_capacity(arity);
    for k in 0..total {
        decode(k, m, &mut idx);
        refs.clear();
        refs.extend(child_pops.iter().zip(&idx).map(|(p, &i)| &p.states[i]));
        table.push(coupling_or_err(model, node, &refs)?);
    }
    alpha_star_from_table(&child_weights, &table, threshold)
}

/// Result of [`mixture_merge`].
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureOutcome {
    pub merge: MergeOutcome,
    /// `log mean v_t` over the full table.
    pub log_mean_v: f64,
}

/// Draws `N` tuples from the table `v ∝ Π_c w_c · exp(alpha_star · coupling)`.
///
/// The table is never materialized: one pass accumulates row sums over the
/// first child's index, a second pass revisits only the rows that were hit.
pub fn mixture_merge<M: TreeModel>(
    model: &M,
    node: NodeId,
    child_pops: &[&ParticlePopulation<M::State>],
    alpha_star: f64,
    budget: f64,
    node_seed: &SeedPath,
) -> Result<MixtureOutcome> {
    let n = child_pops.first().map(|p| p.len()).ok_or(DcError::EmptyPopulation)?;
    for p in child_pops {
        if p.len() != n {
            return Err(DcError::PopulationSizeMismatch { expected: n, found: p.len() });
        }
    }
    let arity = child_pops.len();
    check_budget(n, arity, budget)?;
    let row_len = n.pow(arity as u32 - 1);
    let use_coupling = alpha_star != 0.0;

    let mut idx = vec![0usize; arity];
    let mut refs: Vec<&M::State> = Vec::with_capacity(arity);
    let mut row = vec![0.0f64; row_len];
    let mut fill_row = |i0: usize, row: &mut [f64]| -> Result<()> {
        for (k, slot) in row.iter_mut().enumerate() {
            decode(i0 * row_len + k, n, &mut idx);
            let mut lv: f64 = child_pops.iter().zip(&idx).map(|(p, &i)| p.log_weights[i]).sum();
            if use_coupling && lv != f64::NEG_INFINITY {
                refs.clear();
                refs.extend(child_pops.iter().zip(&idx).map(|(p, &i)| &p.states[i]));
                lv += alpha_star * coupling_or_err(model, node, &refs)?;
            }
            *slot = lv;
        }
        Ok(())
    };

    let mut row_lse = vec![f64::NEG_INFINITY; n];
    for (i0, r) in row_lse.iter_mut().enumerate() {
        fill_row(i0, &mut row)?;
        *r = log_sum_exp(&row).unwrap_or(f64::NEG_INFINITY);
    }
    let total = log_sum_exp(&row_lse)?;
    let log_mean_v = total - arity as f64 * (n as f64).ln();

    let mut rng = node_seed.stage(stage::mixture()).rng();
    let row_u: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let col_u: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let row_cum = cumulative_from_log(&row_lse, total);
    let mut by_row: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (draw, &u) in row_u.iter().enumerate() {
        by_row[search(&row_cum, u)].push(draw);
    }
    let mut chosen = vec![0usize; n];
    for (i0, draws) in by_row.iter().enumerate() {
        if draws.is_empty() {
            continue;
        }
        fill_row(i0, &mut row)?;
        let cum = cumulative_from_log(&row, row_lse[i0]);
        for &d in draws {
            chosen[d] = i0 * row_len + search(&cum, col_u[d]);
        }
    }

    let mut tuples = Vec::with_capacity(n);
    for &k in &chosen {
        let mut child_indices = vec![0usize; arity];
        decode(k, n, &mut child_indices);
        let log_correction = if use_coupling {
            let refs: Vec<&M::State> = child_pops.iter().zip(&child_indices).map(|(p, &i)| &p.states[i]).collect();
            -alpha_star * coupling_or_err(model, node, &refs)?
        } else {
            0.0
        };
        tuples.push(MergedTuple { child_indices, log_weight: 0.0, log_correction });
    }
    let log_z_hat = child_pops.iter().map(|p| p.log_z_hat).sum::<f64>() + log_mean_v;
    Ok(MixtureOutcome { merge: MergeOutcome { tuples, log_z_hat }, log_mean_v })
}

fn cumulative_from_log(log_w: &[f64], log_total: f64) -> Vec<f64> {
    let mut acc = 0.0;
    let mut c: Vec<f64> = log_w
        .iter()
        .map(|&x| {
            acc += (x - log_total).exp();
            acc
        })
        .collect();
    if let Some(last) = log_w.iter().rposition(|&x| x > f64::NEG_INFINITY) {
        c[last] = f64::INFINITY;
    }
    c
}

fn search(cum: &[f64], u: f64) -> usize {
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

/// What a tempering run did.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnealingTrace {
    /// Exponents reached, one per step.
    pub alphas: Vec<f64>,
    /// Steps at which the population was resampled.
    pub resampled_at: Vec<usize>,
    pub kernel: KernelStats,
}

/// Tempers `pop` from exponent `start_alpha` to 1 at `node`.
pub fn run_annealing<M: TreeModel>(
    model: &M,
    node: NodeId,
    mut pop: ParticlePopulation<M::State>,
    start_alpha: f64,
    cfg: &TemperingConfig,
    node_seed: &SeedPath,
) -> Result<(ParticlePopulation<M::State>, AnnealingTrace)> {
    let mut trace = AnnealingTrace::default();
    let mut alpha = start_alpha;
    let n = pop.len() as f64;
    let mut fixed: std::vec::IntoIter<f64> = match &cfg.schedule {
        Schedule::Fixed(list) => {
            let mut v: Vec<f64> = list.iter().copied().filter(|&a| a > start_alpha && a < 1.0).collect();
            v.push(1.0);
            v.into_iter()
        }
        Schedule::Adaptive { .. } => Vec::new().into_iter(),
    };
    let mut step = 0usize;
    while alpha < 1.0 {
        let increments: Vec<f64> = pop.states.iter().map(|s| model.log_increment(node, s)).collect();
        let next = match &cfg.schedule {
            Schedule::Adaptive { cess_threshold } => {
                adapt_next_alpha(&pop.log_weights, &increments, alpha, *cess_threshold, cfg.floor_step)?
            }
            Schedule::Fixed(_) => fixed.next().unwrap_or(1.0),
        };
        for (w, &a) in pop.log_weights.iter_mut().zip(&increments) {
            *w += step_weight(a, alpha, next);
        }
        if pop.log_weights.iter().all(|w| *w == f64::NEG_INFINITY) {
            return Err(DcError::AllWeightsZero);
        }
        if let Some(frac) = cfg.resample_ess_fraction {
            if ess(&pop.log_weights)? < frac * n {
                let folded = pop.log_z_hat + log_mean_exp(&pop.log_weights)?;
                let mut rng = node_seed.stage(stage::anneal_resample(step)).rng();
                pop = resample_with(&pop, crate::particle::ResampleScheme::Systematic, &mut rng)?;
                pop.log_z_hat = folded;
                trace.resampled_at.push(step);
            }
        }
        let mut rng = node_seed.stage(stage::anneal_move(step)).rng();
        for s in pop.states.iter_mut() {
            for _ in 0..cfg.sweeps_per_step {
                trace.kernel += model.mcmc_sweep(node, next, s, &mut rng)?;
            }
        }
        trace.alphas.push(next);
        alpha = next;
        step += 1;
    }
    Ok((pop, trace))
}
