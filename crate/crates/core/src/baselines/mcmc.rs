//! Single-chain Metropolis–Hastings baselines.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{DcError, Result};
use crate::models::hier::{log_binomial, HierKind, HierarchicalBinomial};
use crate::models::lattice::{LatticeTree, SiteModel};
use crate::particle::{stage, DcRng, SeedPath};
use crate::tree::{KernelStats, NodeId, TreeModel};

/// Summary of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDiagnostics {
    pub retained: usize,
    pub burn_in: usize,
    /// Effective sample size of every recorded coordinate.
    pub ess: Vec<f64>,
    pub acceptance_rate: f64,
    pub seconds: f64,
}

/// A chain run: diagnostics, posterior means and the retained trace.
#[derive(Debug, Clone)]
pub struct ChainRun {
    pub diagnostics: ChainDiagnostics,
    pub means: Vec<f64>,
    /// `trace[t][j]`: coordinate `j` after retained iteration `t`.
    pub trace: Vec<Vec<f64>>,
}

/// A model that can be explored by a single Markov chain.
pub trait ChainModel {
    type State;
    fn initial(&self, rng: &mut DcRng) -> Self::State;
    /// One full scan over all coordinates.
    fn sweep(&self, state: &mut Self::State, rng: &mut DcRng) -> KernelStats;
    /// Coordinates recorded after each retained scan.
    fn record(&self, state: &Self::State) -> Vec<f64>;
}

/// Runs `iterations` scans, discarding the first `burn_in`.
pub fn mh_chain_run<C: ChainModel>(model: &C, iterations: usize, burn_in: usize, master_seed: u64) -> Result<ChainRun> {
    if iterations <= burn_in {
        return Err(DcError::InvalidConfig(format!("{iterations} iterations with burn-in {burn_in}")));
    }
    let started = Instant::now();
    let mut rng = SeedPath::new(master_seed).stage(stage::custom(1)).rng();
    let mut state = model.initial(&mut rng);
    let mut stats = KernelStats::default();
    let mut trace = Vec::with_capacity(iterations - burn_in);
    for it in 0..iterations {
        stats += model.sweep(&mut state, &mut rng);
        if it >= burn_in {
            trace.push(model.record(&state));
        }
    }
    let dims = trace.first().map_or(0, Vec::len);
    let columns: Vec<Vec<f64>> = (0..dims).map(|j| trace.iter().map(|r| r[j]).collect()).collect();
    let means = columns.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let ess = columns.iter().map(|c| autoregressive_ess(c)).collect();
    let diagnostics = ChainDiagnostics {
        retained: trace.len(),
        burn_in,
        ess,
        acceptance_rate: stats.accepted as f64 / stats.proposed.max(1) as f64,
        seconds: started.elapsed().as_secs_f64(),
    };
    Ok(ChainRun { diagnostics, means, trace })
}

/// Effective sample size from the autocovariance sum, truncated at the
/// first non-positive sum of an adjacent lag pair.
pub fn autoregressive_ess(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return n as f64;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = xs.iter().map(|x| x - mean).collect();
    let acov = |lag: usize| -> f64 { centred[..n - lag].iter().zip(&centred[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64 };
    let g0 = acov(0);
    if g0 <= 0.0 {
        return n as f64;
    }
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = acov(lag) + acov(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair / g0;
        lag += 2;
    }
    (n as f64 / tau.max(1e-12)).min(n as f64)
}

/// Site-sequential Metropolis–Hastings on the full lattice.
pub struct LatticeChain<'a, K: SiteModel> {
    pub tree: &'a LatticeTree<K>,
}

impl<K: SiteModel> ChainModel for LatticeChain<'_, K>
where
    K::Value: Into<f64>,
{
    type State = Vec<K::Value>;

    fn initial(&self, rng: &mut DcRng) -> Self::State {
        let grid: Vec<K::Value> = (0..self.tree.grid().sites()).map(|k| self.tree.model.sample_initial(k, rng)).collect();
        self.tree.from_grid(&grid)
    }

    fn sweep(&self, state: &mut Self::State, rng: &mut DcRng) -> KernelStats {
        let root = self.tree.topology().root();
        self.tree.mcmc_sweep(root, 1.0, state, rng).expect("lattice kernels are always available")
    }

    /// Site values in row-major order.
    fn record(&self, state: &Self::State) -> Vec<f64> {
        self.tree.to_grid(state).into_iter().map(Into::into).collect()
    }
}

/// Metropolis-within-Gibbs over every log-odds and variance of the
/// hierarchical model, visiting coordinates in a fresh random order each scan
/// with unit-variance Gaussian steps.
pub struct HierGibbs<'a> {
    pub model: &'a HierarchicalBinomial,
}

/// Log-odds of every node followed by the variance of every node
/// (zero at leaves).
#[derive(Debug, Clone, PartialEq)]
pub struct HierChainState {
    pub theta: Vec<f64>,
    pub sigma2: Vec<f64>,
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * (x - mean) * (x - mean) / var
}

impl HierGibbs<'_> {
    fn theta_terms(&self, s: &HierChainState, v: NodeId, theta_v: f64) -> f64 {
        let topo = self.model.topology();
        let mut total = match self.model.node(v).kind {
            HierKind::Leaf { successes, trials } => log_binomial(successes, trials, theta_v),
            HierKind::Internal => 0.0,
        };
        if let Some(p) = topo.parent(v) {
            total += log_normal(theta_v, s.theta[p], s.sigma2[p]);
        }
        for &c in topo.children(v) {
            total += log_normal(s.theta[c], theta_v, s.sigma2[v]);
        }
        total
    }

    fn sigma_terms(&self, s: &HierChainState, v: NodeId, sigma2: f64) -> f64 {
        -sigma2
            + self.model.topology().children(v).iter().map(|&c| log_normal(s.theta[c], s.theta[v], sigma2)).sum::<f64>()
    }
}

impl ChainModel for HierGibbs<'_> {
    type State = HierChainState;

    fn initial(&self, _rng: &mut DcRng) -> HierChainState {
        let topo = self.model.topology();
        let mut theta = vec![0.0; topo.len()];
        let mut sigma2 = vec![0.0; topo.len()];
        for &v in topo.post_order() {
            theta[v] = match self.model.node(v).kind {
                HierKind::Leaf { successes, trials } => {
                    ((successes as f64 + 0.5) / (trials as f64 - successes as f64 + 0.5)).ln()
                }
                HierKind::Internal => {
                    let kids = topo.children(v);
                    sigma2[v] = 1.0;
                    kids.iter().map(|&c| theta[c]).sum::<f64>() / kids.len() as f64
                }
            };
        }
        HierChainState { theta, sigma2 }
    }

    fn sweep(&self, s: &mut HierChainState, rng: &mut DcRng) -> KernelStats {
        let topo = self.model.topology();
        let mut coords: Vec<(NodeId, bool)> = (0..topo.len()).map(|v| (v, false)).collect();
        coords.extend((0..topo.len()).filter(|&v| !topo.is_leaf(v)).map(|v| (v, true)));
        coords.shuffle(rng);
        let mut stats = KernelStats::default();
        for (v, is_variance) in coords {
            let step: f64 = rng.sample(StandardNormal);
            let u: f64 = rng.random();
            stats.proposed += 1;
            let (slot, current, delta) = if is_variance {
                let new = s.sigma2[v] + step;
                let delta = if new > 0.0 {
                    self.sigma_terms(s, v, new) - self.sigma_terms(s, v, s.sigma2[v])
                } else {
                    f64::NEG_INFINITY
                };
                (&mut s.sigma2[v], new, delta)
            } else {
                let new = s.theta[v] + step;
                let delta = self.theta_terms(s, v, new) - self.theta_terms(s, v, s.theta[v]);
                (&mut s.theta[v], new, delta)
            };
            let accepted = u.ln() < delta;
            if accepted {
                *slot = current;
            }
            stats.accepted += u64::from(accepted);
        }
        stats
    }

    fn record(&self, s: &HierChainState) -> Vec<f64> {
        s.theta.iter().chain(&s.sigma2).copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iid_series_has_ess_near_length() {
        let mut rng = SeedPath::new(3).rng();
        let xs: Vec<f64> = (0..20_000).map(|_| rng.sample(StandardNormal)).collect();
        let e = autoregressive_ess(&xs);
        assert!(e > 15_000.0 && e <= 20_000.0, "{e}");
    }

    #[test]
    fn sticky_series_has_small_ess() {
        let mut rng = SeedPath::new(4).rng();
        let mut x = 0.0;
        let xs: Vec<f64> = (0..20_000)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                x = 0.95 * x + z;
                x
            })
            .collect();
        let e = autoregressive_ess(&xs);
        // AR(1) with coefficient 0.95 has integrated autocorrelation time 39.
        assert!(e > 20_000.0 / 60.0 && e < 20_000.0 / 25.0, "{e}");
    }
}
