//! Gaussian Markov random field observed through squared values.
//!
//! The prior couples neighbours with `exp(-λ₁ (x_k - x_l)² / 2)` and shrinks
//! every site with `exp(-λ₂ x_k² / 2)`; each site is observed as
//! `y_k ~ N(x_k², σ²)`. Sites with large `|x_k|` have bimodal conditionals.

use rand::Rng;
use rand_distr::StandardNormal;

use super::lattice::{Grid, SiteModel};
use super::quad;
use crate::annealing::MarkovKernelSpec;
use crate::error::{DcError, Result};
use crate::particle::{DcRng, SeedPath};

/// Points in the inverse-CDF grid of each site initializer.
pub const INIT_GRID_POINTS: usize = 4096;

/// Independent-site posterior used to initialize one site.
///
/// `log_norm` comes from adaptive quadrature of the exact density. Draws
/// come from a piecewise-uniform approximation on a fine grid whose own
/// density is reported by [`SiteInit::log_sampler_density`], so importance
/// weights stay exact.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteInit {
    pub y: f64,
    pub log_norm: f64,
    pub lo: f64,
    pub hi: f64,
    width: f64,
    /// Cumulative cell masses, last entry exactly 1.
    cdf: Vec<f64>,
    /// Log of each cell's mass divided by its width.
    log_cell_density: Vec<f64>,
}

impl SiteInit {
    /// Log of the normalized initializer density.
    pub fn log_density(&self, model: &GaussianSquaredLattice, x: f64) -> f64 {
        model.unary_at(self.y, x) - self.log_norm
    }

    fn cell(&self, x: f64) -> Option<usize> {
        if !(self.lo..=self.hi).contains(&x) {
            return None;
        }
        Some((((x - self.lo) / self.width) as usize).min(self.cdf.len() - 1))
    }

    /// Log density of the grid sampler.
    pub fn log_sampler_density(&self, x: f64) -> f64 {
        self.cell(x).map_or(f64::NEG_INFINITY, |j| self.log_cell_density[j])
    }

    pub fn sample(&self, rng: &mut DcRng) -> f64 {
        let u: f64 = rng.random();
        let j = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        let v: f64 = rng.random();
        self.lo + (j as f64 + v) * self.width
    }
}

/// Square-observation lattice with its per-site initializers.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSquaredLattice {
    pub grid: Grid,
    pub lambda1: f64,
    pub lambda2: f64,
    pub obs_sd: f64,
    pub proposal_sd: f64,
    pub y: Vec<f64>,
    inits: Vec<SiteInit>,
}

impl GaussianSquaredLattice {
    pub fn new(grid: Grid, lambda1: f64, lambda2: f64, obs_sd: f64, y: Vec<f64>) -> Result<Self> {
        for (name, v) in [("lambda1", lambda1), ("lambda2", lambda2), ("obs_sd", obs_sd)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DcError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if y.len() != grid.sites() {
            return Err(DcError::DimensionMismatch { expected: grid.sites(), found: y.len() });
        }
        let mut model = Self { grid, lambda1, lambda2, obs_sd, proposal_sd: 0.132, y, inits: Vec::new() };
        let inits = (0..grid.sites()).map(|k| gsm_site_init(&model, k)).collect::<Result<Vec<_>>>()?;
        model.inits = inits;
        Ok(model)
    }

    pub fn with_proposal_sd(mut self, sd: f64) -> Self {
        self.proposal_sd = sd;
        self
    }

    pub fn site_init(&self, k: usize) -> &SiteInit {
        &self.inits[k]
    }

    /// `log N(y | x², σ²) - λ₂ x² / 2`.
    pub fn unary_at(&self, y: f64, x: f64) -> f64 {
        let r = (y - x * x) / self.obs_sd;
        -0.5 * r * r - (self.obs_sd * (2.0 * std::f64::consts::PI).sqrt()).ln() - 0.5 * self.lambda2 * x * x
    }

    /// Quadratic prior energy `Σ_edges λ₁(x_k - x_l)² + λ₂ Σ x_k²` of a
    /// row-major configuration, without the factor one half.
    pub fn prior_energy(&self, x: &[f64]) -> f64 {
        let pairs: f64 = self.grid.edges().iter().map(|&(a, b)| (x[a] - x[b]).powi(2)).sum();
        self.lambda1 * pairs + self.lambda2 * x.iter().map(|v| v * v).sum::<f64>()
    }

    /// Draws a latent field from the prior by exact single-site Gibbs sweeps,
    /// then noisy squared observations. Returns `(x, y)` in row-major order.
    pub fn simulate(grid: Grid, lambda1: f64, lambda2: f64, obs_sd: f64, sweeps: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = SeedPath::new(seed).stage(crate::particle::stage::custom(0)).rng();
        let n = grid.sites();
        let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (a, b) in grid.edges() {
            nbrs[a].push(b);
            nbrs[b].push(a);
        }
        let mut x = vec![0.0; n];
        for _ in 0..sweeps {
            for k in 0..n {
                let prec = lambda1 * nbrs[k].len() as f64 + lambda2;
                let mean = lambda1 * nbrs[k].iter().map(|&j| x[j]).sum::<f64>() / prec;
                let z: f64 = rng.sample(StandardNormal);
                x[k] = mean + z / prec.sqrt();
            }
        }
        let y = x
            .iter()
            .map(|v| {
                let z: f64 = rng.sample(StandardNormal);
                v * v + obs_sd * z
            })
            .collect();
        (x, y)
    }
}

/// Builds the initializer `μ_k(x) ∝ N(y_k | x², σ²) exp(-λ₂ x² / 2)` of site `k`.
pub fn gsm_site_init(model: &GaussianSquaredLattice, k: usize) -> Result<SiteInit> {
    let y = model.y[k];
    let y_max = model.y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let half_width = (y_max + 6.0).max(1e-6).sqrt();
    let (lo, hi) = (-half_width, half_width);
    let mode = y.max(0.0).sqrt();
    let log_f = |x: f64| model.unary_at(y, x);
    let shift = [0.0, mode, -mode].iter().map(|&x| log_f(x)).fold(f64::NEG_INFINITY, f64::max);
    let q = quad::integrate_with_breaks(|x| (log_f(x) - shift).exp(), lo, hi, &[-mode, 0.0, mode], 1e-14, 1e-11)?;
    if !(q.value > 0.0) {
        return Err(DcError::QuadratureNonFinite);
    }
    let log_norm = shift + q.value.ln();

    let cells = INIT_GRID_POINTS - 1;
    let width = (hi - lo) / cells as f64;
    let values: Vec<f64> = (0..INIT_GRID_POINTS).map(|i| (log_f(lo + i as f64 * width) - shift).exp()).collect();
    let masses: Vec<f64> = values.windows(2).map(|v| 0.5 * (v[0] + v[1]) * width).collect();
    let total: f64 = masses.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(DcError::QuadratureNonFinite);
    }
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = masses
        .iter()
        .map(|m| {
            acc += m / total;
            acc
        })
        .collect();
    if let Some(last) = masses.iter().rposition(|&m| m > 0.0) {
        for c in &mut cdf[last..] {
            *c = 1.0;
        }
    }
    let log_cell_density = masses.iter().map(|m| (m / total / width).ln()).collect();
    Ok(SiteInit { y, log_norm, lo, hi, width, cdf, log_cell_density })
}

impl SiteModel for GaussianSquaredLattice {
    type Value = f64;

    fn grid(&self) -> Grid {
        self.grid
    }

    fn unary(&self, site: usize, x: f64) -> f64 {
        self.unary_at(self.y[site], x)
    }

    fn pair(&self, a: f64, b: f64) -> f64 {
        let d = a - b;
        -0.5 * self.lambda1 * d * d
    }

    fn sample_initial(&self, site: usize, rng: &mut DcRng) -> f64 {
        self.inits[site].sample(rng)
    }

    fn log_initial(&self, site: usize, x: f64) -> f64 {
        self.inits[site].log_sampler_density(x)
    }

    fn propose_move(&self, _site: usize, x: f64, rng: &mut DcRng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        x + self.proposal_sd * z
    }

    fn kernel(&self) -> MarkovKernelSpec {
        MarkovKernelSpec::RandomWalk { proposal_sd: self.proposal_sd }
    }
}
