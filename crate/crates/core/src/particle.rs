//! Weighted particle populations and the log-space arithmetic around them.
//!
//! Weights are always stored as natural logarithms. Every reduction shifts by
//! the running maximum before exponentiating so that populations whose
//! log-weights sit far from zero (lattice models routinely produce values in
//! the thousands) neither overflow nor underflow.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

use crate::error::{DcError, Result};

/// Random stream type used throughout the engine.
pub type DcRng = ChaCha12Rng;

/// States, log-weights and the running log normalizer of one population.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticlePopulation<S> {
    pub states: Vec<S>,
    pub log_weights: Vec<f64>,
    pub log_z_hat: f64,
}

impl<S> ParticlePopulation<S> {
    /// Builds a population, checking that states and weights line up.
    pub fn new(states: Vec<S>, log_weights: Vec<f64>, log_z_hat: f64) -> Result<Self> {
        if states.is_empty() {
            return Err(DcError::EmptyPopulation);
        }
        if states.len() != log_weights.len() {
            return Err(DcError::DimensionMismatch {
                expected: states.len(),
                found: log_weights.len(),
            });
        }
        Ok(Self { states, log_weights, log_z_hat })
    }

    /// Unit-weight population with a zero running normalizer.
    pub fn unweighted(states: Vec<S>) -> Result<Self> {
        let n = states.len();
        Self::new(states, vec![0.0; n], 0.0)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Normalized weights of this population.
    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        normalize(&self.log_weights)
    }

    /// Self-normalized estimate of `E[f(X)]`.
    pub fn expectation<F: Fn(&S) -> f64>(&self, f: F) -> Result<f64> {
        let w = self.normalized_weights()?;
        Ok(self.states.iter().zip(&w).map(|(s, wi)| wi * f(s)).sum())
    }
}

/// Deterministic address of a random stream.
///
/// The stream depends only on the master seed, the child-index path from the
/// root to the node doing the drawing, and a stage tag naming the purpose of
/// the draws. Two runs that agree on these three values draw the same
/// numbers no matter which thread, process or host evaluates them.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SeedPath {
    pub master_seed: u64,
    pub path: Vec<u32>,
    pub stage: u64,
}

impl SeedPath {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed, path: Vec::new(), stage: 0 }
    }

    pub fn with_path(master_seed: u64, path: Vec<u32>) -> Self {
        Self { master_seed, path, stage: 0 }
    }

    /// Stream address of the `index`-th child.
    pub fn child(&self, index: u32) -> Self {
        let mut path = self.path.clone();
        path.push(index);
        Self { master_seed: self.master_seed, path, stage: 0 }
    }

    /// Same node, different purpose.
    pub fn stage(&self, stage: u64) -> Self {
        Self { master_seed: self.master_seed, path: self.path.clone(), stage }
    }

    /// 32-byte key derived by hashing the full address.
    pub fn key(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"dcsmc/seedpath/v1");
        h.update(self.master_seed.to_le_bytes());
        h.update((self.path.len() as u64).to_le_bytes());
        for p in &self.path {
            h.update(p.to_le_bytes());
        }
        h.update(self.stage.to_le_bytes());
        let digest = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        key
    }

    /// Fresh generator positioned at the start of this address's stream.
    pub fn rng(&self) -> DcRng {
        DcRng::from_seed(self.key())
    }

    /// A 64-bit seed derived from this address, for seeding nested runs.
    pub fn derive_u64(&self) -> u64 {
        let k = self.key();
        u64::from_le_bytes(k[..8].try_into().expect("8 bytes"))
    }
}

/// Stage tags used by the tree recursion.
pub mod stage {
    const TAG_SHIFT: u32 = 56;

    fn tagged(tag: u64, index: u64) -> u64 {
        (tag << TAG_SHIFT) | (index & ((1u64 << TAG_SHIFT) - 1))
    }

    /// Incremental proposals at a node.
    pub fn propose() -> u64 {
        tagged(1, 0)
    }

    /// Resampling of the `child`-th child population before merging.
    pub fn resample_child(child: usize) -> u64 {
        tagged(2, child as u64)
    }

    /// Draws from the mixture-merge table.
    pub fn mixture() -> u64 {
        tagged(3, 0)
    }

    /// Optional resampling inside the `step`-th tempering iteration.
    pub fn anneal_resample(step: usize) -> u64 {
        tagged(4, step as u64)
    }

    /// Markov moves inside the `step`-th tempering iteration.
    pub fn anneal_move(step: usize) -> u64 {
        tagged(5, step as u64)
    }

    /// Replicate `r` of an experiment batch.
    pub fn replicate(r: usize) -> u64 {
        tagged(6, r as u64)
    }

    /// Free-form stage for baselines and tests.
    pub fn custom(index: u64) -> u64 {
        tagged(7, index)
    }
}

fn max_finite_or_err(log_weights: &[f64]) -> Result<f64> {
    let m = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return Err(DcError::AllWeightsZero);
    }
    Ok(m)
}

/// `log Σ exp(x_i)` with a max shift.
pub fn log_sum_exp(log_weights: &[f64]) -> Result<f64> {
    let m = max_finite_or_err(log_weights)?;
    if m == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    let s: f64 = log_weights.iter().map(|&x| (x - m).exp()).sum();
    Ok(m + s.ln())
}

/// `log (1/n) Σ exp(x_i)`.
pub fn log_mean_exp(log_weights: &[f64]) -> Result<f64> {
    Ok(log_sum_exp(log_weights)? - (log_weights.len() as f64).ln())
}

/// Normalized probabilities from log-weights.
pub fn normalize(log_weights: &[f64]) -> Result<Vec<f64>> {
    let m = max_finite_or_err(log_weights)?;
    let mut w: Vec<f64> = log_weights.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = w.iter().sum();
    for wi in &mut w {
        *wi /= s;
    }
    Ok(w)
}

/// Effective sample size `(Σw)² / Σw²`.
pub fn ess(log_weights: &[f64]) -> Result<f64> {
    let m = max_finite_or_err(log_weights)?;
    let (s1, s2) = log_weights.iter().fold((0.0, 0.0), |(a, b), &x| {
        let w = (x - m).exp();
        (a + w, b + w * w)
    });
    Ok(s1 * s1 / s2)
}

/// Conditional effective sample size of a one-step reweighting.
///
/// `prev_norm_weights` are the normalized weights before the step and
/// `incremental_log_weights` the log of the per-particle increments. The
/// result is `N (Σ W a)² / Σ W a²` and lies in `(0, N]`.
pub fn cess(prev_norm_weights: &[f64], incremental_log_weights: &[f64]) -> Result<f64> {
    if prev_norm_weights.len() != incremental_log_weights.len() {
        return Err(DcError::DimensionMismatch {
            expected: prev_norm_weights.len(),
            found: incremental_log_weights.len(),
        });
    }
    let n = prev_norm_weights.len() as f64;
    let m = incremental_log_weights
        .iter()
        .zip(prev_norm_weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&a, _)| a)
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return Err(DcError::AllWeightsZero);
    }
    let (s1, s2) = incremental_log_weights
        .iter()
        .zip(prev_norm_weights)
        .fold((0.0, 0.0), |(a, b), (&la, &w)| {
            let x = (la - m).exp();
            (a + w * x, b + w * x * x)
        });
    if s1 <= 0.0 {
        return Err(DcError::AllWeightsZero);
    }
    Ok(n * s1 * s1 / s2)
}

/// `log_z_hat + log mean exp(log_weights)`.
pub fn fold_logz<S>(pop: &ParticlePopulation<S>) -> Result<f64> {
    Ok(pop.log_z_hat + log_mean_exp(&pop.log_weights)?)
}

/// Resampling schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResampleScheme {
    Multinomial,
    Residual,
    #[default]
    Systematic,
}

impl std::str::FromStr for ResampleScheme {
    type Err = DcError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multinomial" => Ok(Self::Multinomial),
            "residual" => Ok(Self::Residual),
            "systematic" => Ok(Self::Systematic),
            other => Err(DcError::InvalidConfig(format!("unknown resampling scheme `{other}`"))),
        }
    }
}

/// Cumulative sums of normalized weights, forced to 1 from the last
/// positive entry on so rounding can never select a zero-mass particle.
fn cumulative(w: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut c: Vec<f64> = w
        .iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect();
    if let Some(last) = w.iter().rposition(|&x| x > 0.0) {
        for x in &mut c[last..] {
            *x = 1.0;
        }
    }
    c
}

/// Index of the first cumulative entry strictly above `u`, skipping
/// zero-mass entries.
fn search(cum: &[f64], u: f64) -> usize {
    let i = cum.partition_point(|&c| c <= u);
    i.min(cum.len() - 1)
}

fn multinomial_indices(w: &[f64], count: usize, rng: &mut DcRng) -> Vec<usize> {
    let cum = cumulative(w);
    (0..count).map(|_| search(&cum, rng.random::<f64>())).collect()
}

/// Ancestor indices drawn from normalized `log_weights`.
///
/// Residual and systematic outputs are shuffled uniformly so that pairing
/// outputs of independent populations by position is exchangeable.
pub fn resample_indices(
    log_weights: &[f64],
    count: usize,
    scheme: ResampleScheme,
    rng: &mut DcRng,
) -> Result<Vec<usize>> {
    let w = normalize(log_weights)?;
    let mut idx = match scheme {
        ResampleScheme::Multinomial => return Ok(multinomial_indices(&w, count, rng)),
        ResampleScheme::Residual => {
            let mut out = Vec::with_capacity(count);
            let mut residual = Vec::with_capacity(w.len());
            for (i, &wi) in w.iter().enumerate() {
                let target = wi * count as f64;
                let copies = target.floor();
                for _ in 0..copies as usize {
                    out.push(i);
                }
                residual.push(target - copies);
            }
            let remaining = count.saturating_sub(out.len());
            if remaining > 0 {
                let total: f64 = residual.iter().sum();
                if total > 0.0 {
                    for r in &mut residual {
                        *r /= total;
                    }
                    out.extend(multinomial_indices(&residual, remaining, rng));
                } else {
                    out.extend(multinomial_indices(&w, remaining, rng));
                }
            }
            out.truncate(count);
            out
        }
        ResampleScheme::Systematic => {
            let cum = cumulative(&w);
            let u0: f64 = rng.random::<f64>();
            let step = 1.0 / count as f64;
            let mut out = Vec::with_capacity(count);
            let mut j = 0;
            for k in 0..count {
                let u = (u0 + k as f64) * step;
                while j + 1 < cum.len() && cum[j] <= u {
                    j += 1;
                }
                out.push(j);
            }
            out
        }
    };
    idx.shuffle(rng);
    Ok(idx)
}

/// Resamples `pop` to unit weights, keeping its running normalizer.
pub fn resample_with<S: Clone>(
    pop: &ParticlePopulation<S>,
    scheme: ResampleScheme,
    rng: &mut DcRng,
) -> Result<ParticlePopulation<S>> {
    let n = pop.len();
    let idx = resample_indices(&pop.log_weights, n, scheme, rng)?;
    Ok(ParticlePopulation {
        states: idx.iter().map(|&i| pop.states[i].clone()).collect(),
        log_weights: vec![0.0; n],
        log_z_hat: pop.log_z_hat,
    })
}

/// Resamples using the stream addressed by `seed`.
pub fn resample<S: Clone>(
    pop: &ParticlePopulation<S>,
    scheme: ResampleScheme,
    seed: &SeedPath,
) -> Result<ParticlePopulation<S>> {
    resample_with(pop, scheme, &mut seed.rng())
}
