//! Sequential importance resampling over a fixed sequence of targets.

use crate::error::{DcError, Result};
use crate::particle::{fold_logz, resample_indices, stage, ess, ParticlePopulation, ResampleScheme, SeedPath};

/// A sequence of targets over growing state spaces.
pub trait SequentialTarget {
    type State: Clone;

    fn steps(&self) -> usize;

    /// Extends `prev` (absent at the first step) by one step's proposal.
    fn propose(&self, step: usize, prev: Option<&Self::State>, rng: &mut crate::particle::DcRng) -> Result<Self::State>;

    /// `log γ_k(x) - log γ_{k-1}(x_prev) - log q_k(x | x_prev)`.
    fn log_increment(&self, step: usize, state: &Self::State) -> f64;

    /// Stream address used for the draws of `step`.
    fn seed(&self, master_seed: u64, step: usize) -> SeedPath;
}

/// Options for [`run_sir`].
#[derive(Debug, Clone, PartialEq)]
pub struct SirConfig {
    pub n: usize,
    pub scheme: ResampleScheme,
    /// Resample only when ESS falls below this fraction of N; `None`
    /// resamples before every step.
    pub resample_ess_fraction: Option<f64>,
}

impl SirConfig {
    pub fn new(n: usize) -> Self {
        Self { n, scheme: ResampleScheme::default(), resample_ess_fraction: None }
    }
}

/// Runs SIR and returns the final population with `log Ẑ`.
pub fn run_sir<T: SequentialTarget>(
    target: &T,
    cfg: &SirConfig,
    master_seed: u64,
) -> Result<(ParticlePopulation<T::State>, f64)> {
    if cfg.n == 0 {
        return Err(DcError::EmptyPopulation);
    }
    let mut pop: Option<ParticlePopulation<T::State>> = None;
    for step in 0..target.steps() {
        let seed = target.seed(master_seed, step);
        let (parents, log_w, log_z_hat): (Vec<Option<&T::State>>, Vec<f64>, f64) = match &pop {
            None => (vec![None; cfg.n], vec![0.0; cfg.n], 0.0),
            Some(p) => {
                let keep = match cfg.resample_ess_fraction {
                    Some(f) => ess(&p.log_weights)? >= f * cfg.n as f64,
                    None => false,
                };
                if keep {
                    (p.states.iter().map(Some).collect(), p.log_weights.clone(), p.log_z_hat)
                } else {
                    let mut rng = seed.stage(stage::resample_child(0)).rng();
                    let idx = resample_indices(&p.log_weights, cfg.n, cfg.scheme, &mut rng)?;
                    (idx.iter().map(|&i| Some(&p.states[i])).collect(), vec![0.0; cfg.n], fold_logz(p)?)
                }
            }
        };
        let mut rng = seed.stage(stage::propose()).rng();
        let mut states = Vec::with_capacity(cfg.n);
        let mut weights = Vec::with_capacity(cfg.n);
        for (parent, w) in parents.into_iter().zip(log_w) {
            let s = target.propose(step, parent, &mut rng)?;
            weights.push(w + target.log_increment(step, &s));
            states.push(s);
        }
        if weights.iter().all(|w| *w == f64::NEG_INFINITY) {
            return Err(DcError::AllWeightsZero);
        }
        pop = Some(ParticlePopulation::new(states, weights, log_z_hat)?);
    }
    let pop = pop.ok_or(DcError::EmptyPopulation)?;
    let log_z = fold_logz(&pop)?;
    Ok((pop, log_z))
}
