//! Ferromagnetic Ising model on a periodic square lattice.

use rand::Rng;

use super::lattice::{Grid, SiteModel};
use crate::annealing::MarkovKernelSpec;
use crate::error::{DcError, Result};
use crate::particle::DcRng;

/// Spins in `{-1, +1}` with density proportional to `exp(-β E(x))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsingLattice {
    pub grid: Grid,
    pub beta: f64,
}

impl IsingLattice {
    pub fn square(m: usize, beta: f64) -> Self {
        Self { grid: Grid::square(m), beta }
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.grid.edges()
    }
}

/// `E(x) = -Σ x_k x_l` over every periodic nearest-neighbour edge.
pub fn ising_energy(lattice: &IsingLattice, config: &[i8]) -> Result<f64> {
    if config.len() != lattice.grid.sites() {
        return Err(DcError::DimensionMismatch { expected: lattice.grid.sites(), found: config.len() });
    }
    Ok(-lattice
        .grid
        .edges()
        .iter()
        .map(|&(a, b)| f64::from(config[a] * config[b]))
        .sum::<f64>())
}

/// The single-flip Metropolis–Hastings kernel used for spin models.
pub fn single_flip_kernel(_lattice: &IsingLattice) -> MarkovKernelSpec {
    MarkovKernelSpec::SingleFlip
}

impl SiteModel for IsingLattice {
    type Value = i8;

    fn grid(&self) -> Grid {
        self.grid
    }

    fn unary(&self, _site: usize, _x: i8) -> f64 {
        0.0
    }

    fn pair(&self, a: i8, b: i8) -> f64 {
        self.beta * f64::from(a * b)
    }

    fn sample_initial(&self, _site: usize, rng: &mut DcRng) -> i8 {
        if rng.random::<bool>() {
            1
        } else {
            -1
        }
    }

    fn log_initial(&self, _site: usize, _x: i8) -> f64 {
        -std::f64::consts::LN_2
    }

    fn propose_move(&self, _site: usize, x: i8, _rng: &mut DcRng) -> i8 {
        -x
    }

    fn kernel(&self) -> MarkovKernelSpec {
        MarkovKernelSpec::SingleFlip
    }
}
