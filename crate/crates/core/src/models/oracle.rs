//! Exact normalizing constants for tiny instances, used as test oracles.

use super::gsm::GaussianSquaredLattice;
use super::hier::HierarchicalBinomial;
use super::ising::{ising_energy, IsingLattice};
use super::lattice::SiteModel;
use super::quad;
use crate::error::{DcError, Result};
use crate::particle::log_sum_exp;

/// Largest Ising lattice enumerated exhaustively.
pub const MAX_ENUMERATED_SITES: usize = 16;
/// Largest number of continuous dimensions integrated by nested quadrature.
pub const MAX_QUADRATURE_DIMS: usize = 3;

/// Models with an exact `log Z` for small sizes.
pub trait BruteForce {
    fn brute_force_log_z(&self) -> Result<f64>;
}

/// `log Z` of a small model by enumeration or nested quadrature.
pub fn brute_force_log_z<M: BruteForce + ?Sized>(model: &M) -> Result<f64> {
    model.brute_force_log_z()
}

/// `(log Z, E[E(x)])` of an Ising lattice by enumerating every configuration.
pub fn ising_enumerate(lattice: &IsingLattice) -> Result<(f64, f64)> {
    let n = lattice.grid.sites();
    if n > MAX_ENUMERATED_SITES {
        return Err(DcError::TooLarge(format!("{n} sites exceed the enumeration limit")));
    }
    let mut log_terms = Vec::with_capacity(1 << n);
    let mut energies = Vec::with_capacity(1 << n);
    let mut config = vec![0i8; n];
    for bits in 0u32..(1u32 << n) {
        for (k, s) in config.iter_mut().enumerate() {
            *s = if bits >> k & 1 == 1 { 1 } else { -1 };
        }
        let e = ising_energy(lattice, &config)?;
        energies.push(e);
        log_terms.push(-lattice.beta * e);
    }
    let log_z = log_sum_exp(&log_terms)?;
    let mean_energy = log_terms.iter().zip(&energies).map(|(l, e)| (l - log_z).exp() * e).sum();
    Ok((log_z, mean_energy))
}

impl BruteForce for IsingLattice {
    fn brute_force_log_z(&self) -> Result<f64> {
        ising_enumerate(self).map(|(z, _)| z)
    }
}

impl BruteForce for HierarchicalBinomial {
    fn brute_force_log_z(&self) -> Result<f64> {
        self.quadrature_log_z()
    }
}

impl BruteForce for GaussianSquaredLattice {
    fn brute_force_log_z(&self) -> Result<f64> {
        let n = self.grid.sites();
        if n > MAX_QUADRATURE_DIMS {
            return Err(DcError::TooLarge(format!("{n} continuous dimensions")));
        }
        let edges = self.grid.edges();
        let log_gamma = |x: &[f64]| -> f64 {
            let u: f64 = x.iter().enumerate().map(|(k, &v)| self.unary(k, v)).sum();
            u + edges.iter().map(|&(a, b)| self.pair(x[a], x[b])).sum::<f64>()
        };
        let modes: Vec<f64> = self.y.iter().map(|y| y.max(0.0).sqrt()).collect();
        let shift = log_gamma(&modes);
        let value = gsm_nested(self, &log_gamma, &mut vec![0.0; n], 0, shift)?;
        if !(value > 0.0 && value.is_finite()) {
            return Err(DcError::QuadratureNonFinite);
        }
        Ok(shift + value.ln())
    }
}

fn gsm_nested<F: Fn(&[f64]) -> f64>(
    model: &GaussianSquaredLattice,
    log_gamma: &F,
    point: &mut Vec<f64>,
    k: usize,
    shift: f64,
) -> Result<f64> {
    if k == point.len() {
        return Ok((log_gamma(point) - shift).exp());
    }
    let init = model.site_init(k);
    let m = model.y[k].max(0.0).sqrt();
    let failed = std::cell::Cell::new(false);
    let base = point.clone();
    let q = quad::integrate_with_breaks(
        |x| {
            let mut p = base.clone();
            p[k] = x;
            gsm_nested(model, log_gamma, &mut p, k + 1, shift).unwrap_or_else(|_| {
                failed.set(true);
                0.0
            })
        },
        init.lo,
        init.hi,
        &[-m, 0.0, m],
        0.0,
        1e-10,
    )?;
    if failed.get() {
        return Err(DcError::QuadratureNonFinite);
    }
    Ok(q.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_site_has_two_states() {
        let z = brute_force_log_z(&IsingLattice::square(1, 0.7)).unwrap();
        assert!((z - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn too_large_is_refused() {
        assert!(matches!(brute_force_log_z(&IsingLattice::square(5, 0.1)), Err(DcError::TooLarge(_))));
    }
}
