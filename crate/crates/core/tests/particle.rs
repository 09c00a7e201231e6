mod common;

use approx::assert_relative_eq;
use dcsmc::particle::{log_mean_exp, resample_indices, stage};
use dcsmc::{cess, ess, fold_logz, log_sum_exp, normalize, resample, DcError, ParticlePopulation, ResampleScheme, SeedPath};
use proptest::prelude::*;

use common::{chi_square_p, mean_se};

const SCHEMES: [ResampleScheme; 3] = [ResampleScheme::Multinomial, ResampleScheme::Residual, ResampleScheme::Systematic];

#[test]
fn normalize_equal_weights() {
    assert_eq!(normalize(&[0.0; 4]).unwrap(), vec![0.25; 4]);
}

#[test]
fn normalize_is_proportional() {
    let w = normalize(&[1f64.ln(), 3f64.ln()]).unwrap();
    assert_relative_eq!(w[0], 0.25, epsilon = 1e-15);
    assert_relative_eq!(w[1], 0.75, epsilon = 1e-15);
}

#[test]
fn normalize_survives_extreme_offsets() {
    // `-1000 + ln 2` is itself only representable to about 1e-13.
    let w = normalize(&[-1000.0, -1000.0 + 2f64.ln()]).unwrap();
    assert_relative_eq!(w[0], 1.0 / 3.0, epsilon = 1e-12);
    assert_relative_eq!(w[1], 2.0 / 3.0, epsilon = 1e-12);
}

#[test]
fn all_zero_weights_are_an_error() {
    let dead = [f64::NEG_INFINITY; 3];
    assert!(matches!(normalize(&dead), Err(DcError::AllWeightsZero)));
    assert!(matches!(ess(&dead), Err(DcError::AllWeightsZero)));
    assert!(matches!(log_sum_exp(&dead), Err(DcError::AllWeightsZero)));
}

#[test]
fn single_zero_weight_is_legal() {
    let w = normalize(&[0.0, f64::NEG_INFINITY]).unwrap();
    assert_eq!(w, vec![1.0, 0.0]);
}

#[test]
fn ess_reference_values() {
    assert_relative_eq!(ess(&[0.7; 9]).unwrap(), 9.0, epsilon = 1e-12);
    let mut one = vec![f64::NEG_INFINITY; 6];
    one[4] = -2.0;
    assert_eq!(ess(&one).unwrap(), 1.0);
    assert_relative_eq!(ess(&[0.0, 3f64.ln()]).unwrap(), 1.6, epsilon = 1e-14);
}

#[test]
fn cess_reference_values() {
    assert_relative_eq!(cess(&[0.2; 5], &[1.3; 5]).unwrap(), 5.0, epsilon = 1e-12);
    // Increments [1, 0] on uniform weights.
    assert_relative_eq!(cess(&[0.5, 0.5], &[0.0, f64::NEG_INFINITY]).unwrap(), 1.0, epsilon = 1e-14);
    // Increments [2, 1] on [1/4, 3/4]: N (Σ W a)² / Σ W a² = 2 · 1.25² / 1.75.
    let v = cess(&[0.25, 0.75], &[2f64.ln(), 0.0]).unwrap();
    assert_relative_eq!(v, 2.0 * 1.5625 / 1.75, epsilon = 1e-14);
}

#[test]
fn cess_rejects_mismatched_lengths() {
    assert!(matches!(cess(&[0.5, 0.5], &[0.0]), Err(DcError::DimensionMismatch { .. })));
}

#[test]
fn fold_logz_reference_values() {
    let p = ParticlePopulation::new(vec![(); 4], vec![0.0; 4], 0.0).unwrap();
    assert_eq!(fold_logz(&p).unwrap(), 0.0);
    let p = ParticlePopulation::new(vec![(); 3], vec![3f64.ln(); 3], 2f64.ln()).unwrap();
    assert_relative_eq!(fold_logz(&p).unwrap(), 6f64.ln(), epsilon = 1e-15);
}

#[test]
fn population_shape_is_checked() {
    assert!(ParticlePopulation::new(vec![1, 2], vec![0.0], 0.0).is_err());
    assert!(ParticlePopulation::<u8>::new(vec![], vec![], 0.0).is_err());
}

#[test]
fn degenerate_weights_copy_one_state_under_every_scheme() {
    for scheme in SCHEMES {
        let mut lw = vec![f64::NEG_INFINITY; 7];
        lw[2] = 0.0;
        let p = ParticlePopulation::new((0..7).collect(), lw, 0.4).unwrap();
        let r = resample(&p, scheme, &SeedPath::new(5)).unwrap();
        assert_eq!(r.states, vec![2; 7], "{scheme:?}");
        assert_eq!(r.log_weights, vec![0.0; 7]);
        assert_eq!(r.log_z_hat, 0.4);
    }
}

#[test]
fn systematic_with_equal_weights_copies_each_particle_once() {
    for seed in 0..20 {
        let mut idx = resample_indices(&[0.0; 16], 16, ResampleScheme::Systematic, &mut SeedPath::new(seed).rng()).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, (0..16).collect::<Vec<_>>());
    }
}

#[test]
fn multinomial_copy_count_mean() {
    let reps = 100_000;
    let counts: Vec<f64> = (0..reps)
        .map(|r| {
            let idx = resample_indices(
                &[0.0, 0.0],
                2,
                ResampleScheme::Multinomial,
                &mut SeedPath::new(17).stage(stage::replicate(r)).rng(),
            )
            .unwrap();
            idx.iter().filter(|&&i| i == 1).count() as f64
        })
        .collect();
    let (mean, _) = mean_se(&counts);
    let sigma = 0.5f64.sqrt() / (reps as f64).sqrt();
    assert!((mean - 1.0).abs() <= 3.0 * sigma, "mean copies {mean}");
}

#[test]
fn resampling_is_unbiased_for_every_scheme() {
    let w = [0.05, 0.3, 0.15, 0.4, 0.1];
    let lw: Vec<f64> = w.iter().map(|x: &f64| x.ln()).collect();
    let n = 5;
    let reps = 20_000;
    for scheme in SCHEMES {
        // Total copies are fixed at n, so pool copies across replicates and
        // compare the pooled proportions with W.
        let mut copies = vec![0u64; w.len()];
        for r in 0..reps {
            let mut rng = SeedPath::new(99).stage(stage::replicate(r)).rng();
            for i in resample_indices(&lw, n, scheme, &mut rng).unwrap() {
                copies[i] += 1;
            }
        }
        let mean: Vec<f64> = copies.iter().map(|&c| c as f64 / reps as f64).collect();
        for (m, wi) in mean.iter().zip(&w) {
            assert!((m - n as f64 * wi).abs() < 0.03, "{scheme:?}: {mean:?}");
        }
        if scheme == ResampleScheme::Multinomial {
            assert!(chi_square_p(&copies, &w) > 1e-3, "{scheme:?}: {copies:?}");
        }
    }
}

#[test]
fn output_slot_is_exchangeable() {
    let w = [0.1, 0.2, 0.3, 0.4];
    let lw: Vec<f64> = w.iter().map(|x: &f64| x.ln()).collect();
    for scheme in SCHEMES {
        let mut first = vec![0u64; 4];
        for r in 0..40_000 {
            let mut rng = SeedPath::new(3).stage(stage::replicate(r)).rng();
            first[resample_indices(&lw, 4, scheme, &mut rng).unwrap()[0]] += 1;
        }
        let p = chi_square_p(&first, &w);
        assert!(p > 1e-3, "{scheme:?}: {first:?} p={p}");
    }
}

#[test]
fn resampled_population_has_full_ess() {
    let p = ParticlePopulation::new((0..8).collect::<Vec<u32>>(), vec![0.1, -3.0, 2.0, 0.0, -1.0, 0.5, 0.2, -0.7], 0.0).unwrap();
    for scheme in SCHEMES {
        let r = resample(&p, scheme, &SeedPath::new(1)).unwrap();
        assert_eq!(ess(&r.log_weights).unwrap(), 8.0);
    }
}

#[test]
fn seed_paths_separate_streams() {
    let a = SeedPath::new(1).child(0).stage(stage::propose()).derive_u64();
    let b = SeedPath::new(1).child(1).stage(stage::propose()).derive_u64();
    let c = SeedPath::new(1).child(0).stage(stage::mixture()).derive_u64();
    let again = SeedPath::new(1).child(0).stage(stage::propose()).derive_u64();
    assert_eq!(a, again);
    assert!(a != b && a != c && b != c);
}

fn log_weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..30.0, 1..40)
}

proptest! {
    #[test]
    fn normalize_is_shift_invariant(lw in log_weights(), shift in -500.0f64..500.0) {
        let shifted: Vec<f64> = lw.iter().map(|x| x + shift).collect();
        let (a, b) = (normalize(&lw).unwrap(), normalize(&shifted).unwrap());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ess_is_shift_invariant_and_bounded(lw in log_weights(), shift in -500.0f64..500.0) {
        let shifted: Vec<f64> = lw.iter().map(|x| x + shift).collect();
        let (a, b) = (ess(&lw).unwrap(), ess(&shifted).unwrap());
        prop_assert!((a - b).abs() <= 1e-9 * a);
        prop_assert!(a >= 1.0 - 1e-12 && a <= lw.len() as f64 + 1e-9);
    }

    #[test]
    fn cess_is_shift_invariant_and_bounded(lw in log_weights(), seed in any::<u64>(), shift in -500.0f64..500.0) {
        let w = normalize(&lw).unwrap();
        let inc: Vec<f64> = (0..w.len()).map(|i| ((seed.rotate_left(i as u32) % 1000) as f64) / 50.0 - 10.0).collect();
        let shifted: Vec<f64> = inc.iter().map(|x| x + shift).collect();
        let (a, b) = (cess(&w, &inc).unwrap(), cess(&w, &shifted).unwrap());
        prop_assert!((a - b).abs() <= 1e-9 * a);
        prop_assert!(a > 0.0 && a <= w.len() as f64 * (1.0 + 1e-12));
    }

    #[test]
    fn fold_logz_shifts_by_the_constant(lw in log_weights(), shift in -500.0f64..500.0, base in -5.0f64..5.0) {
        let n = lw.len();
        let p = ParticlePopulation::new(vec![(); n], lw.clone(), base).unwrap();
        let q = ParticlePopulation::new(vec![(); n], lw.iter().map(|x| x + shift).collect(), base).unwrap();
        let d = fold_logz(&q).unwrap() - fold_logz(&p).unwrap();
        prop_assert!((d - shift).abs() <= 1e-9 * (1.0 + shift.abs()));
    }

    #[test]
    fn log_mean_exp_matches_direct_sum(lw in prop::collection::vec(-20.0f64..20.0, 1..30)) {
        let direct = (lw.iter().map(|x| x.exp()).sum::<f64>() / lw.len() as f64).ln();
        prop_assert!((log_mean_exp(&lw).unwrap() - direct).abs() < 1e-10);
    }

    #[test]
    fn resample_yields_valid_indices(lw in log_weights(), seed in any::<u64>(), scheme_ix in 0usize..3) {
        let scheme = SCHEMES[scheme_ix];
        let idx = resample_indices(&lw, lw.len(), scheme, &mut SeedPath::new(seed).rng()).unwrap();
        prop_assert_eq!(idx.len(), lw.len());
        prop_assert!(idx.iter().all(|&i| i < lw.len()));
    }
}
