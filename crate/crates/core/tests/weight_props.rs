//! Property tests for the integer-weight conversion and the ascent's
//! improvement guarantee.

use proptest::prelude::*;

use punctual_core::dist::{ErlangPlusCParams, PatchDistribution};
use punctual_core::fit::{fit_erlang_plus_c, initial_shifted_params, log_likelihood, FitOptions};
use punctual_core::pta::alpha_to_integer_weights;
use punctual_core::rng::substream;

/// Random branch probabilities that are exact multiples of 1e-4, built
/// from an integer partition of 10^4 so the rounding step is lossless.
fn exact_alphas() -> impl Strategy<Value = Vec<f64>> {
    (2usize..=4)
        .prop_flat_map(|m| prop::collection::vec(1u32..=10_000, m))
        .prop_map(|raw| {
            let total: u64 = raw.iter().map(|&r| u64::from(r)).sum();
            // Largest-remainder apportionment of 10^4 units.
            let mut units: Vec<u64> = raw.iter().map(|&r| u64::from(r) * 10_000 / total).collect();
            let assigned: u64 = units.iter().sum();
            let m = units.len();
            for i in 0..(10_000 - assigned) as usize {
                units[i % m] += 1;
            }
            units.retain(|&u| u > 0);
            if units.len() < 2 {
                units = vec![5_000, 5_000];
            }
            units.iter().map(|&u| u as f64 / 10_000.0).collect()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// weight_i / Σ weights reproduces each probability exactly whenever
    /// the probabilities are exact 4-decimal rationals.
    #[test]
    fn weight_fidelity_is_exact(alphas in exact_alphas()) {
        let weights = alpha_to_integer_weights(&alphas, 4).unwrap();
        prop_assert_eq!(weights.len(), alphas.len());
        let total: u64 = weights.iter().sum();
        let g = weights.iter().fold(0u64, |acc, &w| gcd(acc, w));
        prop_assert_eq!(g, 1, "weights {:?} share a common divisor", weights);
        for (w, alpha) in weights.iter().zip(&alphas) {
            prop_assert_eq!(*w as f64 / total as f64, *alpha);
        }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// The ascent never returns a worse likelihood than its own starting
    /// point at the winning shape.
    #[test]
    fn ascent_improves_on_initialisation(seed in 0u64..500, n in 40usize..120) {
        let truth = PatchDistribution::ErlangPlusC(
            ErlangPlusCParams::new(2, 0.06, 50.0).unwrap(),
        );
        let mut rng = substream(90_000 + seed, 0, 0);
        let x: Vec<f64> = (0..n).map(|_| truth.sample(&mut rng)).collect();
        let report = fit_erlang_plus_c(&x, &FitOptions::default()).unwrap();
        let PatchDistribution::ErlangPlusC(p) = &report.dist else {
            panic!("expected shifted Erlang")
        };
        let (rate0, shift0) = initial_shifted_params(p.shape, &x);
        let init = PatchDistribution::ErlangPlusC(
            ErlangPlusCParams::new(p.shape, rate0, shift0).unwrap(),
        );
        let init_ll = log_likelihood(&init, &x).unwrap();
        prop_assert!(
            report.log_likelihood >= init_ll - 1e-9,
            "fit ll {} below its initialisation {}",
            report.log_likelihood,
            init_ll
        );
    }
}
