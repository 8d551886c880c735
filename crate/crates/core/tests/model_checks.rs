//! Cross-module checks: the simulated automaton against the analytic
//! distribution layer, interval coverage against an independent quadrature
//! oracle, and the phase-count throughput relation.

use punctual_core::dist::{
    ErlangParams, ErlangPlusCParams, HyperErlangBranch, HyperErlangParams, PatchDistribution,
};
use punctual_core::exec::Execution;
use punctual_core::pta::build_pta;
use punctual_core::smc::{estimate_probability, Comparison, Query, Simulator, SmcOptions};

fn erlang(shape: u32, rate: f64) -> PatchDistribution {
    PatchDistribution::Erlang(ErlangParams::new(shape, rate).unwrap())
}

fn hyper(branches: &[(f64, u32, f64)]) -> PatchDistribution {
    PatchDistribution::HyperErlang(
        HyperErlangParams::new(
            branches
                .iter()
                .map(|&(weight, shape, rate)| HyperErlangBranch {
                    weight,
                    shape,
                    rate,
                })
                .collect(),
        )
        .unwrap(),
    )
}

fn shifted(shape: u32, rate: f64, shift: f64) -> PatchDistribution {
    PatchDistribution::ErlangPlusC(ErlangPlusCParams::new(shape, rate, shift).unwrap())
}

/// Exact Erlang CDF via the finite sum 1 - e^{-λt} Σ_{j<k} (λt)^j / j!,
/// written independently of the library's incomplete-gamma route.
fn erlang_cdf_sum(shape: u32, rate: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let lt = rate * t;
    let mut term = 1.0;
    let mut acc = 1.0;
    for j in 1..shape {
        term *= lt / f64::from(j);
        acc += term;
    }
    1.0 - (-lt).exp() * acc
}

/// P(Exp(1) + Erlang(shape, rate) <= deadline) by Simpson quadrature of
/// the convolution integral.
fn convolution_probability(shape: u32, rate: f64, deadline: f64) -> f64 {
    let steps = 20_000usize;
    let h = deadline / steps as f64;
    let f = |x: f64| (-x).exp() * erlang_cdf_sum(shape, rate, deadline - x);
    let mut acc = f(0.0) + f(deadline);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * h);
    }
    acc * h / 3.0
}

#[test]
fn interval_brackets_quadrature_truth() {
    let pta = build_pta(&[erlang(5, 0.1)]).unwrap();
    let truth = convolution_probability(5, 0.1, 60.0);
    let opts = SmcOptions {
        seed: 99,
        fixed_runs: Some(40_000),
        ..SmcOptions::default()
    };
    let q = Query::ProbReachByDeadline {
        deadline: 60.0,
        comparison: Comparison::AtMost,
    };
    let est = estimate_probability(&pta, &q, &opts).unwrap();
    assert!(
        est.ci_low <= truth && truth <= est.ci_high,
        "CI [{}, {}] misses truth {truth}",
        est.ci_low,
        est.ci_high
    );
    assert!((est.point - truth).abs() < 0.01);
}

/// One-sample KS distance between simulated patch passage times and the
/// analytic cdf. Weight fractions with at most 4 decimals convert to
/// integer weights exactly, so the automaton realises the same law.
#[test]
fn pta_passage_times_match_distribution_law() {
    let crit = 1.94947 / (100_000f64).sqrt();
    let cases = [
        erlang(4, 0.08),
        hyper(&[(0.4938, 3, 0.05), (0.5062, 9, 0.2)]),
        shifted(2, 0.05, 80.0),
    ];
    for (i, dist) in cases.iter().enumerate() {
        let pta = build_pta(std::slice::from_ref(dist)).unwrap();
        // Skip the initial location's delay so runs are pure patch times.
        let sim = Simulator::with_initial_delay(&pta, false).unwrap();
        let mut runs = sim.collect_runs(500 + i as u64, 0, 100_000, Execution::Parallel);
        runs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = runs.len() as f64;
        let ks = runs
            .iter()
            .enumerate()
            .map(|(j, &t)| {
                let f = dist.cdf(t);
                ((j as f64 + 1.0) / n - f).max(f - j as f64 / n)
            })
            .fold(0.0, f64::max);
        assert!(ks < crit, "case {i}: KS {ks} >= {crit}");
    }
}

#[test]
fn runtime_scales_with_expected_phases() {
    // Same topology class, ~20x the phase count: simulation cost per run
    // should scale roughly linearly (asserted within a factor of 3).
    // Trials interleave the two models and the minimum per model is kept,
    // so contention from concurrently running test binaries cancels out.
    let light = build_pta(&[erlang(5, 0.05), erlang(5, 0.1)]).unwrap();
    let heavy = build_pta(&[erlang(100, 1.0), erlang(100, 2.0)]).unwrap();
    let phase_ratio = 200.0 / 10.0;

    let light_sim = Simulator::new(&light).unwrap();
    let heavy_sim = Simulator::new(&heavy).unwrap();
    let time_runs = |sim: &Simulator, trial: u64| {
        let start = std::time::Instant::now();
        let runs = sim.collect_runs(trial, 0, 40_000, Execution::Sequential);
        let elapsed = start.elapsed().as_secs_f64();
        assert_eq!(runs.len(), 40_000);
        elapsed
    };
    // Warm-up.
    let _ = time_runs(&light_sim, 0);
    let _ = time_runs(&heavy_sim, 0);
    let mut t_light = f64::INFINITY;
    let mut t_heavy = f64::INFINITY;
    for trial in 1..=5 {
        t_light = t_light.min(time_runs(&light_sim, trial));
        t_heavy = t_heavy.min(time_runs(&heavy_sim, trial));
    }
    let ratio = t_heavy / t_light;
    assert!(
        ratio > phase_ratio / 3.0 && ratio < phase_ratio * 3.0,
        "time ratio {ratio} vs phase ratio {phase_ratio}"
    );
}

#[test]
fn journey_mean_matches_closed_form_for_mixed_model() {
    let dists = vec![
        erlang(4, 0.05),
        hyper(&[(0.3, 2, 0.04), (0.7, 6, 0.12)]),
        shifted(3, 0.06, 45.0),
        erlang(7, 0.2),
    ];
    let pta = build_pta(&dists).unwrap();
    let closed_form = 1.0 + dists.iter().map(|d| d.mean()).sum::<f64>();
    assert!((pta.expected_time() - closed_form).abs() < 1e-9);
    let opts = SmcOptions {
        seed: 3,
        max_runs: 400_000,
        ..SmcOptions::default()
    };
    let est = punctual_core::smc::estimate_mean(&pta, &opts).unwrap();
    assert!(
        est.ci_low <= closed_form && closed_form <= est.ci_high,
        "CI [{}, {}] misses {closed_form}",
        est.ci_low,
        est.ci_high
    );
}
