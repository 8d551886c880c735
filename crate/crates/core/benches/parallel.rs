//! Sequential vs parallel throughput on the two data-parallel workloads:
//! Monte Carlo journey simulation and the per-patch fit table.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use punctual_core::dist::{
    ErlangParams, ErlangPlusCParams, HyperErlangBranch, HyperErlangParams, PatchDistribution,
};
use punctual_core::exec::Execution;
use punctual_core::fit::{model_selection_table, FitFamily, FitOptions};
use punctual_core::pta::build_pta;
use punctual_core::rng::substream;
use punctual_core::smc::{estimate_probability, Comparison, Query, SmcOptions};

fn ten_patch_model() -> punctual_core::pta::Pta {
    let mut dists = Vec::new();
    for i in 0..10u32 {
        dists.push(match i % 3 {
            0 => PatchDistribution::Erlang(ErlangParams::new(8, 0.08).unwrap()),
            1 => PatchDistribution::HyperErlang(
                HyperErlangParams::new(vec![
                    HyperErlangBranch {
                        weight: 0.4938,
                        shape: 6,
                        rate: 0.07,
                    },
                    HyperErlangBranch {
                        weight: 0.5062,
                        shape: 12,
                        rate: 0.1,
                    },
                ])
                .unwrap(),
            ),
            _ => PatchDistribution::ErlangPlusC(ErlangPlusCParams::new(4, 0.05, 60.0).unwrap()),
        });
    }
    build_pta(&dists).unwrap()
}

fn bench_smc(c: &mut Criterion) {
    let pta = ten_patch_model();
    let mut group = c.benchmark_group("smc_fixed_runs");
    group.sample_size(10);
    for (label, execution) in [
        ("sequential", Execution::Sequential),
        ("parallel", Execution::Parallel),
    ] {
        group.bench_with_input(
            BenchmarkId::from_parameter(label),
            &execution,
            |b, &execution| {
                let opts = SmcOptions {
                    seed: 7,
                    fixed_runs: Some(50_000),
                    execution,
                    ..SmcOptions::default()
                };
                let query = Query::ProbReachByDeadline {
                    deadline: 1500.0,
                    comparison: Comparison::AtMost,
                };
                b.iter(|| black_box(estimate_probability(&pta, &query, &opts).unwrap()));
            },
        );
    }
    group.finish();
}

fn bench_fit_table(c: &mut Criterion) {
    // One bimodal sample per patch, shared across strategies.
    let samples: Vec<(usize, Vec<f64>)> = (0..8usize)
        .map(|p| {
            let fast = PatchDistribution::Erlang(ErlangParams::new(4, 0.1).unwrap());
            let slow = PatchDistribution::Erlang(ErlangParams::new(4, 0.025).unwrap());
            let mut rng = substream(100 + p as u64, 0, 0);
            let xs = (0..400)
                .map(|i| {
                    if i % 2 == 0 {
                        fast.sample(&mut rng)
                    } else {
                        slow.sample(&mut rng)
                    }
                })
                .collect();
            (p, xs)
        })
        .collect();
    let families = [
        FitFamily::Erlang,
        FitFamily::HyperErlang { branches: 2 },
        FitFamily::ErlangPlusC,
    ];
    let opts = FitOptions::default();

    let mut group = c.benchmark_group("fit_table");
    group.sample_size(10);
    for (label, execution) in [
        ("sequential", Execution::Sequential),
        ("parallel", Execution::Parallel),
    ] {
        group.bench_with_input(
            BenchmarkId::from_parameter(label),
            &execution,
            |b, &execution| {
                b.iter(|| black_box(model_selection_table(&samples, &families, &opts, execution)));
            },
        );
    }
    group.finish();
}

criterion_group!(benches, bench_smc, bench_fit_table);
criterion_main!(benches);
