//! Hyper-Erlang fitting by expectation maximisation.
//!
//! Initialisation is deterministic: the sorted sample is split into `m`
//! contiguous quantile blocks, each seeding one branch with its fraction as
//! the weight and its mean as the branch mean. For a fixed shape vector the
//! EM recurrence is
//!
//! ```text
//! q_ij = α_j f_j(x_i) / Σ_h α_h f_h(x_i)
//! α_j  = (1/n) Σ_i q_ij
//! λ_j  = k_j Σ_i q_ij / Σ_i q_ij x_i
//! ```
//!
//! iterated until the log-likelihood gain drops below `em_tol`. Shapes are
//! chosen by a single coordinate sweep, growing each branch's shape while
//! the EM-converged log-likelihood improves.

use crate::dist::{HyperErlangBranch, HyperErlangParams, PatchDistribution};

use super::{check_sample, FitError, FitOptions, FitReport};

/// Result of one EM run at a fixed shape vector.
#[derive(Debug, Clone)]
pub struct EmOutcome {
    pub params: HyperErlangParams,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood before each parameter update, in iteration order.
    pub trace: Vec<f64>,
}

/// Quantile-block starting point: weights, rates per branch for the given
/// shapes. The sample must already be sorted ascending.
fn quantile_init(sorted: &[f64], shapes: &[u32]) -> Vec<HyperErlangBranch> {
    let n = sorted.len();
    let m = shapes.len();
    (0..m)
        .map(|j| {
            let lo = j * n / m;
            let hi = ((j + 1) * n / m).max(lo + 1);
            let block = &sorted[lo..hi.min(n)];
            let mean = block.iter().sum::<f64>() / block.len() as f64;
            HyperErlangBranch {
                weight: block.len() as f64 / n as f64,
                shape: shapes[j],
                rate: f64::from(shapes[j]) / mean,
            }
        })
        .collect()
}

fn branch_log_pdf(b: &HyperErlangBranch, x: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let k = f64::from(b.shape);
    if x <= 0.0 {
        return if b.shape == 1 && x == 0.0 {
            b.rate.ln()
        } else {
            f64::NEG_INFINITY
        };
    }
    k * b.rate.ln() + (k - 1.0) * x.ln() - b.rate * x - ln_gamma(k)
}

/// Run EM to convergence for a fixed shape vector.
pub fn em_fit(x: &[f64], shapes: &[u32], opts: &FitOptions) -> Result<EmOutcome, FitError> {
    opts.check()?;
    check_sample(x, shapes.len().max(1))?;
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("samples are finite"));
    let mut branches = quantile_init(&sorted, shapes);
    let n = x.len();
    let m = branches.len();

    let mut log_weights = vec![0.0f64; m];
    let mut responsibilities = vec![0.0f64; m];
    let mut trace = Vec::new();
    let mut ll_prev = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..opts.em_max_iterations {
        iterations += 1;

        // E step: responsibilities and the current log-likelihood.
        let mut ll = 0.0;
        let mut weight_sums = vec![0.0f64; m];
        let mut weighted_x = vec![0.0f64; m];
        for &xi in x {
            let mut max = f64::NEG_INFINITY;
            for (j, b) in branches.iter().enumerate() {
                log_weights[j] = if b.weight > 0.0 {
                    b.weight.ln() + branch_log_pdf(b, xi)
                } else {
                    f64::NEG_INFINITY
                };
                max = max.max(log_weights[j]);
            }
            let norm: f64 = log_weights.iter().map(|lw| (lw - max).exp()).sum();
            let log_mix = max + norm.ln();
            ll += log_mix;
            for j in 0..m {
                responsibilities[j] = (log_weights[j] - log_mix).exp();
                weight_sums[j] += responsibilities[j];
                weighted_x[j] += responsibilities[j] * xi;
            }
        }
        trace.push(ll);
        if ll - ll_prev < opts.em_tol {
            converged = true;
            ll_prev = ll;
            break;
        }
        ll_prev = ll;

        // M step.
        for (j, b) in branches.iter_mut().enumerate() {
            b.weight = weight_sums[j] / n as f64;
            if weighted_x[j] > 0.0 {
                b.rate = f64::from(b.shape) * weight_sums[j] / weighted_x[j];
            }
        }
    }

    // Weights can drift off exact normalisation by accumulated rounding.
    let total: f64 = branches.iter().map(|b| b.weight).sum();
    for b in &mut branches {
        b.weight /= total;
    }

    Ok(EmOutcome {
        params: HyperErlangParams { branches },
        log_likelihood: ll_prev,
        iterations,
        converged,
        trace,
    })
}

/// Non-improving scan steps tolerated before a branch's shape row is
/// abandoned; absorbs isolated EM local-optimum dips along the row.
const SCAN_PATIENCE: u32 = 2;
/// Coordinate-ascent sweeps over the shape vector before giving up on a
/// fixed point.
const MAX_SWEEPS: usize = 5;

/// Scan one branch's shape from 1 upward, holding the others fixed, and
/// keep the row's best EM-converged log-likelihood.
fn scan_branch(
    x: &[f64],
    shapes: &mut [u32],
    j: usize,
    opts: &FitOptions,
) -> Result<EmOutcome, FitError> {
    let mut best: Option<(u32, EmOutcome)> = None;
    let mut misses = 0u32;
    for k in 1..=opts.shape_cap {
        shapes[j] = k;
        let candidate = em_fit(x, shapes, opts)?;
        match &best {
            Some((_, incumbent)) if candidate.log_likelihood <= incumbent.log_likelihood => {
                misses += 1;
                if misses > SCAN_PATIENCE {
                    break;
                }
            }
            _ => {
                misses = 0;
                best = Some((k, candidate));
            }
        }
    }
    let (k, outcome) = best.expect("at least one shape evaluated");
    shapes[j] = k;
    Ok(outcome)
}

/// Coordinate ascent over branch shapes: scan each branch in turn while
/// the others stay fixed, and repeat the sweep until the shape vector
/// stops changing. A single sweep can strand the fit in an EM local
/// optimum created by the still-unfitted branches, so sweeps iterate to a
/// fixed point (in practice two or three).
fn sweep_shapes(x: &[f64], m: usize, opts: &FitOptions) -> Result<(Vec<u32>, EmOutcome), FitError> {
    let mut shapes = vec![1u32; m];
    let mut outcome = em_fit(x, &shapes, opts)?;
    for _ in 0..MAX_SWEEPS {
        let previous = shapes.clone();
        for j in 0..m {
            outcome = scan_branch(x, &mut shapes, j, opts)?;
        }
        if shapes == previous {
            break;
        }
    }
    Ok((shapes, outcome))
}

pub(super) fn fit_hyper_erlang(
    x: &[f64],
    m: usize,
    opts: &FitOptions,
) -> Result<FitReport, FitError> {
    if m == 0 {
        return Err(FitError::TooFewSamples {
            got: x.len(),
            need: usize::MAX,
        });
    }
    check_sample(x, 5 * m)?;

    let mut warnings = Vec::new();
    let mut m_eff = m;
    let outcome = loop {
        let (_, outcome) = sweep_shapes(x, m_eff, opts)?;
        let collapsed = outcome.params.branches.iter().any(|b| b.weight < 1e-6);
        if collapsed && m_eff > 1 {
            warnings.push(format!(
                "branch weight collapsed below 1e-6; refitted with {} branches",
                m_eff - 1
            ));
            m_eff -= 1;
        } else {
            break outcome;
        }
    };

    // Canonical form: branches ordered by ascending mean.
    let mut params = outcome.params;
    params.branches.sort_by(|a, b| {
        let ma = f64::from(a.shape) / a.rate;
        let mb = f64::from(b.shape) / b.rate;
        ma.partial_cmp(&mb).expect("finite branch means")
    });

    let dist = PatchDistribution::HyperErlang(params);
    if !outcome.converged {
        warnings.push("EM stopped at the iteration cap".to_string());
    }
    Ok(FitReport {
        expected_phases: dist.expected_phases(),
        dist,
        log_likelihood: outcome.log_likelihood,
        n: x.len(),
        iterations: outcome.iterations,
        converged: outcome.converged,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::ErlangParams;
    use crate::fit::{fit_erlang, fit_hyper_erlang};
    use crate::rng::substream;

    fn bimodal_sample(n: usize, seed: u64) -> Vec<f64> {
        // 50/50 mixture of Erlang(4, 0.1) and Erlang(4, 0.025).
        let fast = PatchDistribution::Erlang(ErlangParams::new(4, 0.1).unwrap());
        let slow = PatchDistribution::Erlang(ErlangParams::new(4, 0.025).unwrap());
        let mut rng = substream(seed, 0, 0);
        (0..n)
            .map(|_| {
                if rand::Rng::random::<f64>(&mut rng) < 0.5 {
                    fast.sample(&mut rng)
                } else {
                    slow.sample(&mut rng)
                }
            })
            .collect()
    }

    #[test]
    fn single_branch_matches_erlang_fit() {
        let x = bimodal_sample(400, 3);
        let opts = FitOptions::default();
        let he = fit_hyper_erlang(&x, 1, &opts).unwrap();
        let er = fit_erlang(&x, &opts).unwrap();
        assert!(
            (he.log_likelihood - er.log_likelihood).abs() < 1e-6,
            "HE1 {} vs Erlang {}",
            he.log_likelihood,
            er.log_likelihood
        );
        let PatchDistribution::HyperErlang(p) = &he.dist else {
            panic!("expected hyper-Erlang")
        };
        let PatchDistribution::Erlang(e) = &er.dist else {
            panic!("expected Erlang")
        };
        assert_eq!(p.branches[0].shape, e.shape);
        assert!((p.branches[0].rate - e.rate).abs() / e.rate < 1e-9);
    }

    #[test]
    fn recovers_bimodal_mixture() {
        let x = bimodal_sample(1000, 8);
        let report = fit_hyper_erlang(&x, 2, &FitOptions::default()).unwrap();
        let PatchDistribution::HyperErlang(p) = &report.dist else {
            panic!("expected hyper-Erlang")
        };
        assert_eq!(p.branches.len(), 2);
        // Branches sorted by mean: fast one first (truth mean 40), slow
        // second (truth mean 160).
        let m0 = f64::from(p.branches[0].shape) / p.branches[0].rate;
        let m1 = f64::from(p.branches[1].shape) / p.branches[1].rate;
        assert!(
            (p.branches[0].weight - 0.5).abs() < 0.05,
            "α0 {}",
            p.branches[0].weight
        );
        assert!((m0 - 40.0).abs() / 40.0 < 0.10, "mean0 {m0}");
        assert!((m1 - 160.0).abs() / 160.0 < 0.10, "mean1 {m1}");
    }

    #[test]
    fn em_trace_is_monotone() {
        for seed in 0..4 {
            let x = bimodal_sample(300, 40 + seed);
            let out = em_fit(&x, &[3, 5], &FitOptions::default()).unwrap();
            for w in out.trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "EM regressed: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn needs_five_samples_per_branch() {
        let x: Vec<f64> = (1..=9).map(f64::from).collect();
        assert_eq!(
            fit_hyper_erlang(&x, 2, &FitOptions::default()),
            Err(FitError::TooFewSamples { got: 9, need: 10 })
        );
    }

    #[test]
    fn richer_family_does_not_lose_much() {
        let x = bimodal_sample(600, 12);
        let opts = FitOptions::default();
        let two = fit_hyper_erlang(&x, 2, &opts).unwrap();
        let three = fit_hyper_erlang(&x, 3, &opts).unwrap();
        assert!(
            three.log_likelihood >= two.log_likelihood - 0.5,
            "3-branch {} vs 2-branch {}",
            three.log_likelihood,
            two.log_likelihood
        );
    }
}
