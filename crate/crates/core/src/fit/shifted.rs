//! Shifted-Erlang ("Erlang+c") maximum-likelihood fitting.
//!
//! For a fixed shape `k` the log-likelihood over `(λ, c)` is maximised by
//! steepest ascent. Each iteration evaluates the analytic gradient, lays a
//! `2l + 1`-point grid over the step multiplier `u ∈ [-1, 1]` along the
//! gradient direction, brackets the first interior maximum, and contracts
//! the bracket golden-section style. The shape itself is found by scanning
//! `k` upward from 1 until the optimised log-likelihood drops.
//!
//! The likelihood is `-inf` wherever `λ ≤ 0`, `c < 0`, or `c ≥ min(x)`;
//! those grid points can never win the bracket scan. For `k = 1` the
//! gradient in `c` is `nλ > 0` everywhere, so the optimum sits on the
//! boundary; iterates are clamped to `c ≤ (1 - 1e-6) · min(x)` and the
//! ascent settles there.

use crate::dist::{ErlangPlusCParams, PatchDistribution};

use super::{check_sample, log_likelihood, FitError, FitOptions, FitReport};

/// Analytic partials of the shifted-Erlang log-likelihood:
/// `∂l/∂λ = n·k/λ - Σ(x_i - c)` and `∂l/∂c = n·λ - (k-1)·Σ 1/(x_i - c)`.
pub fn shifted_gradient(shape: u32, rate: f64, shift: f64, x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let k = f64::from(shape);
    let sum_shifted: f64 = x.iter().map(|&xi| xi - shift).sum();
    let d_rate = n * k / rate - sum_shifted;
    let d_shift = if shape == 1 {
        n * rate
    } else {
        n * rate - (k - 1.0) * x.iter().map(|&xi| 1.0 / (xi - shift)).sum::<f64>()
    };
    (d_rate, d_shift)
}

/// Starting point `c = 0.9 · min(x)`, `λ = k / (mean(x) - c)`.
pub fn initial_shifted_params(shape: u32, x: &[f64]) -> (f64, f64) {
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let shift = 0.9 * min;
    (f64::from(shape) / (mean - shift), shift)
}

struct Objective<'a> {
    shape: u32,
    x: &'a [f64],
    min_x: f64,
}

impl Objective<'_> {
    fn feasible(&self, rate: f64, shift: f64) -> bool {
        rate > 0.0 && shift >= 0.0 && shift < self.min_x
    }

    fn eval(&self, rate: f64, shift: f64) -> f64 {
        if !self.feasible(rate, shift) {
            return f64::NEG_INFINITY;
        }
        let d = PatchDistribution::ErlangPlusC(ErlangPlusCParams {
            shape: self.shape,
            rate,
            shift,
        });
        log_likelihood(&d, self.x).expect("sample checked non-empty")
    }

    fn clamp_shift(&self, shift: f64) -> f64 {
        let clamped = shift.clamp(0.0, self.min_x * (1.0 - 1e-6));
        // Iterates decaying towards zero land exactly on the bound so the
        // direction projection can take over.
        if clamped < self.min_x * 1e-9 {
            0.0
        } else {
            clamped
        }
    }
}

const GOLDEN_RATIO_CONJUGATE: f64 = 0.618_033_988_749_894_8;
const MAX_GRADIENT_HALVINGS: usize = 40;

struct AscentResult {
    rate: f64,
    shift: f64,
    log_likelihood: f64,
    iterations: usize,
    converged: bool,
}

fn ascend(obj: &Objective, opts: &FitOptions, rate0: f64, shift0: f64) -> AscentResult {
    let l = opts.section_subdivisions;
    let grid: Vec<f64> = (0..=2 * l).map(|i| i as f64 / l as f64 - 1.0).collect();
    let inner = 1.0 / l as f64;

    let mut rate = rate0;
    let mut shift = obj.clamp_shift(shift0);
    let mut ll = obj.eval(rate, shift);
    let mut converged = false;
    let mut iterations = 0;

    'outer: for _ in 0..opts.max_iterations {
        iterations += 1;
        let (grad_rate, mut grad_shift) = shifted_gradient(obj.shape, rate, shift, obj.x);

        // Project the direction onto the feasible box when the shift sits
        // on an active bound with the gradient pointing outward; otherwise
        // every probe lands outside the support and the rate never
        // finishes converging.
        let shift_ceiling = obj.min_x * (1.0 - 1e-6);
        if (shift <= 0.0 && grad_shift < 0.0) || (shift >= shift_ceiling && grad_shift > 0.0) {
            grad_shift = 0.0;
        }

        // The raw gradient is catastrophically ill-conditioned here: the
        // rate partial is O(n k / λ) while λ itself is O(1e-2), so steepest
        // ascent along it either leaves the feasible region or crawls.
        // Scale each component by the inverse of its own curvature
        // (|∂²l/∂λ²| = n k / λ²; |∂²l/∂c²| = (k-1) Σ 1/(x_i - c)²), which
        // turns the step into a diagonal-Newton direction with the same
        // signs. For k = 1 the likelihood is linear in c, so the c scale
        // falls back to the remaining headroom below min(x).
        let k = f64::from(obj.shape);
        let n = obj.x.len() as f64;
        let curv_rate = n * k / (rate * rate);
        let curv_shift = if obj.shape > 1 {
            (k - 1.0) * obj.x.iter().map(|&xi| (xi - shift).powi(-2)).sum::<f64>()
        } else {
            0.0
        };
        let shift_scale = if curv_shift > 0.0 {
            1.0 / curv_shift
        } else {
            let headroom = (obj.min_x * (1.0 - 1e-6) - shift).max(0.0);
            headroom / grad_shift.abs().max(f64::MIN_POSITIVE)
        };
        let mut g_rate = grad_rate / curv_rate;
        let mut g_shift = grad_shift * shift_scale;
        let mut any_finite = false;
        let mut scaled = false;
        for _ in 0..=MAX_GRADIENT_HALVINGS {
            let up = obj.eval(rate + inner * g_rate, shift + inner * g_shift);
            let down = obj.eval(rate - inner * g_rate, shift - inner * g_shift);
            any_finite |= up.is_finite() || down.is_finite();
            if up > ll || down > ll {
                scaled = true;
                break;
            }
            g_rate *= 0.5;
            g_shift *= 0.5;
        }
        if !scaled {
            // No improving step at any scale: the line optimum (often the
            // shift boundary) has been reached, unless the whole grid was
            // infeasible throughout.
            converged = any_finite;
            break 'outer;
        }

        let h = |u: f64| obj.eval(rate + u * g_rate, shift + u * g_shift);
        let values: Vec<f64> = grid.iter().map(|&u| h(u)).collect();

        // Smallest i with h(u_{i-1}) > h(u_i) brackets the line maximum in
        // [u_{i-2}, u_i]; refine and take the bracket centre.
        let mut u_star = None;
        for i in 2..=2 * l {
            if values[i - 1] > values[i] {
                let (mut a, mut b) = (grid[i - 2], grid[i]);
                for _ in 0..opts.line_search_steps {
                    let x1 = b - (b - a) * GOLDEN_RATIO_CONJUGATE;
                    let x2 = a + (b - a) * GOLDEN_RATIO_CONJUGATE;
                    if h(x1) < h(x2) {
                        a = x1;
                    } else {
                        b = x2;
                    }
                }
                u_star = Some(0.5 * (a + b));
                break;
            }
        }

        // Keep the ascent monotone: fall back to the best probed grid point
        // if the refined centre does not beat it.
        let best_grid = grid
            .iter()
            .zip(&values)
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("no NaN likelihoods"))
            .map(|(&u, &v)| (u, v))
            .expect("grid non-empty");
        let u = match u_star {
            Some(u) if h(u) >= best_grid.1 => u,
            _ => best_grid.0,
        };

        let new_rate = rate + u * g_rate;
        let new_shift = obj.clamp_shift(shift + u * g_shift);
        let new_ll = obj.eval(new_rate, new_shift);
        if new_ll <= ll {
            // The scaled step guaranteed an improving grid point, so this
            // only fires when clamping collapsed the move.
            converged = true;
            break;
        }
        let rel = ((new_rate - rate).abs() / rate.abs().max(f64::MIN_POSITIVE))
            .max((new_shift - shift).abs() / shift.abs().max(f64::MIN_POSITIVE));
        rate = new_rate;
        shift = new_shift;
        ll = new_ll;
        if rel < opts.tol {
            converged = true;
            break;
        }
    }

    AscentResult {
        rate,
        shift,
        log_likelihood: ll,
        iterations,
        converged,
    }
}

/// Fit a shifted Erlang by steepest ascent within a shape scan.
///
/// Each shape restarts from the standard initialisation; the scan stops at
/// the first shape whose optimised log-likelihood decreases, mirroring the
/// plain Erlang scan.
pub fn fit_erlang_plus_c(x: &[f64], opts: &FitOptions) -> Result<FitReport, FitError> {
    opts.check()?;
    check_sample(x, 2)?;
    let min_x = x.iter().copied().fold(f64::INFINITY, f64::min);

    let mut best: Option<(u32, AscentResult)> = None;
    let mut hit_cap = true;
    for shape in 1..=opts.shape_cap {
        let obj = Objective { shape, x, min_x };
        let (rate0, shift0) = initial_shifted_params(shape, x);
        let result = ascend(&obj, opts, rate0, shift0);
        match &best {
            Some((_, incumbent)) if result.log_likelihood <= incumbent.log_likelihood => {
                hit_cap = false;
                break;
            }
            _ => best = Some((shape, result)),
        }
    }
    let (shape, result) = best.expect("at least one shape evaluated");
    let params = ErlangPlusCParams {
        shape,
        rate: result.rate,
        shift: result.shift,
    };
    let dist = PatchDistribution::ErlangPlusC(params);
    let mut warnings = Vec::new();
    if hit_cap {
        warnings.push(format!("shape scan hit the cap of {}", opts.shape_cap));
    }
    if !result.converged {
        warnings.push("ascent stopped before meeting the tolerance".to_string());
    }
    Ok(FitReport {
        expected_phases: dist.expected_phases(),
        dist,
        log_likelihood: result.log_likelihood,
        n: x.len(),
        iterations: result.iterations,
        converged: result.converged && !hit_cap,
        warnings,
    })
}
