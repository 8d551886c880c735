//! Sojourn-time distribution families for patch crossing times.
//!
//! Three families are supported, all built from exponential phases:
//!
//! * Erlang: sum of `k` exponential phases of rate `λ`, density
//!   `λ^k t^(k-1) e^(-λt) / (k-1)!` for `t ≥ 0`.
//! * Hyper-Erlang: probabilistic mixture of Erlang branches with weights
//!   `α_i` summing to one.
//! * Shifted Erlang ("Erlang+c"): an Erlang delayed by a constant `c ≥ 0`,
//!   supported on `t ≥ c`. The shape is restricted to integers so the
//!   distribution stays expressible as a chain of exponential phases.
//!
//! Densities are evaluated in log space through the log-gamma function, so
//! shapes in the hundreds or thousands do not overflow the factorial.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DistError {
    #[error("shape must be a positive integer, got {0}")]
    InvalidShape(u32),
    #[error("rate must be positive and finite, got {0}")]
    InvalidRate(f64),
    #[error("shift must be nonnegative and finite, got {0}")]
    InvalidShift(f64),
    #[error("branch weights must lie in [0,1] and sum to 1 (sum deviates by {0:e})")]
    InvalidWeights(f64),
    #[error("hyper-Erlang needs at least one branch")]
    EmptyBranches,
}

/// Erlang distribution: `k` exponential phases of rate `rate` (1/seconds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErlangParams {
    pub shape: u32,
    pub rate: f64,
}

impl ErlangParams {
    pub fn new(shape: u32, rate: f64) -> Result<Self, DistError> {
        let p = Self { shape, rate };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DistError> {
        if self.shape < 1 {
            return Err(DistError::InvalidShape(self.shape));
        }
        if self.rate.is_nan() || self.rate <= 0.0 || self.rate.is_infinite() {
            return Err(DistError::InvalidRate(self.rate));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        f64::from(self.shape) / self.rate
    }

    fn log_pdf(&self, t: f64) -> f64 {
        let k = f64::from(self.shape);
        if t < 0.0 {
            return f64::NEG_INFINITY;
        }
        if t == 0.0 {
            // Density at the origin is λ for k = 1 and 0 for k > 1.
            return if self.shape == 1 {
                self.rate.ln()
            } else {
                f64::NEG_INFINITY
            };
        }
        k * self.rate.ln() + (k - 1.0) * t.ln() - self.rate * t - ln_gamma(k)
    }

    fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        gamma_lr(f64::from(self.shape), self.rate * t)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut total = 0.0;
        for _ in 0..self.shape {
            total += sample_exponential(self.rate, rng);
        }
        total
    }
}

/// One branch of a hyper-Erlang mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperErlangBranch {
    /// Branch probability α.
    pub weight: f64,
    pub shape: u32,
    pub rate: f64,
}

/// Mixture of Erlang branches chosen with probabilities `weight`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperErlangParams {
    pub branches: Vec<HyperErlangBranch>,
}

/// Tolerance on the branch-weight sum.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

impl HyperErlangParams {
    pub fn new(branches: Vec<HyperErlangBranch>) -> Result<Self, DistError> {
        let p = Self { branches };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DistError> {
        if self.branches.is_empty() {
            return Err(DistError::EmptyBranches);
        }
        let mut sum = 0.0;
        for b in &self.branches {
            ErlangParams {
                shape: b.shape,
                rate: b.rate,
            }
            .validate()?;
            if !(0.0..=1.0).contains(&b.weight) {
                return Err(DistError::InvalidWeights((b.weight - 0.5).abs()));
            }
            sum += b.weight;
        }
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(DistError::InvalidWeights((sum - 1.0).abs()));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.branches
            .iter()
            .map(|b| b.weight * f64::from(b.shape) / b.rate)
            .sum()
    }

    fn log_pdf(&self, t: f64) -> f64 {
        // log Σ α_i f_i(t), accumulated via log-sum-exp.
        let terms: Vec<f64> = self
            .branches
            .iter()
            .map(|b| {
                let e = ErlangParams {
                    shape: b.shape,
                    rate: b.rate,
                };
                if b.weight == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    b.weight.ln() + e.log_pdf(t)
                }
            })
            .collect();
        log_sum_exp(&terms)
    }

    fn cdf(&self, t: f64) -> f64 {
        self.branches
            .iter()
            .map(|b| {
                b.weight
                    * ErlangParams {
                        shape: b.shape,
                        rate: b.rate,
                    }
                    .cdf(t)
            })
            .sum()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // Branch choice first, then the Erlang draw: the order is part of
        // the reproducibility contract.
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.branches.len() - 1;
        for (i, b) in self.branches.iter().enumerate() {
            acc += b.weight;
            if u < acc {
                chosen = i;
                break;
            }
        }
        let b = &self.branches[chosen];
        ErlangParams {
            shape: b.shape,
            rate: b.rate,
        }
        .sample(rng)
    }
}

/// Erlang delayed by a constant `shift` (the `c` of "Erlang+c"), supported on
/// `t ≥ shift`. `shift = 0` degenerates to the plain Erlang.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErlangPlusCParams {
    pub shape: u32,
    pub rate: f64,
    pub shift: f64,
}

impl ErlangPlusCParams {
    pub fn new(shape: u32, rate: f64, shift: f64) -> Result<Self, DistError> {
        let p = Self { shape, rate, shift };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DistError> {
        ErlangParams {
            shape: self.shape,
            rate: self.rate,
        }
        .validate()?;
        if self.shift.is_nan() || self.shift < 0.0 || self.shift.is_infinite() {
            return Err(DistError::InvalidShift(self.shift));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.shift + f64::from(self.shape) / self.rate
    }

    fn erlang(&self) -> ErlangParams {
        ErlangParams {
            shape: self.shape,
            rate: self.rate,
        }
    }
}

/// Fitted sojourn-time law of one patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PatchDistribution {
    Erlang(ErlangParams),
    HyperErlang(HyperErlangParams),
    ErlangPlusC(ErlangPlusCParams),
}

impl PatchDistribution {
    pub fn validate(&self) -> Result<(), DistError> {
        match self {
            Self::Erlang(p) => p.validate(),
            Self::HyperErlang(p) => p.validate(),
            Self::ErlangPlusC(p) => p.validate(),
        }
    }

    /// Probability density at `t` seconds. Total function: zero outside the
    /// support, never an error.
    pub fn pdf(&self, t: f64) -> f64 {
        let lp = self.log_pdf(t);
        if lp == f64::NEG_INFINITY {
            0.0
        } else {
            lp.exp()
        }
    }

    /// Log-density at `t`; `-inf` wherever the density is zero.
    pub fn log_pdf(&self, t: f64) -> f64 {
        match self {
            Self::Erlang(p) => p.log_pdf(t),
            Self::HyperErlang(p) => p.log_pdf(t),
            Self::ErlangPlusC(p) => p.erlang().log_pdf(t - p.shift),
        }
    }

    /// Cumulative distribution at `t`.
    pub fn cdf(&self, t: f64) -> f64 {
        match self {
            Self::Erlang(p) => p.cdf(t),
            Self::HyperErlang(p) => p.cdf(t),
            Self::ErlangPlusC(p) => p.erlang().cdf(t - p.shift),
        }
    }

    /// Expected crossing time in seconds.
    pub fn mean(&self) -> f64 {
        match self {
            Self::Erlang(p) => p.mean(),
            Self::HyperErlang(p) => p.mean(),
            Self::ErlangPlusC(p) => p.mean(),
        }
    }

    /// Expected number of completed exponential phases: `k` for Erlang and
    /// shifted Erlang, `Σ α_i k_i` for hyper-Erlang mixtures.
    pub fn expected_phases(&self) -> f64 {
        match self {
            Self::Erlang(p) => f64::from(p.shape),
            Self::ErlangPlusC(p) => f64::from(p.shape),
            Self::HyperErlang(p) => p
                .branches
                .iter()
                .map(|b| b.weight * f64::from(b.shape))
                .sum(),
        }
    }

    /// Draw one crossing time. Deterministic given the RNG state.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Erlang(p) => p.sample(rng),
            Self::HyperErlang(p) => p.sample(rng),
            Self::ErlangPlusC(p) => p.shift + p.erlang().sample(rng),
        }
    }
}

/// Inverse-transform exponential draw with the given rate.
pub fn sample_exponential<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}
