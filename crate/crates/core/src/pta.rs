//! Probabilistic timed automata for patch-chain route models.
//!
//! A route becomes a chain: a unique initial location exited at rate 1,
//! then per patch either a plain chain of exponential phase locations
//! (Erlang), a branch point with integer-weighted edges into parallel
//! chains (hyper-Erlang), or a chain whose first phase is held back by a
//! clock guard encoding the constant shift (Erlang+c). The last patch
//! feeds the `end` location.
//!
//! Edge weights must be integers, so branch probabilities are converted to
//! the smallest integer tuple with the same ratio after rounding to a fixed
//! number of decimals ([`alpha_to_integer_weights`]).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::PatchDistribution;

#[derive(Debug, Error, PartialEq)]
pub enum PtaError {
    #[error("branch probabilities sum to {0}, expected 1 within 1e-9")]
    WeightsNotNormalised(f64),
    #[error(
        "branch probability {alpha} rounds to zero at {digits} digits; increase the digit count"
    )]
    WeightUnderflow { alpha: f64, digits: u32 },
    #[error("digit count must be between 1 and 9, got {0}")]
    BadDigitCount(u32),
    #[error("cannot build a model from an empty patch sequence")]
    NoPatches,
    #[error("invalid patch distribution: {0}")]
    InvalidDistribution(#[from] crate::dist::DistError),
}

/// One automaton location. Rated locations hold an exponential sojourn;
/// branch points are instantaneous probabilistic choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub is_initial: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub is_end: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub is_branch_point: bool,
}

/// Lower bound `clock >= min_seconds` on an edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockGuard {
    pub clock: String,
    pub min_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<ClockGuard>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reset: Option<String>,
}

/// Route model: a directed acyclic chain of patches from `init` to `end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pta {
    pub locations: Vec<Location>,
    pub edges: Vec<Edge>,
    pub clocks: Vec<String>,
    pub end_location: String,
}

/// Convert branch probabilities to the smallest integers with the same
/// ratio, after rounding each probability to `digits` decimals.
///
/// `(0.4938, 0.5062)` with four digits becomes `(2469, 2531)`.
pub fn alpha_to_integer_weights(alphas: &[f64], digits: u32) -> Result<Vec<u64>, PtaError> {
    if !(1..=9).contains(&digits) {
        return Err(PtaError::BadDigitCount(digits));
    }
    let sum: f64 = alphas.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(PtaError::WeightsNotNormalised(sum));
    }
    let scale = f64::from(10u32.pow(digits));
    let scaled: Vec<u64> = alphas
        .iter()
        .map(|&a| {
            let s = (a * scale).round();
            if s < 1.0 {
                Err(PtaError::WeightUnderflow { alpha: a, digits })
            } else {
                Ok(s as u64)
            }
        })
        .collect::<Result<_, _>>()?;
    let g = scaled.iter().copied().fold(0u64, gcd);
    Ok(scaled.iter().map(|&s| s / g).collect())
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Default decimal precision for weight conversion.
pub const DEFAULT_WEIGHT_DIGITS: u32 = 4;

/// An element exit awaiting connection to the next element; the guard, if
/// present, belongs on the outgoing edge (a single-phase shifted chain).
struct Exit {
    loc: String,
    guard: Option<ClockGuard>,
}

struct Builder {
    locations: Vec<Location>,
    edges: Vec<Edge>,
    clocks: Vec<String>,
}

impl Builder {
    fn rated(&mut self, id: String, rate: f64) -> String {
        self.locations.push(Location {
            id: id.clone(),
            rate: Some(rate),
            is_initial: false,
            is_end: false,
            is_branch_point: false,
        });
        id
    }

    fn branch_point(&mut self, id: String) -> String {
        self.locations.push(Location {
            id: id.clone(),
            rate: None,
            is_initial: false,
            is_end: false,
            is_branch_point: true,
        });
        id
    }

    /// Connect every pending exit to `to`, discharging pending guards and
    /// applying `reset` (patch-entry clock reset) to each connecting edge.
    fn connect(&mut self, exits: Vec<Exit>, to: &str, reset: Option<&str>) {
        for exit in exits {
            self.edges.push(Edge {
                from: exit.loc,
                to: to.to_string(),
                weight: None,
                guard: exit.guard,
                reset: reset.map(str::to_string),
            });
        }
    }

    /// Chain of `shape` phase locations at `rate`. The first edge of the
    /// chain carries `guard` when given; for a single-phase chain the guard
    /// stays pending on the exit.
    fn chain(
        &mut self,
        prefix: &str,
        shape: u32,
        rate: f64,
        guard: Option<ClockGuard>,
    ) -> (String, Exit) {
        let first = self.rated(format!("{prefix}_ph1"), rate);
        let mut prev = first.clone();
        let mut pending = guard;
        for j in 2..=shape {
            let next = self.rated(format!("{prefix}_ph{j}"), rate);
            self.edges.push(Edge {
                from: prev,
                to: next.clone(),
                weight: None,
                guard: pending.take(),
                reset: None,
            });
            prev = next;
        }
        (
            first,
            Exit {
                loc: prev,
                guard: pending,
            },
        )
    }
}

/// Build the route automaton from the ordered non-terminal patch
/// distributions (terminal patches are excluded upstream).
pub fn build_pta(dists: &[PatchDistribution]) -> Result<Pta, PtaError> {
    build_pta_with_digits(dists, DEFAULT_WEIGHT_DIGITS)
}

/// [`build_pta`] with an explicit weight-conversion precision.
pub fn build_pta_with_digits(
    dists: &[PatchDistribution],
    weight_digits: u32,
) -> Result<Pta, PtaError> {
    if dists.is_empty() {
        return Err(PtaError::NoPatches);
    }
    for d in dists {
        d.validate()?;
    }

    let mut b = Builder {
        locations: Vec::new(),
        edges: Vec::new(),
        clocks: Vec::new(),
    };
    b.locations.push(Location {
        id: "init".to_string(),
        rate: Some(1.0),
        is_initial: true,
        is_end: false,
        is_branch_point: false,
    });
    let mut exits = vec![Exit {
        loc: "init".to_string(),
        guard: None,
    }];

    for (p, dist) in dists.iter().enumerate() {
        match dist {
            PatchDistribution::Erlang(e) => {
                let (first, exit) = b.chain(&format!("p{p}"), e.shape, e.rate, None);
                b.connect(exits, &first, None);
                exits = vec![exit];
            }
            PatchDistribution::ErlangPlusC(s) => {
                let clock = format!("x{p}");
                b.clocks.push(clock.clone());
                let guard = ClockGuard {
                    clock: clock.clone(),
                    min_seconds: s.shift,
                };
                let (first, exit) = b.chain(&format!("p{p}"), s.shape, s.rate, Some(guard));
                b.connect(exits, &first, Some(&clock));
                exits = vec![exit];
            }
            PatchDistribution::HyperErlang(h) => {
                let bp = b.branch_point(format!("p{p}_bp"));
                b.connect(exits, &bp, None);
                let alphas: Vec<f64> = h.branches.iter().map(|br| br.weight).collect();
                let weights = alpha_to_integer_weights(&alphas, weight_digits)?;
                let mut branch_exits = Vec::with_capacity(h.branches.len());
                for (i, (branch, weight)) in h.branches.iter().zip(weights).enumerate() {
                    let (first, exit) =
                        b.chain(&format!("p{p}_b{i}"), branch.shape, branch.rate, None);
                    b.edges.push(Edge {
                        from: bp.clone(),
                        to: first,
                        weight: Some(weight),
                        guard: None,
                        reset: None,
                    });
                    branch_exits.push(exit);
                }
                exits = branch_exits;
            }
        }
    }

    b.locations.push(Location {
        id: "end".to_string(),
        rate: None,
        is_initial: false,
        is_end: true,
        is_branch_point: false,
    });
    b.connect(exits, "end", None);

    Ok(Pta {
        locations: b.locations,
        edges: b.edges,
        clocks: b.clocks,
        end_location: "end".to_string(),
    })
}

impl Pta {
    pub fn location(&self, id: &str) -> Option<&Location> {
        self.locations.iter().find(|l| l.id == id)
    }

    pub fn outgoing<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Edge> {
        self.edges.iter().filter(move |e| e.from == id)
    }

    /// Closed-form expected time from `init` to `end`: mean initial delay
    /// plus every phase mean and guard bound weighted by its visit
    /// probability. Relies on the chain construction where each guard's
    /// clock is reset on entry to the guarded chain.
    pub fn expected_time(&self) -> f64 {
        let mut memo = std::collections::BTreeMap::new();
        self.expected_from(
            self.locations
                .iter()
                .find(|l| l.is_initial)
                .map(|l| l.id.as_str())
                .unwrap_or("init"),
            &mut memo,
        )
    }

    // Memoised: branch chains re-converge, so suffixes are shared.
    fn expected_from<'a>(
        &'a self,
        id: &'a str,
        memo: &mut std::collections::BTreeMap<&'a str, f64>,
    ) -> f64 {
        if id == self.end_location {
            return 0.0;
        }
        if let Some(&known) = memo.get(id) {
            return known;
        }
        let loc = match self.location(id) {
            Some(l) => l,
            None => return 0.0,
        };
        let own = loc.rate.map_or(0.0, |r| 1.0 / r);
        let out: Vec<&Edge> = self.outgoing(id).collect();
        let value = if out.is_empty() {
            own
        } else if loc.is_branch_point {
            let total: u64 = out.iter().map(|e| e.weight.unwrap_or(0)).sum();
            own + out
                .iter()
                .map(|e| {
                    let p = e.weight.unwrap_or(0) as f64 / total as f64;
                    p * (e.guard.as_ref().map_or(0.0, |g| g.min_seconds)
                        + self.expected_from(&e.to, memo))
                })
                .sum::<f64>()
        } else {
            let e = out[0];
            own + e.guard.as_ref().map_or(0.0, |g| g.min_seconds) + self.expected_from(&e.to, memo)
        };
        memo.insert(id, value);
        value
    }

    /// Check every structural invariant; an empty list means the model is
    /// valid. Violations are human-readable and name the offending ids.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();

        let initials: Vec<&str> = self
            .locations
            .iter()
            .filter(|l| l.is_initial)
            .map(|l| l.id.as_str())
            .collect();
        if initials.len() != 1 {
            violations.push(format!(
                "expected exactly one initial location, found {}: [{}]",
                initials.len(),
                initials.join(", ")
            ));
        }
        let ends: Vec<&str> = self
            .locations
            .iter()
            .filter(|l| l.is_end)
            .map(|l| l.id.as_str())
            .collect();
        if ends.len() != 1 {
            violations.push(format!(
                "expected exactly one end location, found {}: [{}]",
                ends.len(),
                ends.join(", ")
            ));
        } else if ends[0] != self.end_location {
            violations.push(format!(
                "end_location `{}` does not match the end-flagged location `{}`",
                self.end_location, ends[0]
            ));
        }

        for l in &self.locations {
            if l.is_branch_point && l.rate.is_some() {
                violations.push(format!("branch point `{}` must not carry a rate", l.id));
            }
            if let Some(r) = l.rate {
                if r.is_nan() || r <= 0.0 {
                    violations.push(format!("location `{}` has non-positive rate {r}", l.id));
                }
            }
            if !l.is_end && self.outgoing(&l.id).next().is_none() {
                violations.push(format!("non-end location `{}` has no outgoing edge", l.id));
            }
            if l.rate.is_some() && !l.is_end && self.outgoing(&l.id).count() > 1 {
                violations.push(format!(
                    "rated location `{}` has multiple outgoing edges; phase chains have one",
                    l.id
                ));
            }
        }

        for e in &self.edges {
            let from = self.location(&e.from);
            let from_is_bp = from.map(|l| l.is_branch_point).unwrap_or(false);
            if from.is_none() {
                violations.push(format!("edge references unknown location `{}`", e.from));
            }
            if self.location(&e.to).is_none() {
                violations.push(format!("edge references unknown location `{}`", e.to));
            }
            match e.weight {
                Some(0) => violations.push(format!(
                    "edge `{}` -> `{}` has zero weight; weights must be positive",
                    e.from, e.to
                )),
                Some(_) if !from_is_bp => violations.push(format!(
                    "weighted edge `{}` -> `{}` does not leave a branch point",
                    e.from, e.to
                )),
                None if from_is_bp => violations.push(format!(
                    "edge `{}` -> `{}` leaves a branch point without a weight",
                    e.from, e.to
                )),
                _ => {}
            }
            if let Some(g) = &e.guard {
                if from_is_bp {
                    violations.push(format!(
                        "guarded edge `{}` -> `{}` leaves a branch point",
                        e.from, e.to
                    ));
                }
                if !self.clocks.contains(&g.clock) {
                    violations.push(format!(
                        "guard on `{}` -> `{}` uses undeclared clock `{}`",
                        e.from, e.to, g.clock
                    ));
                }
                if !self
                    .edges
                    .iter()
                    .any(|r| r.reset.as_deref() == Some(g.clock.as_str()))
                {
                    violations.push(format!("clock `{}` is guarded but never reset", g.clock));
                }
            }
            if let Some(c) = &e.reset {
                if !self.clocks.contains(c) {
                    violations.push(format!(
                        "reset on `{}` -> `{}` uses undeclared clock `{c}`",
                        e.from, e.to
                    ));
                }
            }
        }

        if self.has_cycle() {
            violations.push("model graph contains a cycle".to_string());
        }

        if initials.len() == 1 && ends.len() == 1 && !self.reaches(initials[0], ends[0]) {
            violations.push(format!(
                "end `{}` is unreachable from initial `{}`",
                ends[0], initials[0]
            ));
        }

        violations
    }

    fn reaches(&self, from: &str, to: &str) -> bool {
        let mut stack = vec![from];
        let mut seen = std::collections::BTreeSet::new();
        while let Some(id) = stack.pop() {
            if id == to {
                return true;
            }
            if seen.insert(id) {
                stack.extend(self.outgoing(id).map(|e| e.to.as_str()));
            }
        }
        false
    }

    fn has_cycle(&self) -> bool {
        // Kahn-style elimination over the location set.
        let mut indegree: std::collections::BTreeMap<&str, usize> =
            self.locations.iter().map(|l| (l.id.as_str(), 0)).collect();
        for e in &self.edges {
            if let Some(d) = indegree.get_mut(e.to.as_str()) {
                *d += 1;
            }
        }
        let mut queue: Vec<&str> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&id, _)| id)
            .collect();
        let mut removed = 0;
        while let Some(id) = queue.pop() {
            removed += 1;
            for e in self.outgoing(id) {
                if let Some(d) = indegree.get_mut(e.to.as_str()) {
                    *d -= 1;
                    if *d == 0 {
                        queue.push(e.to.as_str());
                    }
                }
            }
        }
        removed != self.locations.len()
    }
}
