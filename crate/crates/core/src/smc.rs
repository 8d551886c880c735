//! Monte Carlo execution of route automata with statistical guarantees.
//!
//! Runs walk the automaton from `init` to `end`, drawing exponential
//! sojourns at rated locations and integer-weighted choices at branch
//! points. A guard `x >= c` on a phase's outgoing edge holds the phase back
//! until the clock reaches `c`; because the exponential is memoryless this
//! realises the shifted-Erlang law exactly as `c` plus the phase draws.
//!
//! Estimation is batched: after each batch of runs the probability
//! estimator computes an exact (Clopper-Pearson) binomial interval and
//! stops once the half-width target is reached; the mean estimator uses a
//! CLT interval with a relative-width target. Runs are carved into
//! fixed-size chunks, each drawing from its own RNG substream keyed by
//! `(seed, stream, chunk)`, and chunk results fold in index order — so
//! estimates are identical whether chunks execute sequentially or across a
//! thread pool, and identical for any worker count.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF, Normal};
use thiserror::Error;

use crate::dist::sample_exponential;
use crate::exec::{map_indexed, Execution};
use crate::pta::Pta;
use crate::rng::substream;

#[derive(Debug, Error)]
pub enum SmcError {
    #[error("model failed validation:\n{}", .0.join("\n"))]
    InvalidModel(Vec<String>),
    #[error("query `{0}` is not a reachability-probability query")]
    NotAProbabilityQuery(String),
    #[error("on-time margins ({early} s early, {late} s late) must be smaller than the timetable duration {timetable} s")]
    BadMargins {
        early: f64,
        late: f64,
        timetable: f64,
    },
    #[error("invalid options: {0}")]
    BadOptions(String),
}

/// Direction of the deadline comparison. `AtLeast` counts runs strictly
/// beyond the deadline (the complement of "at most").
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    AtMost,
    AtLeast,
}

/// What to estimate on a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Query {
    /// Probability of reaching `end` within (or beyond) a deadline.
    ProbReachByDeadline {
        deadline: f64,
        comparison: Comparison,
    },
    /// Expected time to reach `end`.
    MeanTimeToEnd,
    /// Full journey-time histogram with the given bin width.
    Histogram { bin_width: f64 },
}

impl Query {
    /// UPPAAL-style formula text for this query.
    pub fn formula(&self) -> String {
        match self {
            Query::ProbReachByDeadline {
                deadline,
                comparison: Comparison::AtMost,
            } => {
                format!("Pr[<={}] (<> Process.end)", format_seconds(*deadline))
            }
            Query::ProbReachByDeadline {
                deadline,
                comparison: Comparison::AtLeast,
            } => {
                format!("Pr[>{}] (<> Process.end)", format_seconds(*deadline))
            }
            Query::MeanTimeToEnd => "E[<>] (Process.end)".to_string(),
            Query::Histogram { .. } => "Pr[<=*] (<> Process.end)".to_string(),
        }
    }
}

fn format_seconds(s: f64) -> String {
    if s == s.trunc() && s.abs() < 1e15 {
        format!("{}", s as i64)
    } else {
        format!("{s}")
    }
}

/// Estimation controls.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmcOptions {
    /// Interval confidence level (two-sided).
    pub confidence: f64,
    /// Absolute half-width target for probability intervals.
    pub half_width: f64,
    /// Relative half-width target for mean intervals.
    pub mean_relative_half_width: f64,
    pub max_runs: u64,
    pub seed: u64,
    /// Substream selector; estimates that must not share randomness use
    /// distinct streams under one seed.
    pub stream: u64,
    /// Runs per stopping-rule check.
    pub batch: u64,
    /// When set, exactly this many runs are simulated and the stopping rule
    /// is disabled (unbiased intervals for coverage experiments).
    pub fixed_runs: Option<u64>,
    /// Count the 1-second-mean initial location in journey times.
    pub include_initial_delay: bool,
    pub execution: Execution,
}

impl Default for SmcOptions {
    fn default() -> Self {
        Self {
            confidence: 0.90,
            half_width: 0.0005,
            mean_relative_half_width: 0.001,
            max_runs: 10_000_000,
            seed: 0,
            stream: 0,
            batch: 1024,
            fixed_runs: None,
            include_initial_delay: true,
            execution: Execution::Parallel,
        }
    }
}

impl SmcOptions {
    fn check(&self) -> Result<(), SmcError> {
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(SmcError::BadOptions(format!(
                "confidence must be in (0,1), got {}",
                self.confidence
            )));
        }
        if self.half_width.is_nan() || self.half_width <= 0.0 {
            return Err(SmcError::BadOptions(format!(
                "half_width must be positive, got {}",
                self.half_width
            )));
        }
        if self.batch == 0 || self.max_runs == 0 {
            return Err(SmcError::BadOptions(
                "batch and max_runs must be positive".into(),
            ));
        }
        if self.fixed_runs == Some(0) {
            return Err(SmcError::BadOptions("fixed_runs must be positive".into()));
        }
        Ok(())
    }

    /// Same options pointed at a different substream.
    pub fn with_stream(&self, stream: u64) -> Self {
        Self {
            stream,
            ..self.clone()
        }
    }
}

/// Point estimate with its confidence interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmcEstimate {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub runs: u64,
    pub confidence: f64,
    /// Whether the width-based stopping rule was satisfied (always true in
    /// fixed-run mode, which sets no target).
    pub width_target_met: bool,
    /// Elapsed seconds; excluded from serialisation so report files stay
    /// byte-reproducible.
    #[serde(skip)]
    pub wall_time: f64,
}

impl SmcEstimate {
    /// Render the estimate the way UPPAAL prints verification results.
    pub fn uppaal_style_line(&self, formula: &str) -> String {
        format!(
            "({} runs) {} in [{:.6},{:.6}] with confidence {}.",
            self.runs, formula, self.ci_low, self.ci_high, self.confidence
        )
    }
}

/// Exact binomial (Clopper-Pearson) interval for `successes` out of `n`.
pub fn clopper_pearson(successes: u64, n: u64, confidence: f64) -> (f64, f64) {
    debug_assert!(successes <= n && n > 0);
    let alpha = 1.0 - confidence;
    let (s, nf) = (successes as f64, n as f64);
    let low = if successes == 0 {
        0.0
    } else {
        Beta::new(s, nf - s + 1.0)
            .expect("valid beta parameters")
            .inverse_cdf(alpha / 2.0)
    };
    let high = if successes == n {
        1.0
    } else {
        Beta::new(s + 1.0, nf - s)
            .expect("valid beta parameters")
            .inverse_cdf(1.0 - alpha / 2.0)
    };
    (low, high)
}

fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(p)
}

#[derive(Clone, Copy)]
enum NodeKind {
    Rated { rate: f64 },
    Branch { total_weight: u64 },
    End,
}

#[derive(Clone, Copy)]
struct CompiledEdge {
    target: usize,
    guard: Option<(usize, f64)>,
    reset: Option<usize>,
}

struct Node {
    kind: NodeKind,
    /// For rated nodes: exactly one edge. For branch points: edges paired
    /// with cumulative weights in declaration order.
    edges: Vec<(u64, CompiledEdge)>,
}

/// A validated automaton compiled for fast repeated execution.
pub struct Simulator {
    nodes: Vec<Node>,
    initial: usize,
    n_clocks: usize,
    include_initial_delay: bool,
}

impl Simulator {
    pub fn new(pta: &Pta) -> Result<Self, SmcError> {
        Self::with_initial_delay(pta, true)
    }

    /// Compile with control over whether the initial location's 1-second
    /// exit delay counts towards journey times.
    pub fn with_initial_delay(pta: &Pta, include_initial_delay: bool) -> Result<Self, SmcError> {
        let violations = pta.validate();
        if !violations.is_empty() {
            return Err(SmcError::InvalidModel(violations));
        }
        let index_of = |id: &str| {
            pta.locations
                .iter()
                .position(|l| l.id == id)
                .expect("validated")
        };
        let clock_of = |c: &str| pta.clocks.iter().position(|x| x == c).expect("validated");

        let mut nodes: Vec<Node> = Vec::with_capacity(pta.locations.len());
        for loc in &pta.locations {
            let mut edges: Vec<(u64, CompiledEdge)> = Vec::new();
            let mut cum = 0u64;
            for e in pta.outgoing(&loc.id) {
                cum += e.weight.unwrap_or(0);
                edges.push((
                    cum,
                    CompiledEdge {
                        target: index_of(&e.to),
                        guard: e
                            .guard
                            .as_ref()
                            .map(|g| (clock_of(&g.clock), g.min_seconds)),
                        reset: e.reset.as_deref().map(clock_of),
                    },
                ));
            }
            let kind = if loc.is_end {
                NodeKind::End
            } else if loc.is_branch_point {
                NodeKind::Branch { total_weight: cum }
            } else {
                NodeKind::Rated {
                    rate: loc.rate.expect("validated rated location"),
                }
            };
            nodes.push(Node { kind, edges });
        }
        Ok(Self {
            nodes,
            initial: pta
                .locations
                .iter()
                .position(|l| l.is_initial)
                .expect("validated"),
            n_clocks: pta.clocks.len(),
            include_initial_delay,
        })
    }

    /// Walk one run from `init` to `end`, returning the total time.
    pub fn run<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut resets = vec![0.0; self.n_clocks];
        self.run_with_scratch(rng, &mut resets)
    }

    fn run_with_scratch<R: Rng + ?Sized>(&self, rng: &mut R, resets: &mut [f64]) -> f64 {
        resets.fill(0.0);
        let mut t = 0.0;
        let mut at = self.initial;
        loop {
            let node = &self.nodes[at];
            let edge = match node.kind {
                NodeKind::End => return t,
                NodeKind::Rated { rate } => {
                    let (_, edge) = node.edges[0];
                    if let Some((clock, bound)) = edge.guard {
                        // The guard delays the phase start; memorylessness
                        // makes this the continuous-race law.
                        t = t.max(resets[clock] + bound);
                    }
                    if self.include_initial_delay || at != self.initial {
                        t += sample_exponential(rate, rng);
                    }
                    edge
                }
                NodeKind::Branch { total_weight } => {
                    let pick = rng.random_range(0..total_weight);
                    let (_, edge) = node.edges[self.pick_edge(at, pick)];
                    edge
                }
            };
            if let Some(clock) = edge.reset {
                resets[clock] = t;
            }
            at = edge.target;
        }
    }

    fn pick_edge(&self, node: usize, pick: u64) -> usize {
        self.nodes[node]
            .edges
            .iter()
            .position(|(cum, _)| pick < *cum)
            .expect("pick below total weight")
    }

    /// Simulate `n` runs and return the times in run order. Deterministic
    /// in `(seed, stream)` for any execution strategy.
    pub fn collect_runs(&self, seed: u64, stream: u64, n: u64, exec: Execution) -> Vec<f64> {
        let chunks = chunk_sizes(n, 0);
        let parts = map_indexed(exec, chunks.len(), |i| {
            let (chunk_index, size) = chunks[i];
            let mut rng = substream(seed, stream, chunk_index);
            let mut resets = vec![0.0; self.n_clocks];
            (0..size)
                .map(|_| self.run_with_scratch(&mut rng, &mut resets))
                .collect::<Vec<f64>>()
        });
        parts.concat()
    }
}

/// Runs per RNG substream; also the parallel work unit.
const CHUNK: u64 = 256;

/// Chunk descriptors (global chunk index, size) covering `n` runs starting
/// at global chunk `first`.
fn chunk_sizes(n: u64, first: u64) -> Vec<(u64, u64)> {
    let mut out = Vec::new();
    let mut remaining = n;
    let mut index = first;
    while remaining > 0 {
        let size = remaining.min(CHUNK);
        out.push((index, size));
        index += 1;
        remaining -= size;
    }
    out
}

#[derive(Clone, Copy, Default)]
struct BatchStats {
    runs: u64,
    successes: u64,
    sum: f64,
    sum_sq: f64,
}

fn simulate_batch(
    sim: &Simulator,
    opts: &SmcOptions,
    first_chunk: u64,
    n: u64,
    success: impl Fn(f64) -> bool + Sync + Send,
) -> BatchStats {
    let chunks = chunk_sizes(n, first_chunk);
    let parts = map_indexed(opts.execution, chunks.len(), |i| {
        let (chunk_index, size) = chunks[i];
        let mut rng = substream(opts.seed, opts.stream, chunk_index);
        let mut resets = vec![0.0; sim.n_clocks];
        let mut stats = BatchStats::default();
        for _ in 0..size {
            let t = sim.run_with_scratch(&mut rng, &mut resets);
            stats.runs += 1;
            stats.successes += u64::from(success(t));
            stats.sum += t;
            stats.sum_sq += t * t;
        }
        stats
    });
    parts.into_iter().fold(BatchStats::default(), |mut acc, s| {
        acc.runs += s.runs;
        acc.successes += s.successes;
        acc.sum += s.sum;
        acc.sum_sq += s.sum_sq;
        acc
    })
}

/// Estimate a reachability probability with a Clopper-Pearson interval,
/// stopping when the interval half-width reaches the target (or at
/// `max_runs`, flagged via `width_target_met = false`).
pub fn estimate_probability(
    pta: &Pta,
    query: &Query,
    opts: &SmcOptions,
) -> Result<SmcEstimate, SmcError> {
    let Query::ProbReachByDeadline {
        deadline,
        comparison,
    } = *query
    else {
        return Err(SmcError::NotAProbabilityQuery(query.formula()));
    };
    opts.check()?;
    let sim = Simulator::with_initial_delay(pta, opts.include_initial_delay)?;
    let start = Instant::now();

    let success = |t: f64| match comparison {
        Comparison::AtMost => t <= deadline,
        Comparison::AtLeast => t > deadline,
    };

    let target = opts.fixed_runs.unwrap_or(opts.max_runs);
    let mut total = BatchStats::default();
    let mut next_chunk = 0u64;
    let mut width_target_met = opts.fixed_runs.is_some();
    while total.runs < target {
        let n = opts.batch.min(target - total.runs);
        let batch = simulate_batch(&sim, opts, next_chunk, n, success);
        next_chunk += chunk_sizes(n, 0).len() as u64;
        total.runs += batch.runs;
        total.successes += batch.successes;
        if opts.fixed_runs.is_none() {
            let (lo, hi) = clopper_pearson(total.successes, total.runs, opts.confidence);
            if (hi - lo) / 2.0 <= opts.half_width {
                width_target_met = true;
                break;
            }
        }
    }

    let (ci_low, ci_high) = clopper_pearson(total.successes, total.runs, opts.confidence);
    Ok(SmcEstimate {
        point: total.successes as f64 / total.runs as f64,
        ci_low,
        ci_high,
        runs: total.runs,
        confidence: opts.confidence,
        width_target_met,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Estimate the mean journey time with a CLT interval, stopping at the
/// relative half-width target.
pub fn estimate_mean(pta: &Pta, opts: &SmcOptions) -> Result<SmcEstimate, SmcError> {
    opts.check()?;
    let sim = Simulator::with_initial_delay(pta, opts.include_initial_delay)?;
    let start = Instant::now();
    let z = normal_quantile(0.5 + opts.confidence / 2.0);

    let target = opts.fixed_runs.unwrap_or(opts.max_runs);
    let mut total = BatchStats::default();
    let mut next_chunk = 0u64;
    let mut width_target_met = opts.fixed_runs.is_some();
    let mut interval = (0.0, 0.0);
    while total.runs < target {
        let n = opts.batch.min(target - total.runs);
        let batch = simulate_batch(&sim, opts, next_chunk, n, |_| false);
        next_chunk += chunk_sizes(n, 0).len() as u64;
        total.runs += batch.runs;
        total.sum += batch.sum;
        total.sum_sq += batch.sum_sq;

        let nf = total.runs as f64;
        let mean = total.sum / nf;
        let var = ((total.sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
        let half = z * (var / nf).sqrt();
        interval = (mean - half, mean + half);
        if opts.fixed_runs.is_none()
            && total.runs > 1
            && half <= opts.mean_relative_half_width * mean.abs()
        {
            width_target_met = true;
            break;
        }
    }

    Ok(SmcEstimate {
        point: total.sum / total.runs as f64,
        ci_low: interval.0,
        ci_high: interval.1,
        runs: total.runs,
        confidence: opts.confidence,
        width_target_met,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Journey-time histogram binned from zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// Count per bin; bin `i` covers `[i*bin_width, (i+1)*bin_width)`.
    pub counts: Vec<u64>,
    pub runs: u64,
}

impl Histogram {
    /// Export as `bin_start_s,count` CSV rows.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_start_s", "count"])?;
        for (i, count) in self.counts.iter().enumerate() {
            w.write_record([format!("{}", i as f64 * self.bin_width), count.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Smallest time `t` such that at least `q` of the mass lies at or
    /// below `t`'s bin, reported as the bin's upper edge.
    pub fn percentile(&self, q: f64) -> f64 {
        let need = (q * self.runs as f64).ceil() as u64;
        let mut seen = 0;
        for (i, c) in self.counts.iter().enumerate() {
            seen += c;
            if seen >= need {
                return (i as f64 + 1.0) * self.bin_width;
            }
        }
        self.counts.len() as f64 * self.bin_width
    }
}

/// Simulate `n_runs` and bin the journey times.
pub fn journey_histogram(
    pta: &Pta,
    n_runs: u64,
    bin_width: f64,
    opts: &SmcOptions,
) -> Result<Histogram, SmcError> {
    if bin_width.is_nan() || bin_width <= 0.0 {
        return Err(SmcError::BadOptions(format!(
            "bin width must be positive, got {bin_width}"
        )));
    }
    if n_runs == 0 {
        return Ok(Histogram {
            bin_width,
            counts: Vec::new(),
            runs: 0,
        });
    }
    let sim = Simulator::with_initial_delay(pta, opts.include_initial_delay)?;
    let chunks = chunk_sizes(n_runs, 0);
    let parts = map_indexed(opts.execution, chunks.len(), |i| {
        let (chunk_index, size) = chunks[i];
        let mut rng = substream(opts.seed, opts.stream, chunk_index);
        let mut resets = vec![0.0; sim.n_clocks];
        let mut counts: Vec<u64> = Vec::new();
        for _ in 0..size {
            let t = sim.run_with_scratch(&mut rng, &mut resets);
            let bin = (t / bin_width).floor() as usize;
            if bin >= counts.len() {
                counts.resize(bin + 1, 0);
            }
            counts[bin] += 1;
        }
        counts
    });
    let mut counts: Vec<u64> = Vec::new();
    for part in parts {
        if part.len() > counts.len() {
            counts.resize(part.len(), 0);
        }
        for (i, c) in part.into_iter().enumerate() {
            counts[i] += c;
        }
    }
    Ok(Histogram {
        bin_width,
        counts,
        runs: n_runs,
    })
}

/// Probabilities of finishing early or late relative to the timetable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnTimeReport {
    /// Deadline for "too early": `timetable - early_margin`.
    pub early_deadline: f64,
    /// Deadline for "too late": `timetable + late_margin`.
    pub late_deadline: f64,
    pub p_too_early: SmcEstimate,
    pub p_too_late: SmcEstimate,
}

/// Default "too early" margin: one minute.
pub const DEFAULT_EARLY_MARGIN: f64 = 60.0;
/// Default "too late" margin: five minutes.
pub const DEFAULT_LATE_MARGIN: f64 = 300.0;

/// Estimate the too-early and too-late probabilities for a timetabled
/// duration. The two estimates draw from distinct substreams.
pub fn on_time_report(
    pta: &Pta,
    timetable: f64,
    early_margin: f64,
    late_margin: f64,
    opts: &SmcOptions,
) -> Result<OnTimeReport, SmcError> {
    if early_margin >= timetable || late_margin >= timetable {
        return Err(SmcError::BadMargins {
            early: early_margin,
            late: late_margin,
            timetable,
        });
    }
    let early_deadline = timetable - early_margin;
    let late_deadline = timetable + late_margin;
    let p_too_early = estimate_probability(
        pta,
        &Query::ProbReachByDeadline {
            deadline: early_deadline,
            comparison: Comparison::AtMost,
        },
        opts,
    )?;
    let p_too_late = estimate_probability(
        pta,
        &Query::ProbReachByDeadline {
            deadline: late_deadline,
            comparison: Comparison::AtLeast,
        },
        &opts.with_stream(opts.stream + 1),
    )?;
    Ok(OnTimeReport {
        early_deadline,
        late_deadline,
        p_too_early,
        p_too_late,
    })
}
