//! Patch assignment, crossing extraction, outlier cleaning, and the
//! speed-limit counterfactual.
//!
//! A crossing of patch `k` is the time between a vehicle's first fix in
//! patch `k` and its first fix in a later patch. Crossings survive only if
//! the entry falls inside the analysis window, the fixes never regress to
//! an earlier patch mid-crossing, and no inter-fix gap exceeds the
//! connection-loss threshold. A vehicle appearing mid-patch or leaving the
//! route yields partial crossings, which are discarded and counted.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::avl::{AvlFix, IngestError};
use super::route::{RouteSpec, TimeWindow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Baseline,
    SpeedLimited,
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scenario::Baseline => write!(f, "baseline"),
            Scenario::SpeedLimited => write!(f, "speed_limited"),
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(Scenario::Baseline),
            "speed_limited" => Ok(Scenario::SpeedLimited),
            other => Err(format!("unknown scenario `{other}`")),
        }
    }
}

/// One observed (or counterfactually adjusted) patch traversal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingSample {
    pub patch_index: usize,
    pub duration_s: f64,
    pub vehicle_id: String,
    pub entry_ts: f64,
    pub scenario: Scenario,
}

/// A fix snapped to the route, or flagged unassigned when it lies farther
/// than the snap radius from the polyline.
#[derive(Debug, Clone)]
pub struct AssignedFix {
    pub fix: AvlFix,
    pub patch: Option<usize>,
    pub distance_along_m: f64,
    pub offset_m: f64,
}

#[derive(Debug, Clone)]
pub struct AssignOptions {
    pub snap_radius_m: f64,
}

impl Default for AssignOptions {
    fn default() -> Self {
        Self {
            snap_radius_m: 50.0,
        }
    }
}

/// Snap every fix to its nearest polyline point and the patch interval
/// containing that point. Total up to the snap radius: each fix is either
/// assigned or flagged, never dropped.
pub fn assign_patches(
    fixes: &[AvlFix],
    route: &RouteSpec,
    opts: &AssignOptions,
) -> Vec<AssignedFix> {
    let geometry = route.geometry();
    fixes
        .iter()
        .map(|fix| {
            let (distance_along_m, offset_m) = geometry.project(super::route::LatLon {
                lat: fix.lat,
                lon: fix.lon,
            });
            let patch = if offset_m <= opts.snap_radius_m {
                route.patch_at(distance_along_m)
            } else {
                None
            };
            AssignedFix {
                fix: fix.clone(),
                patch,
                distance_along_m,
                offset_m,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExtractOptions {
    /// Largest tolerated gap between consecutive fixes inside a crossing.
    pub gap_threshold_s: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            gap_threshold_s: 60.0,
        }
    }
}

/// Crossings dropped during extraction, by reason.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscardCounts {
    pub outside_window: usize,
    pub gap_exceeded: usize,
    pub regression: usize,
    pub partial: usize,
}

impl DiscardCounts {
    pub fn total(&self) -> usize {
        self.outside_window + self.gap_exceeded + self.regression + self.partial
    }
}

/// One kept patch traversal with the speeds of the fixes inside it
/// (entry fix inclusive, exit fix exclusive), for the counterfactual.
#[derive(Debug, Clone, PartialEq)]
pub struct Crossing {
    pub patch_index: usize,
    pub vehicle_id: String,
    pub entry_ts: f64,
    pub exit_ts: f64,
    pub speeds_mph: Vec<f64>,
}

impl Crossing {
    pub fn duration_s(&self) -> f64 {
        self.exit_ts - self.entry_ts
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExtractedCrossings {
    /// Kept crossings sorted by (patch, entry time).
    pub crossings: Vec<Crossing>,
    pub discarded: DiscardCounts,
}

struct OpenCrossing {
    patch: usize,
    entry_ts: f64,
    last_ts: f64,
    max_gap: f64,
    speeds: Vec<f64>,
}

/// Walk each vehicle's assigned fixes and cut them into patch crossings.
pub fn extract_crossings(
    assigned: &[AssignedFix],
    window: &TimeWindow,
    opts: &ExtractOptions,
) -> ExtractedCrossings {
    let mut out = ExtractedCrossings::default();
    let mut start = 0;
    while start < assigned.len() {
        let vehicle = &assigned[start].fix.vehicle_id;
        let end = assigned[start..]
            .iter()
            .position(|f| &f.fix.vehicle_id != vehicle)
            .map_or(assigned.len(), |p| start + p);
        extract_vehicle(&assigned[start..end], window, opts, &mut out);
        start = end;
    }
    out.crossings.sort_by(|a, b| {
        a.patch_index.cmp(&b.patch_index).then(
            a.entry_ts
                .partial_cmp(&b.entry_ts)
                .expect("finite timestamps"),
        )
    });
    out
}

fn extract_vehicle(
    fixes: &[AssignedFix],
    window: &TimeWindow,
    opts: &ExtractOptions,
    out: &mut ExtractedCrossings,
) {
    let vehicle = match fixes.first() {
        Some(f) => f.fix.vehicle_id.clone(),
        None => return,
    };
    let mut open: Option<OpenCrossing> = None;
    let mut prev_patch: Option<usize> = None;

    for f in fixes {
        let ts = f.fix.timestamp;
        if let Some(c) = open.as_mut() {
            c.max_gap = c.max_gap.max(ts - c.last_ts);
            c.last_ts = ts;
        }
        let Some(q) = f.patch else {
            continue;
        };
        match open.take() {
            None => match prev_patch {
                // Entry observed from an earlier patch: a crossing opens.
                Some(p) if q > p => {
                    out.discarded.partial += q - p - 1;
                    open = Some(OpenCrossing {
                        patch: q,
                        entry_ts: ts,
                        last_ts: ts,
                        max_gap: 0.0,
                        speeds: vec![f.fix.speed_mph],
                    });
                }
                Some(_) => {}
                // First sighting lands mid-patch: no usable entry.
                None => out.discarded.partial += 1,
            },
            Some(mut c) => {
                if q == c.patch {
                    c.speeds.push(f.fix.speed_mph);
                    open = Some(c);
                } else if q > c.patch {
                    // Close at the first fix of a later patch; patches
                    // jumped over were never observed and are partial.
                    out.discarded.partial += q - c.patch - 1;
                    close_crossing(c, &vehicle, ts, window, opts, out);
                    open = Some(OpenCrossing {
                        patch: q,
                        entry_ts: ts,
                        last_ts: ts,
                        max_gap: 0.0,
                        speeds: vec![f.fix.speed_mph],
                    });
                } else {
                    // Patch index regressed inside the crossing.
                    out.discarded.regression += 1;
                }
            }
        }
        prev_patch = Some(q);
    }
    if open.is_some() {
        // Data ended with a crossing still open.
        out.discarded.partial += 1;
    }
}

fn close_crossing(
    c: OpenCrossing,
    vehicle: &str,
    exit_ts: f64,
    window: &TimeWindow,
    opts: &ExtractOptions,
    out: &mut ExtractedCrossings,
) {
    if !window.contains(c.entry_ts) {
        out.discarded.outside_window += 1;
    } else if c.max_gap > opts.gap_threshold_s {
        out.discarded.gap_exceeded += 1;
    } else {
        // Speeds hold the fixes from entry (inclusive) to exit (exclusive);
        // the exit fix belongs to the next crossing.
        out.crossings.push(Crossing {
            patch_index: c.patch,
            vehicle_id: vehicle.to_string(),
            entry_ts: c.entry_ts,
            exit_ts,
            speeds_mph: c.speeds,
        });
    }
}

/// Speed cap of the counterfactual scenario, mph.
pub const SPEED_LIMIT_MPH: f64 = 20.0;
/// AVL measurement period each speeding fix stands for, seconds.
pub const FIX_PERIOD_S: f64 = 5.0;

/// Counterfactual crossing duration under the speed limit: every fix
/// recorded above 20 mph adds `(s - 20)/20 * 5` seconds, the extra time
/// needed to cover the same distance at the cap. Unaffected patches pass
/// through unchanged. Never decreases the duration.
pub fn apply_speed_limit(speeds_mph: &[f64], base_duration_s: f64, limit_affected: bool) -> f64 {
    if !limit_affected {
        return base_duration_s;
    }
    base_duration_s
        + speeds_mph
            .iter()
            .filter(|&&s| s > SPEED_LIMIT_MPH)
            .map(|&s| (s - SPEED_LIMIT_MPH) / SPEED_LIMIT_MPH * FIX_PERIOD_S)
            .sum::<f64>()
}

/// Materialise crossing samples for one scenario. The speed-limited
/// scenario applies the counterfactual transform on affected patches.
pub fn crossing_samples(
    crossings: &[Crossing],
    route: &RouteSpec,
    scenario: Scenario,
) -> Vec<CrossingSample> {
    crossings
        .iter()
        .map(|c| {
            let duration = match scenario {
                Scenario::Baseline => c.duration_s(),
                Scenario::SpeedLimited => apply_speed_limit(
                    &c.speeds_mph,
                    c.duration_s(),
                    route.patches[c.patch_index].limit_affected,
                ),
            };
            CrossingSample {
                patch_index: c.patch_index,
                duration_s: duration,
                vehicle_id: c.vehicle_id.clone(),
                entry_ts: c.entry_ts,
                scenario,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct CleanOptions {
    /// Duration floor, seconds.
    pub floor_s: f64,
    /// Per-patch floor overrides.
    pub per_patch_floor_s: BTreeMap<usize, f64>,
}

impl Default for CleanOptions {
    fn default() -> Self {
        Self {
            floor_s: 30.0,
            per_patch_floor_s: BTreeMap::new(),
        }
    }
}

impl CleanOptions {
    fn floor_for(&self, patch: usize) -> f64 {
        self.per_patch_floor_s
            .get(&patch)
            .copied()
            .unwrap_or(self.floor_s)
    }
}

#[derive(Debug, Clone, Default)]
pub struct CleanResult {
    pub kept: Vec<CrossingSample>,
    pub discarded: Vec<CrossingSample>,
    /// Groups too small for a standard deviation, returned unchanged.
    pub small_groups: Vec<(usize, Scenario)>,
}

/// Single-pass outlier removal per (patch, scenario) group: keep samples
/// with `floor <= x <= median + 3 * stddev`, both statistics computed on
/// the uncleaned group. Groups of fewer than two samples pass through
/// unchanged with a warning flag.
pub fn clean_outliers(samples: &[CrossingSample], opts: &CleanOptions) -> CleanResult {
    let mut groups: BTreeMap<(usize, Scenario), Vec<&CrossingSample>> = BTreeMap::new();
    for s in samples {
        groups
            .entry((s.patch_index, s.scenario))
            .or_default()
            .push(s);
    }
    let mut result = CleanResult::default();
    for ((patch, scenario), group) in groups {
        if group.len() < 2 {
            result.small_groups.push((patch, scenario));
            result.kept.extend(group.into_iter().cloned());
            continue;
        }
        let durations: Vec<f64> = group.iter().map(|s| s.duration_s).collect();
        let threshold = median(&durations) + 3.0 * sample_stddev(&durations);
        let floor = opts.floor_for(patch);
        for s in group {
            if s.duration_s >= floor && s.duration_s <= threshold {
                result.kept.push(s.clone());
            } else {
                result.discarded.push(s.clone());
            }
        }
    }
    result
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite durations"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn sample_stddev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (n - 1.0)).sqrt()
}

/// Write samples as `patch_index,duration_s,vehicle_id,entry_ts,scenario`.
pub fn write_samples_csv<W: Write>(out: W, samples: &[CrossingSample]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "patch_index",
        "duration_s",
        "vehicle_id",
        "entry_ts",
        "scenario",
    ])?;
    for s in samples {
        w.write_record([
            s.patch_index.to_string(),
            format!("{}", s.duration_s),
            s.vehicle_id.clone(),
            format!("{}", s.entry_ts),
            s.scenario.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv<R: Read>(reader: R) -> Result<Vec<CrossingSample>, IngestError> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for record in r.deserialize() {
        let row: (usize, f64, String, f64, Scenario) = record?;
        out.push(CrossingSample {
            patch_index: row.0,
            duration_s: row.1,
            vehicle_id: row.2,
            entry_ts: row.3,
            scenario: row.4,
        });
    }
    Ok(out)
}
