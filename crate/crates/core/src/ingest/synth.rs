//! Synthetic AVL trace generation, the test stand-in for proprietary data.
//!
//! Each journey dwells briefly near the end of the first terminal patch,
//! then traverses every non-terminal patch with a crossing time drawn from
//! that patch's truth distribution, moving at the implied average speed and
//! emitting a fix every `fix_interval_s` seconds. Traces are byte-identical
//! for a given seed.

use rand::Rng;

use crate::dist::PatchDistribution;
use crate::rng::substream;

use super::avl::{AvlFix, IngestError};
use super::route::RouteSpec;

const MPH_PER_MPS: f64 = 2.236_936_292_054_402;

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub fix_interval_s: f64,
    /// Departure time of journey 0, seconds since midnight.
    pub first_departure_s: f64,
    /// Spacing between consecutive journey departures.
    pub headway_s: f64,
    /// Half-width of the uniform noise added to recorded speeds, mph.
    pub speed_noise_mph: f64,
    /// Time spent stationary in the first terminal patch before departure.
    pub terminal_dwell_s: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            fix_interval_s: 5.0,
            first_departure_s: 9.0 * 3600.0,
            headway_s: 300.0,
            speed_noise_mph: 2.0,
            terminal_dwell_s: 20.0,
        }
    }
}

/// Generate `n_journeys` synthetic journeys along `route`, one vehicle per
/// journey, with per-patch crossing durations drawn from `truth` (one
/// distribution per non-terminal patch, in route order).
pub fn generate_synthetic_trace(
    route: &RouteSpec,
    truth: &[PatchDistribution],
    n_journeys: usize,
    seed: u64,
    opts: &SynthOptions,
) -> Result<Vec<AvlFix>, IngestError> {
    let journey_patches = route.journey_patches();
    if truth.len() != journey_patches.len() {
        return Err(IngestError::TruthCountMismatch {
            expected: journey_patches.len(),
            got: truth.len(),
        });
    }
    let geometry = route.geometry();
    let first_patch = &route.patches[0];
    // Stand just short of the boundary so departure crosses into the first
    // journey patch almost immediately.
    let stand_m = (first_patch.end_m - 10.0).max(first_patch.start_m);
    let tail_patch = route.patches.last().expect("validated route");
    let tail_m = (tail_patch.start_m + 10.0).min(tail_patch.end_m);

    let mut fixes = Vec::new();
    for journey in 0..n_journeys {
        let mut rng = substream(seed, journey as u64, 0);
        let vehicle_id = format!("synth{journey:04}");
        let depart = opts.first_departure_s + journey as f64 * opts.headway_s;

        // Piecewise-constant speed plan: (segment end distance, m/s).
        let mut plan: Vec<(f64, f64)> = Vec::new();
        let mut cursor_m = stand_m;
        for (&patch, dist) in journey_patches.iter().zip(truth) {
            let p = &route.patches[patch];
            let duration = dist.sample(&mut rng).max(opts.fix_interval_s);
            let speed = p.length_m() / duration;
            // Carry the approach sliver (inside the preceding patch) and the
            // patch itself at this speed.
            plan.push((p.end_m.min(cursor_m.max(p.start_m)).max(cursor_m), speed));
            plan.push((p.end_m, speed));
            cursor_m = p.end_m;
        }
        let final_speed = plan.last().map(|&(_, v)| v).unwrap_or(5.0);
        plan.push((tail_m, final_speed));

        // Emit fixes on the global 5-second clock.
        let mut t = depart - opts.terminal_dwell_s;
        let mut pos_m = stand_m;
        let mut seg = 0usize;
        loop {
            let moving = t >= depart && seg < plan.len();
            let speed_mps = if moving { plan[seg].1 } else { 0.0 };
            let noise = if opts.speed_noise_mph > 0.0 {
                (rng.random::<f64>() * 2.0 - 1.0) * opts.speed_noise_mph
            } else {
                0.0
            };
            let point = geometry.point_at(pos_m);
            fixes.push(AvlFix {
                vehicle_id: vehicle_id.clone(),
                timestamp: t,
                lat: point.lat,
                lon: point.lon,
                speed_mph: (speed_mps * MPH_PER_MPS + noise).max(0.0),
                route_id: route.route_id.clone(),
            });
            if seg >= plan.len() && t >= depart {
                break;
            }
            // Advance one fix interval, consuming the speed plan.
            if t >= depart {
                let mut remaining = opts.fix_interval_s;
                while remaining > 0.0 && seg < plan.len() {
                    let (end_m, v) = plan[seg];
                    if pos_m >= end_m {
                        seg += 1;
                        continue;
                    }
                    let dt = ((end_m - pos_m) / v).min(remaining);
                    pos_m += v * dt;
                    remaining -= dt;
                    if pos_m >= end_m - 1e-9 {
                        pos_m = end_m;
                        seg += 1;
                    }
                }
            }
            t += opts.fix_interval_s;
        }
    }
    Ok(fixes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{ErlangParams, ErlangPlusCParams};
    use crate::ingest::crossings::{
        assign_patches, crossing_samples, extract_crossings, AssignOptions, ExtractOptions,
        Scenario,
    };
    use crate::ingest::route::{straight_route, TimeWindow};

    fn erlang(shape: u32, rate: f64) -> PatchDistribution {
        PatchDistribution::Erlang(ErlangParams::new(shape, rate).unwrap())
    }

    #[test]
    fn no_journeys_yields_empty_trace() {
        let route = straight_route("TEST", 3, 1000.0, 600, &[]);
        let truth = vec![erlang(4, 0.05)];
        let fixes =
            generate_synthetic_trace(&route, &truth, 0, 1, &SynthOptions::default()).unwrap();
        assert!(fixes.is_empty());
    }

    #[test]
    fn truth_count_must_match_journey_patches() {
        let route = straight_route("TEST", 4, 1000.0, 600, &[]);
        let err =
            generate_synthetic_trace(&route, &[erlang(1, 1.0)], 1, 1, &SynthOptions::default())
                .unwrap_err();
        assert!(matches!(
            err,
            IngestError::TruthCountMismatch {
                expected: 2,
                got: 1
            }
        ));
    }

    #[test]
    fn same_seed_same_trace() {
        let route = straight_route("TEST", 4, 900.0, 600, &[]);
        let truth = vec![erlang(3, 0.03), erlang(5, 0.06)];
        let opts = SynthOptions::default();
        let a = generate_synthetic_trace(&route, &truth, 5, 77, &opts).unwrap();
        let b = generate_synthetic_trace(&route, &truth, 5, 77, &opts).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_trace(&route, &truth, 5, 78, &opts).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn degenerate_truth_gives_expected_fix_count() {
        // Erlang+c with a huge rate: crossings last almost exactly 100 s,
        // so roughly 20 fix intervals fall inside each crossing.
        let route = straight_route("TEST", 3, 1000.0, 600, &[]);
        let truth = vec![PatchDistribution::ErlangPlusC(
            ErlangPlusCParams::new(1, 1e6, 100.0).unwrap(),
        )];
        let opts = SynthOptions {
            speed_noise_mph: 0.0,
            ..SynthOptions::default()
        };
        let fixes = generate_synthetic_trace(&route, &truth, 3, 5, &opts).unwrap();
        let assigned = assign_patches(&fixes, &route, &AssignOptions::default());
        let window = TimeWindow::new("all", 0.0, 1e9);
        let out = extract_crossings(&assigned, &window, &ExtractOptions::default());
        let crossings: Vec<_> = out
            .crossings
            .iter()
            .filter(|c| c.patch_index == 1)
            .collect();
        assert_eq!(crossings.len(), 3);
        for c in crossings {
            assert!(
                (c.duration_s() - 100.0).abs() <= 10.0,
                "duration {}",
                c.duration_s()
            );
            let count = c.speeds_mph.len();
            assert!((19..=22).contains(&count), "{count} fixes in crossing");
        }
    }

    #[test]
    fn round_trip_recovers_truth_means() {
        // Means of extracted per-patch samples land within 3 standard
        // errors of the truth means.
        let route = straight_route("TEST", 5, 1000.0, 900, &[]);
        let truth = vec![erlang(16, 0.16), erlang(25, 0.25), erlang(9, 0.075)];
        let n = 200;
        let opts = SynthOptions {
            headway_s: 420.0,
            ..SynthOptions::default()
        };
        let fixes = generate_synthetic_trace(&route, &truth, n, 2024, &opts).unwrap();
        let assigned = assign_patches(&fixes, &route, &AssignOptions::default());
        let window = TimeWindow::new("all", 0.0, 1e9);
        let out = extract_crossings(&assigned, &window, &ExtractOptions::default());
        let samples = crossing_samples(&out.crossings, &route, Scenario::Baseline);
        for (i, patch) in route.journey_patches().into_iter().enumerate() {
            let xs: Vec<f64> = samples
                .iter()
                .filter(|s| s.patch_index == patch)
                .map(|s| s.duration_s)
                .collect();
            assert!(
                xs.len() >= n * 9 / 10,
                "patch {patch}: only {} samples",
                xs.len()
            );
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let truth_mean = truth[i].mean();
            // Truth standard deviation for Erlang(k, λ) is sqrt(k)/λ; the
            // 5-second sampling grid adds noise of the same scale.
            let sd = match &truth[i] {
                PatchDistribution::Erlang(p) => f64::from(p.shape).sqrt() / p.rate,
                _ => unreachable!(),
            };
            let se = (sd.powi(2) + 5.0f64.powi(2)).sqrt() / (xs.len() as f64).sqrt();
            assert!(
                (mean - truth_mean).abs() <= 3.0 * se,
                "patch {patch}: mean {mean} vs truth {truth_mean} (se {se})"
            );
        }
    }
}
