//! Route configuration: polyline geometry and the ordered patch intervals.
//!
//! Patches are half-open intervals `[start_m, end_m)` of cumulative
//! distance along the route polyline. They must tile the polyline exactly:
//! contiguous, non-overlapping, first and last flagged terminal. Each patch
//! is wholly affected by the speed limit or wholly unaffected.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RouteError {
    #[error("failed to parse route file: {0}")]
    Parse(String),
    #[error("invalid route `{route_id}`:\n{}", .problems.join("\n"))]
    Invalid {
        route_id: String,
        problems: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64)", into = "(f64, f64)")]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl From<(f64, f64)> for LatLon {
    fn from((lat, lon): (f64, f64)) -> Self {
        Self { lat, lon }
    }
}

impl From<LatLon> for (f64, f64) {
    fn from(p: LatLon) -> Self {
        (p.lat, p.lon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteDirection {
    Forward,
    Reverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    /// Ordinal position along the route; derived from declaration order.
    #[serde(default)]
    pub index: usize,
    pub name: String,
    /// Interval start, metres of cumulative distance along the polyline.
    pub start_m: f64,
    /// Interval end (exclusive).
    pub end_m: f64,
    #[serde(default)]
    pub limit_affected: bool,
    #[serde(default)]
    pub terminal: bool,
    /// Accept lengths outside the usual 500-2500 m band.
    #[serde(default)]
    pub skip_length_check: bool,
    /// Per-patch override of the outlier-cleaning duration floor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_floor_s: Option<f64>,
}

impl PatchSpec {
    pub fn length_m(&self) -> f64 {
        self.end_m - self.start_m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteSpec {
    pub route_id: String,
    pub direction: RouteDirection,
    /// Scheduled end-to-end journey time in seconds.
    pub timetable_duration: u64,
    pub polyline: Vec<LatLon>,
    pub patches: Vec<PatchSpec>,
}

/// Usual bounds on non-terminal patch length, metres.
pub const PATCH_LENGTH_BOUNDS_M: (f64, f64) = (500.0, 2500.0);

impl RouteSpec {
    /// Parse and validate a TOML route file.
    pub fn from_toml_str(text: &str) -> Result<Self, RouteError> {
        let mut route: RouteSpec =
            toml::from_str(text).map_err(|e| RouteError::Parse(e.to_string()))?;
        for (i, p) in route.patches.iter_mut().enumerate() {
            p.index = i;
        }
        route.validate()?;
        Ok(route)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("route serialises")
    }

    pub fn validate(&self) -> Result<(), RouteError> {
        let mut problems = Vec::new();
        if self.polyline.len() < 2 {
            problems.push("polyline needs at least two vertices".to_string());
        }
        if self.patches.is_empty() {
            problems.push("route has no patches".to_string());
        }
        let geometry = self.geometry();
        let total = geometry.total_length_m();
        if self.polyline.len() >= 2 && (total.is_nan() || total <= 0.0) {
            problems.push("polyline is degenerate (zero length)".to_string());
        }

        for (i, p) in self.patches.iter().enumerate() {
            if p.index != i {
                problems.push(format!(
                    "patch `{}` has index {} at position {i}",
                    p.name, p.index
                ));
            }
            if p.end_m.is_nan() || p.start_m.is_nan() || p.end_m <= p.start_m {
                problems.push(format!(
                    "patch `{}` has non-positive length [{}, {})",
                    p.name, p.start_m, p.end_m
                ));
            }
            if !p.terminal && !p.skip_length_check {
                let len = p.length_m();
                if len < PATCH_LENGTH_BOUNDS_M.0 || len > PATCH_LENGTH_BOUNDS_M.1 {
                    problems.push(format!(
                        "non-terminal patch `{}` is {len:.0} m long, outside [{:.0}, {:.0}] (set skip_length_check to override)",
                        p.name, PATCH_LENGTH_BOUNDS_M.0, PATCH_LENGTH_BOUNDS_M.1
                    ));
                }
            }
            if p.terminal && i != 0 && i != self.patches.len() - 1 {
                problems.push(format!(
                    "patch `{}` is terminal but not at a route end",
                    p.name
                ));
            }
        }
        if let Some(first) = self.patches.first() {
            if first.start_m != 0.0 {
                problems.push(format!(
                    "first patch starts at {} m, expected 0",
                    first.start_m
                ));
            }
            if !first.terminal {
                problems.push("first patch must be terminal".to_string());
            }
        }
        if let Some(last) = self.patches.last() {
            if !last.terminal {
                problems.push("last patch must be terminal".to_string());
            }
            if total > 0.0 && (last.end_m - total).abs() > 1.0 {
                problems.push(format!(
                    "patches end at {:.1} m but the polyline is {total:.1} m long",
                    last.end_m
                ));
            }
        }
        for pair in self.patches.windows(2) {
            if (pair[1].start_m - pair[0].end_m).abs() > 1e-6 {
                problems.push(format!(
                    "patches `{}` and `{}` are not contiguous ({} vs {})",
                    pair[0].name, pair[1].name, pair[0].end_m, pair[1].start_m
                ));
            }
        }

        if problems.is_empty() {
            Ok(())
        } else {
            Err(RouteError::Invalid {
                route_id: self.route_id.clone(),
                problems,
            })
        }
    }

    /// Patch containing the half-open interval hit by `distance_m`; the
    /// route's final endpoint belongs to the last patch.
    pub fn patch_at(&self, distance_m: f64) -> Option<usize> {
        for p in &self.patches {
            if distance_m >= p.start_m && distance_m < p.end_m {
                return Some(p.index);
            }
        }
        self.patches
            .last()
            .filter(|p| distance_m == p.end_m)
            .map(|p| p.index)
    }

    /// Indices of the non-terminal patches, in route order.
    pub fn journey_patches(&self) -> Vec<usize> {
        self.patches
            .iter()
            .filter(|p| !p.terminal)
            .map(|p| p.index)
            .collect()
    }

    /// Projected planar geometry for distance computations.
    pub fn geometry(&self) -> RouteGeometry {
        RouteGeometry::new(&self.polyline)
    }
}

const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Polyline projected to a local plane, with cumulative segment lengths.
/// Routes are city-scale, so an equirectangular projection around the mean
/// latitude is accurate to well under a metre.
pub struct RouteGeometry {
    vertices: Vec<(f64, f64)>,
    cumulative_m: Vec<f64>,
    origin: LatLon,
    cos_lat: f64,
}

impl RouteGeometry {
    pub fn new(polyline: &[LatLon]) -> Self {
        let origin = polyline
            .first()
            .copied()
            .unwrap_or(LatLon { lat: 0.0, lon: 0.0 });
        let mean_lat = polyline.iter().map(|p| p.lat).sum::<f64>() / polyline.len().max(1) as f64;
        let cos_lat = mean_lat.to_radians().cos();
        let to_xy = |p: &LatLon| {
            (
                (p.lon - origin.lon).to_radians() * cos_lat * EARTH_RADIUS_M,
                (p.lat - origin.lat).to_radians() * EARTH_RADIUS_M,
            )
        };
        let vertices: Vec<(f64, f64)> = polyline.iter().map(to_xy).collect();
        let mut cumulative_m = Vec::with_capacity(vertices.len());
        let mut acc = 0.0;
        cumulative_m.push(0.0);
        for pair in vertices.windows(2) {
            acc += dist(pair[0], pair[1]);
            cumulative_m.push(acc);
        }
        Self {
            vertices,
            cumulative_m,
            origin,
            cos_lat,
        }
    }

    pub fn total_length_m(&self) -> f64 {
        *self.cumulative_m.last().unwrap_or(&0.0)
    }

    fn to_xy(&self, p: LatLon) -> (f64, f64) {
        (
            (p.lon - self.origin.lon).to_radians() * self.cos_lat * EARTH_RADIUS_M,
            (p.lat - self.origin.lat).to_radians() * EARTH_RADIUS_M,
        )
    }

    /// Nearest point on the polyline: cumulative distance along the route
    /// and the offset from it in metres.
    pub fn project(&self, p: LatLon) -> (f64, f64) {
        let q = self.to_xy(p);
        let mut best = (0.0, f64::INFINITY);
        for (i, seg) in self.vertices.windows(2).enumerate() {
            let (a, b) = (seg[0], seg[1]);
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let len_sq = dx * dx + dy * dy;
            let t = if len_sq > 0.0 {
                (((q.0 - a.0) * dx + (q.1 - a.1) * dy) / len_sq).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let nearest = (a.0 + t * dx, a.1 + t * dy);
            let offset = dist(q, nearest);
            if offset < best.1 {
                best = (self.cumulative_m[i] + t * len_sq.sqrt(), offset);
            }
        }
        best
    }

    /// Position `distance_m` along the polyline (clamped to its ends).
    pub fn point_at(&self, distance_m: f64) -> LatLon {
        let d = distance_m.clamp(0.0, self.total_length_m());
        let i = match self
            .cumulative_m
            .binary_search_by(|c| c.partial_cmp(&d).unwrap())
        {
            Ok(i) => i.min(self.vertices.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.vertices.len() - 2),
        };
        let seg_len = self.cumulative_m[i + 1] - self.cumulative_m[i];
        let t = if seg_len > 0.0 {
            (d - self.cumulative_m[i]) / seg_len
        } else {
            0.0
        };
        let (a, b) = (self.vertices[i], self.vertices[i + 1]);
        let xy = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
        LatLon {
            lat: self.origin.lat + (xy.1 / EARTH_RADIUS_M).to_degrees(),
            lon: self.origin.lon + (xy.0 / (EARTH_RADIUS_M * self.cos_lat)).to_degrees(),
        }
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Time window of interest, seconds since midnight of the operating day
/// (values past 86400 reach into the after-midnight tail of the same
/// operating day). Windows that cross midnight are represented as two
/// windows sharing a label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub label: String,
    pub start: f64,
    pub end: f64,
}

impl TimeWindow {
    pub fn new(label: impl Into<String>, start: f64, end: f64) -> Self {
        Self {
            label: label.into(),
            start,
            end,
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

/// A straight-line test route: `n_patches` equal patches of `patch_len_m`
/// metres each, terminal patches at both ends.
pub fn straight_route(
    route_id: &str,
    n_patches: usize,
    patch_len_m: f64,
    timetable_duration: u64,
    limit_affected: &[usize],
) -> RouteSpec {
    let origin = LatLon {
        lat: 55.95,
        lon: -3.19,
    };
    let total = n_patches as f64 * patch_len_m;
    // Head due east: longitude grows with distance.
    let dlon = |m: f64| m / (EARTH_RADIUS_M * origin.lat.to_radians().cos());
    let polyline = vec![
        origin,
        LatLon {
            lat: origin.lat,
            lon: origin.lon + dlon(total).to_degrees(),
        },
    ];
    let patches = (0..n_patches)
        .map(|i| PatchSpec {
            index: i,
            name: format!("patch{i}"),
            start_m: i as f64 * patch_len_m,
            end_m: (i + 1) as f64 * patch_len_m,
            limit_affected: limit_affected.contains(&i),
            terminal: i == 0 || i == n_patches - 1,
            skip_length_check: true,
            clean_floor_s: None,
        })
        .collect();
    RouteSpec {
        route_id: route_id.to_string(),
        direction: RouteDirection::Forward,
        timetable_duration,
        polyline,
        patches,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_route_validates() {
        let route = straight_route("TEST", 5, 800.0, 600, &[2]);
        assert!(route.validate().is_ok());
        assert_eq!(route.journey_patches(), vec![1, 2, 3]);
        let geometry = route.geometry();
        assert!((geometry.total_length_m() - 4000.0).abs() < 0.5);
    }

    #[test]
    fn patch_lookup_uses_half_open_intervals() {
        let route = straight_route("TEST", 4, 700.0, 600, &[]);
        assert_eq!(route.patch_at(0.0), Some(0));
        assert_eq!(route.patch_at(699.999), Some(0));
        assert_eq!(route.patch_at(700.0), Some(1));
        assert_eq!(route.patch_at(2800.0), Some(3));
        assert_eq!(route.patch_at(2800.1), None);
    }

    #[test]
    fn projection_recovers_distance() {
        let route = straight_route("TEST", 3, 1000.0, 600, &[]);
        let geometry = route.geometry();
        for d in [0.0, 250.0, 1500.0, 2999.0] {
            let p = geometry.point_at(d);
            let (along, offset) = geometry.project(p);
            assert!((along - d).abs() < 0.01, "d={d}, along={along}");
            assert!(offset < 0.01);
        }
    }

    #[test]
    fn offset_measured_for_off_route_points() {
        let route = straight_route("TEST", 3, 1000.0, 600, &[]);
        let geometry = route.geometry();
        let on = geometry.point_at(1200.0);
        // ~200 m north of the (east-west) route.
        let off = LatLon {
            lat: on.lat + (200.0 / EARTH_RADIUS_M).to_degrees(),
            lon: on.lon,
        };
        let (_, offset) = geometry.project(off);
        assert!((offset - 200.0).abs() < 1.0, "offset {offset}");
    }

    #[test]
    fn toml_round_trip() {
        let route = straight_route("AIR", 4, 900.0, 1680, &[1, 2]);
        let text = route.to_toml_string();
        let back = RouteSpec::from_toml_str(&text).unwrap();
        assert_eq!(route, back);
    }

    #[test]
    fn validation_catches_gaps_and_bad_terminals() {
        let mut route = straight_route("TEST", 4, 800.0, 600, &[]);
        route.patches[2].start_m += 5.0;
        let err = route.validate().unwrap_err();
        assert!(err.to_string().contains("not contiguous"));

        let mut route = straight_route("TEST", 4, 800.0, 600, &[]);
        route.patches[3].terminal = false;
        assert!(route
            .validate()
            .unwrap_err()
            .to_string()
            .contains("last patch"));
    }

    #[test]
    fn length_bounds_enforced_unless_overridden() {
        let mut route = straight_route("TEST", 4, 800.0, 600, &[]);
        for p in &mut route.patches {
            p.skip_length_check = false;
        }
        route.validate().unwrap();
        let mut narrow = straight_route("TEST", 4, 300.0, 600, &[]);
        for p in &mut narrow.patches {
            p.skip_length_check = false;
        }
        let err = narrow.validate().unwrap_err();
        assert!(err.to_string().contains("outside"));
    }

    #[test]
    fn window_containment() {
        let w = TimeWindow::new("midday", 9.0 * 3600.0, 15.0 * 3600.0);
        assert!(w.contains(9.0 * 3600.0));
        assert!(!w.contains(15.0 * 3600.0));
        assert!(!w.contains(8.0 * 3600.0));
    }
}
