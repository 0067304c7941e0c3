//! Matching a pose estimate to the closest map pose under the combined
//! distance `D = E + A`, where `E` is the horizontal Euclidean distance in
//! meters and `A` the quaternion angular distance in degrees (one degree
//! weighs as much as one meter).

use std::cmp::Ordering;
use std::f64::consts::PI;

use serde::Serialize;

use crate::geom::{quat_angular_distance_deg, relative, wrap_angle, Pose};
use crate::mapgraph::{MapGraph, MapPose};

#[derive(Debug, Clone, PartialEq)]
pub struct MatchConfig {
    /// Search radius around the hint (or the estimate without a hint).
    pub radius_m: f64,
    /// Radius of the single widened retry when the first window is empty.
    pub widen_radius_m: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            radius_m: 20.0,
            widen_radius_m: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchResult {
    /// Matched waypoint; `heading` is flipped by pi when `reversed`.
    pub map_pose: MapPose,
    pub reversed: bool,
    pub euclidean_m: f64,
    pub angular_deg: f64,
    pub combined: f64,
    pub lateral_m: f64,
    pub road_width_m: f64,
    pub exceeds_road_width: bool,
}

/// Map pose as a full pose: waypoint position and heading, with height, roll
/// and pitch taken from the estimate.
pub fn road_pose(wp: &MapPose, estimate: &Pose) -> Pose {
    let (roll, pitch, _) = estimate.euler();
    wp.to_pose(estimate.z(), roll, pitch)
}

/// Perpendicular offset of `estimate` from the road direction at `wp`,
/// `|y|` of the transform from the road pose to the estimate.
pub fn lateral_offset(wp: &MapPose, estimate: &Pose) -> f64 {
    relative(&road_pose(wp, estimate), estimate).translation.y.abs()
}

fn reversed(wp: &MapPose) -> MapPose {
    MapPose {
        heading: wrap_angle(wp.heading + PI),
        ..*wp
    }
}

/// Scores one candidate orientation of a waypoint against the estimate.
pub fn score(wp: &MapPose, is_reversed: bool, road_width_m: f64, estimate: &Pose) -> MatchResult {
    let oriented = if is_reversed { reversed(wp) } else { *wp };
    let candidate = road_pose(&oriented, estimate);
    let euclidean_m = (oriented.xy() - estimate.xy()).norm();
    let angular_deg = quat_angular_distance_deg(&estimate.rotation, &candidate.rotation);
    let lateral_m = relative(&candidate, estimate).translation.y.abs();
    MatchResult {
        map_pose: oriented,
        reversed: is_reversed,
        euclidean_m,
        angular_deg,
        combined: euclidean_m + angular_deg,
        lateral_m,
        road_width_m,
        exceeds_road_width: lateral_m > road_width_m,
    }
}

/// Lower combined distance first; ties prefer the hint's edge, then the
/// lower edge id, lower waypoint index, and the forward direction.
fn better(a: &MatchResult, b: &MatchResult, hint_edge: Option<u32>) -> bool {
    let key = |m: &MatchResult| {
        (
            Some(m.map_pose.edge) != hint_edge,
            m.map_pose.edge,
            m.map_pose.index,
            m.reversed,
        )
    };
    match a.combined.partial_cmp(&b.combined) {
        Some(Ordering::Less) => true,
        Some(Ordering::Greater) => false,
        _ => key(a) < key(b),
    }
}

/// Best candidate among `candidates`, trying both traversal directions.
pub fn best_of<'a>(
    map: &MapGraph,
    candidates: impl IntoIterator<Item = &'a MapPose>,
    estimate: &Pose,
    hint_edge: Option<u32>,
) -> Option<MatchResult> {
    let mut best: Option<MatchResult> = None;
    for wp in candidates {
        let width = map.edge(wp.edge).map_or(0.0, |e| e.road_width_m());
        for dir in [false, true] {
            let m = score(wp, dir, width, estimate);
            if best.as_ref().is_none_or(|b| better(&m, b, hint_edge)) {
                best = Some(m);
            }
        }
    }
    best
}

/// Closest map pose to `estimate` within the search window. The window is
/// centered on the hint's map pose when given; an empty window is widened
/// once before reporting no match.
pub fn match_pose(
    map: &MapGraph,
    estimate: &Pose,
    hint: Option<&MatchResult>,
    cfg: &MatchConfig,
) -> Option<MatchResult> {
    let center = hint.map_or_else(|| estimate.xy(), |h| h.map_pose.xy());
    let hint_edge = hint.map(|h| h.map_pose.edge);
    let mut candidates = map.query_nearby(center, cfg.radius_m);
    if candidates.is_empty() {
        candidates = map.query_nearby(center, cfg.widen_radius_m);
    }
    best_of(map, &candidates, estimate, hint_edge)
}
