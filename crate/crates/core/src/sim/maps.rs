//! Synthetic road maps laid out directly in local metric coordinates.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};

use crate::geom::{GeoPoint, LocalFrame};
use crate::mapgraph::{build_graph, BuildConfig, MapError, MapGraph, RawOsmExtract, RawWay};

/// Fixed origin for synthetic maps.
pub fn origin() -> GeoPoint {
    GeoPoint {
        latitude: 48.137,
        longitude: 11.575,
        altitude: 0.0,
    }
}

/// A polyline road. Points equal across ways become shared nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Way {
    pub points: Vec<Vector2<f64>>,
    pub lanes: u32,
}

impl Way {
    pub fn open(points: Vec<Vector2<f64>>, lanes: u32) -> Self {
        Self { points, lanes }
    }

    /// Closes the polyline back onto its first point.
    pub fn closed(mut points: Vec<Vector2<f64>>, lanes: u32) -> Self {
        if let Some(first) = points.first().copied() {
            points.push(first);
        }
        Self { points, lanes }
    }
}

/// The raw extract for `ways`, nodes placed through the fixed origin.
pub fn extract(ways: &[Way]) -> RawOsmExtract {
    let frame = LocalFrame::new(origin());
    let mut raw = RawOsmExtract::default();
    let mut seen: Vec<(Vector2<f64>, i64)> = Vec::new();
    for (w, way) in ways.iter().enumerate() {
        let mut nodes = Vec::with_capacity(way.points.len());
        for p in &way.points {
            let id = match seen.iter().find(|(q, _)| (q - p).norm() < 1e-6) {
                Some((_, id)) => *id,
                None => {
                    let id = seen.len() as i64 + 1;
                    seen.push((*p, id));
                    raw.nodes.insert(id, frame.unproject(&Vector3::new(p.x, p.y, 0.0)));
                    id
                }
            };
            nodes.push(id);
        }
        let tags = BTreeMap::from([
            ("highway".to_string(), "residential".to_string()),
            ("lanes".to_string(), way.lanes.to_string()),
        ]);
        raw.ways.insert(w as i64 + 1, RawWay { nodes, tags });
    }
    raw
}

pub fn from_polylines(ways: &[Way]) -> Result<MapGraph, MapError> {
    let cfg = BuildConfig {
        origin: Some(origin()),
        ..BuildConfig::default()
    };
    build_graph(&extract(ways), &cfg).map(|(m, _)| m)
}

/// East-pointing straight road from the origin.
pub fn straight(length_m: f64, lanes: u32) -> Result<MapGraph, MapError> {
    from_polylines(&[Way::open(vec![Vector2::zeros(), Vector2::new(length_m, 0.0)], lanes)])
}

/// Counter-clockwise rectangle with quarter-circle corners, centered on the
/// origin. The single closed edge starts in the middle of the south side.
pub fn rounded_rectangle_points(width_m: f64, height_m: f64, corner_radius_m: f64) -> Vec<Vector2<f64>> {
    let hw = 0.5 * width_m - corner_radius_m;
    let hh = 0.5 * height_m - corner_radius_m;
    let r = corner_radius_m;
    let arc_steps = ((0.5 * PI * r) / 2.0).ceil().max(1.0) as usize;
    let centers = [
        (Vector2::new(hw, -hh), -0.5 * PI),
        (Vector2::new(hw, hh), 0.0),
        (Vector2::new(-hw, hh), 0.5 * PI),
        (Vector2::new(-hw, -hh), PI),
    ];
    let mut pts = vec![Vector2::new(0.0, -0.5 * height_m)];
    for (c, a0) in centers {
        for s in 0..=arc_steps {
            let a = a0 + 0.5 * PI * s as f64 / arc_steps as f64;
            pts.push(c + r * Vector2::new(a.cos(), a.sin()));
        }
    }
    pts
}

pub fn rounded_rectangle(width_m: f64, height_m: f64, corner_radius_m: f64, lanes: u32) -> Result<MapGraph, MapError> {
    if !(corner_radius_m > 0.0 && 2.0 * corner_radius_m < width_m.min(height_m)) {
        return Err(MapError::InvalidParameter("corner radius must fit the rectangle".into()));
    }
    from_polylines(&[Way::closed(rounded_rectangle_points(width_m, height_m, corner_radius_m), lanes)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_map_is_exact() {
        let m = straight(100.0, 2).unwrap();
        assert_eq!(m.edges().len(), 1);
        let e = &m.edges()[0];
        assert_eq!(e.lane_count, 2);
        assert!((e.length_m() - 100.0).abs() < 1e-6);
        assert!(e.waypoints.iter().all(|w| w.y.abs() < 1e-6 && w.heading.abs() < 1e-6));
    }

    #[test]
    fn loop_closes_on_itself() {
        let m = rounded_rectangle(600.0, 400.0, 40.0, 1).unwrap();
        assert_eq!(m.edges().len(), 1);
        let e = &m.edges()[0];
        assert_eq!(e.from, e.to);
        let expected = 2.0 * (520.0 + 320.0) + 2.0 * PI * 40.0;
        assert!((e.length_m() - expected).abs() < 2.0, "{}", e.length_m());
    }

    #[test]
    fn shared_points_become_junctions() {
        let m = from_polylines(&[
            Way::open(vec![Vector2::new(-50.0, 0.0), Vector2::new(50.0, 0.0)], 1),
            Way::open(vec![Vector2::new(0.0, 0.0), Vector2::new(0.0, 50.0)], 1),
        ]);
        // the junction at x = 0 is not a point of the first way
        assert_eq!(m.unwrap().edges().len(), 2);
        let m = from_polylines(&[
            Way::open(vec![Vector2::new(-50.0, 0.0), Vector2::new(0.0, 0.0), Vector2::new(50.0, 0.0)], 1),
            Way::open(vec![Vector2::new(0.0, 0.0), Vector2::new(0.0, 50.0)], 1),
        ])
        .unwrap();
        assert_eq!(m.edges().len(), 3);
    }
}
