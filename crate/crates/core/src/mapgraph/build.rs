use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Vector2, Vector3};

use super::{EdgeId, GridIndex, MapError, MapGraph, MapPose, RawOsmExtract, RoadEdge};
use crate::geom::{heading_between, GeoPoint, LocalFrame};

/// Parameters of the map build.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildConfig {
    /// Maximum spacing between consecutive waypoints after interpolation.
    pub step_m: f64,
    /// Rolling-average window in waypoints; odd.
    pub smoothing_window: u32,
    pub grid_cell_m: f64,
    /// Local frame origin; the extract's bounding-box center when `None`.
    pub origin: Option<GeoPoint>,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            step_m: 1.0,
            smoothing_window: 5,
            grid_cell_m: 20.0,
            origin: None,
        }
    }
}

/// Non-fatal events from a build.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildReport {
    pub degenerate_ways: usize,
    pub edges: usize,
    pub waypoints: usize,
}

fn lane_count(tags: &BTreeMap<String, String>) -> u32 {
    // "2;3" style values: take the first integer.
    tags.get("lanes")
        .and_then(|v| {
            let digits: String = v.trim().chars().take_while(|c| c.is_ascii_digit()).collect();
            digits.parse::<u32>().ok()
        })
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

fn bbox_center(raw: &RawOsmExtract) -> GeoPoint {
    let (mut lat0, mut lat1, mut lon0, mut lon1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in raw.nodes.values() {
        lat0 = lat0.min(p.latitude);
        lat1 = lat1.max(p.latitude);
        lon0 = lon0.min(p.longitude);
        lon1 = lon1.max(p.longitude);
    }
    GeoPoint {
        latitude: 0.5 * (lat0 + lat1),
        longitude: 0.5 * (lon0 + lon1),
        altitude: 0.0,
    }
}

// Pieces needed so no piece exceeds `step`. Lengths within a micrometer
// of a multiple of `step` count as that multiple, absorbing projection noise.
fn pieces(len: f64, step: f64) -> usize {
    ((len - 1e-6) / step).ceil().max(1.0) as usize
}

/// Linear interpolation so no gap exceeds `step`. Returns the points and,
/// for every input point, its index in the output.
pub(crate) fn densify(points: &[Vector2<f64>], step: f64) -> (Vec<Vector2<f64>>, Vec<usize>) {
    let mut out = Vec::with_capacity(points.len());
    let mut at = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        if i > 0 {
            let prev = points[i - 1];
            let len = (p - prev).norm();
            let pieces = pieces(len, step);
            for k in 1..pieces {
                out.push(prev + (p - prev) * (k as f64 / pieces as f64));
            }
        }
        at.push(out.len());
        out.push(*p);
    }
    (out, at)
}

/// Centered rolling average; the half-width shrinks near the ends so the
/// first and last points stay fixed.
pub(crate) fn smooth(points: &[Vector2<f64>], window: u32) -> Vec<Vector2<f64>> {
    let half = (window as usize) / 2;
    let n = points.len();
    (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let sum: Vector2<f64> = points[i - h..=i + h].iter().sum();
            sum / (2 * h + 1) as f64
        })
        .collect()
}

/// Assigns each point the heading toward its successor; the last point copies
/// its predecessor. Consecutive coincident points are removed first.
pub(crate) fn headings(points: &[Vector2<f64>]) -> Vec<(Vector2<f64>, f64)> {
    let mut pts: Vec<Vector2<f64>> = Vec::with_capacity(points.len());
    for p in points {
        if pts.last().is_none_or(|q| (p - q).norm() > 1e-9) {
            pts.push(*p);
        }
    }
    let mut out = Vec::with_capacity(pts.len());
    for i in 0..pts.len() {
        let h = if i + 1 < pts.len() {
            heading_between(pts[i], pts[i + 1]).expect("deduplicated")
        } else if i > 0 {
            out.last().map(|(_, h)| *h).unwrap_or(0.0)
        } else {
            0.0
        };
        out.push((pts[i], h));
    }
    out
}

/// Inserts points into any gap longer than `step` left by smoothing.
fn fill_gaps(points: Vec<Vector2<f64>>, step: f64, keep: &mut [usize]) -> Vec<Vector2<f64>> {
    let mut out = Vec::with_capacity(points.len());
    let mut remap = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        if i > 0 {
            let prev = points[i - 1];
            let len = (p - prev).norm();
            let pieces = pieces(len, step);
            for k in 1..pieces {
                out.push(prev + (p - prev) * (k as f64 / pieces as f64));
            }
        }
        remap.push(out.len());
        out.push(*p);
    }
    for k in keep.iter_mut() {
        *k = remap[*k];
    }
    out
}

/// Builds the road graph: vertices at way endpoints and at nodes shared by
/// more than one way occurrence; one edge per way section between vertices.
/// `oneway` tags are ignored, every edge is two-way.
pub fn build_graph(raw: &RawOsmExtract, cfg: &BuildConfig) -> Result<(MapGraph, BuildReport), MapError> {
    if !(cfg.step_m > 0.0) {
        return Err(MapError::InvalidParameter(format!("step {} must be positive", cfg.step_m)));
    }
    if cfg.smoothing_window == 0 || cfg.smoothing_window.is_multiple_of(2) {
        return Err(MapError::InvalidParameter(format!(
            "smoothing window {} must be odd and at least 1",
            cfg.smoothing_window
        )));
    }
    if !(cfg.grid_cell_m > 0.0) {
        return Err(MapError::InvalidParameter("grid cell must be positive".into()));
    }
    if raw.ways.is_empty() {
        return Err(MapError::NoRoads);
    }

    let frame = LocalFrame::new(cfg.origin.unwrap_or_else(|| bbox_center(raw)));
    let xy = |id: &i64| -> Vector2<f64> {
        let enu: Vector3<f64> = frame.project(&raw.nodes[id]);
        Vector2::new(enu.x, enu.y)
    };

    let mut report = BuildReport::default();

    // Node occurrence counts across ways, after removing repeated nodes.
    let mut cleaned: Vec<(i64, Vec<i64>, u32)> = Vec::new();
    for (&way_id, way) in &raw.ways {
        let mut nodes: Vec<i64> = Vec::with_capacity(way.nodes.len());
        for n in &way.nodes {
            if nodes.last() != Some(n) {
                nodes.push(*n);
            }
        }
        let distinct: BTreeSet<i64> = nodes.iter().copied().collect();
        if distinct.len() < 2 {
            report.degenerate_ways += 1;
            continue;
        }
        cleaned.push((way_id, nodes, lane_count(&way.tags)));
    }
    if cleaned.is_empty() {
        return Err(MapError::NoRoads);
    }

    let mut uses: BTreeMap<i64, usize> = BTreeMap::new();
    let mut vertex_ids: BTreeSet<i64> = BTreeSet::new();
    for (_, nodes, _) in &cleaned {
        for n in nodes {
            *uses.entry(*n).or_default() += 1;
        }
        vertex_ids.insert(nodes[0]);
        vertex_ids.insert(*nodes.last().unwrap());
    }
    vertex_ids.extend(uses.iter().filter(|(_, &c)| c >= 2).map(|(&n, _)| n));
    let vertices: BTreeMap<i64, Vector2<f64>> = vertex_ids.iter().map(|id| (*id, xy(id))).collect();

    let mut edges: Vec<RoadEdge> = Vec::new();
    let mut index = GridIndex::new(cfg.grid_cell_m);
    for (way_id, nodes, lanes) in &cleaned {
        let pts: Vec<Vector2<f64>> = nodes.iter().map(xy).collect();
        let (dense, mut at) = densify(&pts, cfg.step_m);
        let smoothed = smooth(&dense, cfg.smoothing_window);
        let filled = fill_gaps(smoothed, cfg.step_m, &mut at);

        let cuts: Vec<usize> = nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| vertex_ids.contains(n))
            .map(|(k, _)| k)
            .collect();
        for pair in cuts.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let section = headings(&filled[at[a]..=at[b]]);
            if section.len() < 2 {
                report.degenerate_ways += 1;
                continue;
            }
            let id = edges.len() as EdgeId;
            let waypoints: Vec<MapPose> = section
                .iter()
                .enumerate()
                .map(|(i, (p, h))| MapPose {
                    x: p.x,
                    y: p.y,
                    heading: *h,
                    edge: id,
                    index: i as u32,
                })
                .collect();
            for w in &waypoints {
                index.insert(w.xy(), id, w.index);
            }
            edges.push(RoadEdge {
                id,
                way_id: *way_id,
                from: nodes[a],
                to: nodes[b],
                lane_count: *lanes,
                waypoints,
            });
        }
    }
    if edges.is_empty() {
        return Err(MapError::NoRoads);
    }
    report.edges = edges.len();
    report.waypoints = edges.iter().map(|e| e.waypoints.len()).sum();

    Ok((
        MapGraph {
            frame,
            step_m: cfg.step_m,
            window: cfg.smoothing_window,
            vertices,
            edges,
            index,
        },
        report,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapgraph::RawWay;
    use std::f64::consts::FRAC_PI_2;

    fn extract(ways: &[(i64, &[i64], Option<&str>)], nodes: &[(i64, f64, f64)]) -> (RawOsmExtract, LocalFrame) {
        // Nodes are given in local meters around a fixed origin.
        let origin = GeoPoint::lat_lon(48.0, 11.0).unwrap();
        let frame = LocalFrame::new(origin);
        let mut raw = RawOsmExtract::default();
        for &(id, x, y) in nodes {
            raw.nodes.insert(id, frame.unproject(&Vector3::new(x, y, 0.0)));
        }
        for &(id, ns, lanes) in ways {
            let mut tags = BTreeMap::new();
            if let Some(l) = lanes {
                tags.insert("lanes".to_string(), l.to_string());
            }
            raw.ways.insert(id, RawWay { nodes: ns.to_vec(), tags });
        }
        (raw, frame)
    }

    fn cfg_at(frame: &LocalFrame, window: u32) -> BuildConfig {
        BuildConfig {
            origin: Some(frame.origin()),
            smoothing_window: window,
            ..BuildConfig::default()
        }
    }

    #[test]
    fn straight_way_eleven_waypoints() {
        let (raw, frame) = extract(&[(1, &[1, 2], None)], &[(1, 0.0, 0.0), (2, 10.0, 0.0)]);
        let (map, _) = build_graph(&raw, &cfg_at(&frame, 5)).unwrap();
        assert_eq!(map.edges().len(), 1);
        let e = &map.edges()[0];
        assert_eq!(e.waypoints.len(), 11);
        assert_eq!(e.lane_count, 1);
        assert_eq!(e.road_width_m(), 3.0);
        for w in &e.waypoints {
            assert!(w.heading.abs() < 1e-6, "{}", w.heading);
            assert!(w.y.abs() < 1e-6);
        }
    }

    #[test]
    fn l_corner_is_rounded() {
        let (raw, frame) = extract(
            &[(1, &[1, 2, 3], None)],
            &[(1, 0.0, 0.0), (2, 10.0, 0.0), (3, 10.0, 10.0)],
        );
        let (map, _) = build_graph(&raw, &cfg_at(&frame, 5)).unwrap();
        let wps = &map.edges()[0].waypoints;
        // Hand-applied 5-point average: indices 8..=11 straddle the corner
        // with headings atan(0.2/0.8), atan(0.4/0.6), atan(0.6/0.4), atan(0.8/0.2).
        let expect = [0.25f64.atan(), (0.4f64 / 0.6).atan(), 1.5f64.atan(), 4.0f64.atan()];
        for (k, e) in expect.iter().enumerate() {
            assert!((wps[8 + k].heading - e).abs() < 1e-6, "index {}", 8 + k);
        }
        let corner: Vec<f64> = wps[8..12].iter().map(|w| w.heading).collect();
        assert!(corner.iter().all(|&h| h > 0.0 && h < FRAC_PI_2));
        assert!(corner.windows(2).all(|w| w[1] > w[0]));
        // endpoints unchanged
        assert!(wps[0].xy().norm() < 1e-6);
        assert!((wps.last().unwrap().xy() - Vector2::new(10.0, 10.0)).norm() < 1e-6);
    }

    #[test]
    fn crossing_ways_make_degree_four_vertex() {
        let (raw, frame) = extract(
            &[(1, &[1, 5, 2], None), (2, &[3, 5, 4], Some("2"))],
            &[(1, -20.0, 0.0), (2, 20.0, 0.0), (3, 0.0, -20.0), (4, 0.0, 20.0), (5, 0.0, 0.0)],
        );
        let (map, _) = build_graph(&raw, &cfg_at(&frame, 5)).unwrap();
        assert_eq!(map.edges().len(), 4);
        assert_eq!(map.degree(5), 4);
        assert_eq!(map.vertices().len(), 5);
        let four_lane: Vec<_> = map.edges().iter().filter(|e| e.way_id == 2).collect();
        assert!(four_lane.iter().all(|e| e.road_width_m() == 6.0));
    }

    #[test]
    fn lanes_tag_parsing() {
        let tags = |v: &str| BTreeMap::from([("lanes".to_string(), v.to_string())]);
        assert_eq!(lane_count(&tags("6")), 6);
        assert_eq!(lane_count(&tags("2;3")), 2);
        assert_eq!(lane_count(&tags("x")), 1);
        assert_eq!(lane_count(&tags("0")), 1);
        assert_eq!(lane_count(&BTreeMap::new()), 1);
    }

    #[test]
    fn bad_parameters_and_empty_input() {
        let (raw, frame) = extract(&[(1, &[1, 2], None)], &[(1, 0.0, 0.0), (2, 10.0, 0.0)]);
        let mut c = cfg_at(&frame, 4);
        assert!(matches!(build_graph(&raw, &c), Err(MapError::InvalidParameter(_))));
        c.smoothing_window = 5;
        c.step_m = 0.0;
        assert!(matches!(build_graph(&raw, &c), Err(MapError::InvalidParameter(_))));
        assert!(matches!(
            build_graph(&RawOsmExtract::default(), &BuildConfig::default()),
            Err(MapError::NoRoads)
        ));
    }

    #[test]
    fn single_node_way_is_dropped() {
        let (raw, frame) = extract(
            &[(1, &[1, 1], None), (2, &[1, 2], None)],
            &[(1, 0.0, 0.0), (2, 5.0, 0.0)],
        );
        let (map, report) = build_graph(&raw, &cfg_at(&frame, 1)).unwrap();
        assert_eq!(report.degenerate_ways, 1);
        assert_eq!(map.edges().len(), 1);
    }

    #[test]
    fn oneway_is_ignored() {
        let (mut raw, frame) = extract(&[(1, &[1, 2], None)], &[(1, 0.0, 0.0), (2, 10.0, 0.0)]);
        let plain = build_graph(&raw, &cfg_at(&frame, 5)).unwrap().0;
        raw.ways.get_mut(&1).unwrap().tags.insert("oneway".into(), "yes".into());
        assert_eq!(build_graph(&raw, &cfg_at(&frame, 5)).unwrap().0, plain);
    }

    #[test]
    fn smoothing_keeps_lines_fixed() {
        let pts: Vec<Vector2<f64>> = (0..20).map(|i| Vector2::new(i as f64 * 0.5, 2.0)).collect();
        let s = smooth(&pts, 7);
        for (a, b) in pts.iter().zip(&s) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
