//! Binary map file.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes  "MFMAPGR\0"
//! version      u32
//! origin       f64 lat, f64 lon, f64 alt
//! step         f64
//! window       u32
//! vertices     u32 count, then (i64 id, f64 x, f64 y) each
//! edges        u32 count, then per edge:
//!                i64 way id, i64 from vertex, i64 to vertex, u32 lanes,
//!                u32 waypoint count, then (f64 x, f64 y, f64 heading) each
//! grid         f64 cell size, u32 cell count, then per cell:
//!                i64 ix, i64 iy, u32 count, then (u32 edge, u32 index) each
//! checksum     u64 FNV-1a over every preceding byte
//! ```

use std::collections::BTreeMap;

use nalgebra::Vector2;
use serde_json::json;

use super::{GridIndex, MapError, MapGraph, MapPose, RoadEdge};
use crate::geom::{GeoPoint, LocalFrame};

pub const MAP_MAGIC: &[u8; 8] = b"MFMAPGR\0";
pub const MAP_FORMAT_VERSION: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("map section exceeds u32 entries"));
    }
}

pub fn serialize_map(map: &MapGraph) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(64 + map.waypoint_count() * 32));
    w.0.extend_from_slice(MAP_MAGIC);
    w.u32(MAP_FORMAT_VERSION);
    let o = map.frame.origin();
    w.f64(o.latitude);
    w.f64(o.longitude);
    w.f64(o.altitude);
    w.f64(map.step_m);
    w.u32(map.window);

    w.len(map.vertices.len());
    for (id, p) in &map.vertices {
        w.i64(*id);
        w.f64(p.x);
        w.f64(p.y);
    }

    w.len(map.edges.len());
    for e in &map.edges {
        w.i64(e.way_id);
        w.i64(e.from);
        w.i64(e.to);
        w.u32(e.lane_count);
        w.len(e.waypoints.len());
        for p in &e.waypoints {
            w.f64(p.x);
            w.f64(p.y);
            w.f64(p.heading);
        }
    }

    w.f64(map.index.cell_size());
    w.len(map.index.cells().len());
    for ((ix, iy), refs) in map.index.cells() {
        w.i64(*ix);
        w.i64(*iy);
        w.len(refs.len());
        for (e, i) in refs {
            w.u32(*e);
            w.u32(*i);
        }
    }

    let sum = fnv1a(&w.0);
    w.0.extend_from_slice(&sum.to_le_bytes());
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MapError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(MapError::Truncated(self.buf.len())),
        }
    }
    fn u32(&mut self) -> Result<u32, MapError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64, MapError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, MapError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    // Counts are bounded by the remaining bytes so a corrupt count cannot
    // trigger a huge allocation.
    fn count(&mut self, min_entry: usize) -> Result<usize, MapError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_entry) > self.buf.len() - self.pos {
            return Err(MapError::Truncated(self.buf.len()));
        }
        Ok(n)
    }
}

pub fn load_map(bytes: &[u8]) -> Result<MapGraph, MapError> {
    if bytes.len() < MAP_MAGIC.len() + 4 {
        return Err(MapError::Truncated(bytes.len()));
    }
    if &bytes[..8] != MAP_MAGIC {
        return Err(MapError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != MAP_FORMAT_VERSION {
        return Err(MapError::VersionMismatch {
            found: version,
            expected: MAP_FORMAT_VERSION,
        });
    }
    if bytes.len() < 20 {
        return Err(MapError::Truncated(bytes.len()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if fnv1a(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
        return Err(MapError::Checksum);
    }

    let mut r = Reader { buf: body, pos: 12 };
    let origin = GeoPoint::new(r.f64()?, r.f64()?, r.f64()?)
        .map_err(|e| MapError::Corrupt(e.to_string()))?;
    let step_m = r.f64()?;
    let window = r.u32()?;

    let mut vertices = BTreeMap::new();
    for _ in 0..r.count(24)? {
        let id = r.i64()?;
        vertices.insert(id, Vector2::new(r.f64()?, r.f64()?));
    }

    let n_edges = r.count(32)?;
    let mut edges = Vec::with_capacity(n_edges);
    for id in 0..n_edges as u32 {
        let way_id = r.i64()?;
        let from = r.i64()?;
        let to = r.i64()?;
        let lane_count = r.u32()?;
        if !vertices.contains_key(&from) || !vertices.contains_key(&to) {
            return Err(MapError::Corrupt(format!("edge {id} references a missing vertex")));
        }
        if lane_count == 0 {
            return Err(MapError::Corrupt(format!("edge {id} has zero lanes")));
        }
        let n = r.count(24)?;
        let mut waypoints = Vec::with_capacity(n);
        for index in 0..n as u32 {
            waypoints.push(MapPose {
                x: r.f64()?,
                y: r.f64()?,
                heading: r.f64()?,
                edge: id,
                index,
            });
        }
        edges.push(RoadEdge {
            id,
            way_id,
            from,
            to,
            lane_count,
            waypoints,
        });
    }

    let cell = r.f64()?;
    let mut cells = BTreeMap::new();
    for _ in 0..r.count(20)? {
        let key = (r.i64()?, r.i64()?);
        let n = r.count(8)?;
        let mut refs = Vec::with_capacity(n);
        for _ in 0..n {
            let (e, i) = (r.u32()?, r.u32()?);
            let ok = edges
                .get(e as usize)
                .is_some_and(|edge: &RoadEdge| (i as usize) < edge.waypoints.len());
            if !ok {
                return Err(MapError::Corrupt("grid references a missing waypoint".into()));
            }
            refs.push((e, i));
        }
        cells.insert(key, refs);
    }
    if r.pos != body.len() {
        return Err(MapError::Corrupt("trailing bytes after grid".into()));
    }

    Ok(MapGraph {
        frame: LocalFrame::new(origin),
        step_m,
        window,
        vertices,
        edges,
        index: GridIndex::from_cells(cell, cells),
    })
}

/// Human-readable dump of the map for inspection.
pub fn to_debug_json(map: &MapGraph) -> serde_json::Value {
    let o = map.frame.origin();
    json!({
        "origin": { "lat": o.latitude, "lon": o.longitude, "alt": o.altitude },
        "step_m": map.step_m,
        "smoothing_window": map.window,
        "vertices": map.vertices.iter().map(|(id, p)| json!({"id": id, "x": p.x, "y": p.y})).collect::<Vec<_>>(),
        "edges": map.edges.iter().map(|e| json!({
            "id": e.id,
            "way_id": e.way_id,
            "from": e.from,
            "to": e.to,
            "lanes": e.lane_count,
            "road_width_m": e.road_width_m(),
            "waypoints": e.waypoints.iter().map(|w| [w.x, w.y, w.heading]).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    })
}
