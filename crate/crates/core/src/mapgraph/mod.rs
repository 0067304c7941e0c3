//! Street-network map: OSM ingestion, road graph construction, waypoint
//! densification and smoothing, spatial lookup, and a binary map format.

mod build;
mod index;
mod io;
mod osm;

use std::collections::BTreeMap;

use nalgebra::Vector2;
use serde::Serialize;
use thiserror::Error;

use crate::geom::{GeoPoint, LocalFrame, Pose};

pub use build::{build_graph, BuildConfig, BuildReport};
pub use index::GridIndex;
pub use io::{load_map, serialize_map, to_debug_json, MAP_FORMAT_VERSION, MAP_MAGIC};
pub use osm::{parse_osm, OsmFormat};

/// Width of one lane in meters.
pub const LANE_WIDTH_M: f64 = 3.0;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("malformed OSM document at byte {offset}: {message}")]
    Parse { offset: u64, message: String },
    #[error("extract contains no usable road ways")]
    NoRoads,
    #[error("invalid build parameter: {0}")]
    InvalidParameter(String),
    #[error("map file truncated at byte {0}")]
    Truncated(usize),
    #[error("not a map file (bad magic)")]
    BadMagic,
    #[error("unsupported map format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("map file checksum mismatch")]
    Checksum,
    #[error("map file is inconsistent: {0}")]
    Corrupt(String),
    #[error("no edge with id {0}")]
    UnknownEdge(u32),
    #[error("lane count must be positive")]
    ZeroLanes,
}

/// Raw OSM way with only the tags the map pipeline uses.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawWay {
    pub nodes: Vec<i64>,
    pub tags: BTreeMap<String, String>,
}

/// Road subset of an OSM extract.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawOsmExtract {
    pub nodes: BTreeMap<i64, GeoPoint>,
    pub ways: BTreeMap<i64, RawWay>,
    /// Road ways dropped because they referenced a node missing from the
    /// document.
    pub dropped_ways: usize,
}

pub type EdgeId = u32;

/// A map waypoint with its heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MapPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub edge: EdgeId,
    pub index: u32,
}

impl MapPose {
    pub fn xy(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    /// Planar pose at this waypoint with the given height, roll and pitch.
    pub fn to_pose(&self, z: f64, roll: f64, pitch: f64) -> Pose {
        Pose::from_xyz_rpy(self.x, self.y, z, roll, pitch, self.heading)
    }
}

/// A road between two intersection vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadEdge {
    pub id: EdgeId,
    /// OSM way this edge was cut from.
    pub way_id: i64,
    pub from: i64,
    pub to: i64,
    pub lane_count: u32,
    pub waypoints: Vec<MapPose>,
}

impl RoadEdge {
    pub fn road_width_m(&self) -> f64 {
        f64::from(self.lane_count) * LANE_WIDTH_M
    }

    pub fn length_m(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| (w[1].xy() - w[0].xy()).norm())
            .sum()
    }
}

/// Intersection/road graph. Immutable once built apart from lane edits.
#[derive(Debug, Clone, PartialEq)]
pub struct MapGraph {
    pub(crate) frame: LocalFrame,
    pub(crate) step_m: f64,
    pub(crate) window: u32,
    pub(crate) vertices: BTreeMap<i64, Vector2<f64>>,
    pub(crate) edges: Vec<RoadEdge>,
    pub(crate) index: GridIndex,
}

impl MapGraph {
    /// Assembles a map from finished edges, renumbering edge ids and
    /// waypoint indices by position and indexing every waypoint.
    pub fn from_parts(
        frame: LocalFrame,
        vertices: BTreeMap<i64, Vector2<f64>>,
        mut edges: Vec<RoadEdge>,
        grid_cell_m: f64,
    ) -> Result<Self, MapError> {
        let mut index = GridIndex::new(grid_cell_m);
        for (id, e) in edges.iter_mut().enumerate() {
            let id = id as EdgeId;
            if !vertices.contains_key(&e.from) || !vertices.contains_key(&e.to) {
                return Err(MapError::Corrupt(format!("edge {id} references a missing vertex")));
            }
            if e.lane_count == 0 {
                return Err(MapError::ZeroLanes);
            }
            e.id = id;
            for (i, w) in e.waypoints.iter_mut().enumerate() {
                w.edge = id;
                w.index = i as u32;
                index.insert(w.xy(), id, w.index);
            }
        }
        Ok(Self {
            frame,
            step_m: 1.0,
            window: 1,
            vertices,
            edges,
            index,
        })
    }

    pub fn frame(&self) -> &LocalFrame {
        &self.frame
    }

    pub fn step_m(&self) -> f64 {
        self.step_m
    }

    pub fn smoothing_window(&self) -> u32 {
        self.window
    }

    pub fn vertices(&self) -> &BTreeMap<i64, Vector2<f64>> {
        &self.vertices
    }

    pub fn edges(&self) -> &[RoadEdge] {
        &self.edges
    }

    pub fn edge(&self, id: EdgeId) -> Option<&RoadEdge> {
        self.edges.get(id as usize)
    }

    pub fn waypoint_count(&self) -> usize {
        self.edges.iter().map(|e| e.waypoints.len()).sum()
    }

    pub fn waypoints(&self) -> impl Iterator<Item = &MapPose> {
        self.edges.iter().flat_map(|e| e.waypoints.iter())
    }

    /// Number of edge ends incident on a vertex (a self-loop counts twice).
    pub fn degree(&self, vertex: i64) -> usize {
        self.edges
            .iter()
            .map(|e| usize::from(e.from == vertex) + usize::from(e.to == vertex))
            .sum()
    }

    pub fn grid(&self) -> &GridIndex {
        &self.index
    }

    /// All waypoints within `radius` meters of `center`, ordered by edge id
    /// then waypoint index.
    pub fn query_nearby(&self, center: Vector2<f64>, radius: f64) -> Vec<MapPose> {
        let mut out: Vec<MapPose> = self
            .index
            .candidates(center, radius)
            .filter_map(|(e, i)| self.edges.get(e as usize)?.waypoints.get(i as usize))
            .filter(|w| (w.xy() - center).norm() <= radius)
            .copied()
            .collect();
        out.sort_by_key(|w| (w.edge, w.index));
        out
    }

    /// Overrides the lane count of one edge.
    pub fn set_lanes(&mut self, edge: EdgeId, lanes: u32) -> Result<(), MapError> {
        if lanes == 0 {
            return Err(MapError::ZeroLanes);
        }
        let e = self
            .edges
            .get_mut(edge as usize)
            .ok_or(MapError::UnknownEdge(edge))?;
        e.lane_count = lanes;
        Ok(())
    }
}
