use std::collections::BTreeMap;

use nalgebra::Vector2;

use super::EdgeId;

/// Uniform grid over waypoint positions. Each cell lists `(edge, index)`
/// references of the waypoints falling inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct GridIndex {
    cell_m: f64,
    cells: BTreeMap<(i64, i64), Vec<(EdgeId, u32)>>,
}

impl GridIndex {
    pub fn new(cell_m: f64) -> Self {
        Self {
            cell_m,
            cells: BTreeMap::new(),
        }
    }

    pub(crate) fn from_cells(cell_m: f64, cells: BTreeMap<(i64, i64), Vec<(EdgeId, u32)>>) -> Self {
        Self { cell_m, cells }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_m
    }

    pub(crate) fn cells(&self) -> &BTreeMap<(i64, i64), Vec<(EdgeId, u32)>> {
        &self.cells
    }

    fn key(&self, p: Vector2<f64>) -> (i64, i64) {
        (
            (p.x / self.cell_m).floor() as i64,
            (p.y / self.cell_m).floor() as i64,
        )
    }

    pub(crate) fn insert(&mut self, p: Vector2<f64>, edge: EdgeId, index: u32) {
        let k = self.key(p);
        self.cells.entry(k).or_default().push((edge, index));
    }

    /// References in every cell overlapping the square of half-width
    /// `radius` around `center`. Callers filter by exact distance.
    pub fn candidates(
        &self,
        center: Vector2<f64>,
        radius: f64,
    ) -> impl Iterator<Item = (EdgeId, u32)> + '_ {
        let (x0, y0) = self.key(center - Vector2::new(radius, radius));
        let (x1, y1) = self.key(center + Vector2::new(radius, radius));
        (x0..=x1).flat_map(move |ix| {
            self.cells
                .range((ix, y0)..=(ix, y1))
                .flat_map(|(_, refs)| refs.iter().copied())
        })
    }
}
