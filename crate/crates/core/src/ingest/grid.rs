use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in meters.
const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Tolerance, in cell units, under which a coordinate snaps onto a grid line.
const EDGE_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BBox {
    /// Box with south-west corner `(lat, lon)` spanning the given extents in
    /// meters under the same equirectangular projection the grid uses.
    pub fn from_extent_m(lat: f64, lon: f64, height_m: f64, width_m: f64) -> Self {
        let max_lat = lat + height_m / meters_per_deg_lat();
        let center = 0.5 * (lat + max_lat);
        Self {
            min_lat: lat,
            min_lon: lon,
            max_lat,
            max_lon: lon + width_m / meters_per_deg_lon(center),
        }
    }

    pub fn center_lat(&self) -> f64 {
        0.5 * (self.min_lat + self.max_lat)
    }
}

fn meters_per_deg_lat() -> f64 {
    EARTH_RADIUS_M * std::f64::consts::PI / 180.0
}

fn meters_per_deg_lon(lat: f64) -> f64 {
    meters_per_deg_lat() * lat.to_radians().cos()
}

/// Square-cell partition of a bounding box.
///
/// Row 0 is the southern edge and column 0 the western edge. Conversion
/// between degrees and meters is fixed at construction from the box's
/// center latitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bbox: BBox,
    pub cell_size_m: f64,
    pub rows: usize,
    pub cols: usize,
    pub meters_per_deg_lat: f64,
    pub meters_per_deg_lon: f64,
}

/// Integer cell coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// Partitions `bbox` into square cells of `cell_size_m`, rounding the
/// row/column counts up so the whole box is covered.
pub fn build_grid(bbox: BBox, cell_size_m: f64) -> Result<GridSpec> {
    let finite = [
        bbox.min_lat,
        bbox.min_lon,
        bbox.max_lat,
        bbox.max_lon,
        cell_size_m,
    ]
    .iter()
    .all(|v| v.is_finite());
    if !finite || !(cell_size_m > 0.0) {
        return Err(Error::invalid(format!(
            "cell size must be positive, got {cell_size_m}"
        )));
    }
    if !(bbox.max_lat > bbox.min_lat) || !(bbox.max_lon > bbox.min_lon) {
        return Err(Error::invalid(format!("degenerate bounding box {bbox:?}")));
    }
    if bbox.min_lat < -90.0 || bbox.max_lat > 90.0 || bbox.min_lon < -180.0 || bbox.max_lon > 180.0
    {
        return Err(Error::invalid(format!(
            "bounding box out of range {bbox:?}"
        )));
    }
    let mlat = meters_per_deg_lat();
    let mlon = meters_per_deg_lon(bbox.center_lat());
    let height = (bbox.max_lat - bbox.min_lat) * mlat;
    let width = (bbox.max_lon - bbox.min_lon) * mlon;
    let count = |extent: f64| ((extent / cell_size_m) - EDGE_SNAP).ceil().max(1.0) as usize;
    Ok(GridSpec {
        bbox,
        cell_size_m,
        rows: count(height),
        cols: count(width),
        meters_per_deg_lat: mlat,
        meters_per_deg_lon: mlon,
    })
}

impl GridSpec {
    pub fn n_cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn index(&self, cell: Cell) -> usize {
        cell.row * self.cols + cell.col
    }

    pub fn cell_of(&self, index: usize) -> Cell {
        Cell::new(index / self.cols, index % self.cols)
    }

    /// Projects `(lat, lon)` to meters east/north of the south-west corner.
    pub fn project(&self, lat: f64, lon: f64) -> (f64, f64) {
        (
            (lon - self.bbox.min_lon) * self.meters_per_deg_lon,
            (lat - self.bbox.min_lat) * self.meters_per_deg_lat,
        )
    }

    pub fn unproject(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.bbox.min_lat + y / self.meters_per_deg_lat,
            self.bbox.min_lon + x / self.meters_per_deg_lon,
        )
    }

    /// Projected extent of the bounding box in meters (width, height).
    pub fn extent_m(&self) -> (f64, f64) {
        self.project(self.bbox.max_lat, self.bbox.max_lon)
    }

    /// `(x0, y0, x1, y1)` of a cell in projected meters.
    pub fn cell_rect(&self, cell: Cell) -> [f64; 4] {
        let s = self.cell_size_m;
        [
            cell.col as f64 * s,
            cell.row as f64 * s,
            (cell.col + 1) as f64 * s,
            (cell.row + 1) as f64 * s,
        ]
    }

    /// Cell containing `(lat, lon)`, or `None` outside the bounding box.
    ///
    /// Interior cell edges are half-open: a point on a shared edge belongs
    /// to the cell with the larger index.
    pub fn locate(&self, lat: f64, lon: f64) -> Option<Cell> {
        if !lat.is_finite() || !lon.is_finite() {
            return None;
        }
        let b = &self.bbox;
        if lat < b.min_lat || lat > b.max_lat || lon < b.min_lon || lon > b.max_lon {
            return None;
        }
        let (x, y) = self.project(lat, lon);
        self.locate_m(x, y)
    }

    /// Same as [`locate`](Self::locate) for projected coordinates.
    pub fn locate_m(&self, x: f64, y: f64) -> Option<Cell> {
        let (w, h) = self.extent_m();
        let tol = EDGE_SNAP * self.cell_size_m;
        if !(x >= -tol && y >= -tol && x <= w + tol && y <= h + tol) {
            return None;
        }
        let col = axis_index(x / self.cell_size_m, self.cols);
        let row = axis_index(y / self.cell_size_m, self.rows);
        Some(Cell::new(row, col))
    }
}

fn axis_index(q: f64, n: usize) -> usize {
    let r = q.round();
    let q = if (q - r).abs() < EDGE_SNAP { r } else { q };
    (q.floor().max(0.0) as usize).min(n - 1)
}
