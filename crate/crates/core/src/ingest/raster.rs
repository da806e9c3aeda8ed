use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::grid::GridSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureGeometry {
    Point { lat: f64, lon: f64 },
    Polyline(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RasterMode {
    /// Points per cell; a polyline counts once in every cell it passes through.
    Count,
    /// Meters of polyline inside each cell.
    TotalLength,
}

impl FromStr for RasterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "count" => Ok(RasterMode::Count),
            "total_length" | "length" => Ok(RasterMode::TotalLength),
            other => Err(Error::invalid(format!("unknown raster mode '{other}'"))),
        }
    }
}

/// Named static 2D layers on the grid, `(N, rows, cols)` row-major.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureStack2D {
    pub rows: usize,
    pub cols: usize,
    pub names: Vec<String>,
    pub maps: Vec<f64>,
}

impl FeatureStack2D {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            names: Vec::new(),
            maps: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn push(&mut self, name: impl Into<String>, layer: Vec<f64>) -> Result<()> {
        if layer.len() != self.rows * self.cols {
            return Err(Error::invalid(format!(
                "layer has {} cells, grid {}",
                layer.len(),
                self.rows * self.cols
            )));
        }
        self.names.push(name.into());
        self.maps.extend(layer);
        Ok(())
    }

    pub fn layer(&self, k: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.maps[k * n..(k + 1) * n]
    }

    /// Rescales every layer to `[0, 1]` by its maximum (all-zero layers stay zero).
    pub fn normalized(&self) -> Self {
        let n = self.rows * self.cols;
        let mut out = self.clone();
        for chunk in out.maps.chunks_mut(n.max(1)) {
            let m = chunk.iter().copied().fold(0.0, f64::max);
            if m > 0.0 {
                chunk.iter_mut().for_each(|v| *v /= m);
            }
        }
        out
    }
}

/// Pieces of segment `a -> b` (projected meters) split at grid lines, as
/// `(cell index, length)`; parts outside the bounding box are dropped.
fn split_segment(grid: &GridSpec, a: (f64, f64), b: (f64, f64)) -> Vec<(usize, f64)> {
    let s = grid.cell_size_m;
    let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
    let mut ts = vec![0.0, 1.0];
    for (p, q) in [(a.0, b.0), (a.1, b.1)] {
        if p != q {
            let (lo, hi) = (p.min(q), p.max(q));
            let mut k = (lo / s).ceil();
            while k * s <= hi {
                let t = (k * s - p) / (q - p);
                if t > 0.0 && t < 1.0 {
                    ts.push(t);
                }
                k += 1.0;
            }
        }
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let mut out = Vec::new();
    for w in ts.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t1 <= t0 {
            continue;
        }
        let tm = 0.5 * (t0 + t1);
        let mid = (a.0 + tm * (b.0 - a.0), a.1 + tm * (b.1 - a.1));
        if let Some(cell) = grid.locate_m(mid.0, mid.1) {
            out.push((grid.index(cell), (t1 - t0) * len));
        }
    }
    out
}

/// Rasterizes point/polyline features into one grid layer.
pub fn rasterize_features(
    geoms: &[FeatureGeometry],
    grid: &GridSpec,
    mode: RasterMode,
) -> Result<Vec<f64>> {
    let mut layer = vec![0.0; grid.n_cells()];
    for (i, g) in geoms.iter().enumerate() {
        match g {
            FeatureGeometry::Point { lat, lon } => {
                if mode == RasterMode::Count {
                    if let Some(c) = grid.locate(*lat, *lon) {
                        layer[grid.index(c)] += 1.0;
                    }
                }
            }
            FeatureGeometry::Polyline(pts) => {
                if pts.is_empty() {
                    return Err(Error::invalid(format!("feature {i}: empty polyline")));
                }
                let proj: Vec<_> = pts
                    .iter()
                    .map(|&(lat, lon)| grid.project(lat, lon))
                    .collect();
                if proj.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
                    return Err(Error::invalid(format!(
                        "feature {i}: non-finite coordinates"
                    )));
                }
                let mut touched = BTreeSet::new();
                if proj.len() == 1 {
                    if let Some(c) = grid.locate_m(proj[0].0, proj[0].1) {
                        touched.insert(grid.index(c));
                    }
                }
                for w in proj.windows(2) {
                    for (cell, l) in split_segment(grid, w[0], w[1]) {
                        match mode {
                            RasterMode::TotalLength => layer[cell] += l,
                            RasterMode::Count => {
                                touched.insert(cell);
                            }
                        }
                    }
                }
                if mode == RasterMode::Count {
                    for c in touched {
                        layer[c] += 1.0;
                    }
                }
            }
        }
    }
    Ok(layer)
}

/// Reads a GeoJSON FeatureCollection of `Point`, `MultiPoint`, `LineString`
/// and `MultiLineString` features grouped by their `layer` property.
pub fn read_feature_layers(path: &Path) -> Result<BTreeMap<String, Vec<FeatureGeometry>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feature_layers(&text).map_err(|e| match e {
        Error::InvalidInput(m) => Error::parse(path, 0, m),
        other => other,
    })
}

pub fn parse_feature_layers(text: &str) -> Result<BTreeMap<String, Vec<FeatureGeometry>>> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("GeoJSON: {e}")))?;
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::invalid("GeoJSON: expected a FeatureCollection with 'features'"))?;
    let pos = |v: &Value| -> Option<(f64, f64)> {
        let a = v.as_array()?;
        Some((a.get(1)?.as_f64()?, a.first()?.as_f64()?))
    };
    let line = |v: &Value| -> Option<Vec<(f64, f64)>> { v.as_array()?.iter().map(pos).collect() };
    let mut out: BTreeMap<String, Vec<FeatureGeometry>> = BTreeMap::new();
    for (i, f) in features.iter().enumerate() {
        let bad = || Error::invalid(format!("feature {i}: malformed geometry"));
        let layer = f
            .get("properties")
            .and_then(|p| p.get("layer"))
            .and_then(Value::as_str)
            .ok_or_else(|| {
                Error::invalid(format!("feature {i}: missing string property 'layer'"))
            })?;
        let geom = f.get("geometry").ok_or_else(bad)?;
        let coords = geom.get("coordinates").ok_or_else(bad)?;
        let entry = out.entry(layer.to_string()).or_default();
        match geom.get("type").and_then(Value::as_str) {
            Some("Point") => {
                let (lat, lon) = pos(coords).ok_or_else(bad)?;
                entry.push(FeatureGeometry::Point { lat, lon });
            }
            Some("MultiPoint") => {
                for (lat, lon) in line(coords).ok_or_else(bad)? {
                    entry.push(FeatureGeometry::Point { lat, lon });
                }
            }
            Some("LineString") => {
                entry.push(FeatureGeometry::Polyline(line(coords).ok_or_else(bad)?))
            }
            Some("MultiLineString") => {
                for l in coords.as_array().ok_or_else(bad)? {
                    entry.push(FeatureGeometry::Polyline(line(l).ok_or_else(bad)?));
                }
            }
            other => {
                return Err(Error::invalid(format!(
                    "feature {i}: unsupported geometry {other:?}"
                )))
            }
        }
    }
    Ok(out)
}
