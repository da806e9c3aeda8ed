use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid::GridSpec;
use crate::error::{Error, Result};
use crate::io::{parse_time, HOUR};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    /// UTC seconds.
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
}

/// Demand counts on a `(time, row, col)` lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandTensor {
    pub rows: usize,
    pub cols: usize,
    /// UTC seconds of frame 0.
    pub start_time: i64,
    pub interval_s: i64,
    pub values: Vec<f64>,
}

impl DemandTensor {
    pub fn zeros(t: usize, rows: usize, cols: usize, start_time: i64) -> Self {
        Self {
            rows,
            cols,
            start_time,
            interval_s: HOUR,
            values: vec![0.0; t * rows * cols],
        }
    }

    pub fn from_frames(
        rows: usize,
        cols: usize,
        start_time: i64,
        values: Vec<f64>,
    ) -> Result<Self> {
        let n = rows * cols;
        if n == 0 || values.len() % n != 0 {
            return Err(Error::invalid(format!(
                "{} values do not tile {}x{} frames",
                values.len(),
                rows,
                cols
            )));
        }
        Ok(Self {
            rows,
            cols,
            start_time,
            interval_s: HOUR,
            values,
        })
    }

    pub fn frame_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn t_len(&self) -> usize {
        self.values.len() / self.frame_len()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.frame_len();
        &self.values[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.frame_len();
        &mut self.values[t * n..(t + 1) * n]
    }

    pub fn get(&self, t: usize, row: usize, col: usize) -> f64 {
        self.values[(t * self.rows + row) * self.cols + col]
    }

    pub fn time_of(&self, t: usize) -> i64 {
        self.start_time + t as i64 * self.interval_s
    }

    /// Frames `[from, to)` as a new tensor.
    pub fn slice_time(&self, from: usize, to: usize) -> Self {
        let n = self.frame_len();
        Self {
            rows: self.rows,
            cols: self.cols,
            start_time: self.time_of(from),
            interval_s: self.interval_s,
            values: self.values[from * n..to * n].to_vec(),
        }
    }

    /// Per-cell mean over all frames.
    pub fn mean_frame(&self) -> Vec<f64> {
        let n = self.frame_len();
        let t = self.t_len();
        let mut acc = vec![0.0; n];
        for k in 0..t {
            for (a, v) in acc.iter_mut().zip(self.frame(k)) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= t.max(1) as f64);
        acc
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Records discarded by [`aggregate_trips`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropStats {
    pub outside_bbox: usize,
    pub outside_period: usize,
}

impl DropStats {
    pub fn total(&self) -> usize {
        self.outside_bbox + self.outside_period
    }
}

/// Counts trips per (hour, cell) over `[start, end)`.
pub fn aggregate_trips(
    trips: &[TripRecord],
    grid: &GridSpec,
    start: i64,
    end: i64,
) -> Result<(DemandTensor, DropStats)> {
    if start >= end || start.rem_euclid(HOUR) != 0 || end.rem_euclid(HOUR) != 0 {
        return Err(Error::invalid(format!(
            "aggregation period [{start}, {end}) must be non-empty and hour-aligned"
        )));
    }
    let hours = ((end - start) / HOUR) as usize;
    let mut demand = DemandTensor::zeros(hours, grid.rows, grid.cols, start);
    let mut drops = DropStats::default();
    for trip in trips {
        if trip.timestamp < start || trip.timestamp >= end {
            drops.outside_period += 1;
            continue;
        }
        let Some(cell) = grid.locate(trip.lat, trip.lon) else {
            drops.outside_bbox += 1;
            continue;
        };
        let t = ((trip.timestamp - start) / HOUR) as usize;
        demand.values[t * grid.n_cells() + grid.index(cell)] += 1.0;
    }
    Ok((demand, drops))
}

/// Reads a `timestamp,lat,lon` CSV with RFC 3339 timestamps.
pub fn read_trips(path: &Path) -> Result<Vec<TripRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path, 1, e.to_string()))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(path, 1, format!("missing column '{name}'")))
    };
    let (ts_i, lat_i, lon_i) = (col("timestamp")?, col("lat")?, col("lon")?);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(path, line, e.to_string()))?;
        let field = |j: usize| {
            rec.get(j)
                .ok_or_else(|| Error::parse(path, line, "short row"))
        };
        let timestamp = parse_time(field(ts_i)?).map_err(|m| Error::parse(path, line, m))?;
        let num = |j: usize, what: &str| -> Result<f64> {
            field(j)?.parse::<f64>().map_err(|_| {
                Error::parse(
                    path,
                    line,
                    format!("bad {what} '{}'", rec.get(j).unwrap_or("")),
                )
            })
        };
        let lat = num(lat_i, "lat")?;
        let lon = num(lon_i, "lon")?;
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::parse(
                path,
                line,
                format!("coordinate out of range ({lat}, {lon})"),
            ));
        }
        out.push(TripRecord {
            timestamp,
            lat,
            lon,
        });
    }
    Ok(out)
}
