use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{parse_time, HOUR};

/// City-wide hourly series, `(M, T)` row-major, with the standardization
/// statistics that were applied to each row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesStack1D {
    pub names: Vec<String>,
    pub start_time: i64,
    pub hours: usize,
    pub values: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl SeriesStack1D {
    /// Unstandardized stack (identity statistics).
    pub fn new(
        names: Vec<String>,
        start_time: i64,
        hours: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != names.len() * hours {
            return Err(Error::invalid(format!(
                "{} values for {} series x {} hours",
                values.len(),
                names.len(),
                hours
            )));
        }
        let m = names.len();
        Ok(Self {
            names,
            start_time,
            hours,
            values,
            means: vec![0.0; m],
            stds: vec![1.0; m],
        })
    }

    pub fn empty(start_time: i64, hours: usize) -> Self {
        Self::new(Vec::new(), start_time, hours, Vec::new()).expect("empty stack")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.values[m * self.hours..(m + 1) * self.hours]
    }

    /// Standardizes each row to zero mean and unit population variance using
    /// statistics from the first `train_hours` hours only.
    pub fn standardize(mut self, train_hours: usize) -> Result<Self> {
        if train_hours == 0 || train_hours > self.hours {
            return Err(Error::invalid(format!(
                "standardization window {train_hours} outside 1..={}",
                self.hours
            )));
        }
        for m in 0..self.len() {
            let raw: Vec<f64> = self
                .row(m)
                .iter()
                .map(|v| v * self.stds[m] + self.means[m])
                .collect();
            let w = &raw[..train_hours];
            let mean = w.iter().sum::<f64>() / train_hours as f64;
            let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / train_hours as f64;
            let std = if var > 0.0 { var.sqrt() } else { 1.0 };
            for (dst, v) in self.values[m * self.hours..(m + 1) * self.hours]
                .iter_mut()
                .zip(&raw)
            {
                *dst = (v - mean) / std;
            }
            self.means[m] = mean;
            self.stds[m] = std;
        }
        Ok(self)
    }
}

/// Fills gaps: forward-fill, then back-fill the leading run from the first
/// observation. Fails when nothing was observed.
fn fill(obs: &[Option<f64>]) -> Option<Vec<f64>> {
    let first = obs.iter().flatten().next().copied()?;
    let mut last = first;
    Some(
        obs.iter()
            .map(|o| {
                if let Some(v) = o {
                    last = *v;
                }
                last
            })
            .collect(),
    )
}

/// Reads `timestamp,<name>...` CSV rows over `[start, end)` into an hourly
/// grid with gaps filled, without standardizing.
pub fn read_series(path: &Path, names: &[String], start: i64, end: i64) -> Result<SeriesStack1D> {
    if start >= end || start.rem_euclid(HOUR) != 0 || end.rem_euclid(HOUR) != 0 {
        return Err(Error::invalid(
            "series period must be non-empty and hour-aligned",
        ));
    }
    let hours = ((end - start) / HOUR) as usize;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path, 1, e.to_string()))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    if headers.get(0) != Some("timestamp") {
        return Err(Error::parse(path, 1, "first column must be 'timestamp'"));
    }
    let mut cols = Vec::with_capacity(names.len());
    for n in names {
        let idx = headers.iter().position(|h| h == n).ok_or_else(|| {
            Error::InvalidInput(format!(
                "{}: series '{n}' absent from header",
                path.display()
            ))
        })?;
        cols.push(idx);
    }
    let mut obs = vec![vec![None; hours]; names.len()];
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(path, line, e.to_string()))?;
        let ts = parse_time(rec.get(0).unwrap_or("")).map_err(|m| Error::parse(path, line, m))?;
        if ts < start || ts >= end {
            continue;
        }
        let t = ((ts - start) / HOUR) as usize;
        for (m, &c) in cols.iter().enumerate() {
            let cell = rec.get(c).unwrap_or("");
            if cell.is_empty() {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::parse(path, line, format!("bad value '{cell}' for '{}'", names[m]))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    path,
                    line,
                    format!("non-finite value for '{}'", names[m]),
                ));
            }
            obs[m][t] = Some(v);
        }
    }
    let mut values = Vec::with_capacity(names.len() * hours);
    for (m, o) in obs.iter().enumerate() {
        let filled = fill(o).ok_or_else(|| {
            Error::invalid(format!(
                "series '{}' has no observations in range",
                names[m]
            ))
        })?;
        values.extend(filled);
    }
    SeriesStack1D::new(names.to_vec(), start, hours, values)
}

/// Reads and standardizes series over `[start, end)`; statistics come from
/// `[start, train_end)` (the whole range when `train_end` is `None`).
pub fn load_series(
    path: &Path,
    names: &[String],
    start: i64,
    end: i64,
    train_end: Option<i64>,
) -> Result<SeriesStack1D> {
    let raw = read_series(path, names, start, end)?;
    let train_hours = match train_end {
        Some(te) => ((te.clamp(start, end) - start) / HOUR) as usize,
        None => raw.hours,
    };
    raw.standardize(train_hours)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const T0: i64 = 1_514_764_800;

    fn write(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let p = dir.path().join("w.csv");
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn forward_fill_gap() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "timestamp,temp\n2018-01-01T00:00:00Z,5\n2018-01-01T02:00:00Z,7\n",
        );
        let s = read_series(&p, &names(&["temp"]), T0, T0 + 3 * HOUR).unwrap();
        assert_eq!(s.row(0), &[5.0, 5.0, 7.0]);
    }

    #[test]
    fn leading_back_fill() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "timestamp,temp,rain\n2018-01-01T01:00:00Z,4,\n2018-01-01T02:00:00Z,6,1\n",
        );
        let s = read_series(&p, &names(&["temp", "rain"]), T0, T0 + 3 * HOUR).unwrap();
        assert_eq!(s.row(0), &[4.0, 4.0, 6.0]);
        assert_eq!(s.row(1), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn standardization_oracle() {
        let s = SeriesStack1D::new(names(&["a"]), T0, 3, vec![1.0, 2.0, 3.0])
            .unwrap()
            .standardize(3)
            .unwrap();
        let v = s.row(0);
        let mean = v.iter().sum::<f64>() / 3.0;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert!(mean.abs() < 1e-12);
        assert!((std - 1.0).abs() < 1e-12);
        assert_eq!(s.means[0], 2.0);
        assert!((s.stds[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn training_window_statistics_only() {
        let s = SeriesStack1D::new(names(&["a"]), T0, 4, vec![1.0, 3.0, 100.0, 100.0])
            .unwrap()
            .standardize(2)
            .unwrap();
        assert_eq!(s.means[0], 2.0);
        assert_eq!(s.row(0)[..2], [-1.0, 1.0]);
    }

    #[test]
    fn missing_name_is_invalid_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "timestamp,temp\n2018-01-01T00:00:00Z,5\n");
        assert!(matches!(
            read_series(&p, &names(&["pressure"]), T0, T0 + HOUR),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn malformed_row_has_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "timestamp,temp\n2018-01-01T00:00:00Z,5\nnot-a-time,6\n",
        );
        assert!(matches!(
            read_series(&p, &names(&["temp"]), T0, T0 + HOUR),
            Err(Error::Parse { line: 3, .. })
        ));
    }
}
