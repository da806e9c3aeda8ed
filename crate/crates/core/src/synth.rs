//! Seeded synthetic city with a controllable demand bias.
//!
//! Demand rates combine each cell's population, a diurnal and a weekly
//! sinusoid and a weather response; cells of the advantaged group for the
//! `race` attribute get their rate multiplied by `bias`. Hourly counts are
//! Poisson draws. The city can be written out as the same raw files the
//! ingestion pipeline reads.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::ingest::{
    build_grid, rasterize_features, BBox, Cell, DemandTensor, DemographicField, DemographicUnit,
    FeatureGeometry, FeatureStack2D, GridSpec, RasterMode, SeriesStack1D, TripRecord,
    ADV_FRAC_SUFFIX,
};
use crate::io::{format_time, write_atomic, HOUR};

/// Attribute carrying the demand bias.
pub const BIASED_ATTRIBUTE: &str = "race";
/// Attribute with no demand effect.
pub const NEUTRAL_ATTRIBUTE: &str = "age";
pub const SERIES_NAMES: [&str; 2] = ["temp", "precip"];
pub const FEATURE_LAYERS: [(&str, RasterMode); 2] = [
    ("poi", RasterMode::Count),
    ("road", RasterMode::TotalLength),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub rows: usize,
    pub cols: usize,
    pub cell_size_m: f64,
    /// South-west corner.
    pub origin_lat: f64,
    pub origin_lon: f64,
    /// UTC seconds, hour-aligned.
    pub start_time: i64,
    pub hours: usize,
    /// Per-capita demand multiplier of advantaged cells.
    pub bias: f64,
    /// Mean trips per cell-hour for an average-population disadvantaged cell.
    pub base_rate: f64,
    /// Share of cells in the advantaged group.
    pub adv_cell_share: f64,
    /// Minority fraction inside a cell: advantaged cells have
    /// `w_plus ~ 1 - mix`, disadvantaged ones `w_plus ~ mix`.
    pub mix: f64,
    pub mean_cell_population: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            rows: 8,
            cols: 8,
            cell_size_m: 500.0,
            origin_lat: 47.58,
            origin_lon: -122.36,
            // 2018-01-01T00:00:00Z, a Monday
            start_time: 1_514_764_800,
            hours: 3 * 168,
            bias: 3.0,
            base_rate: 0.75,
            adv_cell_share: 0.25,
            mix: 0.3,
            mean_cell_population: 1000.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.hours == 0 {
            return Err(Error::invalid(
                "synthetic grid and period must be non-empty",
            ));
        }
        if self.start_time.rem_euclid(HOUR) != 0 {
            return Err(Error::invalid("synthetic start time must be hour-aligned"));
        }
        let positive = [
            self.cell_size_m,
            self.bias,
            self.base_rate,
            self.mean_cell_population,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid(
                "cell size, bias, base rate and population must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.adv_cell_share) || !(0.0..=0.5).contains(&self.mix) {
            return Err(Error::invalid(
                "adv_cell_share must lie in [0, 1] and mix in [0, 0.5]",
            ));
        }
        Ok(())
    }

    pub fn end_time(&self) -> i64 {
        self.start_time + self.hours as i64 * HOUR
    }
}

#[derive(Debug, Clone)]
pub struct SynthCity {
    pub config: SynthConfig,
    pub grid: GridSpec,
    /// Head count per cell.
    pub population: Vec<f64>,
    /// Advantaged fraction per cell for each attribute.
    pub attributes: BTreeMap<String, Vec<f64>>,
    /// Cells whose rate carries the bias factor.
    pub biased: Vec<bool>,
    /// Expected trips per cell-hour.
    pub rates: DemandTensor,
    /// Sampled counts.
    pub demand: DemandTensor,
    /// Raw hourly weather, `SERIES_NAMES` order.
    pub weather: SeriesStack1D,
    pub features: BTreeMap<String, Vec<FeatureGeometry>>,
}

fn diurnal(hour_of_day: f64) -> f64 {
    1.0 + 0.8 * (2.0 * PI * (hour_of_day - 9.0) / 24.0).sin()
}

fn weekly(day_of_week: f64) -> f64 {
    1.0 + 0.2 * (2.0 * PI * day_of_week / 7.0).sin()
}

/// Monday = 0.
fn day_of_week(ts: i64) -> i64 {
    (ts.div_euclid(86_400) + 3).rem_euclid(7)
}

pub fn generate(config: &SynthConfig) -> Result<SynthCity> {
    config.validate()?;
    let c = config;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let bbox = BBox::from_extent_m(
        c.origin_lat,
        c.origin_lon,
        c.rows as f64 * c.cell_size_m,
        c.cols as f64 * c.cell_size_m,
    );
    let grid = build_grid(bbox, c.cell_size_m)?;
    let n = grid.n_cells();

    let lognormal = LogNormal::new(0.0, 0.5).expect("valid lognormal");
    let raw: Vec<f64> = (0..n).map(|_| lognormal.sample(&mut rng)).collect();
    let mean_raw = raw.iter().sum::<f64>() / n as f64;
    let population: Vec<f64> = raw
        .iter()
        .map(|r| (r / mean_raw * c.mean_cell_population).round().max(1.0))
        .collect();

    // advantaged cells form a blob around a random centre
    let centre = (
        rng.random_range(0.0..c.rows as f64),
        rng.random_range(0.0..c.cols as f64),
    );
    let mut by_distance: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let cell = grid.cell_of(i);
            let d = (cell.row as f64 + 0.5 - centre.0).hypot(cell.col as f64 + 0.5 - centre.1);
            (d + rng.random_range(0.0..0.3), i)
        })
        .collect();
    by_distance.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_adv = (c.adv_cell_share * n as f64).round() as usize;
    let mut biased = vec![false; n];
    for &(_, i) in &by_distance[..n_adv] {
        biased[i] = true;
    }
    let race: Vec<f64> = biased
        .iter()
        .map(|&b| {
            let w = if b { 1.0 - c.mix } else { c.mix };
            (w + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0)
        })
        .collect();
    let age: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..0.8)).collect();
    let attributes = BTreeMap::from([
        (BIASED_ATTRIBUTE.to_string(), race),
        (NEUTRAL_ATTRIBUTE.to_string(), age),
    ]);

    let weather = weather_series(c, &mut rng)?;
    let temp_mean = weather.row(0).iter().sum::<f64>() / c.hours as f64;

    let mean_pop = population.iter().sum::<f64>() / n as f64;
    let mut rates = DemandTensor::zeros(c.hours, c.rows, c.cols, c.start_time);
    let mut demand = DemandTensor::zeros(c.hours, c.rows, c.cols, c.start_time);
    for t in 0..c.hours {
        let ts = c.start_time + t as i64 * HOUR;
        let hod = ts.rem_euclid(86_400) as f64 / HOUR as f64;
        let rain = if weather.row(1)[t] > 0.0 { 0.6 } else { 1.0 };
        let time_factor = diurnal(hod)
            * weekly(day_of_week(ts) as f64)
            * (0.03 * (weather.row(0)[t] - temp_mean)).exp()
            * rain;
        for i in 0..n {
            let bias = if biased[i] { c.bias } else { 1.0 };
            let r = c.base_rate * population[i] / mean_pop * bias * time_factor;
            rates.frame_mut(t)[i] = r;
            demand.frame_mut(t)[i] = if r > 0.0 {
                Poisson::new(r).expect("positive rate").sample(&mut rng)
            } else {
                0.0
            };
        }
    }

    let features = feature_geometries(&grid, &population, mean_pop, &mut rng);
    Ok(SynthCity {
        config: c.clone(),
        grid,
        population,
        attributes,
        biased,
        rates,
        demand,
        weather,
        features,
    })
}

fn weather_series(c: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<SeriesStack1D> {
    let noise = Normal::new(0.0, 0.5).expect("valid normal");
    let mut temp = Vec::with_capacity(c.hours);
    let mut precip = Vec::with_capacity(c.hours);
    let mut drift = 0.0;
    let mut raining = 0usize;
    for t in 0..c.hours {
        let hod = (c.start_time + t as i64 * HOUR).rem_euclid(86_400) as f64 / HOUR as f64;
        drift = 0.95 * drift + noise.sample(rng);
        temp.push(10.0 + 6.0 * (2.0 * PI * (hod - 15.0) / 24.0).cos() + drift);
        if raining == 0 && rng.random_bool(0.02) {
            raining = rng.random_range(2..8);
        }
        if raining > 0 {
            raining -= 1;
            precip.push(rng.random_range(0.2..3.0));
        } else {
            precip.push(0.0);
        }
    }
    SeriesStack1D::new(
        SERIES_NAMES.iter().map(|s| s.to_string()).collect(),
        c.start_time,
        c.hours,
        [temp, precip].concat(),
    )
}

/// Random point strictly inside a cell, as `(lat, lon)`.
fn point_in(grid: &GridSpec, cell: Cell, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let [x0, y0, x1, y1] = grid.cell_rect(cell);
    let x = x0 + (x1 - x0) * rng.random_range(0.05..0.95);
    let y = y0 + (y1 - y0) * rng.random_range(0.05..0.95);
    grid.unproject(x, y)
}

fn feature_geometries(
    grid: &GridSpec,
    population: &[f64],
    mean_pop: f64,
    rng: &mut ChaCha8Rng,
) -> BTreeMap<String, Vec<FeatureGeometry>> {
    let mut poi = Vec::new();
    for (i, p) in population.iter().enumerate() {
        let k = Poisson::new(2.0 + 4.0 * p / mean_pop)
            .expect("positive")
            .sample(rng) as usize;
        for _ in 0..k {
            let (lat, lon) = point_in(grid, grid.cell_of(i), rng);
            poi.push(FeatureGeometry::Point { lat, lon });
        }
    }
    // a few straight arterials across the box, off the cell boundaries
    let (w, h) = grid.extent_m();
    let mut road = Vec::new();
    for _ in 0..3 {
        let y = h * rng.random_range(0.1..0.9);
        road.push(FeatureGeometry::Polyline(vec![
            grid.unproject(0.0, y),
            grid.unproject(w, y),
        ]));
        let x = w * rng.random_range(0.1..0.9);
        road.push(FeatureGeometry::Polyline(vec![
            grid.unproject(x, 0.0),
            grid.unproject(x, h),
        ]));
    }
    BTreeMap::from([("poi".to_string(), poi), ("road".to_string(), road)])
}

impl SynthCity {
    pub fn field(&self) -> Result<DemographicField> {
        DemographicField::new(
            self.grid.rows,
            self.grid.cols,
            self.population.clone(),
            self.attributes.clone(),
        )
    }

    /// City-wide population-weighted advantaged fraction, used as the
    /// discretization threshold.
    pub fn threshold(&self, attribute: &str) -> Result<f64> {
        let w = self
            .attributes
            .get(attribute)
            .ok_or_else(|| Error::invalid(format!("unknown attribute '{attribute}'")))?;
        let total: f64 = self.population.iter().sum();
        Ok(w.iter()
            .zip(&self.population)
            .map(|(w, p)| w * p)
            .sum::<f64>()
            / total)
    }

    /// Rasterized raw feature layers in `FEATURE_LAYERS` order.
    pub fn feature_stack(&self) -> Result<FeatureStack2D> {
        let mut stack = FeatureStack2D::new(self.grid.rows, self.grid.cols);
        for (name, mode) in FEATURE_LAYERS {
            stack.push(
                name,
                rasterize_features(&self.features[name], &self.grid, mode)?,
            )?;
        }
        Ok(stack)
    }

    /// One trip per counted pickup, placed uniformly inside its cell and hour.
    pub fn trips(&self) -> Vec<TripRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x7472_6970);
        let mut out = Vec::new();
        for t in 0..self.demand.t_len() {
            let t0 = self.demand.time_of(t);
            for (i, &k) in self.demand.frame(t).iter().enumerate() {
                for _ in 0..k as usize {
                    let (lat, lon) = point_in(&self.grid, self.grid.cell_of(i), &mut rng);
                    out.push(TripRecord {
                        timestamp: t0 + rng.random_range(0..HOUR),
                        lat,
                        lon,
                    });
                }
            }
        }
        out
    }

    /// One areal unit per grid cell.
    pub fn units(&self) -> Vec<DemographicUnit> {
        (0..self.grid.n_cells())
            .map(|i| {
                let [x0, y0, x1, y1] = self.grid.cell_rect(self.grid.cell_of(i));
                let ring = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
                    .iter()
                    .map(|&(x, y)| self.grid.unproject(x, y))
                    .collect();
                DemographicUnit {
                    parts: vec![ring],
                    population: self.population[i],
                    adv_fraction: self
                        .attributes
                        .iter()
                        .map(|(k, v)| (k.clone(), v[i]))
                        .collect(),
                }
            })
            .collect()
    }

    /// Writes the raw inputs into `dir` and returns their paths.
    pub fn write_files(&self, dir: &Path) -> Result<SynthFiles> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = SynthFiles {
            trips: dir.join("trips.csv"),
            demographics: dir.join("demographics.geojson"),
            features: dir.join("features.geojson"),
            weather: dir.join("weather.csv"),
        };
        let mut s = String::from("timestamp,lat,lon\n");
        for t in self.trips() {
            s.push_str(&format!(
                "{},{},{}\n",
                format_time(t.timestamp),
                t.lat,
                t.lon
            ));
        }
        write_atomic(&files.trips, s.as_bytes())?;
        write_atomic(
            &files.demographics,
            self.demographics_geojson().to_string().as_bytes(),
        )?;
        write_atomic(
            &files.features,
            self.features_geojson().to_string().as_bytes(),
        )?;
        let mut s = format!("timestamp,{}\n", SERIES_NAMES.join(","));
        for t in 0..self.weather.hours {
            let ts = self.weather.start_time + t as i64 * HOUR;
            s.push_str(&format!(
                "{},{},{}\n",
                format_time(ts),
                self.weather.row(0)[t],
                self.weather.row(1)[t]
            ));
        }
        write_atomic(&files.weather, s.as_bytes())?;
        Ok(files)
    }

    fn demographics_geojson(&self) -> serde_json::Value {
        let features: Vec<_> = self
            .units()
            .into_iter()
            .map(|u| {
                let mut ring: Vec<[f64; 2]> = u.parts[0].iter().map(|&(lat, lon)| [lon, lat]).collect();
                ring.push(ring[0]);
                let mut props = serde_json::Map::new();
                props.insert("population".into(), json!(u.population));
                for (k, v) in &u.adv_fraction {
                    props.insert(format!("{k}{ADV_FRAC_SUFFIX}"), json!(v));
                }
                json!({"type": "Feature", "geometry": {"type": "Polygon", "coordinates": [ring]}, "properties": props})
            })
            .collect();
        json!({"type": "FeatureCollection", "features": features})
    }

    fn features_geojson(&self) -> serde_json::Value {
        let mut features = Vec::new();
        for (layer, geoms) in &self.features {
            for g in geoms {
                let geometry = match g {
                    FeatureGeometry::Point { lat, lon } => {
                        json!({"type": "Point", "coordinates": [lon, lat]})
                    }
                    FeatureGeometry::Polyline(pts) => {
                        let c: Vec<[f64; 2]> = pts.iter().map(|&(lat, lon)| [lon, lat]).collect();
                        json!({"type": "LineString", "coordinates": c})
                    }
                };
                features.push(json!({"type": "Feature", "geometry": geometry, "properties": {"layer": layer}}));
            }
        }
        json!({"type": "FeatureCollection", "features": features})
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFiles {
    pub trips: PathBuf,
    pub demographics: PathBuf,
    pub features: PathBuf,
    pub weather: PathBuf,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fairness::{discretize_groups, ifg, DEFAULT_P_MIN};
    use crate::ingest::{
        aggregate_trips, allocate_demographics, parse_feature_layers, read_series, read_trips,
    };

    fn small() -> SynthConfig {
        SynthConfig {
            rows: 4,
            cols: 5,
            hours: 48,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.demand, b.demand);
        assert_eq!(a.trips(), b.trips());
        let c = generate(&SynthConfig { seed: 6, ..small() }).unwrap();
        assert_ne!(a.demand, c.demand);
    }

    #[test]
    fn bias_shows_in_truth_gap() {
        let city = generate(&SynthConfig {
            hours: 168,
            ..Default::default()
        })
        .unwrap();
        let field = city.field().unwrap();
        let labels = discretize_groups(
            &field,
            BIASED_ATTRIBUTE,
            city.threshold(BIASED_ATTRIBUTE).unwrap(),
            DEFAULT_P_MIN,
        )
        .unwrap();
        assert_eq!(
            labels
                .labels
                .iter()
                .map(|l| *l == crate::fairness::GroupLabel::Advantaged)
                .collect::<Vec<_>>(),
            city.biased
        );
        assert!(ifg(&city.rates, &field, BIASED_ATTRIBUTE, DEFAULT_P_MIN).unwrap() > 0.0);
        let unbiased = generate(&SynthConfig {
            hours: 168,
            bias: 1.0,
            ..Default::default()
        })
        .unwrap();
        let g = ifg(&unbiased.rates, &field, BIASED_ATTRIBUTE, DEFAULT_P_MIN).unwrap();
        assert!(g.abs() < 1e-9 * city.rates.max_value() * 64.0, "{g}");
    }

    #[test]
    fn files_reingest_exactly() {
        let city = generate(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = city.write_files(dir.path()).unwrap();
        let trips = read_trips(&files.trips).unwrap();
        let (demand, drops) = aggregate_trips(
            &trips,
            &city.grid,
            city.config.start_time,
            city.config.end_time(),
        )
        .unwrap();
        assert_eq!(drops.total(), 0);
        assert_eq!(demand, city.demand);

        let units = crate::ingest::read_demographics(&files.demographics).unwrap();
        let field = allocate_demographics(&units, &city.grid).unwrap();
        let expect = city.field().unwrap();
        for (a, b) in field.population_share.iter().zip(&expect.population_share) {
            assert!((a - b).abs() < 1e-9);
        }
        for (k, v) in &expect.attributes {
            for (a, b) in field.attributes[k].iter().zip(v) {
                assert!((a - b).abs() < 1e-9);
            }
        }

        let layers =
            parse_feature_layers(&std::fs::read_to_string(&files.features).unwrap()).unwrap();
        assert_eq!(layers["poi"].len(), city.features["poi"].len());
        let names: Vec<String> = SERIES_NAMES.iter().map(|s| s.to_string()).collect();
        let w = read_series(
            &files.weather,
            &names,
            city.config.start_time,
            city.config.end_time(),
        )
        .unwrap();
        assert_eq!(w.values, city.weather.values);
    }
}
