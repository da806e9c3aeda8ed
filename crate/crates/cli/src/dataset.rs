//! Prepared model inputs, persisted as one tensor container.

use std::collections::BTreeMap;
use std::path::Path;

use fairst::ingest::{
    aggregate_trips, allocate_demographics, build_grid, load_series, make_slices_for_targets,
    rasterize_features, read_demographics, read_feature_layers, read_trips, BBox, DemandTensor,
    DemographicField, DropStats, FeatureStack2D, GridSpec, RasterMode, SeriesStack1D,
    TemporalSlice,
};
use fairst::io::HOUR;
use fairst::tensor::checkpoint::TensorFile;
use fairst::tensor::Tensor;
use fairst::Error;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const DATASET_KIND: &str = "fairst-dataset";
pub const PREDICTIONS_KIND: &str = "fairst-demand";
const POPULATION_LAYER: &str = "population";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub grid: GridSpec,
    pub demand: DemandTensor,
    /// Standardized with training-period statistics.
    pub series: SeriesStack1D,
    /// 2D inputs, each layer scaled to `[0, 1]`.
    pub features: FeatureStack2D,
    pub field: DemographicField,
    /// Frame index of the first test hour.
    pub train_end: usize,
    pub drops: DropStats,
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    kind: String,
    bbox: BBox,
    cell_size_m: f64,
    start_time: i64,
    train_end: usize,
    series_names: Vec<String>,
    series_means: Vec<f64>,
    series_stds: Vec<f64>,
    feature_names: Vec<String>,
    attribute_names: Vec<String>,
    dropped_outside_bbox: usize,
    dropped_outside_period: usize,
}

#[derive(Serialize, Deserialize)]
struct DemandMeta {
    kind: String,
    start_time: i64,
}

impl Dataset {
    /// Reads and grids all raw inputs named by `cfg`.
    pub fn prepare(cfg: &RunConfig) -> CliResult<Self> {
        let period = cfg.period()?;
        let grid = build_grid(cfg.grid.bbox(), cfg.grid.cell_size_m)
            .map_err(|e| CliError::config_key("grid", e.to_string()))?;
        let trips = read_trips(&cfg.paths.trips)?;
        let (demand, drops) = aggregate_trips(&trips, &grid, period.start, period.end)?;
        let units = read_demographics(&cfg.paths.demographics)?;
        let field = allocate_demographics(&units, &grid)?;
        let hours = demand.t_len();
        let series = match &cfg.paths.weather {
            Some(p) if !cfg.series.names.is_empty() => load_series(
                p,
                &cfg.series.names,
                period.start,
                period.end,
                Some(period.train_end),
            )?,
            _ => SeriesStack1D::empty(period.start, hours),
        };
        let mut raw = FeatureStack2D::new(grid.rows, grid.cols);
        if let Some(p) = &cfg.paths.features {
            if !cfg.features.layers.is_empty() {
                let layers = read_feature_layers(p)?;
                for (name, mode) in &cfg.features.layers {
                    let mode: RasterMode = mode.parse()?;
                    let geoms = layers.get(name).ok_or_else(|| {
                        CliError::data(format!(
                            "feature layer '{name}' absent from {}",
                            p.display()
                        ))
                    })?;
                    raw.push(name.clone(), rasterize_features(geoms, &grid, mode)?)?;
                }
            }
        }
        if cfg.features.include_demographics {
            raw.push(POPULATION_LAYER, field.population_share.clone())?;
            for a in &cfg.fairness.attributes {
                let w = field.w_plus(a).map_err(|_| {
                    CliError::config_key(
                        "fairness.attributes",
                        format!("attribute '{a}' not in demographics"),
                    )
                })?;
                raw.push(a.clone(), w.to_vec())?;
            }
        }
        let train_end = ((period.train_end - period.start) / HOUR) as usize;
        Ok(Self {
            grid,
            demand,
            series,
            features: raw.normalized(),
            field,
            train_end,
            drops,
        })
    }

    pub fn rows(&self) -> usize {
        self.grid.rows
    }

    pub fn cols(&self) -> usize {
        self.grid.cols
    }

    /// Slices whose targets fall in the training period.
    pub fn train_slices(&self, window: usize) -> CliResult<Vec<TemporalSlice>> {
        let s =
            make_slices_for_targets(&self.demand, &self.series, window, window, self.train_end)?;
        if s.is_empty() {
            return Err(CliError::config_key(
                "model.window",
                "window leaves no training slices",
            ));
        }
        Ok(s)
    }

    /// Slices whose targets fall in the test period.
    pub fn test_slices(&self, window: usize) -> CliResult<Vec<TemporalSlice>> {
        if window > self.train_end {
            return Err(CliError::config_key(
                "model.window",
                "window exceeds the training period",
            ));
        }
        Ok(make_slices_for_targets(
            &self.demand,
            &self.series,
            window,
            self.train_end,
            self.demand.t_len(),
        )?)
    }

    pub fn test_truth(&self) -> DemandTensor {
        self.demand.slice_time(self.train_end, self.demand.t_len())
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let meta = DatasetMeta {
            kind: DATASET_KIND.into(),
            bbox: self.grid.bbox,
            cell_size_m: self.grid.cell_size_m,
            start_time: self.demand.start_time,
            train_end: self.train_end,
            series_names: self.series.names.clone(),
            series_means: self.series.means.clone(),
            series_stds: self.series.stds.clone(),
            feature_names: self.features.names.clone(),
            attribute_names: self.field.attributes.keys().cloned().collect(),
            dropped_outside_bbox: self.drops.outside_bbox,
            dropped_outside_period: self.drops.outside_period,
        };
        let mut f =
            TensorFile::new(serde_json::to_value(meta).map_err(|e| CliError::data(e.to_string()))?);
        let (r, c) = (self.rows(), self.cols());
        f.push(
            "demand",
            &Tensor::new(vec![self.demand.t_len(), r, c], self.demand.values.clone())?,
        );
        f.push(
            "series",
            &Tensor::new(
                vec![self.series.len(), self.series.hours],
                self.series.values.clone(),
            )?,
        );
        f.push(
            "features",
            &Tensor::new(vec![self.features.len(), r, c], self.features.maps.clone())?,
        );
        f.push(
            "population",
            &Tensor::new(vec![r, c], self.field.population_share.clone())?,
        );
        for (name, w) in &self.field.attributes {
            f.push(format!("attr/{name}"), &Tensor::new(vec![r, c], w.clone())?);
        }
        Ok(f.save(path)?)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let f = TensorFile::load(path).map_err(|e| missing_artifact(path, e, "prepare"))?;
        let meta: DatasetMeta = serde_json::from_value(f.meta.clone())
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        if meta.kind != DATASET_KIND {
            return Err(CliError::data(format!(
                "{} is not a prepared dataset",
                path.display()
            )));
        }
        let grid = build_grid(meta.bbox, meta.cell_size_m)?;
        let (r, c) = (grid.rows, grid.cols);
        let demand =
            DemandTensor::from_frames(r, c, meta.start_time, f.get("demand")?.into_data())?;
        let mut series = SeriesStack1D::new(
            meta.series_names,
            meta.start_time,
            demand.t_len(),
            f.get("series")?.into_data(),
        )?;
        series.means = meta.series_means;
        series.stds = meta.series_stds;
        let mut features = FeatureStack2D::new(r, c);
        let maps = f.get("features")?.into_data();
        for (k, name) in meta.feature_names.into_iter().enumerate() {
            features.push(name, maps[k * r * c..(k + 1) * r * c].to_vec())?;
        }
        let mut attributes = BTreeMap::new();
        for name in meta.attribute_names {
            let w = f.get(&format!("attr/{name}"))?.into_data();
            attributes.insert(name, w);
        }
        let field = DemographicField::new(r, c, f.get("population")?.into_data(), attributes)?;
        Ok(Self {
            grid,
            demand,
            series,
            features,
            field,
            train_end: meta.train_end,
            drops: DropStats {
                outside_bbox: meta.dropped_outside_bbox,
                outside_period: meta.dropped_outside_period,
            },
        })
    }
}

/// Turns "file not found" into a hint about which command produces it.
pub fn missing_artifact(path: &Path, e: Error, producer: &str) -> CliError {
    if path.exists() {
        e.into()
    } else {
        CliError::data(format!(
            "{} not found; run `fairst {producer}` first",
            path.display()
        ))
    }
}

pub fn save_demand(demand: &DemandTensor, path: &Path) -> CliResult<()> {
    let meta = DemandMeta {
        kind: PREDICTIONS_KIND.into(),
        start_time: demand.start_time,
    };
    let mut f =
        TensorFile::new(serde_json::to_value(meta).map_err(|e| CliError::data(e.to_string()))?);
    f.push(
        "demand",
        &Tensor::new(
            vec![demand.t_len(), demand.rows, demand.cols],
            demand.values.clone(),
        )?,
    );
    Ok(f.save(path)?)
}

pub fn load_demand(path: &Path) -> CliResult<DemandTensor> {
    let f = TensorFile::load(path).map_err(|e| missing_artifact(path, e, "predict"))?;
    let meta: DemandMeta = serde_json::from_value(f.meta.clone())
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    if meta.kind != PREDICTIONS_KIND {
        return Err(CliError::data(format!(
            "{} is not a demand tensor",
            path.display()
        )));
    }
    let t = f.get("demand")?;
    let shape = t.shape().to_vec();
    if shape.len() != 3 {
        return Err(CliError::data(format!(
            "{}: demand must be 3D",
            path.display()
        )));
    }
    Ok(DemandTensor::from_frames(
        shape[1],
        shape[2],
        meta.start_time,
        t.into_data(),
    )?)
}
