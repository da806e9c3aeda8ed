//! Run configuration: one TOML file plus `--set key=value` overrides.
//!
//! Every key is addressable by its dotted path, e.g. `grid.cell_size_m` or
//! `fairness.thresholds.race`. Relative paths are resolved against the
//! directory of the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fairst::fairness::{
    AttributeConfig, FairnessConfig, RegularizerKind, DEFAULT_P_MIN, DEFAULT_Y_MIN,
};
use fairst::ingest::{BBox, DemographicField, RasterMode};
use fairst::io::parse_time;
use fairst::model::ArchConfig;
use fairst::synth::SynthConfig;
use fairst::tensor::LrSchedule;
use fairst::train::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub grid: GridConfig,
    pub period: PeriodConfig,
    #[serde(default)]
    pub series: SeriesConfig,
    #[serde(default)]
    pub features: FeaturesConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub fairness: FairnessSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub predict: PredictSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub trips: PathBuf,
    pub demographics: PathBuf,
    #[serde(default)]
    pub weather: Option<PathBuf>,
    #[serde(default)]
    pub features: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
    pub cell_size_m: f64,
}

impl GridConfig {
    pub fn bbox(&self) -> BBox {
        BBox {
            min_lat: self.min_lat,
            min_lon: self.min_lon,
            max_lat: self.max_lat,
            max_lon: self.max_lon,
        }
    }
}

/// RFC 3339 timestamps; `[start, train_end)` trains, `[train_end, end)` tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodConfig {
    pub start: String,
    pub end: String,
    pub train_end: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Period {
    pub start: i64,
    pub end: i64,
    pub train_end: i64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesConfig {
    /// Columns of the weather CSV to use as 1D inputs.
    #[serde(default)]
    pub names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesConfig {
    /// Layer name in the features GeoJSON to `count` or `total_length`.
    pub layers: BTreeMap<String, String>,
    /// Also feed population share and advantaged fractions to the 2D stream.
    pub include_demographics: bool,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        Self {
            layers: BTreeMap::new(),
            include_demographics: true,
        }
    }
}

/// Architecture overrides; unset fields keep the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub window: usize,
    pub filters_3d: Option<Vec<usize>>,
    pub kernel: Option<usize>,
    pub c3: Option<usize>,
    pub filters_1d: Option<Vec<usize>>,
    pub c1: Option<usize>,
    pub filters_2d: Option<Vec<usize>>,
    pub c2: Option<usize>,
    pub head_width: Option<usize>,
    pub head_layers: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            window: 168,
            filters_3d: None,
            kernel: None,
            c3: None,
            filters_1d: None,
            c1: None,
            filters_2d: None,
            c2: None,
            head_width: None,
            head_layers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr_initial: f64,
    pub lr_rate: f64,
    pub lr_every: u64,
    /// Epochs between checkpoints; 0 disables.
    pub checkpoint_every: usize,
    pub threads: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let lr = LrSchedule::default();
        Self {
            epochs: 10,
            batch_size: 32,
            seed: 0,
            lr_initial: lr.initial,
            lr_rate: lr.rate,
            lr_every: lr.every,
            checkpoint_every: 0,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FairnessSection {
    /// `rf`, `if`, `em`, `pw` or `none`.
    pub kind: String,
    pub lambda: f64,
    pub attributes: Vec<String>,
    /// Per-attribute discretization threshold; defaults to the city-wide
    /// population-weighted advantaged fraction.
    pub thresholds: BTreeMap<String, f64>,
    /// Per-attribute weight; defaults to 1.
    pub weights: BTreeMap<String, f64>,
    pub p_min: f64,
    pub y_min: f64,
}

impl Default for FairnessSection {
    fn default() -> Self {
        Self {
            kind: "none".into(),
            lambda: 0.0,
            attributes: Vec::new(),
            thresholds: BTreeMap::new(),
            weights: BTreeMap::new(),
            p_min: DEFAULT_P_MIN,
            y_min: DEFAULT_Y_MIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Also write the report computed on the ground truth.
    pub with_truth: bool,
    /// Clamp negative predictions to 0 in exported heatmaps.
    pub clamp_export: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            with_truth: true,
            clamp_export: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictSection {
    /// RFC 3339 hours to predict and export.
    pub hours: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub lambdas: Vec<f64>,
    /// Epochs of per-lambda fine-tuning from a shared lambda = 0 model;
    /// 0 trains every lambda from scratch for `train.epochs`.
    pub finetune_epochs: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            lambdas: vec![0.0, 0.5, 1.0, 2.0],
            finetune_epochs: 5,
        }
    }
}

/// Wrapper so `synth.*` keys share the override mechanism.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthFile {
    #[serde(default)]
    pub synth: SynthConfig,
}

fn parse_override_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Applies `key=value` to `table`, creating intermediate tables.
pub fn apply_override(table: &mut Table, spec: &str) -> CliResult<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override '{spec}' is not key=value")))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config_key(key, "empty segment in override key"));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(CliError::config_key(key, format!("'{p}' is not a table"))),
        };
    }
    cur.insert(
        parts[parts.len() - 1].to_string(),
        parse_override_value(raw.trim()),
    );
    Ok(())
}

/// Deserializes `table` into `T`, naming the offending dotted key on error.
pub fn from_table<T: serde::de::DeserializeOwned>(table: Table) -> CliResult<T> {
    serde_path_to_error::deserialize(Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.inner().to_string();
        let missing = inner
            .split('`')
            .nth(1)
            .filter(|_| inner.starts_with("missing field"))
            .map(str::to_string);
        let key = match (path.as_str(), missing) {
            (".", Some(m)) => m,
            (p, Some(m)) => format!("{p}.{m}"),
            (p, None) => p.to_string(),
        };
        CliError::config_key(key, inner)
    })
}

pub fn read_table(path: &Path) -> CliResult<Table> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    text.parse::<Table>()
        .map_err(|e| CliError::config(format!("{}: {}", path.display(), e.to_string().trim())))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Reads `path`, applies overrides, validates and resolves paths.
    pub fn load(path: &Path, overrides: &[String]) -> CliResult<Self> {
        let mut table = read_table(path)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = from_table(table)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let p = &mut cfg.paths;
        p.trips = resolve(base, &p.trips);
        p.demographics = resolve(base, &p.demographics);
        p.weather = p.weather.as_deref().map(|w| resolve(base, w));
        p.features = p.features.as_deref().map(|w| resolve(base, w));
        p.output = resolve(base, &p.output);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.period()?;
        self.regularizer()?;
        for (name, mode) in &self.features.layers {
            mode.parse::<RasterMode>().map_err(|e| {
                CliError::config_key(format!("features.layers.{name}"), e.to_string())
            })?;
        }
        if self.regularizer()? != RegularizerKind::None && self.fairness.attributes.is_empty() {
            return Err(CliError::config_key(
                "fairness.attributes",
                "a regularizer needs at least one attribute",
            ));
        }
        if !self.series.names.is_empty() && self.paths.weather.is_none() {
            return Err(CliError::config_key(
                "paths.weather",
                "series.names is set but no weather file is given",
            ));
        }
        if !self.features.layers.is_empty() && self.paths.features.is_none() {
            return Err(CliError::config_key(
                "paths.features",
                "features.layers is set but no features file is given",
            ));
        }
        if self.model.window == 0 {
            return Err(CliError::config_key("model.window", "must be at least 1"));
        }
        self.train_config(None)
            .validate()
            .map_err(|e| CliError::config_key("train", e.to_string()))?;
        Ok(())
    }

    pub fn period(&self) -> CliResult<Period> {
        let t = |key: &str, v: &str| {
            parse_time(v).map_err(|m| CliError::config_key(format!("period.{key}"), m))
        };
        let p = Period {
            start: t("start", &self.period.start)?,
            end: t("end", &self.period.end)?,
            train_end: t("train_end", &self.period.train_end)?,
        };
        if !(p.start < p.train_end && p.train_end < p.end) {
            return Err(CliError::config_key(
                "period.train_end",
                "need start < train_end < end",
            ));
        }
        for (k, v) in [
            ("start", p.start),
            ("end", p.end),
            ("train_end", p.train_end),
        ] {
            if v.rem_euclid(3600) != 0 {
                return Err(CliError::config_key(
                    format!("period.{k}"),
                    "must be hour-aligned",
                ));
            }
        }
        Ok(p)
    }

    pub fn regularizer(&self) -> CliResult<RegularizerKind> {
        self.fairness
            .kind
            .parse()
            .map_err(|e: fairst::Error| CliError::config_key("fairness.kind", e.to_string()))
    }

    pub fn arch(&self, rows: usize, cols: usize, n_series: usize, n_features: usize) -> ArchConfig {
        let m = &self.model;
        let mut a = ArchConfig::new(m.window, rows, cols, n_series, n_features);
        if let Some(v) = &m.filters_3d {
            a.filters_3d = v.clone();
        }
        if let Some(v) = m.kernel {
            a.kernel = v;
        }
        if let Some(v) = m.c3 {
            a.c3 = v;
        }
        if let Some(v) = &m.filters_1d {
            a.filters_1d = v.clone();
        }
        if let Some(v) = m.c1 {
            a.c1 = v;
        }
        if let Some(v) = &m.filters_2d {
            a.filters_2d = v.clone();
        }
        if let Some(v) = m.c2 {
            a.c2 = v;
        }
        if let Some(v) = m.head_width {
            a.head_width = v;
        }
        if let Some(v) = m.head_layers {
            a.head_layers = v;
        }
        a
    }

    pub fn train_config(&self, checkpoint_dir: Option<PathBuf>) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: t.seed,
            lr: LrSchedule {
                initial: t.lr_initial,
                rate: t.lr_rate,
                every: t.lr_every,
            },
            checkpoint_every: t.checkpoint_every,
            checkpoint_dir,
            threads: t.threads,
        }
    }

    /// Fairness settings with thresholds resolved against `field`.
    pub fn fairness_config(&self, field: &DemographicField) -> CliResult<FairnessConfig> {
        let f = &self.fairness;
        let mut attributes = Vec::with_capacity(f.attributes.len());
        for name in &f.attributes {
            let w = field.w_plus(name).map_err(|_| {
                CliError::config_key(
                    "fairness.attributes",
                    format!("attribute '{name}' not in demographics"),
                )
            })?;
            let threshold = match f.thresholds.get(name) {
                Some(&t) => t,
                None => {
                    let total: f64 = field.population_share.iter().sum();
                    w.iter()
                        .zip(&field.population_share)
                        .map(|(w, p)| w * p)
                        .sum::<f64>()
                        / total
                }
            };
            attributes.push(AttributeConfig {
                name: name.clone(),
                weight: f.weights.get(name).copied().unwrap_or(1.0),
                threshold,
            });
        }
        let cfg = FairnessConfig {
            kind: self.regularizer()?,
            lambda: f.lambda,
            attributes,
            p_min: f.p_min,
            y_min: f.y_min,
        };
        cfg.validate()
            .map_err(|e| CliError::config_key("fairness", e.to_string()))?;
        Ok(cfg)
    }
}
