//! The commands behind the CLI, usable as library calls.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fairst::eval::{evaluate, export_heatmap, EvalReport};
use fairst::fairness::{FairnessConfig, GroupLabeling, RegularizerKind};
use fairst::ingest::{make_slices_for_targets, DemandTensor};
use fairst::io::{format_time, parse_time, write_atomic, HOUR};
use fairst::model::{Model, ModelParams};
use fairst::train::{
    demand_scale, train_model_with, EpochRecord, FairnessContext, TrainConfig, TrainLog,
};

use crate::config::RunConfig;
use crate::dataset::{load_demand, missing_artifact, save_demand, Dataset};
use crate::error::{CliError, CliResult};

pub const DATASET_FILE: &str = "dataset.json";
pub const MODEL_FILE: &str = "model.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const REPORT_FILE: &str = "report.csv";
pub const TRUTH_REPORT_FILE: &str = "report_truth.csv";
pub const PREDICTIONS_FILE: &str = "predictions.json";
pub const HEATMAP_DIR: &str = "heatmaps";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Offset added to `train.seed` for the batch order of sweep fine-tuning.
const FINETUNE_SEED_OFFSET: u64 = 1000;

type Labelings = BTreeMap<String, GroupLabeling>;

fn out(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.paths.output.join(name)
}

fn ensure_dir(p: &Path) -> CliResult<()> {
    fs::create_dir_all(p).map_err(|e| CliError::data(format!("cannot create {}: {e}", p.display())))
}

/// Grids the raw inputs and writes `dataset.json`.
pub fn prepare(cfg: &RunConfig) -> CliResult<Dataset> {
    let ds = Dataset::prepare(cfg)?;
    ensure_dir(&cfg.paths.output)?;
    ds.save(&out(cfg, DATASET_FILE))?;
    Ok(ds)
}

pub fn load_dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    Dataset::load(&out(cfg, DATASET_FILE))
}

pub fn load_model(cfg: &RunConfig) -> CliResult<Model> {
    let p = out(cfg, MODEL_FILE);
    Model::load(&p).map_err(|e| missing_artifact(&p, e, "train"))
}

/// Freshly initialized model sized for `ds`.
pub fn init_model(cfg: &RunConfig, ds: &Dataset) -> CliResult<Model> {
    let arch = cfg.arch(ds.rows(), ds.cols(), ds.series.len(), ds.features.len());
    arch.validate()
        .map_err(|e| CliError::config_key("model", e.to_string()))?;
    let slices = ds.train_slices(cfg.model.window)?;
    Ok(Model::new(
        ModelParams::init(&arch, cfg.train.seed)?,
        demand_scale(&slices),
    )?)
}

fn fairness_for(cfg: &RunConfig, ds: &Dataset) -> CliResult<(FairnessConfig, Labelings)> {
    let fc = cfg.fairness_config(&ds.field)?;
    let labs = fc.labelings(&ds.field)?;
    Ok((fc, labs))
}

fn fit(
    cfg: &RunConfig,
    ds: &Dataset,
    model: &mut Model,
    fc: &FairnessConfig,
    labs: &Labelings,
    tc: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> CliResult<TrainLog> {
    let slices = ds.train_slices(cfg.model.window)?;
    let ctx = FairnessContext {
        config: fc,
        field: &ds.field,
        labelings: labs,
    };
    Ok(train_model_with(
        model,
        &slices,
        &ds.features,
        &ctx,
        tc,
        on_epoch,
    )?)
}

/// Trains from scratch and writes `model.json`, `train_log.csv` and any
/// checkpoints.
pub fn train(
    cfg: &RunConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> CliResult<(Model, TrainLog)> {
    let ds = load_dataset(cfg)?;
    let (fc, labs) = fairness_for(cfg, &ds)?;
    let mut model = init_model(cfg, &ds)?;
    let ckpt = (cfg.train.checkpoint_every > 0).then(|| out(cfg, CHECKPOINT_DIR));
    if let Some(d) = &ckpt {
        ensure_dir(d)?;
    }
    let tc = cfg.train_config(ckpt);
    let log = fit(cfg, &ds, &mut model, &fc, &labs, &tc, on_epoch)?;
    model.save(&out(cfg, MODEL_FILE))?;
    write_atomic(&out(cfg, TRAIN_LOG_FILE), log.to_csv().as_bytes())?;
    Ok((model, log))
}

/// Predictions for every test-period frame.
pub fn predict_test(cfg: &RunConfig, ds: &Dataset, model: &Model) -> CliResult<DemandTensor> {
    check_window(cfg, model)?;
    let slices = ds.test_slices(cfg.model.window)?;
    let mut values = Vec::with_capacity(slices.len() * ds.grid.n_cells());
    for s in &slices {
        values.extend(model.predict(s, &ds.features)?);
    }
    Ok(DemandTensor::from_frames(
        ds.rows(),
        ds.cols(),
        ds.demand.time_of(ds.train_end),
        values,
    )?)
}

fn check_window(cfg: &RunConfig, model: &Model) -> CliResult<()> {
    if model.arch().window != cfg.model.window {
        return Err(CliError::config_key(
            "model.window",
            format!(
                "model was trained with window {}, config says {}",
                model.arch().window,
                cfg.model.window
            ),
        ));
    }
    Ok(())
}

/// Reports for the test period, from `predictions` if given, else from the
/// trained model. Writes `report.csv` and, when enabled, `report_truth.csv`.
pub fn evaluate_run(
    cfg: &RunConfig,
    predictions: Option<&Path>,
) -> CliResult<(EvalReport, Option<EvalReport>)> {
    let ds = load_dataset(cfg)?;
    let (fc, labs) = fairness_for(cfg, &ds)?;
    let pred = match predictions {
        Some(p) => load_demand(p)?,
        None => predict_test(cfg, &ds, &load_model(cfg)?)?,
    };
    let truth = ds.test_truth();
    if pred.start_time != truth.start_time || pred.t_len() != truth.t_len() {
        return Err(CliError::data(format!(
            "predictions cover {} frames from {}, test period is {} frames from {}",
            pred.t_len(),
            format_time(pred.start_time),
            truth.t_len(),
            format_time(truth.start_time)
        )));
    }
    let (report, gt) = evaluate(&pred, &truth, &ds.field, &labs, &fc, cfg.eval.with_truth)?;
    ensure_dir(&cfg.paths.output)?;
    report.save_csv(&out(cfg, REPORT_FILE))?;
    if let Some(g) = &gt {
        g.save_csv(&out(cfg, TRUTH_REPORT_FILE))?;
    }
    Ok((report, gt))
}

/// Writes `predictions.json` for the test period and a heatmap pair per
/// requested hour (the first test hour when none are listed). Returns the
/// heatmap stems.
pub fn predict_run(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let ds = load_dataset(cfg)?;
    let model = load_model(cfg)?;
    let all = predict_test(cfg, &ds, &model)?;
    save_demand(&all, &out(cfg, PREDICTIONS_FILE))?;
    let hours: Vec<i64> = if cfg.predict.hours.is_empty() {
        vec![all.start_time]
    } else {
        cfg.predict
            .hours
            .iter()
            .map(|h| parse_time(h).map_err(|m| CliError::config_key("predict.hours", m)))
            .collect::<CliResult<_>>()?
    };
    let dir = out(cfg, HEATMAP_DIR);
    ensure_dir(&dir)?;
    let window = cfg.model.window;
    let mut stems = Vec::new();
    for h in hours {
        let offset = h - ds.demand.start_time;
        let t = offset.div_euclid(HOUR);
        if offset.rem_euclid(HOUR) != 0 || t < window as i64 || t >= ds.demand.t_len() as i64 {
            return Err(CliError::config_key(
                "predict.hours",
                format!(
                    "{} is not an hour with {window} hours of history inside the period",
                    format_time(h)
                ),
            ));
        }
        let t = t as usize;
        let slice = &make_slices_for_targets(&ds.demand, &ds.series, window, t, t + 1)?[0];
        let mut frame = model.predict(slice, &ds.features)?;
        if cfg.eval.clamp_export {
            frame.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        let stem = dir.join(format!("pred_{}", format_time(h).replace(':', "-")));
        export_heatmap(&frame, ds.rows(), ds.cols(), &stem)?;
        stems.push(stem);
    }
    Ok(stems)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub attribute: String,
    pub mae: f64,
    pub rfg: f64,
    pub ifg: f64,
    pub rho: Option<f64>,
    pub p_value: Option<f64>,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("lambda,attribute,mae,rfg,ifg,rho,p_value\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.lambda,
            r.attribute,
            r.mae,
            r.rfg,
            r.ifg,
            opt(r.rho),
            opt(r.p_value)
        );
    }
    s
}

/// Trains one model per `sweep.lambdas` entry and evaluates each on the test
/// period, writing `sweep.csv`.
///
/// With `sweep.finetune_epochs > 0`, a shared model is first trained for
/// `train.epochs` without the fairness term, then each lambda fine-tunes a
/// copy of it; otherwise every lambda trains from scratch.
pub fn sweep(
    cfg: &RunConfig,
    on_epoch: &mut dyn FnMut(f64, &EpochRecord),
) -> CliResult<Vec<SweepRow>> {
    if cfg.regularizer()? == RegularizerKind::None {
        return Err(CliError::config_key(
            "fairness.kind",
            "a sweep needs a regularizer",
        ));
    }
    if cfg.sweep.lambdas.is_empty()
        || cfg
            .sweep
            .lambdas
            .iter()
            .any(|l| !(*l >= 0.0 && l.is_finite()))
    {
        return Err(CliError::config_key(
            "sweep.lambdas",
            "need at least one finite nonnegative lambda",
        ));
    }
    let ds = load_dataset(cfg)?;
    let (fc, labs) = fairness_for(cfg, &ds)?;
    let truth = ds.test_truth();
    let base_tc = cfg.train_config(None);
    let warm = cfg.sweep.finetune_epochs > 0;
    let pretrained = if warm {
        let mut m = init_model(cfg, &ds)?;
        let fc0 = FairnessConfig {
            lambda: 0.0,
            ..fc.clone()
        };
        fit(cfg, &ds, &mut m, &fc0, &labs, &base_tc, &mut |e| {
            on_epoch(0.0, e)
        })?;
        Some(m)
    } else {
        None
    };
    let mut rows = Vec::new();
    for &lambda in &cfg.sweep.lambdas {
        let fcl = FairnessConfig {
            lambda,
            ..fc.clone()
        };
        let (mut model, tc) = match &pretrained {
            Some(m) => (
                m.clone(),
                TrainConfig {
                    epochs: cfg.sweep.finetune_epochs,
                    seed: cfg.train.seed.wrapping_add(FINETUNE_SEED_OFFSET),
                    ..base_tc.clone()
                },
            ),
            None => (init_model(cfg, &ds)?, base_tc.clone()),
        };
        fit(cfg, &ds, &mut model, &fcl, &labs, &tc, &mut |e| {
            on_epoch(lambda, e)
        })?;
        let pred = predict_test(cfg, &ds, &model)?;
        let (report, _) = evaluate(&pred, &truth, &ds.field, &labs, &fcl, false)?;
        for a in &report.attributes {
            rows.push(SweepRow {
                lambda,
                attribute: a.attribute.clone(),
                mae: report.mae,
                rfg: a.rfg,
                ifg: a.ifg,
                rho: a.rho,
                p_value: a.p_value,
            });
        }
    }
    ensure_dir(&cfg.paths.output)?;
    write_atomic(&out(cfg, SWEEP_FILE), sweep_csv(&rows).as_bytes())?;
    Ok(rows)
}

/// Writes a synthetic city's raw files into `dir` together with a
/// `config.toml` that runs the full pipeline on them.
pub fn synth_run(synth: &fairst::synth::SynthConfig, dir: &Path) -> CliResult<PathBuf> {
    use crate::config::*;
    use fairst::synth::{generate, BIASED_ATTRIBUTE, FEATURE_LAYERS, SERIES_NAMES};

    synth
        .validate()
        .map_err(|e| CliError::config_key("synth", e.to_string()))?;
    let city = generate(synth)?;
    ensure_dir(dir)?;
    city.write_files(dir)?;
    let b = city.grid.bbox;
    let train_hours = (synth.hours * 2 / 3) as i64;
    let name = |p: &str| PathBuf::from(p);
    let cfg = RunConfig {
        paths: PathsConfig {
            trips: name("trips.csv"),
            demographics: name("demographics.geojson"),
            weather: Some(name("weather.csv")),
            features: Some(name("features.geojson")),
            output: name("out"),
        },
        grid: GridConfig {
            min_lat: b.min_lat,
            min_lon: b.min_lon,
            max_lat: b.max_lat,
            max_lon: b.max_lon,
            cell_size_m: synth.cell_size_m,
        },
        period: PeriodConfig {
            start: format_time(synth.start_time),
            end: format_time(synth.end_time()),
            train_end: format_time(synth.start_time + train_hours * HOUR),
        },
        series: SeriesConfig {
            names: SERIES_NAMES.iter().map(|s| s.to_string()).collect(),
        },
        features: FeaturesConfig {
            layers: FEATURE_LAYERS
                .iter()
                .map(|(n, m)| {
                    let mode = match m {
                        fairst::ingest::RasterMode::Count => "count",
                        fairst::ingest::RasterMode::TotalLength => "total_length",
                    };
                    (n.to_string(), mode.to_string())
                })
                .collect(),
            include_demographics: true,
        },
        model: ModelConfig {
            window: 24,
            filters_3d: Some(vec![4, 8, 1]),
            ..ModelConfig::default()
        },
        train: TrainSection {
            epochs: 15,
            seed: synth.seed,
            ..TrainSection::default()
        },
        fairness: FairnessSection {
            kind: "if".into(),
            attributes: vec![BIASED_ATTRIBUTE.to_string()],
            ..FairnessSection::default()
        },
        eval: EvalSection::default(),
        predict: PredictSection::default(),
        sweep: SweepSection::default(),
    };
    let text = toml::to_string(&cfg).map_err(|e| CliError::data(e.to_string()))?;
    let path = dir.join("config.toml");
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}
