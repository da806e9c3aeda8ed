use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fairst::synth::SynthConfig;
use fairst_cli::config::{apply_override, from_table, read_table, SynthFile};
use fairst_cli::pipeline;
use fairst_cli::{CliError, CliResult, RunConfig};

const CONFIG_KEYS: &str = "\
Config keys (TOML; override any with --set key=value):
  paths.trips                 trips CSV: timestamp,lat,lon (required)
  paths.demographics          GeoJSON units: population, <attr>_adv_frac (required)
  paths.weather               CSV: timestamp,<series>...
  paths.features              GeoJSON FeatureCollection, property `layer`
  paths.output                output directory (required)
  grid.min_lat, grid.min_lon, grid.max_lat, grid.max_lon, grid.cell_size_m  (required)
  period.start, period.end, period.train_end   RFC 3339, hour-aligned (required)
  series.names                weather columns fed to the 1D stream [none]
  features.layers.<name>      `count` or `total_length`
  features.include_demographics  population and attribute layers as 2D inputs [true]
  model.window                history length in hours [168]
  model.filters_3d, model.kernel, model.c3, model.filters_1d, model.c1,
  model.filters_2d, model.c2, model.head_width, model.head_layers
  train.epochs [10], train.batch_size [32], train.seed [0]
  train.lr_initial [0.005], train.lr_rate [0.96], train.lr_every [5000]
  train.checkpoint_every      epochs between checkpoints, 0 = off [0]
  train.threads               worker threads [all cores]
  fairness.kind               rf | if | em | pw | none [none]
  fairness.lambda [0], fairness.attributes [], fairness.p_min [1e-9], fairness.y_min [1]
  fairness.thresholds.<attr>  default: population-weighted city mean
  fairness.weights.<attr>     [1]
  eval.with_truth [true], eval.clamp_export [false]
  predict.hours               RFC 3339 hours to export as heatmaps [first test hour]
  sweep.lambdas [0, 0.5, 1, 2], sweep.finetune_epochs [5]
  synth.*                     synthetic city (synth command only): rows, cols,
                              cell_size_m, origin_lat, origin_lon, start_time, hours,
                              bias, base_rate, adv_cell_share, mix,
                              mean_cell_population, seed

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.";

#[derive(Parser)]
#[command(name = "fairst", version, about = "Fairness-aware spatiotemporal demand forecasting", after_help = CONFIG_KEYS)]
struct Cli {
    /// Run configuration file (TOML).
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set fairness.lambda=0.5 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Worker threads for training; same as --set train.threads=N.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grid trips, demographics, weather and features into dataset.json.
    Prepare,
    /// Train a model; writes model.json and train_log.csv.
    Train,
    /// Write report.csv (and report_truth.csv) for the test period.
    Evaluate {
        /// Evaluate this predictions file instead of the trained model.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Write predictions.json and heatmaps for predict.hours.
    Predict,
    /// Train and evaluate every sweep.lambdas entry; writes sweep.csv.
    Sweep,
    /// Generate a synthetic biased city plus a ready-to-run config.toml.
    Synth {
        /// Directory for the generated files.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(cli: &Cli) -> CliResult<RunConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::config_key("config", "--config is required for this command"))?;
    let mut sets = cli.set.clone();
    if let Some(n) = cli.threads {
        sets.push(format!("train.threads={n}"));
    }
    RunConfig::load(path, &sets)
}

fn synth_config(config: Option<&Path>, sets: &[String]) -> CliResult<SynthConfig> {
    let mut table = toml::Table::new();
    if let Some(p) = config {
        if let Some(s) = read_table(p)?.remove("synth") {
            table.insert("synth".into(), s);
        }
    }
    for s in sets {
        apply_override(&mut table, s)?;
    }
    let f: SynthFile = from_table(table)?;
    Ok(f.synth)
}

fn progress(e: &fairst::train::EpochRecord) {
    eprintln!(
        "epoch {:>4}  acc {:.6}  fair {:.6}  lr {:.6}  {:.2}s",
        e.epoch + 1,
        e.acc_loss,
        e.fair_loss,
        e.lr,
        e.seconds
    );
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Prepare => {
            let cfg = load(cli)?;
            let ds = pipeline::prepare(&cfg)?;
            println!(
                "prepared {}x{} grid, {} hours ({} train), {} series, {} feature layers; dropped {} trips",
                ds.rows(),
                ds.cols(),
                ds.demand.t_len(),
                ds.train_end,
                ds.series.len(),
                ds.features.len(),
                ds.drops.total()
            );
        }
        Command::Train => {
            let cfg = load(cli)?;
            let (_, log) = pipeline::train(&cfg, &mut progress)?;
            if let Some(last) = log.epochs.last() {
                println!(
                    "trained {} epochs, final accuracy loss {}",
                    log.epochs.len(),
                    last.acc_loss
                );
            }
        }
        Command::Evaluate { predictions } => {
            let cfg = load(cli)?;
            let (report, _) = pipeline::evaluate_run(&cfg, predictions.as_deref())?;
            print!("{}", report.to_csv());
        }
        Command::Predict => {
            let cfg = load(cli)?;
            for stem in pipeline::predict_run(&cfg)? {
                println!("{}", stem.with_extension("pgm").display());
            }
        }
        Command::Sweep => {
            let cfg = load(cli)?;
            let rows = pipeline::sweep(&cfg, &mut |lambda, e| {
                eprint!("lambda {lambda}  ");
                progress(e);
            })?;
            print!("{}", pipeline::sweep_csv(&rows));
        }
        Command::Synth { out } => {
            let synth = synth_config(cli.config.as_deref(), &cli.set)?;
            let path = pipeline::synth_run(&synth, out)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
