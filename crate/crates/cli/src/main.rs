use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use lfmc_core::config::PipelineConfig;
use lfmc_core::dataset::TileShape;
use lfmc_core::mapper::with_threads;
use lfmc_core::pipeline::{self, AblationMode, RunOptions};
use lfmc_core::synthetic::{scene_pipeline_config, Scene, SceneConfig};
use lfmc_core::{Error, ErrorKind};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

/// Live fuel moisture content pipeline: prepare a dataset from field labels
/// and raster inputs, train models, evaluate them and write monthly maps.
#[derive(Parser, Debug)]
#[command(name = "lfmc", version)]
struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for parallel stages; all cores when absent.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Replaces the split, training and evaluation seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Replace outputs of an earlier run of the same stage.
    #[arg(long, global = true)]
    overwrite: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse, filter and aggregate labels and build the tile dataset.
    Prepare,
    /// Fit the monthly baseline and the regressor.
    Train,
    /// Score the trained models on the test split.
    Evaluate,
    /// Write monthly LFMC GeoTIFFs and the regional mean series.
    Map,
    /// Retrain over tile shapes or with one modality removed at a time.
    Ablate {
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// Write a small synthetic scene and a configuration that runs on it.
    Demo {
        /// Directory for the inputs, the configuration and the outputs.
        #[arg(long)]
        dir: PathBuf,
        /// Scene width and height in pixels.
        #[arg(long, default_value_t = 32)]
        size: usize,
        /// Label sites.
        #[arg(long, default_value_t = 60)]
        sites: usize,
    },
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Mode {
    Shape,
    Modality,
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn demo(dir: &Path, size: usize, sites: usize) -> anyhow::Result<PathBuf> {
    let scene = Scene::new(SceneConfig {
        size,
        months: 12,
        ..SceneConfig::default()
    });
    let shape = TileShape {
        height: 8,
        width: 8,
        timesteps: 4,
    };
    let margin = shape.height / 2 + 1;
    if size < 2 * margin + 1 {
        return Err(
            Error::Config(format!("scene size {size} is too small for {shape} tiles")).into(),
        );
    }
    let obs = scene.observations(sites, 4, margin, shape.timesteps - 1, 5.0);
    let files = scene.write_files(&dir.join("inputs"), &obs)?;
    let cfg = scene_pipeline_config(&scene, &files, &dir.join("output"), shape);
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Command::Demo { dir, size, sites } = &cli.command {
        let path = demo(dir, *size, *sites)?;
        println!("wrote {}", path.display());
        return Ok(());
    }
    let cfg = load_config(cli)?;
    let opts = RunOptions {
        overwrite: cli.overwrite,
    };
    with_threads(cli.threads, || -> anyhow::Result<()> {
        match &cli.command {
            Command::Prepare => {
                let r = pipeline::prepare(&cfg, opts)?;
                println!(
                    "parsed {} rows ({} rejected), {} observations ({} merged), {} instances: {} train / {} val / {} test",
                    r.rows_parsed,
                    r.rows_rejected,
                    r.observations,
                    r.merged_duplicates,
                    r.instances,
                    r.split.train,
                    r.split.val,
                    r.split.test
                );
            }
            Command::Train => {
                let s = pipeline::train(&cfg, opts)?;
                for (kind, id) in &s.models {
                    println!("{}: {id}", kind.label());
                }
                if let Some(h) = &s.history {
                    println!("best epoch {} of {}", h.best_epoch, h.epochs.len());
                }
            }
            Command::Evaluate => {
                for r in pipeline::evaluate_models(&cfg, opts)? {
                    let r2 = r
                        .overall
                        .r2
                        .map(|v| format!("{v:.3}"))
                        .unwrap_or_else(|| "n/a".into());
                    println!(
                        "{}: n={} RMSE {:.2} MAE {:.2} R2 {r2}",
                        r.model_kind.label(),
                        r.n,
                        r.overall.rmse,
                        r.overall.mae
                    );
                }
            }
            Command::Map => {
                let out = pipeline::map(&cfg, opts)?;
                for f in &out.files {
                    println!("{}", f.display());
                }
            }
            Command::Ablate { mode } => {
                let mode = match mode {
                    Mode::Shape => AblationMode::Shape,
                    Mode::Modality => AblationMode::Modality,
                };
                for row in pipeline::ablate(&cfg, mode, opts)? {
                    println!(
                        "{}: RMSE {:.2} MAE {:.2}",
                        row.label, row.metrics.rmse, row.metrics.mae
                    );
                }
            }
            Command::Demo { .. } => unreachable!(),
        }
        Ok(())
    })?
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>().map(Error::kind) {
        Some(ErrorKind::Config) => EXIT_CONFIG,
        Some(ErrorKind::Data) => EXIT_DATA,
        Some(ErrorKind::Runtime) | None => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
