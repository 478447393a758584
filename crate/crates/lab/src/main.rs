use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cdl_core::mechanics::SceneKind;
use cdl_core::models::ModelKind;
use cdl_core::training::evaluate;
use clap::{Args, Parser, Subcommand};

use cdl_lab::plot::plot_runs;
use cdl_lab::reproduce::{reproduce, ReproduceOptions, Table};
use cdl_lab::runner::{generate, load_checkpoint, load_config, run_or_load, test_case};
use cdl_lab::{ExperimentConfig, LabError, Overrides};

#[derive(Parser)]
#[command(name = "lab", version, about = "Train and evaluate contact-dynamics models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_scene)]
    scene: Option<SceneKind>,
    #[arg(long, value_parser = parse_model)]
    model: Option<ModelKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Train without observed contact flags.
    #[arg(long)]
    no_touch: bool,
    /// Restitution coefficient override.
    #[arg(long)]
    elasticity: Option<f64>,
    /// Output root (runs/ and datasets/ are created below it).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, LabError> {
        Overrides {
            scene: self.scene,
            model: self.model,
            seed: self.seed,
            epochs: self.epochs,
            sigma: self.sigma,
            no_touch: self.no_touch,
            elasticity: self.elasticity,
            out: self.out.clone(),
        }
        .resolve(self.config.as_deref())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and store a training dataset.
    Generate(Common),
    /// Train a model and evaluate it on a held-out trajectory.
    Train(Common),
    /// Evaluate a stored checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run a multi-seed comparison table.
    Reproduce {
        #[arg(value_parser = parse_table)]
        table: Table,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        elasticity: Option<f64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Render charts for one or more run directories of the same scene.
    Plot {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "plots")]
        dest: PathBuf,
    },
}

fn parse_scene(s: &str) -> Result<SceneKind, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown scene `{s}`"))
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_table(s: &str) -> Result<Table, String> {
    s.parse().map_err(|e: LabError| e.to_string())
}

fn json(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("json value")
}

fn run(cli: Cli) -> Result<i32, LabError> {
    match cli.command {
        Command::Generate(common) => {
            let cfg = common.resolve()?;
            let (path, ds) = generate(&cfg)?;
            println!(
                "{}",
                json(&serde_json::json!({
                    "dataset": path,
                    "trajectories": ds.trajectories.len(),
                    "contact_events": ds.contact_events(),
                }))
            );
            Ok(0)
        }
        Command::Train(common) => {
            let cfg = common.resolve()?;
            let stored = run_or_load(&cfg)?;
            let r = &stored.report;
            println!(
                "{}",
                json(&serde_json::json!({
                    "run": stored.dir,
                    "reused": stored.reused,
                    "rmse": r.eval.rmse,
                    "rmse_noisy": r.eval.rmse_noisy,
                    "contact_accuracy": r.eval.contact_accuracy,
                    "wall_clock_s": r.wall_clock_s,
                    "failure": r.failure,
                }))
            );
            if let Some(f) = &r.failure {
                eprintln!("training stopped: {f}");
                return Ok(3);
            }
            Ok(0)
        }
        Command::Eval { common, checkpoint } => {
            let model = load_checkpoint(&checkpoint)?;
            let cfg = match (&common.config, checkpoint.parent().map(|d| d.join("config.json"))) {
                (None, Some(stored)) if stored.exists() && common.scene.is_none() => {
                    let mut cfg = load_config(stored.parent().unwrap_or(Path::new(".")))?;
                    if let Some(sigma) = common.sigma {
                        cfg.sigma = sigma;
                    }
                    if let Some(seed) = common.seed {
                        cfg.seed = seed;
                    }
                    cfg
                }
                _ => {
                    let mut c = common.clone();
                    c.scene = c.scene.or(Some(model.spec().scene));
                    c.model = c.model.or(Some(model.kind()));
                    c.resolve()?
                }
            };
            if cfg.scene != model.spec().scene {
                return Err(LabError::Config(format!(
                    "checkpoint is for {}, config asks for {}",
                    model.spec().scene,
                    cfg.scene
                )));
            }
            let eval = evaluate(&model, std::slice::from_ref(&test_case(&cfg)?))?;
            println!("{}", serde_json::to_string_pretty(&eval).expect("report serialises"));
            Ok(if eval.diverged_at.is_some() { 3 } else { 0 })
        }
        Command::Reproduce { table, seeds, threads, epochs, elasticity, out } => {
            let opts = ReproduceOptions { seeds, epochs, elasticity, out: out.clone(), threads };
            let result = reproduce(table, &opts);
            let dir = out.join("tables");
            std::fs::create_dir_all(&dir)?;
            let md = result.to_markdown();
            std::fs::write(dir.join(format!("{}.md", table.as_str())), &md)?;
            std::fs::write(dir.join(format!("{}.csv", table.as_str())), result.to_csv())?;
            println!("{md}");
            Ok(0)
        }
        Command::Plot { runs, dest } => {
            for path in plot_runs(&runs, &dest)? {
                println!("{}", path.display());
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
