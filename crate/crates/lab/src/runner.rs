//! One experiment end to end: dataset, training, evaluation, artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use cdl_core::mechanics::{make_dataset, synchronous_energy, Dataset, Trajectory};
use cdl_core::models::{Checkpoint, Model};
use cdl_core::training::{evaluate, init_model, train, RunReport, TestCase};

use crate::{ExperimentConfig, LabError};

pub struct RunResult {
    pub config: ExperimentConfig,
    pub dataset: Dataset,
    pub model: Model,
    pub test: TestCase,
    pub report: RunReport,
}

impl RunResult {
    pub fn rmse(&self) -> f64 {
        self.report.eval.rmse
    }
}

pub fn dataset(cfg: &ExperimentConfig) -> Result<Dataset, LabError> {
    Ok(make_dataset(
        &cfg.spec(),
        cfg.trajectories,
        cfg.points,
        cfg.sigma,
        cfg.seed,
        cfg.windowing,
    )?)
}

/// Held-out case covering the whole training span.
pub fn test_case(cfg: &ExperimentConfig) -> Result<TestCase, LabError> {
    Ok(TestCase::generate(
        &cfg.spec(),
        cfg.trajectories * cfg.points,
        cfg.sigma,
        cfg.seed,
    )?)
}

/// Runs the experiment in memory. A training run that stops on a
/// non-finite loss still yields a result, with `report.failure` set.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunResult, LabError> {
    cfg.validate()?;
    let spec = cfg.spec();
    let dataset = dataset(cfg)?;
    let model = init_model(cfg.model, &spec, &cfg.hidden, cfg.seed)?;
    let outcome = train(model, &dataset, &cfg.train)?;
    let test = test_case(cfg)?;
    let eval = evaluate(&outcome.model, std::slice::from_ref(&test))?;
    let report = RunReport {
        config: serde_json::to_value(cfg).expect("config serialises"),
        model: cfg.model,
        epochs: outcome.history,
        eval,
        wall_clock_s: outcome.wall_clock_s,
        failure: outcome.failure.map(|e| e.to_string()),
    };
    Ok(RunResult {
        config: cfg.clone(),
        dataset,
        model: outcome.model,
        test,
        report,
    })
}

fn write(path: &Path, text: &str) -> Result<(), LabError> {
    fs::write(path, text).map_err(|e| LabError::Io(format!("{}: {e}", path.display())))
}

fn energy_csv(series: &[(usize, f64)], h: f64) -> String {
    let mut out = String::from("step,t,energy\n");
    for &(n, e) in series {
        out.push_str(&format!("{n},{},{e}\n", n as f64 * h));
    }
    out
}

/// Writes every artifact of a run into `dir`, which must not already hold
/// a report.
pub fn write_run(result: &RunResult, dir: &Path) -> Result<(), LabError> {
    if dir.join("report.json").exists() {
        return Err(LabError::Io(format!("{} already holds a run", dir.display())));
    }
    fs::create_dir_all(dir).map_err(|e| LabError::Io(format!("{}: {e}", dir.display())))?;
    let cfg = &result.config;
    write(&dir.join("config.json"), &serde_json::to_string_pretty(cfg).expect("serialises"))?;
    write(&dir.join("dataset.json"), &result.dataset.to_json()?)?;
    write(&dir.join("dataset.csv"), &result.dataset.to_csv())?;
    let ck = result.model.to_checkpoint(&cfg.hash());
    write(&dir.join("checkpoint.json"), &serde_json::to_string(&ck).expect("serialises"))?;
    write(&dir.join("losses.csv"), &result.report.losses_csv())?;
    if let Some(f) = &result.report.eval.forecast {
        write(&dir.join("forecast.csv"), &f.to_csv())?;
    }
    write(&dir.join("ground_truth.csv"), &result.test.ground_truth.to_csv())?;
    write(&dir.join("energy.csv"), &energy_csv(&result.report.eval.energy, cfg.spec().h))?;
    let truth_energy = synchronous_energy(&cfg.spec(), &result.test.ground_truth);
    write(&dir.join("energy_truth.csv"), &energy_csv(&truth_energy, cfg.spec().h))?;
    // The report goes last: its presence marks a complete run.
    write(
        &dir.join("report.json"),
        &serde_json::to_string_pretty(&result.report).expect("serialises"),
    )
}

pub fn load_report(dir: &Path) -> Result<RunReport, LabError> {
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path).map_err(|e| LabError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| LabError::Input(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Model, LabError> {
    let text = fs::read_to_string(path).map_err(|e| LabError::Input(format!("{}: {e}", path.display())))?;
    let ck: Checkpoint =
        serde_json::from_str(&text).map_err(|e| LabError::Input(format!("{}: {e}", path.display())))?;
    Ok(Model::from_checkpoint(&ck)?)
}

pub fn load_config(dir: &Path) -> Result<ExperimentConfig, LabError> {
    let path = dir.join("config.json");
    let text = fs::read_to_string(&path).map_err(|e| LabError::Input(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_json(&text)
}

/// Outcome of [`run_or_load`].
pub struct StoredRun {
    pub dir: PathBuf,
    pub report: RunReport,
    /// The run directory existed and was reused untouched.
    pub reused: bool,
}

/// Runs the configuration into its content-addressed directory, or reads
/// the report already stored there.
pub fn run_or_load(cfg: &ExperimentConfig) -> Result<StoredRun, LabError> {
    let dir = cfg.run_dir();
    if dir.join("report.json").exists() {
        return Ok(StoredRun {
            report: load_report(&dir)?,
            dir,
            reused: true,
        });
    }
    let result = execute(cfg)?;
    write_run(&result, &dir)?;
    Ok(StoredRun {
        dir,
        report: result.report,
        reused: false,
    })
}

/// Writes a dataset and its CSV into the config's dataset directory,
/// leaving an existing one in place.
pub fn generate(cfg: &ExperimentConfig) -> Result<(PathBuf, Dataset), LabError> {
    cfg.validate()?;
    let dir = cfg.dataset_dir();
    let path = dir.join("dataset.json");
    if path.exists() {
        return Ok((path.clone(), Dataset::load(&path)?));
    }
    let ds = dataset(cfg)?;
    fs::create_dir_all(&dir).map_err(|e| LabError::Io(format!("{}: {e}", dir.display())))?;
    write(&dir.join("dataset.csv"), &ds.to_csv())?;
    write(&path, &ds.to_json()?)?;
    Ok((path, ds))
}

/// Forecast of a stored model over the config's held-out case.
pub fn forecast(model: &Model, cfg: &ExperimentConfig) -> Result<(TestCase, Trajectory), LabError> {
    let test = test_case(cfg)?;
    let gt = &test.ground_truth;
    let r = model.forecast(&gt.states[0], &gt.contacts[0], gt.len() - 1);
    Ok((test, r.trajectory))
}
