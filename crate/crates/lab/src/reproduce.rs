//! Multi-seed comparison tables.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Mutex;

use cdl_core::mechanics::SceneKind;
use cdl_core::models::ModelKind;

use crate::config::ELASTIC_BALL_E;
use crate::runner::run_or_load;
use crate::{ExperimentConfig, LabError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table {
    PendulumFig3,
    BallTable1,
    CradleTable2,
    BallElastic,
    CradleNoTouch,
}

impl Table {
    pub const ALL: [Table; 5] = [
        Table::PendulumFig3,
        Table::BallTable1,
        Table::CradleTable2,
        Table::BallElastic,
        Table::CradleNoTouch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Table::PendulumFig3 => "pendulum-fig3",
            Table::BallTable1 => "ball-table1",
            Table::CradleTable2 => "cradle-table2",
            Table::BallElastic => "ball-elastic",
            Table::CradleNoTouch => "cradle-no-touch",
        }
    }

    /// Scene, models with reference RMSE, training trajectories and noise.
    pub fn protocol(self) -> Protocol {
        let r = |mean, se| Some(Reference { mean, se });
        match self {
            Table::PendulumFig3 => Protocol {
                scene: SceneKind::Pendulum,
                rows: vec![
                    (ModelKind::Cdl, r(0.538, None)),
                    (ModelKind::Resnet, r(1.156, None)),
                    (ModelKind::VinVv, r(0.509, None)),
                ],
                trajectories: 20,
                sigma: 0.2,
                elasticity: None,
            },
            Table::BallTable1 => Protocol {
                scene: SceneKind::BouncingBall,
                rows: vec![
                    (ModelKind::Resnet, r(6.6, Some(1.2))),
                    (ModelKind::ResnetContact, r(4.8, Some(0.8))),
                    (ModelKind::Cdl, r(1.9, Some(1.0))),
                ],
                trajectories: 40,
                sigma: 0.2,
                elasticity: None,
            },
            Table::CradleTable2 => Protocol {
                scene: SceneKind::NewtonsCradle,
                rows: vec![
                    (ModelKind::Resnet, r(1.6, Some(0.1))),
                    (ModelKind::ResnetContact, r(3.5, Some(1.3))),
                    (ModelKind::Cdl, r(0.4, Some(0.1))),
                ],
                trajectories: 50,
                sigma: 0.02,
                elasticity: None,
            },
            Table::BallElastic => Protocol {
                scene: SceneKind::BouncingBall,
                rows: vec![
                    (ModelKind::Cdl, r(2.076, None)),
                    (ModelKind::Resnet, r(8.291, None)),
                    (ModelKind::ResnetContact, r(4.156, None)),
                ],
                trajectories: 52,
                sigma: 0.2,
                elasticity: Some(ELASTIC_BALL_E),
            },
            Table::CradleNoTouch => Protocol {
                scene: SceneKind::NewtonsCradle,
                rows: vec![(ModelKind::CdlNoTouch, r(0.907, None)), (ModelKind::Cdl, None)],
                trajectories: 54,
                sigma: 0.02,
                elasticity: None,
            },
        }
    }
}

impl FromStr for Table {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self, LabError> {
        Table::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| LabError::Config(format!("unknown table `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub mean: f64,
    pub se: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Protocol {
    pub scene: SceneKind,
    pub rows: Vec<(ModelKind, Option<Reference>)>,
    pub trajectories: usize,
    pub sigma: f64,
    pub elasticity: Option<f64>,
}

/// Knobs shared by every run of a table.
#[derive(Debug, Clone)]
pub struct ReproduceOptions {
    pub seeds: usize,
    pub epochs: Option<usize>,
    pub elasticity: Option<f64>,
    pub out: PathBuf,
    pub threads: usize,
}

impl Default for ReproduceOptions {
    fn default() -> Self {
        Self {
            seeds: 5,
            epochs: None,
            elasticity: None,
            out: PathBuf::from("."),
            threads: 1,
        }
    }
}

impl Protocol {
    pub fn config(&self, model: ModelKind, seed: u64, opts: &ReproduceOptions) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::for_scene(self.scene, model);
        cfg.trajectories = self.trajectories;
        cfg.sigma = self.sigma;
        cfg.elasticity = opts.elasticity.or(self.elasticity);
        cfg.seed = seed;
        cfg.train.seed = seed;
        if let Some(e) = opts.epochs {
            cfg.train.epochs = e;
        }
        cfg.out = opts.out.clone();
        cfg
    }
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub seed: u64,
    pub rmse: Option<f64>,
    pub contact_accuracy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Row {
    pub model: ModelKind,
    pub reference: Option<Reference>,
    pub cells: Vec<Cell>,
}

impl Row {
    pub fn rmses(&self) -> Vec<f64> {
        self.cells.iter().filter_map(|c| c.rmse).collect()
    }

    /// Mean and standard error of the completed runs.
    pub fn mean_se(&self) -> Option<(f64, f64)> {
        mean_se(&self.rmses())
    }
}

pub fn mean_se(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return Some((mean, 0.0));
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, (var / n).sqrt()))
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

#[derive(Debug, Clone)]
pub struct TableResult {
    pub table: Table,
    pub rows: Vec<Row>,
}

fn fmt_ref(r: &Option<Reference>) -> String {
    match r {
        Some(Reference { mean, se: Some(se) }) => format!("{mean} ± {se}"),
        Some(Reference { mean, se: None }) => format!("{mean}"),
        None => "-".into(),
    }
}

impl TableResult {
    pub fn row(&self, model: ModelKind) -> Option<&Row> {
        self.rows.iter().find(|r| r.model == model)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("## {}\n\n| model | RMSE (mean ± s.e.) | runs | reference |\n|---|---|---|---|\n", self.table.as_str());
        for row in &self.rows {
            let failed = row.cells.iter().filter(|c| c.rmse.is_none()).count();
            let cell = match row.mean_se() {
                Some((m, se)) => format!("{m:.3} ± {se:.3}"),
                None => "n/a".into(),
            };
            let runs = if failed > 0 {
                format!("{} ({failed} failed)", row.cells.len() - failed)
            } else {
                row.cells.len().to_string()
            };
            let _ = writeln!(out, "| {} | {cell} | {runs} | {} |", row.model, fmt_ref(&row.reference));
        }
        for row in &self.rows {
            for c in row.cells.iter().filter(|c| c.error.is_some()) {
                let _ = writeln!(out, "\n- {} seed {}: {}", row.model, c.seed, c.error.as_deref().unwrap_or(""));
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,seed,rmse,contact_accuracy,error\n");
        for row in &self.rows {
            for c in &row.cells {
                let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    row.model,
                    c.seed,
                    opt(c.rmse),
                    opt(c.contact_accuracy),
                    c.error.as_deref().unwrap_or("").replace(',', ";")
                );
            }
        }
        out
    }
}

/// Runs (or reuses) every `(model, seed)` cell of a table. Failed runs are
/// recorded in their cell rather than aborting the table.
pub fn reproduce(table: Table, opts: &ReproduceOptions) -> TableResult {
    let protocol = table.protocol();
    let jobs: Vec<(usize, u64)> = (0..protocol.rows.len())
        .flat_map(|r| (0..opts.seeds as u64).map(move |s| (r, s)))
        .collect();
    let queue = Mutex::new(jobs.into_iter());
    let results = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..opts.threads.max(1) {
            scope.spawn(|| loop {
                let Some((r, seed)) = queue.lock().expect("queue").next() else {
                    break;
                };
                let cfg = protocol.config(protocol.rows[r].0, seed, opts);
                let cell = match run_or_load(&cfg) {
                    Ok(run) if run.report.failure.is_none() => Cell {
                        seed,
                        rmse: Some(run.report.eval.rmse),
                        contact_accuracy: run.report.eval.contact_accuracy,
                        error: None,
                    },
                    Ok(run) => Cell {
                        seed,
                        rmse: None,
                        contact_accuracy: None,
                        error: run.report.failure,
                    },
                    Err(e) => Cell {
                        seed,
                        rmse: None,
                        contact_accuracy: None,
                        error: Some(e.to_string()),
                    },
                };
                results.lock().expect("results").push((r, cell));
            });
        }
    });
    let mut cells = results.into_inner().expect("results");
    cells.sort_by_key(|(r, c)| (*r, c.seed));
    let rows = protocol
        .rows
        .iter()
        .enumerate()
        .map(|(i, &(model, reference))| Row {
            model,
            reference,
            cells: cells.iter().filter(|(r, _)| *r == i).map(|(_, c)| c.clone()).collect(),
        })
        .collect();
    TableResult { table, rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_names_round_trip() {
        for t in Table::ALL {
            assert_eq!(t.as_str().parse::<Table>().unwrap(), t);
        }
        assert!("table9".parse::<Table>().is_err());
    }

    #[test]
    fn statistics() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert!((se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(mean_se(&[]), None);
    }

    #[test]
    fn protocols_follow_table_settings() {
        let opts = ReproduceOptions::default();
        let p = Table::BallTable1.protocol();
        let cfg = p.config(ModelKind::Cdl, 3, &opts);
        assert_eq!((cfg.trajectories, cfg.seed, cfg.train.seed, cfg.train.epochs), (40, 3, 3, 2000));
        let e = Table::BallElastic.protocol().config(ModelKind::Cdl, 0, &opts);
        assert_eq!(e.spec().elasticity, 0.7);
        let e8 = Table::BallElastic.protocol().config(
            ModelKind::Cdl,
            0,
            &ReproduceOptions {
                elasticity: Some(0.8),
                ..ReproduceOptions::default()
            },
        );
        assert_eq!(e8.spec().elasticity, 0.8);
        let c = Table::CradleNoTouch.protocol().config(ModelKind::CdlNoTouch, 0, &opts);
        assert_eq!(c.sigma, 0.02);
    }
}
