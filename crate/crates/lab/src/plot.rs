//! Line charts written as SVG, with the plotted numbers alongside as CSV.
//!
//! Every polyline carries its data points in a `data-points` attribute
//! formatted exactly as in the CSV.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cdl_core::mechanics::{synchronous_energy, SceneKind, SystemSpec, Trajectory};
use cdl_core::models::Model;

use crate::runner::{forecast, load_checkpoint, load_config};
use crate::LabError;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Draw as a step function (for binary signals).
    pub step: bool,
}

impl Chart {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
            step: false,
        }
    }

    pub fn with_series(mut self, name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        self.series.push(Series {
            name: name.into(),
            points: points.into_iter().filter(|(x, y)| x.is_finite() && y.is_finite()).collect(),
        });
        self
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let pts = self.series.iter().flat_map(|s| s.points.iter());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            return (0.0, 1.0, 0.0, 1.0);
        }
        let pad = |lo: f64, hi: f64| if hi - lo < 1e-12 { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        (x0, x1, y0, y1)
    }

    pub fn to_svg(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
        let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(
            s,
            r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#
        );
        for (v, anchor_x, anchor_y, align) in [
            (x0, l, b + 15.0, "start"),
            (x1, r, b + 15.0, "end"),
        ] {
            let _ = writeln!(s, r#"<text x="{anchor_x}" y="{anchor_y}" text-anchor="{align}">{}</text>"#, tick(v));
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, l - 4.0, b, tick(y0));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, l - 4.0, t + 4.0, tick(y1));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(&self.y_label)
        );
        for (i, series) in self.series.iter().enumerate() {
            let colour = COLOURS[i % COLOURS.len()];
            let mut path = String::new();
            let mut prev: Option<(f64, f64)> = None;
            for &(x, y) in &series.points {
                match prev {
                    None => {
                        let _ = write!(path, "M{:.2} {:.2}", px(x), py(y));
                    }
                    Some((_, py_prev)) if self.step => {
                        let _ = write!(path, " L{:.2} {:.2} L{:.2} {:.2}", px(x), py_prev, px(x), py(y));
                    }
                    Some(_) => {
                        let _ = write!(path, " L{:.2} {:.2}", px(x), py(y));
                    }
                }
                prev = Some((x, py(y)));
            }
            let data: Vec<String> = series.points.iter().map(|(x, y)| format!("{x}:{y}")).collect();
            let _ = writeln!(
                s,
                r#"<path d="{path}" fill="none" stroke="{colour}" stroke-width="1.5" data-series="{}" data-points="{}"/>"#,
                escape(&series.name),
                data.join(" ")
            );
            let ly = MARGIN + 16.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{ly}" fill="{colour}" text-anchor="end">{}</text>"#,
                WIDTH - MARGIN,
                escape(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }

    /// Long format: `series,x,y`.
    pub fn to_csv(&self) -> String {
        let mut out = format!("series,{},{}\n", csv_field(&self.x_label), csv_field(&self.y_label));
        for series in &self.series {
            for (x, y) in &series.points {
                let _ = writeln!(out, "{},{x},{y}", csv_field(&series.name));
            }
        }
        out
    }

    /// Writes `<stem>.svg` and `<stem>.csv` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>, LabError> {
        std::fs::create_dir_all(dir)?;
        let svg = dir.join(format!("{stem}.svg"));
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&svg, self.to_svg())?;
        std::fs::write(&csv, self.to_csv())?;
        Ok(vec![svg, csv])
    }
}

fn tick(v: f64) -> String {
    format!("{v:.3}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn csv_field(s: &str) -> String {
    s.replace(',', ";")
}

/// Probe points for potential gradients: each entry is the point, the
/// component of interest and its coordinate along the probe line.
pub fn probe_lines(scene: SceneKind) -> Vec<(Vec<f64>, usize, f64)> {
    let line = |lo: f64, hi: f64, n: usize| (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64);
    match scene {
        SceneKind::Pendulum => line(-std::f64::consts::PI, std::f64::consts::PI, 101)
            .map(|q| (vec![q], 0, q))
            .collect(),
        SceneKind::BouncingBall => line(0.0, 10.0, 101).map(|q| (vec![q], 0, q)).collect(),
        // The two balls only visit the lines where the other one hangs at rest.
        SceneKind::NewtonsCradle => line(-0.8, 0.0, 81)
            .map(|q| (vec![q, 0.0], 0, q))
            .chain(line(0.0, 0.8, 81).map(|q| (vec![0.0, q], 1, q)))
            .collect(),
    }
}

/// Probe points alone, for gradient-norm summaries.
pub fn probe_points(scene: SceneKind) -> Vec<Vec<f64>> {
    probe_lines(scene).into_iter().map(|(q, _, _)| q).collect()
}

pub fn phase_chart(truth: &Trajectory, runs: &[(String, Trajectory)], dim: usize) -> Chart {
    let mut chart = Chart::new("phase space", "q", "qdot");
    for k in 0..dim {
        let pts = |t: &Trajectory| t.states.iter().map(|s| (s.q[k], s.qdot[k])).collect();
        chart = chart.with_series(format!("ground truth q{}", k + 1), pts(truth));
        for (name, t) in runs {
            chart = chart.with_series(format!("{name} q{}", k + 1), pts(t));
        }
    }
    chart
}

pub fn energy_chart(spec: &SystemSpec, truth: &Trajectory, runs: &[(String, Trajectory)]) -> Chart {
    let h = spec.h;
    let series = |t: &Trajectory| {
        synchronous_energy(spec, t)
            .into_iter()
            .map(|(n, e)| (n as f64 * h, e))
            .collect()
    };
    let mut chart = Chart::new("energy", "t [s]", "E").with_series("ground truth", series(truth));
    for (name, t) in runs {
        chart = chart.with_series(name.clone(), series(t));
    }
    chart
}

/// Learned `dV/dq` along the probe lines next to the true gradient.
pub fn gradient_chart(spec: &SystemSpec, runs: &[(String, &Model)]) -> Result<Option<Chart>, LabError> {
    let probes = probe_lines(spec.scene);
    let dim = spec.state_dim();
    let mut chart = Chart::new("potential gradient", "q", "dV/dq");
    let mut any = false;
    for k in 0..dim {
        let on_line: Vec<&(Vec<f64>, usize, f64)> =
            probes.iter().filter(|(_, c, _)| *c == k).collect();
        let truth = on_line.iter().map(|(q, _, x)| (*x, -spec.force(q)[k])).collect();
        chart = chart.with_series(format!("true dV/dq{}", k + 1), truth);
        for (name, model) in runs {
            if let Some(pot) = model.potential() {
                any = true;
                let mut pts = Vec::with_capacity(on_line.len());
                for (q, _, x) in &on_line {
                    pts.push((*x, pot.input_gradient(q).map_err(cdl_core::CoreError::from)?[k]));
                }
                chart = chart.with_series(format!("{name} dV/dq{}", k + 1), pts);
            }
        }
    }
    Ok(any.then_some(chart))
}

/// Contact probabilities along an observed trajectory with the observed flags.
pub fn contact_chart(spec: &SystemSpec, observed: &Trajectory, runs: &[(String, &Model)]) -> Option<Chart> {
    let mut chart = Chart::new("contact function", "t [s]", "p(contact)");
    chart.step = true;
    let mut any = false;
    let h = spec.h;
    for k in 0..spec.bodies {
        let obs = observed
            .contacts
            .iter()
            .enumerate()
            .map(|(n, c)| (n as f64 * h, if c.0[k] { 1.0 } else { 0.0 }))
            .collect();
        chart = chart.with_series(format!("observed c{}", k + 1), obs);
        for (name, model) in runs {
            if let Some(probs) = model.contact_probabilities(observed) {
                any = true;
                let pts = probs.iter().enumerate().map(|(i, p)| ((i + 1) as f64 * h, p[k])).collect();
                chart = chart.with_series(format!("{name} p{}", k + 1), pts);
            }
        }
    }
    any.then_some(chart)
}

/// Renders every chart for one or more stored runs of the same scene.
pub fn plot_runs(run_dirs: &[PathBuf], dest: &Path) -> Result<Vec<PathBuf>, LabError> {
    if run_dirs.is_empty() {
        return Err(LabError::Config("no run directories given".into()));
    }
    let mut configs = Vec::new();
    let mut models = Vec::new();
    for dir in run_dirs {
        let cfg = load_config(dir)?;
        let model = load_checkpoint(&dir.join("checkpoint.json"))?;
        configs.push(cfg);
        models.push(model);
    }
    let first = &configs[0];
    if configs.iter().any(|c| c.scene != first.scene) {
        return Err(LabError::Input("runs belong to different scenes".into()));
    }
    let spec = first.spec();
    let mut forecasts = Vec::new();
    let mut test = None;
    for (cfg, model) in configs.iter().zip(&models) {
        let (case, traj) = forecast(model, cfg)?;
        forecasts.push((cfg.model.to_string(), traj));
        test.get_or_insert(case);
    }
    let test = test.expect("at least one run");
    let named: Vec<(String, &Model)> = configs.iter().map(|c| c.model.to_string()).zip(&models).collect();
    let mut written = Vec::new();
    written.extend(phase_chart(&test.ground_truth, &forecasts, spec.state_dim()).save(dest, "phase")?);
    written.extend(energy_chart(&spec, &test.ground_truth, &forecasts).save(dest, "energy")?);
    if let Some(c) = gradient_chart(&spec, &named)? {
        written.extend(c.save(dest, "potential_gradient")?);
    }
    if let Some(c) = contact_chart(&spec, &test.observed, &named) {
        written.extend(c.save(dest, "contact")?);
    }
    Ok(written)
}
