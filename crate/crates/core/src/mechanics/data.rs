//! Ground-truth generation, noisy datasets and contact diagnostics.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::trajectory::csv_header;
use super::{ContactSignal, StaggeredState, SystemSpec, Trajectory};
use crate::integrators::{cdl_step, GapContacts, ImpulseRecord, StepContext, TrueForce};
use crate::{CoreError, Result};

/// Initial staggered state: `Qdot_{1/2} = Qdot_0 + h/2 M^-1 F(Q_0)`.
pub fn initial_state(spec: &SystemSpec, q0: &[f64], qdot0: &[f64]) -> StaggeredState {
    let f = spec.force(q0);
    let inv = spec.inv_inertia();
    let qdot = qdot0
        .iter()
        .zip(&f)
        .zip(&inv)
        .map(|((v, f), w)| v + 0.5 * spec.h * w * f)
        .collect();
    StaggeredState::new(q0.to_vec(), qdot, 0)
}

/// Noiseless rollout of the true dynamics from the scene's initial
/// conditions, `steps` states long.
pub fn generate_ground_truth(spec: &SystemSpec, steps: usize) -> Result<Trajectory> {
    generate_from(spec, &spec.q0, &spec.qdot0, steps)
}

pub fn generate_from(spec: &SystemSpec, q0: &[f64], qdot0: &[f64], steps: usize) -> Result<Trajectory> {
    generate_with_records(spec, q0, qdot0, steps).map(|(t, _)| t)
}

/// As [`generate_from`], also returning the impulse record of every step.
pub fn generate_with_records(
    spec: &SystemSpec,
    q0: &[f64],
    qdot0: &[f64],
    steps: usize,
) -> Result<(Trajectory, Vec<ImpulseRecord>)> {
    spec.validate()?;
    if steps < 2 {
        return Err(CoreError::Config(format!("need at least 2 steps, got {steps}")));
    }
    let force = TrueForce(spec);
    let contacts = GapContacts(spec);
    let ctx = StepContext::new(spec, &force, &contacts);
    let mut state = initial_state(spec, q0, qdot0);
    let mut traj = Trajectory {
        states: Vec::with_capacity(steps),
        contacts: Vec::with_capacity(steps),
        h: spec.h,
        sigma: 0.0,
        seed: 0,
    };
    traj.states.push(state.clone());
    traj.contacts.push(ContactSignal::none(spec.bodies));
    let mut records = Vec::with_capacity(steps - 1);
    for _ in 1..steps {
        let (next, rec) = cdl_step(&state, &ctx).map_err(|e| match e {
            CoreError::NonFinite { step, .. } => CoreError::BlowUp(step),
            other => other,
        })?;
        traj.states.push(next.clone());
        traj.contacts.push(rec.signal());
        records.push(rec);
        state = next;
    }
    Ok((traj, records))
}

/// How the J training windows are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Windowing {
    /// Consecutive slices of one long rollout.
    Sliced,
    /// One short rollout per window from Gaussian-perturbed initial
    /// conditions.
    Jittered { std: f64 },
}

/// Gaussian noise of standard deviation `sigma` on every position and
/// velocity; contact flags are copied.
pub fn add_noise(traj: &Trajectory, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Trajectory> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(CoreError::Config(format!("noise std must be >= 0, got {sigma}")));
    }
    let mut out = traj.clone();
    out.sigma = sigma;
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("valid std");
        for st in &mut out.states {
            for x in st.q.iter_mut().chain(st.qdot.iter_mut()) {
                *x += normal.sample(rng);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub spec: SystemSpec,
    pub h: f64,
    pub sigma: f64,
    pub seed: u64,
    pub windowing: Windowing,
    pub trajectories: Vec<Trajectory>,
    /// The noiseless windows behind `trajectories`.
    pub ground_truth: Vec<Trajectory>,
}

const JITTER_STREAM: u64 = 0x6a09_e667_f3bc_c908;

/// J windows of N points with i.i.d. Gaussian noise, deterministic in `seed`.
pub fn make_dataset(
    spec: &SystemSpec,
    j: usize,
    n: usize,
    sigma: f64,
    seed: u64,
    windowing: Windowing,
) -> Result<Dataset> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(CoreError::Config(format!("noise std must be >= 0, got {sigma}")));
    }
    if j == 0 || n < 2 {
        return Err(CoreError::Config(format!("need J >= 1 and N >= 2, got J={j}, N={n}")));
    }
    let mut clean: Vec<Trajectory> = match windowing {
        Windowing::Sliced => {
            let long = generate_ground_truth(spec, j * n)?;
            (0..j).map(|i| long.window(i * n, n)).collect()
        }
        Windowing::Jittered { std } => {
            let normal = Normal::new(0.0, std)
                .map_err(|_| CoreError::Config(format!("jitter std must be >= 0, got {std}")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ JITTER_STREAM);
            (0..j)
                .map(|_| {
                    let q0: Vec<f64> = spec.q0.iter().map(|x| x + normal.sample(&mut rng)).collect();
                    let v0: Vec<f64> = spec.qdot0.iter().map(|x| x + normal.sample(&mut rng)).collect();
                    generate_from(spec, &q0, &v0, n)
                })
                .collect::<Result<_>>()?
        }
    };
    clean.iter_mut().for_each(|t| t.seed = seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajectories = Vec::with_capacity(j);
    for t in &clean {
        trajectories.push(add_noise(t, sigma, &mut rng)?);
    }
    Ok(Dataset {
        spec: spec.clone(),
        h: spec.h,
        sigma,
        seed,
        windowing,
        trajectories,
        ground_truth: clean,
    })
}

impl Dataset {
    pub fn points(&self) -> usize {
        self.trajectories.first().map_or(0, Trajectory::len)
    }

    pub fn contact_events(&self) -> usize {
        self.trajectories.iter().map(Trajectory::contact_events).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut ds: Dataset = serde_json::from_str(text)?;
        ds.spec.validate()?;
        let (h, sigma, seed) = (ds.h, ds.sigma, ds.seed);
        for t in &mut ds.trajectories {
            (t.h, t.sigma, t.seed) = (h, sigma, seed);
        }
        for t in &mut ds.ground_truth {
            (t.h, t.sigma, t.seed) = (h, 0.0, seed);
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// All noisy windows in one CSV; `t` identifies the window position.
    pub fn to_csv(&self) -> String {
        let mut out = csv_header(self.spec.state_dim(), self.spec.bodies);
        for t in &self.trajectories {
            t.append_csv_rows(&mut out);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KktKind {
    NegativeMultiplier,
    Complementarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktViolation {
    pub step: usize,
    pub body: usize,
    pub kind: KktKind,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KktReport {
    pub violations: Vec<KktViolation>,
    /// Largest `-g` over all steps, 0 when nothing interpenetrates.
    pub max_penetration: f64,
}

impl KktReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `lambda >= 0` and `|g * lambda| <= tol` per step and body.
pub fn check_kkt(gaps: &[Vec<f64>], lambdas: &[Vec<f64>], tol: f64) -> KktReport {
    let mut report = KktReport::default();
    for (step, (g, l)) in gaps.iter().zip(lambdas).enumerate() {
        for (body, (&g, &l)) in g.iter().zip(l).enumerate() {
            if g.is_finite() {
                report.max_penetration = report.max_penetration.max(-g);
            }
            if l < -tol {
                report.violations.push(KktViolation {
                    step,
                    body,
                    kind: KktKind::NegativeMultiplier,
                });
            } else if l != 0.0 && (g * l).abs() > tol {
                report.violations.push(KktViolation {
                    step,
                    body,
                    kind: KktKind::Complementarity,
                });
            }
        }
    }
    report
}
