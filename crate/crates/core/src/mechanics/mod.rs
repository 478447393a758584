//! Scene descriptions, contact geometry and the contact operators.

mod data;
mod trajectory;

use std::fmt;
use std::str::FromStr;

use cdl_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

pub use data::{
    add_noise, check_kkt, generate_from, generate_ground_truth, generate_with_records,
    initial_state, make_dataset, Dataset, KktKind, KktReport, KktViolation, Windowing,
};
pub use trajectory::{ContactSignal, StaggeredState, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    Pendulum,
    #[serde(alias = "ball")]
    BouncingBall,
    #[serde(alias = "cradle")]
    NewtonsCradle,
}

impl SceneKind {
    pub const ALL: [SceneKind; 3] = [
        SceneKind::Pendulum,
        SceneKind::BouncingBall,
        SceneKind::NewtonsCradle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SceneKind::Pendulum => "pendulum",
            SceneKind::BouncingBall => "bouncing-ball",
            SceneKind::NewtonsCradle => "newtons-cradle",
        }
    }

    pub fn has_contacts(self) -> bool {
        self != SceneKind::Pendulum
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SceneKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(SceneKind::Pendulum),
            "ball" | "bouncing-ball" => Ok(SceneKind::BouncingBall),
            "cradle" | "newtons-cradle" => Ok(SceneKind::NewtonsCradle),
            other => Err(CoreError::Config(format!("unknown scene `{other}`"))),
        }
    }
}

/// Switches for the contact step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegratorOptions {
    /// Closest-point projection on steps where an impulse fired.
    pub projection: bool,
    /// Skip impulses for constraints whose gap is not closing.
    pub approach_guard: bool,
    /// Advance positions by h/2 instead of h.
    pub half_step_position: bool,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            projection: false,
            approach_guard: true,
            half_step_position: false,
        }
    }
}

/// Immutable description of a rigid-body scene.
///
/// Coordinates are laid out body-major: body `k` owns entries
/// `k*dim .. (k+1)*dim`. Only `dim = 1` scenes are supported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub scene: SceneKind,
    pub bodies: usize,
    pub dim: usize,
    pub masses: Vec<f64>,
    pub elasticity: f64,
    pub gravity: f64,
    pub h: f64,
    pub floor: f64,
    pub rod_length: f64,
    pub q0: Vec<f64>,
    pub qdot0: Vec<f64>,
    pub options: IntegratorOptions,
}

/// A linear gap `g(Q) = grad . Q - offset` shared by the listed bodies.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub bodies: Vec<usize>,
    pub grad: Vec<f64>,
    pub offset: f64,
}

impl Constraint {
    pub fn gap(&self, q: &[f64]) -> f64 {
        dot(&self.grad, q) - self.offset
    }

    /// Time derivative of the gap for velocity `qdot`.
    pub fn rate(&self, qdot: &[f64]) -> f64 {
        dot(&self.grad, qdot)
    }

    /// `grad^T M^-1 grad`, the inverse effective mass along the normal.
    pub fn weight(&self, inv_inertia: &[f64]) -> f64 {
        self.grad
            .iter()
            .zip(inv_inertia)
            .map(|(a, w)| a * a * w)
            .sum()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl SystemSpec {
    pub fn pendulum() -> Self {
        Self {
            scene: SceneKind::Pendulum,
            bodies: 1,
            dim: 1,
            masses: vec![1.0],
            elasticity: 1.0,
            gravity: 9.81,
            h: 0.02,
            floor: 0.0,
            rod_length: 1.0,
            q0: vec![1.0],
            qdot0: vec![0.0],
            options: IntegratorOptions::default(),
        }
    }

    pub fn bouncing_ball() -> Self {
        Self {
            scene: SceneKind::BouncingBall,
            q0: vec![10.0],
            ..Self::pendulum()
        }
    }

    pub fn newtons_cradle() -> Self {
        Self {
            scene: SceneKind::NewtonsCradle,
            bodies: 2,
            masses: vec![1.0, 1.0],
            q0: vec![0.0, 0.0],
            qdot0: vec![2.0, 0.0],
            options: IntegratorOptions {
                projection: true,
                ..IntegratorOptions::default()
            },
            ..Self::pendulum()
        }
    }

    pub fn for_scene(scene: SceneKind) -> Self {
        match scene {
            SceneKind::Pendulum => Self::pendulum(),
            SceneKind::BouncingBall => Self::bouncing_ball(),
            SceneKind::NewtonsCradle => Self::newtons_cradle(),
        }
    }

    pub fn with_elasticity(mut self, e: f64) -> Self {
        self.elasticity = e;
        self
    }

    pub fn with_step(mut self, h: f64) -> Self {
        self.h = h;
        self
    }

    pub fn with_projection(mut self, on: bool) -> Self {
        self.options.projection = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CoreError::Config(msg));
        let expected_bodies = match self.scene {
            SceneKind::Pendulum | SceneKind::BouncingBall => 1,
            SceneKind::NewtonsCradle => 2,
        };
        if self.bodies != expected_bodies {
            return bad(format!("{} needs {expected_bodies} bodies, got {}", self.scene, self.bodies));
        }
        if self.dim != 1 {
            return bad(format!("only dim = 1 is supported, got {}", self.dim));
        }
        if self.masses.len() != self.bodies {
            return bad(format!("{} masses for {} bodies", self.masses.len(), self.bodies));
        }
        if let Some(m) = self.masses.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return bad(format!("mass must be positive, got {m}"));
        }
        if !(0.0..=1.0).contains(&self.elasticity) {
            return bad(format!("elasticity must lie in [0, 1], got {}", self.elasticity));
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            return bad(format!("step must be positive, got {}", self.h));
        }
        if !self.gravity.is_finite() || !self.floor.is_finite() {
            return bad("gravity and floor must be finite".into());
        }
        if !(self.rod_length.is_finite() && self.rod_length > 0.0) {
            return bad(format!("rod length must be positive, got {}", self.rod_length));
        }
        let n = self.state_dim();
        if self.q0.len() != n || self.qdot0.len() != n {
            return bad(format!("initial state must have {n} entries"));
        }
        if self.q0.iter().chain(&self.qdot0).any(|x| !x.is_finite()) {
            return bad("initial state must be finite".into());
        }
        Ok(())
    }

    /// Number of generalised coordinates, `K * d`.
    pub fn state_dim(&self) -> usize {
        self.bodies * self.dim
    }

    fn uses_angles(&self) -> bool {
        self.scene != SceneKind::BouncingBall
    }

    /// Diagonal of the mass matrix per coordinate.
    pub fn inertia(&self) -> Vec<f64> {
        let l2 = if self.uses_angles() {
            self.rod_length * self.rod_length
        } else {
            1.0
        };
        self.masses
            .iter()
            .flat_map(|&m| std::iter::repeat_n(m * l2, self.dim))
            .collect()
    }

    pub fn inv_inertia(&self) -> Vec<f64> {
        self.inertia().iter().map(|m| 1.0 / m).collect()
    }

    /// Per-body diagonal of the mass matrix (`dim = 1`).
    pub fn body_inertia(&self) -> Vec<f64> {
        self.inertia().iter().step_by(self.dim).copied().collect()
    }

    pub fn potential(&self, q: &[f64]) -> f64 {
        let (g, l) = (self.gravity, self.rod_length);
        match self.scene {
            SceneKind::BouncingBall => self.masses[0] * g * q[0],
            _ => self
                .masses
                .iter()
                .zip(q)
                .map(|(m, th)| m * g * l * (1.0 - th.cos()))
                .sum(),
        }
    }

    /// `-dV/dQ` of the true potential.
    pub fn force(&self, q: &[f64]) -> Vec<f64> {
        let (g, l) = (self.gravity, self.rod_length);
        match self.scene {
            SceneKind::BouncingBall => vec![-self.masses[0] * g],
            _ => self
                .masses
                .iter()
                .zip(q)
                .map(|(m, th)| -m * g * l * th.sin())
                .collect(),
        }
    }

    /// Body-body contact pairs.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        match self.scene {
            SceneKind::NewtonsCradle => vec![(0, 1)],
            _ => Vec::new(),
        }
    }

    /// The scene's gap functions. The cradle gap `q2 - q1` is positive
    /// while ball 1 hangs behind ball 2.
    pub fn constraints(&self) -> Vec<Constraint> {
        match self.scene {
            SceneKind::Pendulum => Vec::new(),
            SceneKind::BouncingBall => vec![Constraint {
                bodies: vec![0],
                grad: vec![1.0],
                offset: self.floor,
            }],
            SceneKind::NewtonsCradle => vec![Constraint {
                bodies: vec![0, 1],
                grad: vec![-1.0, 1.0],
                offset: 0.0,
            }],
        }
    }

    pub fn energy(&self, q: &[f64], qdot: &[f64]) -> f64 {
        energy(self, q, qdot)
    }
}

/// Signed distance per body; `+inf` for bodies without contacts.
pub fn gap(spec: &SystemSpec, q: &[f64]) -> Vec<f64> {
    let mut out = vec![f64::INFINITY; spec.bodies];
    for c in spec.constraints() {
        let g = c.gap(q);
        for &b in &c.bodies {
            out[b] = out[b].min(g);
        }
    }
    out
}

/// Per-body unit normals as a `K x d` matrix. Scene-determined and
/// position independent in the supported scenes.
#[allow(non_snake_case)]
pub fn build_L(spec: &SystemSpec, _q: &[f64]) -> Tensor {
    match spec.scene {
        SceneKind::Pendulum => Tensor::new(0, spec.dim, Vec::new()),
        SceneKind::BouncingBall => Tensor::new(1, 1, vec![1.0]),
        SceneKind::NewtonsCradle => Tensor::new(2, 1, vec![1.0, -1.0]),
    }
}

/// Contact incidence matrix for the active flags.
#[allow(non_snake_case)]
pub fn build_A(c: &ContactSignal, pairs: &[(usize, usize)]) -> Result<Tensor> {
    let k = c.len();
    let mut a = Tensor::zeros(k, k);
    for (i, &on) in c.0.iter().enumerate() {
        if on {
            a.data[i * k + i] = -1.0;
        }
    }
    for &(i, j) in pairs {
        match (c.0[i], c.0[j]) {
            (true, true) => {
                a.data[i * k + j] = 1.0;
                a.data[j * k + i] = 1.0;
            }
            (false, false) => {}
            _ => return Err(CoreError::InconsistentPair(i, j)),
        }
    }
    Ok(a)
}

/// Element-wise reciprocal of the non-zero entries of `A M^-1 A^T`.
#[allow(non_snake_case)]
pub fn build_H(a: &Tensor, body_inertia: &[f64]) -> Result<Tensor> {
    let k = a.rows;
    let mut h = Tensor::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let s: f64 = (0..k).map(|l| a.get(i, l) * a.get(j, l) / body_inertia[l]).sum();
            if s != 0.0 {
                h.data[i * k + j] = 1.0 / s;
            }
        }
        let active = a.get(i, i) != 0.0;
        if active && (0..k).all(|j| h.get(i, j) == 0.0) {
            return Err(CoreError::DegenerateContact(i));
        }
    }
    Ok(h)
}

/// Kinetic `1/2 Qdot^T M Qdot` plus the scene potential.
pub fn energy(spec: &SystemSpec, q: &[f64], qdot: &[f64]) -> f64 {
    let kinetic: f64 = spec
        .inertia()
        .iter()
        .zip(qdot)
        .map(|(m, v)| 0.5 * m * v * v)
        .sum();
    kinetic + spec.potential(q)
}

/// Energy at interior states using the synchronous velocity estimate
/// `(Qdot_{n-1/2} + Qdot_{n+1/2}) / 2`.
///
/// States reached through an impulse are skipped, since the average
/// straddles the velocity jump there. Returns `(state index, energy)`.
pub fn synchronous_energy(spec: &SystemSpec, traj: &Trajectory) -> Vec<(usize, f64)> {
    (1..traj.len())
        .filter(|&i| !traj.contacts[i].any())
        .map(|i| {
            let v: Vec<f64> = traj.states[i - 1]
                .qdot
                .iter()
                .zip(&traj.states[i].qdot)
                .map(|(a, b)| 0.5 * (a + b))
                .collect();
            (i, energy(spec, &traj.states[i].q, &v))
        })
        .collect()
}
