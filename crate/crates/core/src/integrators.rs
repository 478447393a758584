//! The CD-Lagrange contact step, closest-point projection, velocity Verlet
//! and rollouts.

use cdl_autodiff::Tensor;

use crate::mechanics::{
    build_A, build_H, build_L, ContactSignal, StaggeredState, SystemSpec, Trajectory,
};
use crate::{Component, CoreError, Result};

/// Rollouts stop once any state component exceeds this magnitude.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

pub trait ForceProvider {
    /// Generalised force at positions `q`.
    fn force(&self, q: &[f64]) -> Vec<f64>;
}

pub trait ContactProvider {
    /// Contact flags for the step producing state index `step`, queried at
    /// the new positions and the pre-step velocity.
    fn flags(&self, step: usize, q: &[f64], qdot_prev: &[f64]) -> Vec<bool>;
}

/// Gradient of the scene's analytic potential.
pub struct TrueForce<'a>(pub &'a SystemSpec);

impl ForceProvider for TrueForce<'_> {
    fn force(&self, q: &[f64]) -> Vec<f64> {
        self.0.force(q)
    }
}

pub struct ZeroForce;

impl ForceProvider for ZeroForce {
    fn force(&self, q: &[f64]) -> Vec<f64> {
        vec![0.0; q.len()]
    }
}

impl<F: Fn(&[f64]) -> Vec<f64>> ForceProvider for F {
    fn force(&self, q: &[f64]) -> Vec<f64> {
        self(q)
    }
}

/// Exact detection: a body is in contact when its gap is `<= 0`.
pub struct GapContacts<'a>(pub &'a SystemSpec);

impl ContactProvider for GapContacts<'_> {
    fn flags(&self, _step: usize, q: &[f64], _qdot_prev: &[f64]) -> Vec<bool> {
        crate::mechanics::gap(self.0, q).iter().map(|&g| g <= 0.0).collect()
    }
}

/// Replays recorded signals, indexed by absolute state index minus `start`.
pub struct RecordedContacts<'a> {
    pub signals: &'a [ContactSignal],
    pub start: usize,
}

impl ContactProvider for RecordedContacts<'_> {
    fn flags(&self, step: usize, q: &[f64], _qdot_prev: &[f64]) -> Vec<bool> {
        step.checked_sub(self.start)
            .and_then(|i| self.signals.get(i))
            .map_or_else(|| vec![false; q.len()], |c| c.0.clone())
    }
}

pub struct NoContacts;

impl ContactProvider for NoContacts {
    fn flags(&self, _step: usize, q: &[f64], _qdot_prev: &[f64]) -> Vec<bool> {
        vec![false; q.len()]
    }
}

pub struct StepContext<'a> {
    pub spec: &'a SystemSpec,
    pub force: &'a dyn ForceProvider,
    pub contacts: &'a dyn ContactProvider,
}

impl<'a> StepContext<'a> {
    pub fn new(
        spec: &'a SystemSpec,
        force: &'a dyn ForceProvider,
        contacts: &'a dyn ContactProvider,
    ) -> Self {
        Self {
            spec,
            force,
            contacts,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContactWarning {
    /// A flag was set but the gap was opening; no impulse applied.
    Separating { constraint: usize, rate: f64 },
    /// Only some bodies of a pair reported contact; the pair fired anyway.
    PairMismatch { bodies: Vec<usize> },
}

/// Linear map from velocities to the contact velocity change:
/// `dQdot = c_prev * Qdot_{n+1/2} + c_smooth * Qdot^S`.
///
/// Which constraints fire is decided once from plain values, so the same
/// operator can be replayed on an autodiff tape.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseOperator {
    pub c_prev: Tensor,
    pub c_smooth: Tensor,
    /// Indices into `SystemSpec::constraints`.
    pub fired: Vec<usize>,
    /// Per body.
    pub applied: Vec<bool>,
    pub warnings: Vec<ContactWarning>,
}

impl ImpulseOperator {
    pub fn is_zero(&self) -> bool {
        self.fired.is_empty()
    }

    pub fn apply(&self, qdot_prev: &[f64], qdot_smooth: &[f64]) -> Vec<f64> {
        let a = self.c_prev.matvec(qdot_prev);
        let b = self.c_smooth.matvec(qdot_smooth);
        a.iter().zip(&b).map(|(x, y)| x + y).collect()
    }
}

/// Builds the impulse operator for the given flags.
///
/// Each firing constraint with gap gradient `a` enforces the restitution law
/// `a . Qdot_{n+3/2} = -e a . Qdot_{n+1/2}` with an impulse along `M^-1 a`,
/// which conserves momentum for pairs.
pub fn impulse_operator(spec: &SystemSpec, flags: &[bool], qdot_prev: &[f64]) -> ImpulseOperator {
    let d = spec.state_dim();
    let inv = spec.inv_inertia();
    let e = spec.elasticity;
    let mut op = ImpulseOperator {
        c_prev: Tensor::zeros(d, d),
        c_smooth: Tensor::zeros(d, d),
        fired: Vec::new(),
        applied: vec![false; spec.bodies],
        warnings: Vec::new(),
    };
    for (ci, c) in spec.constraints().iter().enumerate() {
        let set = c.bodies.iter().filter(|&&b| flags[b]).count();
        if set == 0 {
            continue;
        }
        if set < c.bodies.len() {
            op.warnings.push(ContactWarning::PairMismatch {
                bodies: c.bodies.clone(),
            });
        }
        let rate = c.rate(qdot_prev);
        if spec.options.approach_guard && rate >= 0.0 {
            op.warnings.push(ContactWarning::Separating { constraint: ci, rate });
            continue;
        }
        let w = c.weight(&inv);
        for r in 0..d {
            for col in 0..d {
                let coef = inv[r] * c.grad[r] * c.grad[col] / w;
                op.c_prev.data[r * d + col] -= e * coef;
                op.c_smooth.data[r * d + col] -= coef;
            }
        }
        op.fired.push(ci);
        for &b in &c.bodies {
            op.applied[b] = true;
        }
    }
    op
}

/// Impulses acting during one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseRecord {
    /// Contact multiplier per body, positive when pushing the gap open.
    pub lambda: Vec<f64>,
    /// Momentum change per coordinate.
    pub impulse: Vec<f64>,
    pub applied: Vec<bool>,
    pub warnings: Vec<ContactWarning>,
}

impl ImpulseRecord {
    pub fn any(&self) -> bool {
        self.applied.iter().any(|&a| a)
    }

    pub fn signal(&self) -> ContactSignal {
        ContactSignal(self.applied.clone())
    }
}

pub fn resolve_impulse(
    spec: &SystemSpec,
    qdot_smooth: &[f64],
    qdot_prev: &[f64],
    flags: &[bool],
) -> ImpulseRecord {
    let op = impulse_operator(spec, flags, qdot_prev);
    record_from(spec, &op, qdot_smooth, qdot_prev)
}

fn record_from(
    spec: &SystemSpec,
    op: &ImpulseOperator,
    qdot_smooth: &[f64],
    qdot_prev: &[f64],
) -> ImpulseRecord {
    let inertia = spec.inertia();
    let dv = op.apply(qdot_prev, qdot_smooth);
    let impulse = dv.iter().zip(&inertia).map(|(v, m)| v * m).collect();
    let inv = spec.inv_inertia();
    let constraints = spec.constraints();
    let mut lambda = vec![0.0; spec.bodies];
    for &ci in &op.fired {
        let c = &constraints[ci];
        let p = -(spec.elasticity * c.rate(qdot_prev) + c.rate(qdot_smooth)) / c.weight(&inv);
        for &b in &c.bodies {
            lambda[b] = p;
        }
    }
    ImpulseRecord {
        lambda,
        impulse,
        applied: op.applied.clone(),
        warnings: op.warnings.clone(),
    }
}

/// Independent impulse route through the operators `L`, `A` and `H`:
/// `I^k = -L^k [H (e Qdot_{n+1/2} + Qdot^S) L^T]_kk` for `dim = 1`.
///
/// `active` must already include the approach guard.
pub fn resolve_impulse_lah(
    spec: &SystemSpec,
    q: &[f64],
    qdot_smooth: &[f64],
    qdot_prev: &[f64],
    active: &[bool],
) -> Result<Vec<f64>> {
    let a = build_A(&ContactSignal(active.to_vec()), &spec.pairs())?;
    let h = build_H(&a, &spec.body_inertia())?;
    let l = build_L(spec, q);
    let x: Vec<f64> = qdot_prev
        .iter()
        .zip(qdot_smooth)
        .map(|(p, s)| spec.elasticity * p + s)
        .collect();
    let hx = h.matvec(&x);
    Ok((0..spec.bodies)
        .map(|k| if active[k] { -l.data[k] * hx[k] * l.data[k] } else { 0.0 })
        .collect())
}

/// Affine position correction `Q <- mat Q + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub mat: Tensor,
    pub offset: Vec<f64>,
}

impl AffineMap {
    pub fn apply(&self, q: &[f64]) -> Vec<f64> {
        let mut out = self.mat.matvec(q);
        out.iter_mut().zip(&self.offset).for_each(|(x, b)| *x += b);
        out
    }
}

/// Mass-weighted closest-point correction for the listed constraints that
/// are interpenetrating at `q`; `None` when nothing moves.
pub fn projection_map(spec: &SystemSpec, constraints: &[usize], q: &[f64]) -> Option<AffineMap> {
    let d = spec.state_dim();
    let inv = spec.inv_inertia();
    let all = spec.constraints();
    let mut map: Option<AffineMap> = None;
    let mut current = q.to_vec();
    for &ci in constraints {
        let c = &all[ci];
        if c.gap(&current) >= 0.0 {
            continue;
        }
        let w = c.weight(&inv);
        let mut mat = Tensor::zeros(d, d);
        let mut offset = vec![0.0; d];
        for r in 0..d {
            mat.data[r * d + r] = 1.0;
            for col in 0..d {
                mat.data[r * d + col] -= inv[r] * c.grad[r] * c.grad[col] / w;
            }
            offset[r] = inv[r] * c.grad[r] * c.offset / w;
        }
        let step = AffineMap { mat, offset };
        current = step.apply(&current);
        map = Some(match map {
            None => step,
            Some(prev) => compose(&step, &prev),
        });
    }
    map
}

/// `outer(inner(q))`.
fn compose(outer: &AffineMap, inner: &AffineMap) -> AffineMap {
    let d = inner.offset.len();
    let mut mat = Tensor::zeros(d, d);
    for r in 0..d {
        for c in 0..d {
            mat.data[r * d + c] = (0..d).map(|k| outer.mat.get(r, k) * inner.mat.get(k, c)).sum();
        }
    }
    AffineMap {
        mat,
        offset: outer.apply(&inner.offset),
    }
}

/// Moves every interpenetrating body to the nearest admissible point.
/// Velocities are untouched.
pub fn closest_point_projection(spec: &SystemSpec, state: &StaggeredState) -> StaggeredState {
    let all: Vec<usize> = (0..spec.constraints().len()).collect();
    let q = projection_map(spec, &all, &state.q).map_or_else(|| state.q.clone(), |m| m.apply(&state.q));
    StaggeredState::new(q, state.qdot.clone(), state.n)
}

fn check_finite(xs: &[f64], component: Component, step: usize) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(CoreError::NonFinite { component, step })
    }
}

/// One CD-Lagrange step from `(Q_n, Qdot_{n+1/2})` to
/// `(Q_{n+1}, Qdot_{n+3/2})`.
pub fn cdl_step(state: &StaggeredState, ctx: &StepContext<'_>) -> Result<(StaggeredState, ImpulseRecord)> {
    let spec = ctx.spec;
    let step = state.n + 1;
    let dt = if spec.options.half_step_position {
        0.5 * spec.h
    } else {
        spec.h
    };
    let q: Vec<f64> = state.q.iter().zip(&state.qdot).map(|(q, v)| q + dt * v).collect();
    check_finite(&q, Component::Position, step)?;
    let f = ctx.force.force(&q);
    check_finite(&f, Component::Force, step)?;
    let inv = spec.inv_inertia();
    let smooth: Vec<f64> = state
        .qdot
        .iter()
        .zip(&f)
        .zip(&inv)
        .map(|((v, f), w)| v + spec.h * w * f)
        .collect();
    let flags = ctx.contacts.flags(step, &q, &state.qdot);
    let op = impulse_operator(spec, &flags, &state.qdot);
    let record = record_from(spec, &op, &smooth, &state.qdot);
    let dv = op.apply(&state.qdot, &smooth);
    let qdot: Vec<f64> = smooth.iter().zip(&dv).map(|(v, d)| v + d).collect();
    check_finite(&qdot, Component::Impulse, step)?;
    let q = match spec.options.projection {
        true => projection_map(spec, &op.fired, &q).map_or(q.clone(), |m| m.apply(&q)),
        false => q,
    };
    Ok((StaggeredState::new(q, qdot, step), record))
}

/// Velocity Verlet on synchronous `(q, v)`.
pub fn vv_step(spec: &SystemSpec, force: &dyn ForceProvider, q: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let h = spec.h;
    let inv = spec.inv_inertia();
    let accel = |q: &[f64]| -> Vec<f64> { force.force(q).iter().zip(&inv).map(|(f, w)| f * w).collect() };
    let a0 = accel(q);
    let q1: Vec<f64> = (0..q.len()).map(|i| q[i] + h * v[i] + 0.5 * h * h * a0[i]).collect();
    let a1 = accel(&q1);
    let v1 = (0..q.len()).map(|i| v[i] + 0.5 * h * (a0[i] + a1[i])).collect();
    (q1, v1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub trajectory: Trajectory,
    pub records: Vec<ImpulseRecord>,
    /// Step at which the rollout was cut short by divergence or a
    /// non-finite value.
    pub diverged_at: Option<usize>,
}

/// Iterates `cdl_step` for `steps` steps; the trajectory holds
/// `steps + 1` states, starting with `initial` and `c0`.
pub fn rollout(initial: &StaggeredState, c0: &ContactSignal, steps: usize, ctx: &StepContext<'_>) -> Rollout {
    let mut traj = Trajectory {
        states: vec![initial.clone()],
        contacts: vec![c0.clone()],
        h: ctx.spec.h,
        sigma: 0.0,
        seed: 0,
    };
    let mut records = Vec::with_capacity(steps);
    let mut diverged_at = None;
    let mut state = initial.clone();
    for _ in 0..steps {
        match cdl_step(&state, ctx) {
            Ok((next, rec)) if next.max_abs() <= DIVERGENCE_LIMIT => {
                traj.states.push(next.clone());
                traj.contacts.push(rec.signal());
                records.push(rec);
                state = next;
            }
            _ => {
                diverged_at = Some(state.n + 1);
                break;
            }
        }
    }
    Rollout {
        trajectory: traj,
        records,
        diverged_at,
    }
}
