//! Learnable dynamics models.
//!
//! Every model has two forward paths: one recorded on a [`Tape`] for
//! training, and a plain `f64` path for inference. Both decide contacts
//! from plain values, so they produce the same numbers for the same inputs.

use std::fmt;
use std::str::FromStr;

use cdl_autodiff::{forward_mlp, grad_wrt_input, Mlp, MlpSpec, OutputActivation, Tape, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::integrators::{
    impulse_operator, projection_map, rollout, vv_step, ContactProvider, ForceProvider, Rollout, StepContext,
    DIVERGENCE_LIMIT,
};
use crate::mechanics::{ContactSignal, SceneKind, StaggeredState, SystemSpec, Trajectory};
use crate::{CoreError, Result};

/// One hidden tanh layer of 500 units.
pub const DEFAULT_HIDDEN: [usize; 1] = [500];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Cdl,
    CdlNoTouch,
    Resnet,
    ResnetContact,
    VinVv,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Cdl,
        ModelKind::CdlNoTouch,
        ModelKind::Resnet,
        ModelKind::ResnetContact,
        ModelKind::VinVv,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Cdl => "cdl",
            ModelKind::CdlNoTouch => "cdl-no-touch",
            ModelKind::Resnet => "resnet",
            ModelKind::ResnetContact => "resnet-contact",
            ModelKind::VinVv => "vin-vv",
        }
    }

    pub fn supports(self, scene: SceneKind) -> bool {
        self != ModelKind::VinVv || !scene.has_contacts()
    }

    /// Whether training uses the observed contact signal.
    pub fn uses_touch(self) -> bool {
        matches!(self, ModelKind::Cdl | ModelKind::ResnetContact)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown model `{s}`")))
    }
}

/// Source of contact flags inside a training rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContactMode {
    /// Observed signals drive the impulse branch.
    Recorded,
    /// The contact network's own thresholded flags.
    Predicted,
    /// Every approaching constraint fires, each body's velocity jump scaled
    /// by its contact probability. Used without touch feedback.
    Soft,
}

/// `-dV/dQ` of a learned potential.
pub struct LearnedForce<'a>(pub &'a Mlp);

impl ForceProvider for LearnedForce<'_> {
    fn force(&self, q: &[f64]) -> Vec<f64> {
        match self.0.input_gradient(q) {
            Ok(g) => g.iter().map(|x| -x).collect(),
            Err(_) => vec![f64::NAN; q.len()],
        }
    }
}

/// Contact network thresholded at 0.5 (ties count as contact).
pub struct NetContacts<'a>(pub &'a Mlp);

impl ContactProvider for NetContacts<'_> {
    fn flags(&self, _step: usize, q: &[f64], qdot_prev: &[f64]) -> Vec<bool> {
        let x: Vec<f64> = q.iter().chain(qdot_prev).copied().collect();
        self.0.eval(&x).iter().map(|&p| p >= 0.5).collect()
    }
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

fn vector_leaf(tape: &mut Tape, xs: &[f64]) -> Var {
    tape.vector(xs.to_vec())
}

fn build_net<R: Rng + ?Sized>(spec: MlpSpec, rng: Option<&mut R>) -> Result<Mlp> {
    Ok(match rng {
        Some(rng) => Mlp::glorot(spec, rng)?,
        None => Mlp::zeros(spec)?,
    })
}

/// Potential network plus contact network driving the CD-Lagrange step.
#[derive(Debug, Clone, PartialEq)]
pub struct CdlModel {
    pub spec: SystemSpec,
    pub potential: Mlp,
    pub contact: Mlp,
}

impl CdlModel {
    pub fn potential_spec(spec: &SystemSpec, hidden: &[usize]) -> MlpSpec {
        MlpSpec::new(spec.state_dim(), hidden.to_vec(), 1, OutputActivation::Identity)
    }

    pub fn contact_spec(spec: &SystemSpec, hidden: &[usize]) -> MlpSpec {
        MlpSpec::new(2 * spec.state_dim(), hidden.to_vec(), spec.bodies, OutputActivation::Sigmoid)
    }

    pub fn new<R: Rng + ?Sized>(spec: &SystemSpec, hidden: &[usize], rng: &mut R) -> Result<Self> {
        Self::build(spec, hidden, Some(rng))
    }

    /// All parameters zero: no force, contact probability 1/2.
    pub fn zeroed(spec: &SystemSpec, hidden: &[usize]) -> Result<Self> {
        Self::build::<rand_chacha::ChaCha8Rng>(spec, hidden, None)
    }

    fn build<R: Rng + ?Sized>(spec: &SystemSpec, hidden: &[usize], mut rng: Option<&mut R>) -> Result<Self> {
        spec.validate()?;
        let potential = build_net(Self::potential_spec(spec, hidden), rng.as_deref_mut())?;
        let contact = build_net(Self::contact_spec(spec, hidden), rng)?;
        // The contact network alone decides when impulses fire.
        let mut spec = spec.clone();
        spec.options.approach_guard = false;
        Ok(Self {
            spec,
            potential,
            contact,
        })
    }

    pub fn force(&self, q: &[f64]) -> Vec<f64> {
        LearnedForce(&self.potential).force(q)
    }

    /// Contact probabilities and thresholded flags at `(Q, Qdot)`.
    pub fn contact_predict(&self, q: &[f64], qdot: &[f64]) -> (Vec<f64>, Vec<bool>) {
        let p = self.contact.eval(&concat(q, qdot));
        let flags = p.iter().map(|&x| x >= 0.5).collect();
        (p, flags)
    }

    /// Inference rollout with the learned force and thresholded contacts.
    pub fn forecast(&self, initial: &StaggeredState, c0: &ContactSignal, steps: usize) -> Rollout {
        let force = LearnedForce(&self.potential);
        let contacts = NetContacts(&self.contact);
        self.forecast_with(&force, &contacts, initial, c0, steps)
    }

    /// Rollout with substituted providers, e.g. the analytic potential.
    pub fn forecast_with(
        &self,
        force: &dyn ForceProvider,
        contacts: &dyn ContactProvider,
        initial: &StaggeredState,
        c0: &ContactSignal,
        steps: usize,
    ) -> Rollout {
        rollout(initial, c0, steps, &StepContext::new(&self.spec, force, contacts))
    }

    /// Training rollout over `window`, starting from its first state.
    /// Returns `[Q; Qdot]` for states `1..window.len()`.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        potential: &[Var],
        contact: &[Var],
        window: &Trajectory,
        mode: ContactMode,
    ) -> Result<Vec<Var>> {
        let spec = &self.spec;
        let d = spec.state_dim();
        let dt = if spec.options.half_step_position {
            0.5 * spec.h
        } else {
            spec.h
        };
        let kick: Vec<f64> = spec.inv_inertia().iter().map(|w| -spec.h * w).collect();
        let kick = vector_leaf(tape, &kick);
        let first = &window.states[0];
        let mut q = vector_leaf(tape, &first.q);
        let mut v = vector_leaf(tape, &first.qdot);
        let mut out = Vec::with_capacity(window.len().saturating_sub(1));
        for i in 1..window.len() {
            let hv = tape.scale(v, dt);
            let q1 = tape.add(q, hv);
            let grad = grad_wrt_input(tape, &self.potential.spec, potential, q1)?;
            let dv = tape.mul(kick, grad);
            let smooth = tape.add(v, dv);

            let q1_val = tape.value(q1).data.clone();
            let v_val = tape.value(v).data.clone();
            let mut soft_probs = None;
            let flags = match mode {
                ContactMode::Recorded => window.contacts[i].0.clone(),
                ContactMode::Predicted => self.contact_predict(&q1_val, &v_val).1,
                ContactMode::Soft => vec![true; spec.bodies],
            };
            let op = impulse_operator(spec, &flags, &v_val);
            let mut v_next = smooth;
            let mut fired = op.fired.clone();
            if !op.is_zero() {
                let cp = tape.leaf(op.c_prev.clone());
                let cs = tape.leaf(op.c_smooth.clone());
                let a = tape.matvec(cp, v);
                let b = tape.matvec(cs, smooth);
                let mut jump = tape.add(a, b);
                if mode == ContactMode::Soft {
                    let x = tape.concat(q1, v);
                    let p = forward_mlp(tape, &self.contact.spec, contact, x)?;
                    jump = tape.mul(jump, p);
                    soft_probs = Some(tape.value(p).data.clone());
                }
                v_next = tape.add(smooth, jump);
            }
            if let Some(p) = &soft_probs {
                let constraints = spec.constraints();
                fired.retain(|&ci| constraints[ci].bodies.iter().all(|&b| p[b] >= 0.5));
            }
            let mut q_next = q1;
            if spec.options.projection && !fired.is_empty() {
                if let Some(map) = projection_map(spec, &fired, &q1_val) {
                    let m = tape.leaf(map.mat);
                    let b = vector_leaf(tape, &map.offset);
                    let mq = tape.matvec(m, q1);
                    q_next = tape.add(mq, b);
                }
            }
            debug_assert_eq!(tape.value(q_next).len(), d);
            out.push(tape.concat(q_next, v_next));
            q = q_next;
            v = v_next;
        }
        Ok(out)
    }
}

/// Velocity Verlet with a learned potential, on synchronous `(q, v)`.
///
/// The observed velocity sample is read as the synchronous velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct VinModel {
    pub spec: SystemSpec,
    pub potential: Mlp,
}

impl VinModel {
    pub fn new<R: Rng + ?Sized>(spec: &SystemSpec, hidden: &[usize], rng: &mut R) -> Result<Self> {
        Self::build(spec, hidden, Some(rng))
    }

    pub fn zeroed(spec: &SystemSpec, hidden: &[usize]) -> Result<Self> {
        Self::build::<rand_chacha::ChaCha8Rng>(spec, hidden, None)
    }

    fn build<R: Rng + ?Sized>(spec: &SystemSpec, hidden: &[usize], rng: Option<&mut R>) -> Result<Self> {
        spec.validate()?;
        if spec.scene.has_contacts() {
            return Err(CoreError::Config(format!(
                "vin-vv is contact-free and cannot model {}",
                spec.scene
            )));
        }
        Ok(Self {
            spec: spec.clone(),
            potential: build_net(CdlModel::potential_spec(spec, hidden), rng)?,
        })
    }

    pub fn forecast(&self, initial: &StaggeredState, c0: &ContactSignal, steps: usize) -> Rollout {
        let force = LearnedForce(&self.potential);
        let mut traj = single_state(initial, c0, self.spec.h);
        let (mut q, mut v) = (initial.q.clone(), initial.qdot.clone());
        let mut diverged_at = None;
        for n in 1..=steps {
            (q, v) = vv_step(&self.spec, &force, &q, &v);
            let s = StaggeredState::new(q.clone(), v.clone(), initial.n + n);
            if !s.is_finite() || s.max_abs() > DIVERGENCE_LIMIT {
                diverged_at = Some(s.n);
                break;
            }
            traj.states.push(s);
            traj.contacts.push(ContactSignal::none(self.spec.bodies));
        }
        Rollout {
            trajectory: traj,
            records: Vec::new(),
            diverged_at,
        }
    }

    pub fn forward_tape(&self, tape: &mut Tape, potential: &[Var], window: &Trajectory) -> Result<Vec<Var>> {
        let spec = &self.spec;
        let h = spec.h;
        let neg_inv: Vec<f64> = spec.inv_inertia().iter().map(|w| -w).collect();
        let neg_inv = vector_leaf(tape, &neg_inv);
        let first = &window.states[0];
        let mut q = vector_leaf(tape, &first.q);
        let mut v = vector_leaf(tape, &first.qdot);
        let g = grad_wrt_input(tape, &self.potential.spec, potential, q)?;
        let mut a = tape.mul(neg_inv, g);
        let mut out = Vec::with_capacity(window.len().saturating_sub(1));
        for _ in 1..window.len() {
            let hv = tape.scale(v, h);
            let ha = tape.scale(a, 0.5 * h * h);
            let q1 = tape.add(q, hv);
            let q1 = tape.add(q1, ha);
            let g1 = grad_wrt_input(tape, &self.potential.spec, potential, q1)?;
            let a1 = tape.mul(neg_inv, g1);
            let sum = tape.add(a, a1);
            let dv = tape.scale(sum, 0.5 * h);
            let v1 = tape.add(v, dv);
            out.push(tape.concat(q1, v1));
            (q, v, a) = (q1, v1, a1);
        }
        Ok(out)
    }
}

/// Residual network on the concatenated state `s = [Q; Qdot]`, optionally
/// fed the current contact flags and paired with a contact head.
#[derive(Debug, Clone, PartialEq)]
pub struct ResNetModel {
    pub spec: SystemSpec,
    pub net: Mlp,
    pub contact_head: Option<Mlp>,
}

impl ResNetModel {
    pub fn new<R: Rng + ?Sized>(spec: &SystemSpec, hidden: &[usize], with_contacts: bool, rng: &mut R) -> Result<Self> {
        Self::build(spec, hidden, with_contacts, Some(rng))
    }

    pub fn zeroed(spec: &SystemSpec, hidden: &[usize], with_contacts: bool) -> Result<Self> {
        Self::build::<rand_chacha::ChaCha8Rng>(spec, hidden, with_contacts, None)
    }

    fn build<R: Rng + ?Sized>(
        spec: &SystemSpec,
        hidden: &[usize],
        with_contacts: bool,
        mut rng: Option<&mut R>,
    ) -> Result<Self> {
        spec.validate()?;
        let s = 2 * spec.state_dim();
        let input = if with_contacts { s + spec.bodies } else { s };
        let net = build_net(
            MlpSpec::new(input, hidden.to_vec(), s, OutputActivation::Identity),
            rng.as_deref_mut(),
        )?;
        let contact_head = if with_contacts {
            Some(build_net(
                MlpSpec::new(s, hidden.to_vec(), spec.bodies, OutputActivation::Sigmoid),
                rng,
            )?)
        } else {
            None
        };
        Ok(Self {
            spec: spec.clone(),
            net,
            contact_head,
        })
    }

    fn split(&self, s: &[f64], n: usize) -> StaggeredState {
        let d = self.spec.state_dim();
        StaggeredState::new(s[..d].to_vec(), s[d..].to_vec(), n)
    }

    pub fn forecast(&self, initial: &StaggeredState, c0: &ContactSignal, steps: usize) -> Rollout {
        let mut traj = single_state(initial, c0, self.spec.h);
        let mut s = initial.concat();
        let mut c = c0.clone();
        let mut diverged_at = None;
        for n in 1..=steps {
            let input = match &self.contact_head {
                Some(_) => concat(&s, &c.as_f64()),
                None => s.clone(),
            };
            let ds = self.net.eval(&input);
            let next_c = match &self.contact_head {
                Some(head) => ContactSignal(head.eval(&s).iter().map(|&p| p >= 0.5).collect()),
                None => ContactSignal::none(self.spec.bodies),
            };
            s.iter_mut().zip(&ds).for_each(|(x, d)| *x += d);
            let st = self.split(&s, initial.n + n);
            if !st.is_finite() || st.max_abs() > DIVERGENCE_LIMIT {
                diverged_at = Some(st.n);
                break;
            }
            traj.states.push(st);
            traj.contacts.push(next_c.clone());
            c = next_c;
        }
        Rollout {
            trajectory: traj,
            records: Vec::new(),
            diverged_at,
        }
    }

    /// Teacher-forced residual chain: step `i` sees the observed flags of
    /// state `i - 1`.
    pub fn forward_tape(&self, tape: &mut Tape, net: &[Var], window: &Trajectory) -> Result<Vec<Var>> {
        let mut s = vector_leaf(tape, &window.states[0].concat());
        let mut out = Vec::with_capacity(window.len().saturating_sub(1));
        for i in 1..window.len() {
            let input = match &self.contact_head {
                Some(_) => {
                    let c = vector_leaf(tape, &window.contacts[i - 1].as_f64());
                    tape.concat(s, c)
                }
                None => s,
            };
            let ds = forward_mlp(tape, &self.net.spec, net, input)?;
            s = tape.add(s, ds);
            out.push(s);
        }
        Ok(out)
    }
}

fn single_state(initial: &StaggeredState, c0: &ContactSignal, h: f64) -> Trajectory {
    Trajectory {
        states: vec![initial.clone()],
        contacts: vec![c0.clone()],
        h,
        sigma: 0.0,
        seed: 0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Cdl { model: CdlModel, touch: bool },
    Vin(VinModel),
    ResNet(ResNetModel),
}

impl Model {
    pub fn new<R: Rng + ?Sized>(kind: ModelKind, spec: &SystemSpec, hidden: &[usize], rng: &mut R) -> Result<Self> {
        if !kind.supports(spec.scene) {
            return Err(CoreError::Config(format!("{kind} cannot model {}", spec.scene)));
        }
        Ok(match kind {
            ModelKind::Cdl | ModelKind::CdlNoTouch => Model::Cdl {
                model: CdlModel::new(spec, hidden, rng)?,
                touch: kind == ModelKind::Cdl,
            },
            ModelKind::VinVv => Model::Vin(VinModel::new(spec, hidden, rng)?),
            ModelKind::Resnet | ModelKind::ResnetContact => {
                Model::ResNet(ResNetModel::new(spec, hidden, kind == ModelKind::ResnetContact, rng)?)
            }
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Cdl { touch: true, .. } => ModelKind::Cdl,
            Model::Cdl { touch: false, .. } => ModelKind::CdlNoTouch,
            Model::Vin(_) => ModelKind::VinVv,
            Model::ResNet(r) if r.contact_head.is_some() => ModelKind::ResnetContact,
            Model::ResNet(_) => ModelKind::Resnet,
        }
    }

    pub fn spec(&self) -> &SystemSpec {
        match self {
            Model::Cdl { model, .. } => &model.spec,
            Model::Vin(m) => &m.spec,
            Model::ResNet(m) => &m.spec,
        }
    }

    /// Named networks in a fixed order; the first is the regularised one.
    pub fn networks(&self) -> Vec<(&'static str, &Mlp)> {
        match self {
            Model::Cdl { model, .. } => vec![("potential", &model.potential), ("contact", &model.contact)],
            Model::Vin(m) => vec![("potential", &m.potential)],
            Model::ResNet(m) => {
                let mut v = vec![("net", &m.net)];
                if let Some(h) = &m.contact_head {
                    v.push(("contact", h));
                }
                v
            }
        }
    }

    pub fn networks_mut(&mut self) -> Vec<&mut Mlp> {
        match self {
            Model::Cdl { model, .. } => vec![&mut model.potential, &mut model.contact],
            Model::Vin(m) => vec![&mut m.potential],
            Model::ResNet(m) => {
                let mut v = vec![&mut m.net];
                if let Some(h) = &mut m.contact_head {
                    v.push(h);
                }
                v
            }
        }
    }

    /// The learned potential, when the model has one.
    pub fn potential(&self) -> Option<&Mlp> {
        match self {
            Model::Cdl { model, .. } => Some(&model.potential),
            Model::Vin(m) => Some(&m.potential),
            Model::ResNet(_) => None,
        }
    }

    pub fn forecast(&self, initial: &StaggeredState, c0: &ContactSignal, steps: usize) -> Rollout {
        match self {
            Model::Cdl { model, .. } => model.forecast(initial, c0, steps),
            Model::Vin(m) => m.forecast(initial, c0, steps),
            Model::ResNet(m) => m.forecast(initial, c0, steps),
        }
    }

    /// Contact probabilities for states `1..traj.len()` of an observed
    /// trajectory, or `None` for models without a contact predictor.
    pub fn contact_probabilities(&self, traj: &Trajectory) -> Option<Vec<Vec<f64>>> {
        match self {
            Model::Cdl { model, .. } => Some(
                (1..traj.len())
                    .map(|i| model.contact_predict(&traj.states[i].q, &traj.states[i - 1].qdot).0)
                    .collect(),
            ),
            Model::ResNet(m) => m
                .contact_head
                .as_ref()
                .map(|head| (1..traj.len()).map(|i| head.eval(&traj.states[i - 1].concat())).collect()),
            Model::Vin(_) => None,
        }
    }

    pub fn to_checkpoint(&self, config_hash: &str) -> Checkpoint {
        Checkpoint {
            kind: self.kind(),
            scene: self.spec().scene,
            spec: self.spec().clone(),
            config_hash: config_hash.to_string(),
            networks: self
                .networks()
                .into_iter()
                .map(|(name, mlp)| NamedNetwork {
                    name: name.to_string(),
                    network: mlp.clone(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.spec.validate()?;
        let get = |name: &str| {
            ck.networks
                .iter()
                .find(|n| n.name == name)
                .map(|n| n.network.clone())
                .ok_or_else(|| CoreError::Format(format!("checkpoint lacks network `{name}`")))
        };
        let spec = ck.spec.clone();
        let model = match ck.kind {
            ModelKind::Cdl | ModelKind::CdlNoTouch => Model::Cdl {
                model: CdlModel {
                    spec,
                    potential: get("potential")?,
                    contact: get("contact")?,
                },
                touch: ck.kind == ModelKind::Cdl,
            },
            ModelKind::VinVv => Model::Vin(VinModel {
                spec,
                potential: get("potential")?,
            }),
            ModelKind::Resnet | ModelKind::ResnetContact => Model::ResNet(ResNetModel {
                spec,
                net: get("net")?,
                contact_head: match ck.kind {
                    ModelKind::ResnetContact => Some(get("contact")?),
                    _ => None,
                },
            }),
        };
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedNetwork {
    pub name: String,
    pub network: Mlp,
}

/// Serialised model bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub scene: SceneKind,
    pub spec: SystemSpec,
    pub config_hash: String,
    pub networks: Vec<NamedNetwork>,
}

/// Gradient of the learned potential on each probe point.
pub fn potential_gradients(potential: &Mlp, probes: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    probes
        .iter()
        .map(|q| potential.input_gradient(q).map_err(CoreError::from))
        .collect()
}
