//! Losses, horizon batching, the optimisation loop and evaluation.

use std::time::Instant;

use cdl_autodiff::{forward_mlp, Adam, Mlp, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::integrators::Rollout;
use crate::mechanics::{
    add_noise, generate_ground_truth, synchronous_energy, ContactSignal, Dataset, StaggeredState, SystemSpec,
    Trajectory,
};
use crate::models::{ContactMode, Model, ModelKind};
use crate::{CoreError, Result};

/// Probabilities are clamped to `[P_CLAMP, 1 - P_CLAMP]` inside the cross-entropy.
pub const P_CLAMP: f64 = 1e-7;

const BATCH_STREAM: u64 = 0xbb67_ae85_84ca_a73b;
const INIT_STREAM: u64 = 0x3c6e_f372_fe94_f82b;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// States per training window.
    pub horizon: usize,
    /// Windows per gradient step.
    pub batch_size: usize,
    pub lambda_reg: f64,
    pub seed: u64,
    /// Drive the impulse branch with observed contacts while training.
    /// When off, the contact network's thresholded output is used.
    pub teacher_forcing: bool,
    pub contact_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 2000,
            horizon: 10,
            batch_size: 8,
            lambda_reg: 1e-4,
            seed: 0,
            teacher_forcing: true,
            contact_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("learning rate must be > 0, got {}", self.lr));
        }
        if self.horizon < 2 {
            return bad(format!("horizon must be >= 2, got {}", self.horizon));
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if !(self.lambda_reg.is_finite() && self.lambda_reg >= 0.0) {
            return bad(format!("lambda_reg must be >= 0, got {}", self.lambda_reg));
        }
        if !(self.contact_weight.is_finite() && self.contact_weight >= 0.0) {
            return bad(format!("contact weight must be >= 0, got {}", self.contact_weight));
        }
        Ok(())
    }
}

/// Builds a model with weights drawn from a stream derived from `seed`.
pub fn init_model(kind: ModelKind, spec: &SystemSpec, hidden: &[usize], seed: u64) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ INIT_STREAM);
    Model::new(kind, spec, hidden, &mut rng)
}

fn check_lengths(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(CoreError::Length(format!("{what}: {a} predictions vs {b} targets")));
    }
    Ok(())
}

/// Mean squared state error, normalised by states times state size.
pub fn loss_trajectory(pred: &[Vec<f64>], observed: &[Vec<f64>]) -> Result<f64> {
    check_lengths(pred.len(), observed.len(), "trajectory loss")?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let d = observed[0].len();
    let mut sum = 0.0;
    for (p, o) in pred.iter().zip(observed) {
        check_lengths(p.len(), o.len(), "state size")?;
        sum += p.iter().zip(o).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(sum / (pred.len() * d) as f64)
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(P_CLAMP, 1.0 - P_CLAMP)
}

/// Binary cross-entropy averaged over steps and bodies.
pub fn loss_contact(probs: &[Vec<f64>], flags: &[ContactSignal]) -> Result<f64> {
    check_lengths(probs.len(), flags.len(), "contact loss")?;
    if probs.is_empty() {
        return Ok(0.0);
    }
    let k = flags[0].len();
    let mut sum = 0.0;
    for (p, c) in probs.iter().zip(flags) {
        check_lengths(p.len(), c.len(), "contact size")?;
        for (&p, &c) in p.iter().zip(&c.0) {
            let p = clamp_p(p);
            sum -= if c { p.ln() } else { (1.0 - p).ln() };
        }
    }
    Ok(sum / (probs.len() * k) as f64)
}

/// `lambda * sum w^2` over the weight matrices of `net`; biases are free.
pub fn loss_reg(net: &Mlp, lambda: f64) -> f64 {
    let values = net.params.tensors();
    lambda
        * net
            .weight_indices()
            .into_iter()
            .map(|i| values[i].dot(&values[i]))
            .sum::<f64>()
}

/// Tape version of [`loss_trajectory`].
pub fn loss_trajectory_tape(tape: &mut Tape, pred: &[Var], observed: &[Vec<f64>]) -> Result<Var> {
    check_lengths(pred.len(), observed.len(), "trajectory loss")?;
    let Some(first) = observed.first() else {
        return Ok(tape.scalar(0.0));
    };
    let norm = 1.0 / (pred.len() * first.len()) as f64;
    let mut acc: Option<Var> = None;
    for (&p, o) in pred.iter().zip(observed) {
        check_lengths(tape.value(p).len(), o.len(), "state size")?;
        let o = tape.vector(o.clone());
        let diff = tape.sub(p, o);
        let sq = tape.dot(diff, diff);
        acc = Some(match acc {
            Some(a) => tape.add(a, sq),
            None => sq,
        });
    }
    Ok(tape.scale(acc.expect("non-empty"), norm))
}

/// Tape version of [`loss_contact`].
pub fn loss_contact_tape(tape: &mut Tape, probs: &[Var], flags: &[ContactSignal]) -> Result<Var> {
    check_lengths(probs.len(), flags.len(), "contact loss")?;
    let Some(first) = flags.first() else {
        return Ok(tape.scalar(0.0));
    };
    let norm = -1.0 / (probs.len() * first.len()) as f64;
    let mut acc: Option<Var> = None;
    for (&p, c) in probs.iter().zip(flags) {
        check_lengths(tape.value(p).len(), c.len(), "contact size")?;
        let p = tape.clamp(p, P_CLAMP, 1.0 - P_CLAMP);
        let log_p = tape.ln(p);
        let q = tape.affine(p, -1.0, 1.0);
        let log_q = tape.ln(q);
        let on = tape.vector(c.as_f64());
        let off = tape.vector(c.0.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect());
        let a = tape.dot(on, log_p);
        let b = tape.dot(off, log_q);
        let term = tape.add(a, b);
        acc = Some(match acc {
            Some(s) => tape.add(s, term),
            None => term,
        });
    }
    Ok(tape.scale(acc.expect("non-empty"), norm))
}

/// Tape version of [`loss_reg`] over already bound parameters.
pub fn loss_reg_tape(tape: &mut Tape, net: &Mlp, bound: &[Var], lambda: f64) -> Var {
    let mut acc = tape.scalar(0.0);
    for i in net.weight_indices() {
        let sq = tape.dot(bound[i], bound[i]);
        acc = tape.add(acc, sq);
    }
    tape.scale(acc, lambda)
}

/// A run of `len` consecutive states inside trajectory `traj`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub traj: usize,
    pub start: usize,
    pub len: usize,
}

/// Splits every trajectory into non-overlapping windows of `horizon`
/// states, shuffles them and groups them into batches.
pub fn make_batches(
    trajectories: &[Trajectory],
    horizon: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<Window>>> {
    if batch_size == 0 {
        return Err(CoreError::Config("batch size must be >= 1".into()));
    }
    let mut windows = Vec::new();
    for (ti, t) in trajectories.iter().enumerate() {
        if horizon > t.len() {
            return Err(CoreError::Config(format!(
                "horizon {horizon} exceeds trajectory {ti} of {} states",
                t.len()
            )));
        }
        windows.extend((0..t.len() / horizon).map(|w| Window {
            traj: ti,
            start: w * horizon,
            len: horizon,
        }));
    }
    windows.shuffle(rng);
    Ok(windows.chunks(batch_size).map(<[Window]>::to_vec).collect())
}

/// Batch-mean loss terms; `total = l_t + contact_weight * l_c + l_r`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub l_t: f64,
    pub l_c: f64,
    pub l_r: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    #[serde(flatten)]
    pub terms: LossTerms,
}

struct BatchGraph {
    total: Var,
    l_t: Var,
    l_c: Option<Var>,
    l_r: Var,
    bound: Vec<Vec<Var>>,
}

fn contact_mode(model: &Model, config: &TrainConfig) -> ContactMode {
    match model {
        Model::Cdl { touch: false, .. } => ContactMode::Soft,
        _ if config.teacher_forcing => ContactMode::Recorded,
        _ => ContactMode::Predicted,
    }
}

fn observed_targets(window: &Trajectory) -> Vec<Vec<f64>> {
    window.states[1..].iter().map(|s| s.concat()).collect()
}

/// Records the batch loss on `tape`.
fn batch_graph(
    tape: &mut Tape,
    model: &Model,
    windows: &[Trajectory],
    config: &TrainConfig,
) -> Result<BatchGraph> {
    let bound: Vec<Vec<Var>> = model.networks().iter().map(|(_, m)| m.bind(tape)).collect();
    let mode = contact_mode(model, config);
    let mut sum_t: Option<Var> = None;
    let mut sum_c: Option<Var> = None;
    for w in windows {
        let targets = observed_targets(w);
        let flags = &w.contacts[1..];
        let (preds, probs) = match model {
            Model::Cdl { model: m, touch } => {
                let preds = m.forward_tape(tape, &bound[0], &bound[1], w, mode)?;
                let probs = if *touch {
                    let mut probs = Vec::with_capacity(w.len() - 1);
                    for i in 1..w.len() {
                        let x: Vec<f64> = w.states[i].q.iter().chain(&w.states[i - 1].qdot).copied().collect();
                        let x = tape.vector(x);
                        probs.push(forward_mlp(tape, &m.contact.spec, &bound[1], x)?);
                    }
                    Some(probs)
                } else {
                    None
                };
                (preds, probs)
            }
            Model::Vin(m) => (m.forward_tape(tape, &bound[0], w)?, None),
            Model::ResNet(m) => {
                let preds = m.forward_tape(tape, &bound[0], w)?;
                let probs = match &m.contact_head {
                    Some(head) => {
                        let mut probs = Vec::with_capacity(w.len() - 1);
                        for i in 1..w.len() {
                            let x = tape.vector(w.states[i - 1].concat());
                            probs.push(forward_mlp(tape, &head.spec, &bound[1], x)?);
                        }
                        Some(probs)
                    }
                    None => None,
                };
                (preds, probs)
            }
        };
        let lt = loss_trajectory_tape(tape, &preds, &targets)?;
        sum_t = Some(match sum_t {
            Some(s) => tape.add(s, lt),
            None => lt,
        });
        if let Some(probs) = probs {
            let lc = loss_contact_tape(tape, &probs, flags)?;
            sum_c = Some(match sum_c {
                Some(s) => tape.add(s, lc),
                None => lc,
            });
        }
    }
    let inv_b = 1.0 / windows.len() as f64;
    let l_t = tape.scale(sum_t.expect("non-empty batch"), inv_b);
    let l_c = sum_c.map(|s| tape.scale(s, inv_b));
    let main = model.networks()[0].1;
    let l_r = loss_reg_tape(tape, main, &bound[0], config.lambda_reg);
    let mut total = tape.add(l_t, l_r);
    if let Some(lc) = l_c {
        let weighted = tape.scale(lc, config.contact_weight);
        total = tape.add(total, weighted);
    }
    Ok(BatchGraph {
        total,
        l_t,
        l_c,
        l_r,
        bound,
    })
}

/// Loss terms and per-network parameter gradients for one batch.
pub fn batch_gradients(
    model: &Model,
    windows: &[Trajectory],
    config: &TrainConfig,
) -> Result<(LossTerms, Vec<Vec<Tensor>>)> {
    let mut tape = Tape::new();
    batch_gradients_on(&mut tape, model, windows, config)
}

fn batch_gradients_on(
    tape: &mut Tape,
    model: &Model,
    windows: &[Trajectory],
    config: &TrainConfig,
) -> Result<(LossTerms, Vec<Vec<Tensor>>)> {
    tape.clear();
    let g = batch_graph(tape, model, windows, config)?;
    let terms = LossTerms {
        l_t: tape.value(g.l_t).item(),
        l_c: g.l_c.map_or(0.0, |v| tape.value(v).item()),
        l_r: tape.value(g.l_r).item(),
        total: tape.value(g.total).item(),
    };
    let grads = tape.backward(g.total)?;
    let per_net = g
        .bound
        .iter()
        .map(|vars| vars.iter().map(|&v| grads.get_or_zeros(v, tape.value(v))).collect())
        .collect();
    Ok((terms, per_net))
}

/// Plain-valued loss terms for one batch, without building a tape.
pub fn batch_losses(model: &Model, windows: &[Trajectory], config: &TrainConfig) -> Result<LossTerms> {
    let mut tape = Tape::new();
    let g = batch_graph(&mut tape, model, windows, config)?;
    Ok(LossTerms {
        l_t: tape.value(g.l_t).item(),
        l_c: g.l_c.map_or(0.0, |v| tape.value(v).item()),
        l_r: tape.value(g.l_r).item(),
        total: tape.value(g.total).item(),
    })
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters after the last finite update.
    pub model: Model,
    pub history: Vec<EpochLosses>,
    /// Set when training stopped early on a non-finite loss or gradient.
    pub failure: Option<CoreError>,
    pub wall_clock_s: f64,
}

/// Mini-batch Adam over rollout losses.
pub fn train(mut model: Model, dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.spec.scene != model.spec().scene {
        return Err(CoreError::Config(format!(
            "dataset scene {} does not match model scene {}",
            dataset.spec.scene,
            model.spec().scene
        )));
    }
    if dataset.trajectories.is_empty() {
        return Err(CoreError::Config("dataset has no trajectories".into()));
    }
    let clock = Instant::now();
    let adam = Adam::with_lr(config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ BATCH_STREAM);
    let mut tape = Tape::new();
    let mut history = Vec::with_capacity(config.epochs);
    let mut t = 0u64;
    for epoch in 0..config.epochs {
        let batches = make_batches(&dataset.trajectories, config.horizon, config.batch_size, &mut rng)?;
        let mut acc = LossTerms::default();
        for (bi, batch) in batches.iter().enumerate() {
            let windows: Vec<Trajectory> = batch
                .iter()
                .map(|w| dataset.trajectories[w.traj].window(w.start, w.len))
                .collect();
            let (terms, grads) = batch_gradients_on(&mut tape, &model, &windows, config)?;
            let finite_grads = grads.iter().flatten().all(Tensor::all_finite);
            if !terms.total.is_finite() || !finite_grads {
                return Ok(TrainOutcome {
                    model,
                    history,
                    failure: Some(CoreError::NonFiniteLoss { epoch, batch: bi }),
                    wall_clock_s: clock.elapsed().as_secs_f64(),
                });
            }
            t += 1;
            for (net, g) in model.networks_mut().into_iter().zip(&grads) {
                adam.step(&mut net.params, g, t)?;
            }
            acc.l_t += terms.l_t;
            acc.l_c += terms.l_c;
            acc.l_r += terms.l_r;
            acc.total += terms.total;
        }
        let nb = batches.len() as f64;
        history.push(EpochLosses {
            epoch,
            terms: LossTerms {
                l_t: acc.l_t / nb,
                l_c: acc.l_c / nb,
                l_r: acc.l_r / nb,
                total: acc.total / nb,
            },
        });
    }
    Ok(TrainOutcome {
        model,
        history,
        failure: None,
        wall_clock_s: clock.elapsed().as_secs_f64(),
    })
}

/// A held-out trajectory: noiseless reference plus a noisy observation of it.
#[derive(Debug, Clone, PartialEq)]
pub struct TestCase {
    pub ground_truth: Trajectory,
    pub observed: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Forecast error against the noiseless reference.
    pub rmse: f64,
    /// Forecast error against the noisy observation.
    pub rmse_noisy: f64,
    /// Fraction of correctly thresholded contact flags on observed states.
    pub contact_accuracy: Option<f64>,
    /// Fraction of (state, body) probabilities below 0.5.
    pub contact_below_half: Option<f64>,
    /// First test case and step at which a forecast left the finite range.
    pub diverged_at: Option<(usize, usize)>,
    /// Energy of the first forecast, `(step, E)`.
    pub energy: Vec<(usize, f64)>,
    /// The first forecast itself.
    #[serde(skip)]
    pub forecast: Option<Trajectory>,
}

const TEST_STREAM: u64 = 0xa54f_f53a_5f1d_36f1;

impl TestCase {
    /// `steps` noiseless states from the scene's initial condition with a
    /// fresh noise draw on top.
    pub fn generate(spec: &SystemSpec, steps: usize, sigma: f64, seed: u64) -> Result<Self> {
        let ground_truth = generate_ground_truth(spec, steps)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ TEST_STREAM);
        let observed = add_noise(&ground_truth, sigma, &mut rng)?;
        Ok(Self { ground_truth, observed })
    }
}

/// Forecasts each case from its first noiseless state and scores it.
///
/// States after a divergence are held at the last finite state.
pub fn evaluate(model: &Model, cases: &[TestCase]) -> Result<EvalReport> {
    evaluate_with(
        model.spec(),
        cases,
        |s, c, n| model.forecast(s, c, n),
        |t| model.contact_probabilities(t),
    )
}

/// [`evaluate`] over an arbitrary forecaster and contact predictor.
pub fn evaluate_with(
    spec: &SystemSpec,
    cases: &[TestCase],
    forecast: impl Fn(&StaggeredState, &ContactSignal, usize) -> Rollout,
    contact_probabilities: impl Fn(&Trajectory) -> Option<Vec<Vec<f64>>>,
) -> Result<EvalReport> {
    if cases.is_empty() {
        return Err(CoreError::Config("no test trajectories".into()));
    }
    let mut sq = 0.0;
    let mut sq_noisy = 0.0;
    let mut count = 0usize;
    let mut correct = 0usize;
    let mut below = 0usize;
    let mut flags_seen = 0usize;
    let mut has_contacts = false;
    let mut diverged_at = None;
    let mut energy = Vec::new();
    let mut first_forecast = None;
    for (ci, case) in cases.iter().enumerate() {
        let gt = &case.ground_truth;
        check_lengths(case.observed.len(), gt.len(), "observed vs reference")?;
        let steps = gt.len().saturating_sub(1);
        let r = forecast(&gt.states[0], &gt.contacts[0], steps);
        if let (Some(n), None) = (r.diverged_at, diverged_at) {
            diverged_at = Some((ci, n));
        }
        let states = &r.trajectory.states;
        for i in 1..gt.len() {
            let pred = states.get(i).unwrap_or(&states[states.len() - 1]).concat();
            let truth = gt.states[i].concat();
            let obs = case.observed.states[i].concat();
            for ((p, t), o) in pred.iter().zip(&truth).zip(&obs) {
                sq += (p - t).powi(2);
                sq_noisy += (p - o).powi(2);
            }
            count += truth.len();
        }
        if let Some(probs) = contact_probabilities(&case.observed) {
            has_contacts = true;
            for (p, c) in probs.iter().zip(&case.observed.contacts[1..]) {
                for (&p, &c) in p.iter().zip(&c.0) {
                    correct += usize::from((p >= 0.5) == c);
                    below += usize::from(p < 0.5);
                    flags_seen += 1;
                }
            }
        }
        if ci == 0 {
            energy = synchronous_energy(spec, &r.trajectory);
            first_forecast = Some(r.trajectory);
        }
    }
    let frac = |x: usize| if flags_seen == 0 { 1.0 } else { x as f64 / flags_seen as f64 };
    let count = count.max(1) as f64;
    Ok(EvalReport {
        rmse: (sq / count).sqrt(),
        rmse_noisy: (sq_noisy / count).sqrt(),
        contact_accuracy: has_contacts.then(|| frac(correct)),
        contact_below_half: has_contacts.then(|| frac(below)),
        diverged_at,
        energy,
        forecast: first_forecast,
    })
}

/// Mean `|dV/dQ|` of a learned potential over probe points.
pub fn mean_gradient_norm(potential: &Mlp, probes: &[Vec<f64>]) -> Result<f64> {
    if probes.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for q in probes {
        let g = potential.input_gradient(q)?;
        sum += g.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    Ok(sum / probes.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: serde_json::Value,
    pub model: ModelKind,
    pub epochs: Vec<EpochLosses>,
    pub eval: EvalReport,
    pub wall_clock_s: f64,
    pub failure: Option<String>,
}

impl RunReport {
    pub fn losses_csv(&self) -> String {
        let mut out = String::from("epoch,L_T,L_C,L_R,total\n");
        for e in &self.epochs {
            let t = &e.terms;
            out.push_str(&format!("{},{},{},{},{}\n", e.epoch, t.l_t, t.l_c, t.l_r, t.total));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cdl_autodiff::{MlpSpec, OutputActivation};

    #[test]
    fn trajectory_loss_examples() {
        assert_eq!(loss_trajectory(&[vec![1.0, 2.0]], &[vec![1.0, 2.0]]).unwrap(), 0.0);
        assert_eq!(loss_trajectory(&[vec![3.0]], &[vec![1.0]]).unwrap(), 4.0);
        let pred = [vec![1.0, 0.0], vec![0.0, 1.0]];
        let obs = [vec![0.0, 0.0], vec![0.0, 0.0]];
        assert_eq!(loss_trajectory(&pred, &obs).unwrap(), 0.5);
        assert!(loss_trajectory(&pred, &obs[..1]).is_err());
    }

    #[test]
    fn contact_loss_examples() {
        let c = |b: &[bool]| ContactSignal(b.to_vec());
        let exact = loss_contact(&[vec![1.0, 0.0]], &[c(&[true, false])]).unwrap();
        assert!(exact < 1e-6);
        let uniform = loss_contact(&[vec![0.5, 0.5], vec![0.5, 0.5]], &[c(&[true, false]), c(&[false, true])]).unwrap();
        assert!((uniform - std::f64::consts::LN_2).abs() < 1e-15);
        let single = loss_contact(&[vec![0.9]], &[c(&[true])]).unwrap();
        assert!((single + 0.9f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn reg_loss_examples() {
        let mut net = Mlp::zeros(MlpSpec::new(1, vec![1], 1, OutputActivation::Identity)).unwrap();
        assert_eq!(loss_reg(&net, 1e-4), 0.0);
        net.params.tensors_mut()[0].data[0] = 2.0;
        net.params.tensors_mut()[1].data[0] = 5.0;
        assert!((loss_reg(&net, 1e-4) - 4e-4).abs() < 1e-18);
    }

    #[test]
    fn tape_losses_match_plain() {
        let mut tape = Tape::new();
        let pred = [vec![0.3, -1.2], vec![2.0, 0.1], vec![0.0, 0.0]];
        let obs = [vec![0.1, -1.0], vec![1.5, 0.4], vec![0.2, -0.3]];
        let vars: Vec<Var> = pred.iter().map(|p| tape.vector(p.clone())).collect();
        let lt = loss_trajectory_tape(&mut tape, &vars, &obs).unwrap();
        assert!((tape.value(lt).item() - loss_trajectory(&pred, &obs).unwrap()).abs() < 1e-15);

        let probs = [vec![0.2, 0.99], vec![1.0, 0.0]];
        let flags = [ContactSignal(vec![false, true]), ContactSignal(vec![false, true])];
        let vars: Vec<Var> = probs.iter().map(|p| tape.vector(p.clone())).collect();
        let lc = loss_contact_tape(&mut tape, &vars, &flags).unwrap();
        assert!((tape.value(lc).item() - loss_contact(&probs, &flags).unwrap()).abs() < 1e-12);
    }

    fn toy(len: usize) -> Trajectory {
        let spec = SystemSpec::pendulum();
        crate::mechanics::generate_ground_truth(&spec, len).unwrap()
    }

    #[test]
    fn batches_partition_windows() {
        let trajs = vec![toy(10), toy(10), toy(10)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = make_batches(&trajs, 10, 8, &mut rng).unwrap();
        assert_eq!(b.iter().map(Vec::len).sum::<usize>(), 3);
        let b = make_batches(&trajs, 5, 4, &mut rng).unwrap();
        let mut all: Vec<Window> = b.concat();
        assert_eq!(all.len(), 6);
        all.sort_by_key(|w| (w.traj, w.start));
        assert_eq!(all[0], Window { traj: 0, start: 0, len: 5 });
        assert_eq!(all[1], Window { traj: 0, start: 5, len: 5 });
        assert!(make_batches(&trajs, 11, 4, &mut rng).is_err());
        let again = |seed| make_batches(&trajs, 5, 4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(again(9), again(9));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { horizon: 1, ..Default::default() },
            TrainConfig { lambda_reg: -1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
