use cdl_autodiff::Tensor;
use cdl_core::integrators::{GapContacts, RecordedContacts, TrueForce};
use cdl_core::mechanics::{
    add_noise, generate_ground_truth, make_dataset, SceneKind, SystemSpec, Trajectory, Windowing,
};
use cdl_core::models::{LearnedForce, Model, ModelKind, DEFAULT_HIDDEN};
use cdl_core::training::{
    batch_gradients, batch_losses, evaluate, evaluate_with, init_model, loss_trajectory, make_batches, train,
    TestCase, TrainConfig,
};
use cdl_core::CoreError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SMALL: [usize; 1] = [16];

fn noisy(spec: &SystemSpec, steps: usize, sigma: f64, seed: u64) -> Trajectory {
    let gt = generate_ground_truth(spec, steps).unwrap();
    add_noise(&gt, sigma, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// Windows of `len` states whose interior includes a contact event.
fn contact_windows(spec: &SystemSpec, len: usize, count: usize) -> Vec<Trajectory> {
    let traj = noisy(spec, 600, 0.1, 11);
    let mut out = Vec::new();
    let mut i = 2;
    while out.len() < count && i + len < traj.len() {
        if traj.contacts[i].any() {
            let start = i + 1 - len / 2;
            out.push(traj.window(start, len));
            i += len;
        }
        i += 1;
    }
    assert_eq!(out.len(), count, "not enough contact events");
    out
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Compares tape adjoints of the total batch loss with central differences
/// on every parameter of every network.
fn check_rollout_gradients(model: &Model, windows: &[Trajectory], config: &TrainConfig, tol: f64) {
    let (_, grads) = batch_gradients(model, windows, config).unwrap();
    let eps = 1e-5;
    let mut worst = 0.0f64;
    let mut nonzero = vec![false; grads.len()];
    for (k, net_grads) in grads.iter().enumerate() {
        for (ti, g) in net_grads.iter().enumerate() {
            for j in 0..g.data.len() {
                let f = |delta: f64| {
                    let mut m = model.clone();
                    m.networks_mut()[k].params.tensors_mut()[ti].data[j] += delta;
                    batch_losses(&m, windows, config).unwrap().total
                };
                let fd = (f(eps) - f(-eps)) / (2.0 * eps);
                worst = worst.max(rel_err(g.data[j], fd));
                nonzero[k] |= g.data[j].abs() > 1e-9;
            }
        }
    }
    assert!(worst < tol, "{}: worst relative error {worst:e}", model.kind());
    assert!(nonzero.iter().all(|&x| x), "{}: a network received no gradient", model.kind());
}

#[test]
fn rollout_gradients_match_finite_differences_without_contacts() {
    let spec = SystemSpec::pendulum();
    let traj = noisy(&spec, 40, 0.2, 3);
    let windows = vec![traj.window(0, 6), traj.window(17, 6)];
    let config = TrainConfig::default();
    for kind in [ModelKind::Cdl, ModelKind::VinVv, ModelKind::Resnet] {
        let model = init_model(kind, &spec, &SMALL, 5).unwrap();
        check_rollout_gradients(&model, &windows, &config, 1e-4);
    }
}

#[test]
fn rollout_gradients_match_finite_differences_through_impacts() {
    for spec in [SystemSpec::bouncing_ball(), SystemSpec::newtons_cradle()] {
        let windows = contact_windows(&spec, 4, 2);
        for kind in [ModelKind::Cdl, ModelKind::CdlNoTouch, ModelKind::ResnetContact] {
            let model = init_model(kind, &spec, &SMALL, 8).unwrap();
            check_rollout_gradients(&model, &windows, &TrainConfig::default(), 1e-4);
        }
        let model = init_model(ModelKind::Cdl, &spec, &SMALL, 9).unwrap();
        let self_predicted = TrainConfig {
            teacher_forcing: false,
            ..TrainConfig::default()
        };
        check_rollout_gradients(&model, &windows, &self_predicted, 1e-4);
    }
}

/// With no contact or regularisation terms the tape gradient equals the
/// finite-difference gradient of the trajectory loss of a plain forecast.
#[test]
fn trajectory_loss_gradient_agrees_with_plain_forecast() {
    let config = TrainConfig {
        lambda_reg: 0.0,
        contact_weight: 0.0,
        ..TrainConfig::default()
    };
    let cases = [
        (SystemSpec::pendulum(), ModelKind::VinVv),
        (SystemSpec::pendulum(), ModelKind::Resnet),
        (SystemSpec::bouncing_ball(), ModelKind::Cdl),
        (SystemSpec::newtons_cradle(), ModelKind::Cdl),
    ];
    for (spec, kind) in cases {
        let window = if spec.scene.has_contacts() {
            contact_windows(&spec, 5, 1).remove(0)
        } else {
            noisy(&spec, 10, 0.2, 1).window(2, 5)
        };
        let model = init_model(kind, &spec, &SMALL, 21).unwrap();
        let targets: Vec<Vec<f64>> = window.states[1..].iter().map(|s| s.concat()).collect();
        let plain_loss = |m: &Model| {
            let r = match m {
                Model::Cdl { model, .. } => model.forecast_with(
                    &LearnedForce(&model.potential),
                    &RecordedContacts {
                        signals: &window.contacts,
                        start: window.states[0].n,
                    },
                    &window.states[0],
                    &window.contacts[0],
                    window.len() - 1,
                ),
                other => other.forecast(&window.states[0], &window.contacts[0], window.len() - 1),
            };
            let pred: Vec<Vec<f64>> = r.trajectory.states[1..].iter().map(|s| s.concat()).collect();
            loss_trajectory(&pred, &targets).unwrap()
        };
        let (terms, grads) = batch_gradients(&model, std::slice::from_ref(&window), &config).unwrap();
        assert!((terms.total - terms.l_t).abs() < 1e-15);
        assert!((terms.l_t - plain_loss(&model)).abs() < 1e-12);
        let eps = 1e-5;
        let net0: &Vec<Tensor> = &grads[0];
        for (ti, g) in net0.iter().enumerate() {
            for j in (0..g.data.len()).step_by(3) {
                let f = |delta: f64| {
                    let mut m = model.clone();
                    m.networks_mut()[0].params.tensors_mut()[ti].data[j] += delta;
                    plain_loss(&m)
                };
                let fd = (f(eps) - f(-eps)) / (2.0 * eps);
                assert!(rel_err(g.data[j], fd) < 1e-4, "{kind}: {} vs {fd}", g.data[j]);
            }
        }
        if let Some(contact) = grads.get(1) {
            assert!(contact.iter().all(|t| t.data.iter().all(|&x| x == 0.0)));
        }
    }
}

#[test]
fn training_is_bit_reproducible() {
    let spec = SystemSpec::bouncing_ball();
    let ds = make_dataset(&spec, 12, 10, 0.2, 4, Windowing::Sliced).unwrap();
    let config = TrainConfig {
        epochs: 6,
        seed: 4,
        ..TrainConfig::default()
    };
    let case = TestCase::generate(&spec, 120, 0.2, 4).unwrap();
    let run = || {
        let model = init_model(ModelKind::Cdl, &spec, &[32], 4).unwrap();
        let out = train(model, &ds, &config).unwrap();
        let report = evaluate(&out.model, std::slice::from_ref(&case)).unwrap();
        (out.model, out.history, report.rmse)
    };
    let (m1, h1, r1) = run();
    let (m2, h2, r2) = run();
    assert_eq!(m1, m2);
    assert_eq!(h1, h2);
    assert_eq!(r1.to_bits(), r2.to_bits());
}

/// Mean total loss over epochs 45..50 is below the mean over epochs 0..5,
/// median over five seeds, for every default scene and model pairing.
#[test]
fn loss_decreases_over_first_fifty_epochs() {
    let runs = [
        (SceneKind::Pendulum, 20, 0.2, vec![ModelKind::Cdl, ModelKind::VinVv, ModelKind::Resnet]),
        (
            SceneKind::BouncingBall,
            40,
            0.2,
            vec![ModelKind::Cdl, ModelKind::CdlNoTouch, ModelKind::Resnet, ModelKind::ResnetContact],
        ),
        (
            SceneKind::NewtonsCradle,
            50,
            0.02,
            vec![ModelKind::Cdl, ModelKind::Resnet, ModelKind::ResnetContact],
        ),
    ];
    for (scene, j, sigma, kinds) in runs {
        let spec = SystemSpec::for_scene(scene);
        for kind in kinds {
            let mut ratios: Vec<f64> = (0..5)
                .map(|seed| {
                    let ds = make_dataset(&spec, j, 10, sigma, seed, Windowing::Sliced).unwrap();
                    let config = TrainConfig {
                        epochs: 50,
                        seed,
                        ..TrainConfig::default()
                    };
                    let model = init_model(kind, &spec, &DEFAULT_HIDDEN, seed).unwrap();
                    let out = train(model, &ds, &config).unwrap();
                    assert!(out.failure.is_none());
                    let mean = |r: std::ops::Range<usize>| {
                        out.history[r].iter().map(|e| e.terms.total).sum::<f64>() / 5.0
                    };
                    mean(45..50) / mean(0..5)
                })
                .collect();
            ratios.sort_by(f64::total_cmp);
            assert!(ratios[2] < 1.0, "{scene}/{kind}: median ratio {}", ratios[2]);
        }
    }
}

#[test]
fn true_physics_scores_zero_and_order_does_not_matter() {
    let spec = SystemSpec::bouncing_ball();
    let a = TestCase::generate(&spec, 300, 0.2, 1).unwrap();
    let mut b = TestCase::generate(&spec.clone().with_elasticity(0.8), 200, 0.2, 2).unwrap();
    b.ground_truth.states.truncate(150);
    b.ground_truth.contacts.truncate(150);
    b.observed.states.truncate(150);
    b.observed.contacts.truncate(150);
    let exact = evaluate_with(
        &spec,
        std::slice::from_ref(&a),
        |s, c, n| {
            let model = init_model(ModelKind::Cdl, &spec, &SMALL, 0).unwrap();
            let Model::Cdl { model, .. } = model else { unreachable!() };
            model.forecast_with(&TrueForce(&spec), &GapContacts(&spec), s, c, n)
        },
        |_| None,
    )
    .unwrap();
    assert_eq!(exact.rmse, 0.0);
    assert!(exact.rmse_noisy > 0.1);

    let model = init_model(ModelKind::Cdl, &spec, &SMALL, 3).unwrap();
    let ab = evaluate(&model, &[a.clone(), b.clone()]).unwrap();
    let ba = evaluate(&model, &[b, a]).unwrap();
    assert!((ab.rmse - ba.rmse).abs() < 1e-12 * ab.rmse.max(1.0));
    assert_eq!(ab.contact_accuracy, ba.contact_accuracy);
}

#[test]
fn non_finite_loss_stops_with_untouched_parameters() {
    let spec = SystemSpec::pendulum();
    let mut ds = make_dataset(&spec, 4, 10, 0.2, 0, Windowing::Sliced).unwrap();
    ds.trajectories[2].states[5].q[0] = f64::NAN;
    let model = init_model(ModelKind::Cdl, &spec, &SMALL, 0).unwrap();
    let config = TrainConfig {
        epochs: 3,
        batch_size: 1,
        ..TrainConfig::default()
    };
    let out = train(model, &ds, &config).unwrap();
    assert!(matches!(out.failure, Some(CoreError::NonFiniteLoss { epoch: 0, .. })));
    for (_, net) in out.model.networks() {
        assert!(net.params.tensors().iter().all(Tensor::all_finite));
    }
}

#[test]
fn configuration_errors_are_reported() {
    let spec = SystemSpec::pendulum();
    let ds = make_dataset(&spec, 4, 10, 0.2, 0, Windowing::Sliced).unwrap();
    let ball = init_model(ModelKind::Cdl, &SystemSpec::bouncing_ball(), &SMALL, 0).unwrap();
    assert!(matches!(train(ball, &ds, &TrainConfig::default()), Err(CoreError::Config(_))));
    let model = init_model(ModelKind::Cdl, &spec, &SMALL, 0).unwrap();
    let long = TrainConfig {
        horizon: 11,
        ..TrainConfig::default()
    };
    assert!(matches!(train(model, &ds, &long), Err(CoreError::Config(_))));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(make_batches(&ds.trajectories, 10, 0, &mut rng).is_err());
    assert!(init_model(ModelKind::VinVv, &SystemSpec::newtons_cradle(), &SMALL, 0).is_err());
}

#[test]
fn checkpoints_restore_trained_parameters() {
    let spec = SystemSpec::newtons_cradle();
    let ds = make_dataset(&spec, 6, 10, 0.02, 1, Windowing::Sliced).unwrap();
    let model = init_model(ModelKind::ResnetContact, &spec, &SMALL, 1).unwrap();
    let config = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let trained = train(model, &ds, &config).unwrap().model;
    let text = serde_json::to_string(&trained.to_checkpoint("h")).unwrap();
    let restored = Model::from_checkpoint(&serde_json::from_str(&text).unwrap()).unwrap();
    for ((_, a), (_, b)) in trained.networks().iter().zip(restored.networks()) {
        assert_eq!(a.params.flat(), b.params.flat());
    }
    let case = TestCase::generate(&spec, 50, 0.02, 1).unwrap();
    let r1 = evaluate(&trained, std::slice::from_ref(&case)).unwrap();
    let r2 = evaluate(&restored, std::slice::from_ref(&case)).unwrap();
    assert_eq!(r1.rmse.to_bits(), r2.rmse.to_bits());
}
