//! Finite-difference checks of both backward passes.

use cdl_autodiff::{
    forward_mlp, grad_wrt_input, Mlp, MlpSpec, OutputActivation, Tape, Tensor, Var,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-5;

/// Error relative to the larger magnitude, with an absolute floor of 1.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
}

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + FD_STEP;
            let up = f(&probe);
            probe[i] = x[i] - FD_STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn random_spec(rng: &mut ChaCha8Rng) -> MlpSpec {
    let input = rng.random_range(1..=3);
    let depth = rng.random_range(0..=2);
    let hidden = (0..depth).map(|_| rng.random_range(1..=4)).collect();
    let output = rng.random_range(1..=3);
    let act = if rng.random_bool(0.5) {
        OutputActivation::Identity
    } else {
        OutputActivation::Sigmoid
    };
    MlpSpec::new(input, hidden, output, act)
}

/// Scalar root: weighted sum of network outputs.
fn mlp_loss(spec: &MlpSpec, flat: &[f64], x: &[f64], weights: &[f64]) -> f64 {
    let mut mlp = Mlp::zeros(spec.clone()).unwrap();
    mlp.params.set_flat(flat);
    mlp.eval(x).iter().zip(weights).map(|(y, w)| y * w).sum()
}

#[test]
fn mlp_adjoints_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let spec = random_spec(&mut rng);
        let mut mlp = Mlp::glorot(spec.clone(), &mut rng).unwrap();
        let flat: Vec<f64> = mlp.params.flat().iter().map(|w| w + rng.random_range(-0.3..0.3)).collect();
        mlp.params.set_flat(&flat);
        let x: Vec<f64> = (0..spec.input_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let weights: Vec<f64> = (0..spec.output_dim).map(|_| rng.random_range(-1.5..1.5)).collect();

        let mut tape = Tape::new();
        let params = mlp.bind(&mut tape);
        let xv = tape.vector(x.clone());
        let y = forward_mlp(&mut tape, &spec, &params, xv).unwrap();
        let w = tape.vector(weights.clone());
        let root = tape.dot(y, w);
        let grads = tape.backward(root).unwrap();

        let analytic: Vec<f64> = params
            .iter()
            .flat_map(|&p| grads.get_or_zeros(p, tape.value(p)).data)
            .collect();
        let numeric = central_difference(|f| mlp_loss(&spec, f, &x, &weights), &flat);
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max(rel_err(*a, *n));
        }

        let analytic_x = grads.get(xv).unwrap().data.clone();
        let numeric_x = central_difference(|xs| mlp_loss(&spec, &flat, xs, &weights), &x);
        for (a, n) in analytic_x.iter().zip(&numeric_x) {
            worst = worst.max(rel_err(*a, *n));
        }
    }
    assert!(worst < 1e-6, "worst relative error {worst:e}");
}

#[test]
fn twenty_parameter_three_layer_net() {
    // 2 -> 3 -> 2 -> 1 has exactly 20 parameters.
    let spec = MlpSpec::new(2, vec![3, 2], 1, OutputActivation::Identity);
    assert_eq!(spec.param_count(), 20);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let flat: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut mlp = Mlp::zeros(spec.clone()).unwrap();
    mlp.params.set_flat(&flat);
    let x = [0.3, -0.9];

    let mut tape = Tape::new();
    let params = mlp.bind(&mut tape);
    let xv = tape.vector(x.to_vec());
    let y = forward_mlp(&mut tape, &spec, &params, xv).unwrap();
    let grads = tape.backward(y).unwrap();
    let analytic: Vec<f64> = params
        .iter()
        .flat_map(|&p| grads.get(p).unwrap().data.clone())
        .collect();
    let numeric = central_difference(|f| mlp_loss(&spec, f, &x, &[1.0]), &flat);
    for (a, n) in analytic.iter().zip(&numeric) {
        assert!(rel_err(*a, *n) < 1e-6, "{a} vs {n}");
    }
}

#[test]
fn input_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let input = rng.random_range(1..=3);
        let spec = MlpSpec::new(input, vec![rng.random_range(2..=8)], 1, OutputActivation::Identity);
        let mlp = Mlp::glorot(spec.clone(), &mut rng).unwrap();
        let q: Vec<f64> = (0..input).map(|_| rng.random_range(-3.0..3.0)).collect();
        let numeric = central_difference(|x| mlp.eval(x)[0], &q);

        let plain = mlp.input_gradient(&q).unwrap();
        let mut tape = Tape::new();
        let params = mlp.bind(&mut tape);
        let qv = tape.vector(q.clone());
        let g = grad_wrt_input(&mut tape, &spec, &params, qv).unwrap();
        for i in 0..input {
            assert!(rel_err(plain[i], numeric[i]) < 1e-6);
            assert!(rel_err(tape.value(g).data[i], numeric[i]) < 1e-6);
            assert!((tape.value(g).data[i] - plain[i]).abs() < 1e-12);
        }
    }
}

/// Loss that depends on the parameters only through dV/dq, the pattern
/// used when a learned potential drives a force.
#[test]
fn second_order_through_input_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for _ in 0..50 {
        let spec = MlpSpec::new(2, vec![rng.random_range(2..=6), 3], 1, OutputActivation::Identity);
        let mlp = Mlp::glorot(spec.clone(), &mut rng).unwrap();
        let q = vec![rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
        let target = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];

        let loss_of = |flat: &[f64]| {
            let mut m = Mlp::zeros(spec.clone()).unwrap();
            m.params.set_flat(flat);
            let g = m.input_gradient(&q).unwrap();
            g.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        };

        let mut tape = Tape::new();
        let params = mlp.bind(&mut tape);
        let qv = tape.vector(q.clone());
        let g = grad_wrt_input(&mut tape, &spec, &params, qv).unwrap();
        let t = tape.vector(target.to_vec());
        let d = tape.sub(g, t);
        let root = tape.dot(d, d);
        let grads = tape.backward(root).unwrap();
        let analytic: Vec<f64> = params
            .iter()
            .flat_map(|&p| grads.get_or_zeros(p, tape.value(p)).data)
            .collect();
        let numeric = central_difference(loss_of, &mlp.params.flat());
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!(rel_err(*a, *n) < 1e-6, "{a} vs {n}");
        }
    }
}

#[test]
fn backward_is_linear_in_the_root() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = MlpSpec::new(2, vec![4], 2, OutputActivation::Sigmoid);
    let mlp = Mlp::glorot(spec.clone(), &mut rng).unwrap();
    let (a, b) = (1.7, -0.45);

    let mut tape = Tape::new();
    let params = mlp.bind(&mut tape);
    let x = tape.vector(vec![0.2, -1.1]);
    let y = forward_mlp(&mut tape, &spec, &params, x).unwrap();
    let f = tape.slice(y, 0, 1);
    let f = tape.sum(f);
    let g0 = tape.slice(y, 1, 1);
    let g = tape.tanh(g0);
    let g = tape.sum(g);
    let af = tape.scale(f, a);
    let bg = tape.scale(g, b);
    let combo = tape.add(af, bg);

    let gf = tape.backward(f).unwrap();
    let gg = tape.backward(g).unwrap();
    let gc = tape.backward(combo).unwrap();
    for &p in params.iter().chain(std::iter::once(&x)) {
        let like = tape.value(p).clone();
        let lhs = gc.get_or_zeros(p, &like);
        let rf = gf.get_or_zeros(p, &like);
        let rg = gg.get_or_zeros(p, &like);
        for i in 0..lhs.len() {
            assert!((lhs.data[i] - (a * rf.data[i] + b * rg.data[i])).abs() < 1e-12);
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = MlpSpec::new(4, vec![500], 1, OutputActivation::Identity);
    let mlp = Mlp::glorot(spec.clone(), &mut rng).unwrap();
    let x = [0.1, -0.2, 0.3, 0.7];
    let run = || {
        let mut tape = Tape::new();
        let p = mlp.bind(&mut tape);
        let xv = tape.vector(x.to_vec());
        let y = forward_mlp(&mut tape, &spec, &p, xv).unwrap();
        tape.value(y).item().to_bits()
    };
    assert_eq!(run(), run());
    assert_eq!(mlp.eval(&x)[0].to_bits(), mlp.eval(&x)[0].to_bits());
}

#[test]
fn glorot_init_is_seeded_and_bounded() {
    let spec = MlpSpec::new(2, vec![500], 1, OutputActivation::Identity);
    let a = Mlp::glorot(spec.clone(), &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
    let b = Mlp::glorot(spec.clone(), &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
    assert_eq!(a, b);
    let limit = (6.0 / 502.0_f64).sqrt();
    let w0 = a.params.get("layer0.weight").unwrap();
    assert!(w0.data.iter().all(|w| w.abs() <= limit));
    assert!(a.params.get("layer0.bias").unwrap().data.iter().all(|&b| b == 0.0));
}

/// Builds a small graph that touches every tape operation.
fn all_ops(tape: &mut Tape, x: Var, m: Var) -> Var {
    let mx = tape.matvec(m, x);
    let t = tape.tanh(mx);
    let s = tape.sigmoid(x);
    let st = tape.matvec_t(m, t);
    let prod = tape.mul(st, s);
    let shifted = tape.affine(prod, 0.5, 2.0);
    let logs = tape.ln(shifted);
    let r = tape.recip(shifted);
    let c = tape.clamp(r, 0.0, 0.45);
    let head = tape.slice(logs, 0, 2);
    let tail = tape.slice(c, 2, 1);
    let joined = tape.concat(head, tail);
    let padded = tape.pad(joined, 1, 5);
    let o = tape.outer(padded, x);
    let total = tape.sum(o);
    let spread = tape.broadcast(total, 3, 1);
    let scaled = tape.scale_by(spread, total);
    let diff = tape.sub(scaled, x);
    tape.dot(diff, diff)
}

fn all_ops_value(xs: &[f64], ms: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let x = tape.vector(xs.to_vec());
    let m = tape.leaf(Tensor::new(2, 3, ms.to_vec()));
    let root = all_ops(&mut tape, x, m);
    tape.value(root).item()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn every_op_matches_finite_differences(
        xs in prop::collection::vec(-1.0..1.0f64, 3),
        ms in prop::collection::vec(-1.0..1.0f64, 6),
    ) {
        let mut tape = Tape::new();
        let x = tape.vector(xs.clone());
        let m = tape.leaf(Tensor::new(2, 3, ms.clone()));
        let root = all_ops(&mut tape, x, m);
        let grads = tape.backward(root).unwrap();
        let gx = grads.get(x).unwrap().data.clone();
        let gm = grads.get(m).unwrap().data.clone();
        let nx = central_difference(|v| all_ops_value(v, &ms), &xs);
        let nm = central_difference(|v| all_ops_value(&xs, v), &ms);
        for (a, n) in gx.iter().zip(&nx).chain(gm.iter().zip(&nm)) {
            prop_assert!(rel_err(*a, *n) < 1e-6, "{} vs {}", a, n);
        }

        // The recorded backward pass must agree with the numeric one.
        let sym = tape.grad(root, &[x, m]).unwrap();
        for (s, a) in tape.value(sym[0]).data.iter().zip(&gx) {
            prop_assert!((s - a).abs() < 1e-12);
        }
        for (s, a) in tape.value(sym[1]).data.iter().zip(&gm) {
            prop_assert!((s - a).abs() < 1e-12);
        }
    }

    #[test]
    fn recorded_gradient_is_differentiable(
        xs in prop::collection::vec(-1.0..1.0f64, 3),
        ms in prop::collection::vec(-1.0..1.0f64, 6),
    ) {
        // Hessian-vector product of all_ops along a fixed direction.
        let dir = [0.3, -0.7, 0.5];
        let hv = |v: &[f64]| {
            let mut tape = Tape::new();
            let x = tape.vector(v.to_vec());
            let m = tape.leaf(Tensor::new(2, 3, ms.clone()));
            let root = all_ops(&mut tape, x, m);
            let g = tape.grad(root, &[x]).unwrap()[0];
            let d = tape.vector(dir.to_vec());
            let gd = tape.dot(g, d);
            (tape.value(gd).item(), tape.backward(gd).unwrap().get(x).unwrap().data.clone())
        };
        let (_, analytic) = hv(&xs);
        let numeric = central_difference(|v| hv(v).0, &xs);
        for (a, n) in analytic.iter().zip(&numeric) {
            prop_assert!(rel_err(*a, *n) < 1e-5, "{} vs {}", a, n);
        }
    }
}
