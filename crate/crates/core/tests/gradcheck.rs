//! Gradient correctness against central finite differences: every
//! differentiable primitive, a one-layer tanh regression net, and the full
//! gated sequence loss (noise off, lambda = 0 so only differentiable paths
//! are exercised).

mod common;

use common::{fd_grad, max_rel_err};
use gatelord_core::cells::{CellConfig, GateL0rdConfig, Mode};
use gatelord_core::envs::{Episode, EpisodeMeta};
use gatelord_core::model::{batch_episodes, Feed, ModelConfig};
use gatelord_core::tape::{Tape, Var};
use gatelord_core::tensor::Tensor;
use gatelord_core::train::{rollout_targets, sequence_loss, PenaltyKind};
use gatelord_core::RngStream;

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-5;

/// Check one tape-built scalar function against finite differences.
fn check_primitive(
    name: &str,
    n_inputs: usize,
    build: impl Fn(&mut Tape, &[Var]) -> Var,
    x0: &[f64],
    shapes: &[Vec<usize>],
) {
    let eval = |x: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let mut vars = Vec::new();
        let mut offset = 0;
        for shape in shapes {
            let n: usize = shape.iter().product();
            vars.push(tape.leaf(Tensor::new(shape.clone(), x[offset..offset + n].to_vec()).unwrap()));
            offset += n;
        }
        let out = build(&mut tape, &vars);
        tape.value(out).item()
    };

    let numeric = fd_grad(eval, x0, EPS);

    let mut tape = Tape::new();
    let mut vars = Vec::new();
    let mut offset = 0;
    for shape in shapes {
        let n: usize = shape.iter().product();
        vars.push(tape.leaf(Tensor::new(shape.clone(), x0[offset..offset + n].to_vec()).unwrap()));
        offset += n;
    }
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();
    let mut analytic = Vec::with_capacity(x0.len());
    for (v, shape) in vars.iter().zip(shapes) {
        analytic.extend_from_slice(grads.wrt_or_zeros(*v, shape).data());
    }

    let err = max_rel_err(&analytic, &numeric);
    assert!(err < TOL, "{name}: max relative error {err:.3e}");
    assert_eq!(vars.len(), n_inputs);
}

fn rand_vec(n: usize, rng: &mut RngStream) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-0.9, 0.9)).collect()
}

#[test]
fn primitive_gradients_match_finite_differences() {
    let mut rng = RngStream::new(1234);

    // matmul + mean
    let x0 = rand_vec(2 * 3 + 3 * 2, &mut rng);
    check_primitive(
        "matmul",
        2,
        |tape, v| {
            let z = tape.matmul(v[0], v[1]).unwrap();
            tape.mean_all(z)
        },
        &x0,
        &[vec![2, 3], vec![3, 2]],
    );

    // affine with bias broadcast
    let x0 = rand_vec(3 * 2 + 2 * 4 + 4, &mut rng);
    check_primitive(
        "add_bias",
        3,
        |tape, v| {
            let z = tape.matmul(v[0], v[1]).unwrap();
            let z = tape.add_bias(z, v[2]).unwrap();
            let t = tape.tanh(z);
            tape.sum_all(t)
        },
        &x0,
        &[vec![3, 2], vec![2, 4], vec![4]],
    );

    // elementwise chain: tanh, sigmoid, mul, sub, scale
    let x0 = rand_vec(12, &mut rng);
    check_primitive(
        "elementwise",
        2,
        |tape, v| {
            let t = tape.tanh(v[0]);
            let s = tape.sigmoid(v[1]);
            let p = tape.mul(t, s).unwrap();
            let d = tape.sub(p, v[0]).unwrap();
            let k = tape.scale(d, 1.7);
            tape.mean_all(k)
        },
        &x0,
        &[vec![2, 3], vec![2, 3]],
    );

    // retanh on the smooth branch (all inputs strictly positive)
    let x0: Vec<f64> = (0..6).map(|_| rng.uniform(0.1, 1.5)).collect();
    check_primitive(
        "retanh_positive",
        1,
        |tape, v| {
            let r = tape.retanh(v[0]);
            tape.sum_all(r)
        },
        &x0,
        &[vec![6]],
    );

    // concat + slice + row reductions
    let x0 = rand_vec(2 * 2 + 2 * 3, &mut rng);
    check_primitive(
        "concat_slice",
        2,
        |tape, v| {
            let cat = tape.concat_cols(&[v[0], v[1]]).unwrap();
            let sl = tape.slice_cols(cat, 1, 3).unwrap();
            let sc = tape.sum_cols(sl);
            let mc = tape.mean_cols(cat);
            let both = tape.add(sc, mc).unwrap();
            tape.mean_all(both)
        },
        &x0,
        &[vec![2, 2], vec![2, 3]],
    );

    // gated interpolation with gates strictly inside (0, 1)
    let mut x0 = rand_vec(8, &mut rng);
    x0.extend((0..4).map(|_| rng.uniform(0.05, 0.95)));
    check_primitive(
        "gate_lerp",
        3,
        |tape, v| {
            let g = tape.gate_lerp(v[0], v[1], v[2]).unwrap();
            tape.mean_all(g)
        },
        &x0,
        &[vec![4], vec![4], vec![4]],
    );
}

#[test]
fn one_layer_tanh_net_matches_finite_differences() {
    // MSE of a 1-layer tanh net on a random 3x3 instance.
    let mut rng = RngStream::new(77);
    let w0 = rand_vec(9, &mut rng);
    let b0 = rand_vec(3, &mut rng);
    let x_in = Tensor::matrix(3, 3, rand_vec(9, &mut rng)).unwrap();
    let target = Tensor::matrix(3, 3, rand_vec(9, &mut rng)).unwrap();

    let eval = |p: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::matrix(3, 3, p[..9].to_vec()).unwrap());
        let b = tape.leaf(Tensor::new(vec![3], p[9..].to_vec()).unwrap());
        let x = tape.leaf(x_in.clone());
        let t = tape.leaf(target.clone());
        let z = tape.matmul(x, w).unwrap();
        let z = tape.add_bias(z, b).unwrap();
        let y = tape.tanh(z);
        let loss = tape.mse(y, t).unwrap();
        tape.value(loss).item()
    };

    let mut p0 = w0.clone();
    p0.extend_from_slice(&b0);
    let numeric = fd_grad(eval, &p0, EPS);

    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::matrix(3, 3, w0).unwrap());
    let b = tape.leaf(Tensor::new(vec![3], b0).unwrap());
    let x = tape.leaf(x_in.clone());
    let t = tape.leaf(target.clone());
    let z = tape.matmul(x, w).unwrap();
    let z = tape.add_bias(z, b).unwrap();
    let y = tape.tanh(z);
    let loss = tape.mse(y, t).unwrap();
    let grads = tape.backward(loss).unwrap();
    let mut analytic = grads.wrt_or_zeros(w, &[3, 3]).data().to_vec();
    analytic.extend_from_slice(grads.wrt_or_zeros(b, &[3]).data());

    let err = max_rel_err(&analytic, &numeric);
    assert!(err < TOL, "max relative error {err:.3e}");
}

fn wandering_episode(len: usize, seed: u64) -> Episode {
    let mut rng = RngStream::new(seed);
    let mut pos = [rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)];
    let mut obs = Vec::with_capacity(len);
    for _ in 0..len {
        obs.push(vec![pos[0], pos[1]]);
        pos[0] = (pos[0] + rng.uniform(-0.05, 0.05)).clamp(-1.0, 1.0);
        pos[1] = (pos[1] + rng.uniform(-0.05, 0.05)).clamp(-1.0, 1.0);
    }
    Episode {
        id: 0,
        obs,
        act: vec![Vec::new(); len],
        meta: EpisodeMeta::default(),
    }
}

/// Full-model gradient check: GateL0RD sequence loss on a 3-step window
/// (teacher forcing, eval mode so the gate noise is zero, lambda = 0).
#[test]
fn full_gatel0rd_sequence_loss_matches_finite_differences() {
    let config = ModelConfig {
        obs_dim: 2,
        act_dim: 0,
        f_pre_widths: vec![5],
        f_init_hidden: Some(vec![4]),
        warmup: 1,
        residual_scale: 0.1,
        cell: CellConfig::Gatel0rd(GateL0rdConfig::new(4)),
    };
    let mut model = config.build(99).unwrap();
    let ep = wandering_episode(4, 5);
    let batch = batch_episodes(&[&ep.obs], &[&ep.act], 0).unwrap();

    let loss_at = |model: &gatelord_core::model::SeqModel| -> (f64, Vec<f64>) {
        let mut rng = RngStream::new(0);
        let mut rollout = model
            .forward(&batch, Feed::Teacher, Mode::Eval, &mut rng, None)
            .unwrap();
        assert_eq!(rollout.preds.len(), 3);
        let targets = rollout_targets(&batch, rollout.pred_start, rollout.preds.len(), 0.1);
        let loss = sequence_loss(&mut rollout, &targets, 0.0, PenaltyKind::L0).unwrap();
        let value = rollout.tape.value(loss.total).item();
        let grads = rollout.tape.backward(loss.total).unwrap();
        let mut flat = Vec::new();
        for (i, &v) in rollout.bound.iter().enumerate() {
            flat.extend_from_slice(
                grads
                    .wrt_or_zeros(v, model.store.value(i).shape())
                    .data(),
            );
        }
        (value, flat)
    };

    let (_, analytic) = loss_at(&model);

    let p0 = model.store.flatten();
    let numeric = fd_grad(
        |p: &[f64]| {
            model.store.set_from_flat(p);
            loss_at(&model).0
        },
        &p0,
        EPS,
    );
    model.store.set_from_flat(&p0);

    let err = max_rel_err(&analytic, &numeric);
    assert!(
        err < TOL,
        "full-model max relative gradient error {err:.3e}"
    );
}

/// Same setup but through the GRU and LSTM paths, covering their update
/// algebra end to end.
#[test]
fn baseline_cells_match_finite_differences() {
    for cell in [
        CellConfig::Gru { hidden: 3, layers: 1 },
        CellConfig::Lstm { hidden: 3, layers: 1 },
        CellConfig::Elman { hidden: 3, layers: 2 },
    ] {
        let config = ModelConfig {
            obs_dim: 2,
            act_dim: 0,
            f_pre_widths: vec![4],
            f_init_hidden: Some(vec![4]),
            warmup: 1,
            residual_scale: 0.1,
            cell: cell.clone(),
        };
        let mut model = config.build(7).unwrap();
        let ep = wandering_episode(4, 11);
        let batch = batch_episodes(&[&ep.obs], &[&ep.act], 0).unwrap();

        let loss_at = |model: &gatelord_core::model::SeqModel| -> (f64, Vec<f64>) {
            let mut rng = RngStream::new(0);
            let mut rollout = model
                .forward(&batch, Feed::Teacher, Mode::Eval, &mut rng, None)
                .unwrap();
            let targets = rollout_targets(&batch, rollout.pred_start, rollout.preds.len(), 0.1);
            let loss = sequence_loss(&mut rollout, &targets, 0.0, PenaltyKind::None).unwrap();
            let value = rollout.tape.value(loss.total).item();
            let grads = rollout.tape.backward(loss.total).unwrap();
            let mut flat = Vec::new();
            for (i, &v) in rollout.bound.iter().enumerate() {
                flat.extend_from_slice(
                    grads.wrt_or_zeros(v, model.store.value(i).shape()).data(),
                );
            }
            (value, flat)
        };

        let (_, analytic) = loss_at(&model);
        let p0 = model.store.flatten();
        let numeric = fd_grad(
            |p: &[f64]| {
                model.store.set_from_flat(p);
                loss_at(&model).0
            },
            &p0,
            EPS,
        );
        model.store.set_from_flat(&p0);

        let err = max_rel_err(&analytic, &numeric);
        assert!(
            err < TOL,
            "{} max relative gradient error {err:.3e}",
            cell.kind_name()
        );
    }
}

/// Autoregressive feeding keeps gradients flowing through generated inputs;
/// the chain must still match finite differences.
#[test]
fn autoregressive_path_matches_finite_differences() {
    let config = ModelConfig {
        obs_dim: 2,
        act_dim: 0,
        f_pre_widths: vec![4],
        f_init_hidden: None,
        warmup: 1,
        residual_scale: 0.1,
        cell: CellConfig::Gatel0rd(GateL0rdConfig::new(3)),
    };
    let mut model = config.build(13).unwrap();
    let ep = wandering_episode(5, 21);
    let batch = batch_episodes(&[&ep.obs], &[&ep.act], 0).unwrap();

    let loss_at = |model: &gatelord_core::model::SeqModel| -> (f64, Vec<f64>) {
        let mut rng = RngStream::new(0);
        let mut rollout = model
            .forward(&batch, Feed::Autoregressive, Mode::Eval, &mut rng, None)
            .unwrap();
        let targets = rollout_targets(&batch, rollout.pred_start, rollout.preds.len(), 0.1);
        let loss = sequence_loss(&mut rollout, &targets, 0.0, PenaltyKind::None).unwrap();
        let value = rollout.tape.value(loss.total).item();
        let grads = rollout.tape.backward(loss.total).unwrap();
        let mut flat = Vec::new();
        for (i, &v) in rollout.bound.iter().enumerate() {
            flat.extend_from_slice(grads.wrt_or_zeros(v, model.store.value(i).shape()).data());
        }
        (value, flat)
    };

    let (_, analytic) = loss_at(&model);
    let p0 = model.store.flatten();
    let numeric = fd_grad(
        |p: &[f64]| {
            model.store.set_from_flat(p);
            loss_at(&model).0
        },
        &p0,
        EPS,
    );
    model.store.set_from_flat(&p0);

    let err = max_rel_err(&analytic, &numeric);
    assert!(err < TOL, "autoregressive max relative error {err:.3e}");
}
