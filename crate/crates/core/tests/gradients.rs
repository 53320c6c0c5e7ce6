mod common;

use common::{config, max_batch_gradient_error, min_pre_activation, random_mat, random_params, random_task, rel_err, rng};
use fewshot_graph::linalg::{sq_dist, Mat};
use fewshot_graph::proto::{cross_entropy, cross_entropy_logit_grad, predict_prob};
use fewshot_graph::transform::{Activation, Mode, TransformParams};
use rand::Rng as _;

/// Scalar probe `Σ r ⊙ forward(x)`.
fn probe(params: &TransformParams, x: &Mat, r: &Mat) -> f64 {
    let out = params.forward(x, Mode::Eval).unwrap();
    out.as_slice().iter().zip(r.as_slice()).map(|(a, b)| a * b).sum()
}

#[test]
fn transform_backward_matches_finite_differences() {
    let mut r = rng(21);
    let mut checked = 0;
    while checked < 6 {
        let act = if checked % 2 == 0 { Activation::Relu } else { Activation::Tanh };
        let c = config(6, 2, 4, 5, 1 + checked % 2, act);
        let params = random_params(c, &mut r);
        let x = random_mat(4, 6, &mut r);
        if common::oracle_forward(&params, &common::rows_of(&x)).min_pre_activation < 1e-4 {
            continue;
        }
        let upstream = random_mat(4, 6, &mut r);
        let (_, cache) = params.forward_cached(&x, Mode::Eval).unwrap();
        let (g, gx) = params.backward(&cache, &upstream).unwrap();

        let mut p = params.clone();
        let sizes: Vec<usize> = p.tensors().iter().map(|t| t.len()).collect();
        for (ti, len) in sizes.into_iter().enumerate() {
            for j in 0..len {
                let orig = p.tensors()[ti][j];
                p.tensors_mut()[ti][j] = orig + 1e-5;
                let plus = probe(&p, &x, &upstream);
                p.tensors_mut()[ti][j] = orig - 1e-5;
                let minus = probe(&p, &x, &upstream);
                p.tensors_mut()[ti][j] = orig;
                let numeric = (plus - minus) / 2e-5;
                let e = rel_err(g.tensors()[ti][j], numeric, 1e-6);
                assert!(e < 1e-4, "tensor {ti}[{j}]: {} vs {numeric}", g.tensors()[ti][j]);
            }
        }
        let mut xx = x.clone();
        for k in 0..xx.as_slice().len() {
            let orig = xx.as_slice()[k];
            xx.as_mut_slice()[k] = orig + 1e-5;
            let plus = probe(&params, &xx, &upstream);
            xx.as_mut_slice()[k] = orig - 1e-5;
            let minus = probe(&params, &xx, &upstream);
            xx.as_mut_slice()[k] = orig;
            let numeric = (plus - minus) / 2e-5;
            assert!(rel_err(gx.as_slice()[k], numeric, 1e-6) < 1e-4);
        }
        checked += 1;
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let mut r = rng(2);
    let params = random_params(config(8, 2, 8, 8, 2, Activation::Relu), &mut r);
    let x = random_mat(3, 8, &mut r);
    let (_, cache) = params.forward_cached(&x, Mode::Eval).unwrap();
    let (g, gx) = params.backward(&cache, &Mat::zeros(3, 8)).unwrap();
    assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    assert!(gx.as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn dropout_gradients_replay_the_cached_masks() {
    let mut r = rng(4);
    let mut c = config(6, 2, 6, 8, 1, Activation::Tanh);
    c.p_drop = 0.3;
    let params = random_params(c, &mut r);
    let x = random_mat(3, 6, &mut r);
    let upstream = random_mat(3, 6, &mut r);
    let seeds = fewshot_graph::rng::Seeds::new(77);
    let run = |p: &TransformParams| {
        let mut dr = seeds.stream(fewshot_graph::rng::Stream::Dropout);
        let out = p.forward(&x, Mode::Train(&mut dr)).unwrap();
        out.as_slice().iter().zip(upstream.as_slice()).map(|(a, b)| a * b).sum::<f64>()
    };
    let mut dr = seeds.stream(fewshot_graph::rng::Stream::Dropout);
    let (_, cache) = params.forward_cached(&x, Mode::Train(&mut dr)).unwrap();
    let (g, _) = params.backward(&cache, &upstream).unwrap();
    let mut p = params.clone();
    for j in 0..p.tensors()[3].len() {
        let orig = p.tensors()[3][j];
        p.tensors_mut()[3][j] = orig + 1e-5;
        let plus = run(&p);
        p.tensors_mut()[3][j] = orig - 1e-5;
        let minus = run(&p);
        p.tensors_mut()[3][j] = orig;
        assert!(rel_err(g.tensors()[3][j], (plus - minus) / 2e-5, 1e-6) < 1e-4);
    }
}

#[test]
fn meta_objective_gradients_match_finite_differences() {
    let mut r = rng(31);
    let mut done = 0;
    while done < 4 {
        let c = config(6, 2, 4, 6, 1 + done % 2, Activation::Relu);
        let params = random_params(c, &mut r);
        let k = 1 + done;
        let tasks: Vec<_> = (0..2).map(|_| random_task(k, 2, &mut r).0).collect();
        let n = 2 * (k + 2);
        let emb = random_mat(n, 6, &mut r);
        if min_pre_activation(&params, &emb, &tasks) < 1e-4 {
            continue;
        }
        let e = max_batch_gradient_error(&params, &emb, &tasks, 0.01, 1e-5, 1e-6);
        assert!(e < 1e-4, "instance {done}: {e}");
        done += 1;
    }
}

#[test]
fn prediction_gradients_match_finite_differences() {
    let mut r = rng(9);
    for _ in 0..50 {
        let v: Vec<Vec<f64>> = (0..4).map(|_| (0..5).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let truth = r.gen_bool(0.5);
        let loss = |v: &[Vec<f64>]| cross_entropy(predict_prob(&v[0], &v[1], &v[2], &v[3]).unwrap().prob_positive, truth);
        let p = predict_prob(&v[0], &v[1], &v[2], &v[3]).unwrap();
        let g = cross_entropy_logit_grad(p.prob_positive, truth);
        // logit = |qn - cn|² - |qp - cp|²
        assert!((p.dist_pos - sq_dist(&v[0], &v[1])).abs() < 1e-15);
        for (vec, sign, other) in [(0usize, -1.0, 1usize), (1, -1.0, 0), (2, 1.0, 3), (3, 1.0, 2)] {
            for j in 0..5 {
                let analytic = g * sign * 2.0 * (v[vec][j] - v[other][j]);
                let mut w = v.clone();
                let numeric = {
                    let orig = w[vec][j];
                    w[vec][j] = orig + 1e-6;
                    let plus = loss(&w);
                    w[vec][j] = orig - 1e-6;
                    let minus = loss(&w);
                    (plus - minus) / 2e-6
                };
                assert!(rel_err(analytic, numeric, 1e-6) < 1e-6, "{analytic} vs {numeric}");
            }
        }
    }
}
