//! Shared helpers for the integration tests: a naive transformation
//! oracle, random instances and finite differences.
#![allow(dead_code)]

use fewshot_graph::graph::LabelMatrix;
use fewshot_graph::linalg::Mat;
use fewshot_graph::meta::task_gradients;
use fewshot_graph::rng::{Rng, Seeds, Stream};
use fewshot_graph::task::Task;
use fewshot_graph::transform::{Activation, Mode, TransformConfig, TransformParams};
use rand::seq::SliceRandom;
use rand::Rng as _;

pub fn rng(seed: u64) -> Rng {
    Seeds::new(seed).stream(Stream::Eval)
}

pub fn config(d: usize, heads: usize, d_prime: usize, d_ff: usize, blocks: usize, activation: Activation) -> TransformConfig {
    TransformConfig {
        d,
        d_prime,
        heads,
        d_ff,
        blocks,
        p_drop: 0.0,
        ln_epsilon: 1e-5,
        activation,
    }
}

/// Parameters with every tensor random, including biases and layer-norm
/// gains, so that no term of the forward pass is trivially zero.
pub fn random_params(config: TransformConfig, rng: &mut Rng) -> TransformParams {
    let mut p = TransformParams::zeros(config);
    for (i, t) in p.tensors_mut().into_iter().enumerate() {
        let gain = matches!(i % 12, 8 | 10);
        for x in t.iter_mut() {
            *x = if gain {
                rng.gen_range(0.5..1.5)
            } else {
                rng.gen_range(-0.6..0.6)
            };
        }
    }
    p
}

pub fn random_mat(rows: usize, cols: usize, rng: &mut Rng) -> Mat {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

type Rows = Vec<Vec<f64>>;

fn matvec(w: &Mat, rows: std::ops::Range<usize>, x: &[f64]) -> Vec<f64> {
    rows.map(|r| (0..x.len()).map(|c| w[(r, c)] * x[c]).sum()).collect()
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter()
        .enumerate()
        .map(|(j, v)| gain[j] * (v - mean) / (var + eps).sqrt() + bias[j])
        .collect()
}

/// Output of the naive forward pass plus the smallest absolute
/// feed-forward pre-activation (for kink checks under ReLU).
pub struct OracleOut {
    pub out: Rows,
    pub min_pre_activation: f64,
}

/// Eval-mode forward pass, one equation at a time: per-head scaled
/// dot-product attention, head concatenation, output projection, residual
/// and layer norm, then the node-wise feed-forward network with its own
/// residual and layer norm.
pub fn oracle_forward(params: &TransformParams, input: &Rows) -> OracleOut {
    let c = *params.config();
    let dh = c.d_prime / c.heads;
    let mut x = input.clone();
    let mut min_pre = f64::INFINITY;
    for b in params.blocks() {
        let n = x.len();
        let mut concat: Rows = vec![Vec::new(); n];
        for h in 0..c.heads {
            let rows = h * dh..(h + 1) * dh;
            let q: Rows = x.iter().map(|u| matvec(&b.wq, rows.clone(), u)).collect();
            let k: Rows = x.iter().map(|u| matvec(&b.wk, rows.clone(), u)).collect();
            let v: Rows = x.iter().map(|u| matvec(&b.wv, rows.clone(), u)).collect();
            for i in 0..n {
                let logits: Vec<f64> = (0..n)
                    .map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let z: f64 = logits.iter().map(|l| l.exp()).sum();
                let mut head = vec![0.0; dh];
                for j in 0..n {
                    let w = logits[j].exp() / z;
                    for t in 0..dh {
                        head[t] += w * v[j][t];
                    }
                }
                concat[i].extend(head);
            }
        }
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let projected = matvec(&b.wo, 0..c.d, &concat[i]);
            let res1: Vec<f64> = projected.iter().zip(&x[i]).map(|(a, b)| a + b).collect();
            let y1 = layer_norm(&res1, &b.ln1_gain, &b.ln1_bias, c.ln_epsilon);
            let pre: Vec<f64> = matvec(&b.w1, 0..c.d_ff, &y1)
                .iter()
                .zip(&b.b1)
                .map(|(a, b)| a + b)
                .collect();
            min_pre = pre.iter().fold(min_pre, |m, v| m.min(v.abs()));
            let act: Vec<f64> = pre
                .iter()
                .map(|&v| match c.activation {
                    Activation::Relu => v.max(0.0),
                    Activation::Tanh => v.tanh(),
                })
                .collect();
            let ff: Vec<f64> = matvec(&b.w2, 0..c.d, &act)
                .iter()
                .zip(&b.b2)
                .map(|(a, b)| a + b)
                .collect();
            let res2: Vec<f64> = ff.iter().zip(&y1).map(|(a, b)| a + b).collect();
            next.push(layer_norm(&res2, &b.ln2_gain, &b.ln2_bias, c.ln_epsilon));
        }
        x = next;
    }
    OracleOut {
        out: x,
        min_pre_activation: min_pre,
    }
}

pub fn rows_of(m: &Mat) -> Rows {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Label matrix over `n` nodes where label 0 holds the first `pos` nodes.
pub fn single_label(n: usize, pos: usize) -> LabelMatrix {
    LabelMatrix::new(n, vec![(0..pos).collect()]).unwrap()
}

/// A task over a fresh embedding table: `k` positive and `k` negative
/// supports, `q` queries of each polarity, all distinct nodes.
pub fn random_task(k: usize, q: usize, rng: &mut Rng) -> (Task, usize) {
    let n = 2 * (k + q);
    let mut pos: Vec<usize> = (0..k + q).collect();
    let mut neg: Vec<usize> = (k + q..n).collect();
    pos.shuffle(rng);
    neg.shuffle(rng);
    let task = Task {
        label: 0,
        support_pos: pos[..k].to_vec(),
        support_neg: neg[..k].to_vec(),
        query_pos: pos[k..].to_vec(),
        query_neg: neg[k..].to_vec(),
    };
    (task, n)
}

/// Batch objective: mean summed cross-entropy over tasks plus
/// `lambda·‖Θ‖²`, evaluated without dropout.
pub fn batch_objective(params: &TransformParams, emb: &Mat, tasks: &[Task], lambda: f64) -> f64 {
    let ce: f64 = tasks
        .iter()
        .map(|t| task_gradients(params, emb, t, Mode::Eval).unwrap().loss)
        .sum();
    ce / tasks.len() as f64 + lambda * params.sum_sq()
}

/// Analytic gradient of [`batch_objective`]: (Θ gradient, embedding
/// gradient as a dense matrix).
pub fn batch_gradient(params: &TransformParams, emb: &Mat, tasks: &[Task], lambda: f64) -> (TransformParams, Mat) {
    let n = tasks.len() as f64;
    let mut g = TransformParams::zeros(*params.config());
    let mut ge = Mat::zeros(emb.rows(), emb.cols());
    for t in tasks {
        let r = task_gradients(params, emb, t, Mode::Eval).unwrap();
        g.add_assign(&r.params);
        for (node, row) in r.rows {
            for (a, b) in ge.row_mut(node).iter_mut().zip(row) {
                *a += b;
            }
        }
    }
    g.scale(1.0 / n);
    g.add_scaled(2.0 * lambda, params);
    ge.scale(1.0 / n);
    (g, ge)
}

/// Largest relative error between analytic and central-difference
/// gradients of [`batch_objective`] over every parameter and every
/// embedding entry.
pub fn max_batch_gradient_error(params: &TransformParams, emb: &Mat, tasks: &[Task], lambda: f64, eps: f64, floor: f64) -> f64 {
    let (g, ge) = batch_gradient(params, emb, tasks, lambda);
    let mut worst: f64 = 0.0;
    let mut p = params.clone();
    let flat: Vec<f64> = g.tensors().iter().flat_map(|t| t.iter().copied()).collect();
    let mut idx = 0;
    let sizes: Vec<usize> = p.tensors().iter().map(|t| t.len()).collect();
    for (ti, len) in sizes.into_iter().enumerate() {
        for j in 0..len {
            let orig = p.tensors()[ti][j];
            p.tensors_mut()[ti][j] = orig + eps;
            let plus = batch_objective(&p, emb, tasks, lambda);
            p.tensors_mut()[ti][j] = orig - eps;
            let minus = batch_objective(&p, emb, tasks, lambda);
            p.tensors_mut()[ti][j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(rel_err(flat[idx], numeric, floor));
            idx += 1;
        }
    }
    let mut e = emb.clone();
    for k in 0..e.as_slice().len() {
        let orig = e.as_slice()[k];
        e.as_mut_slice()[k] = orig + eps;
        let plus = batch_objective(params, &e, tasks, lambda);
        e.as_mut_slice()[k] = orig - eps;
        let minus = batch_objective(params, &e, tasks, lambda);
        e.as_mut_slice()[k] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(rel_err(ge.as_slice()[k], numeric, floor));
    }
    worst
}

/// Smallest |pre-activation| seen by the oracle across every set call of
/// the tasks; used to reject instances that sit on a ReLU kink.
pub fn min_pre_activation(params: &TransformParams, emb: &Mat, tasks: &[Task]) -> f64 {
    let mut m = f64::INFINITY;
    for t in tasks {
        for (q, _) in t.queries() {
            for side in [&t.support_pos, &t.support_neg] {
                let mut set = vec![emb.row(q).to_vec()];
                set.extend(side.iter().map(|&s| emb.row(s).to_vec()));
                m = m.min(oracle_forward(params, &set).min_pre_activation);
            }
        }
    }
    m
}
