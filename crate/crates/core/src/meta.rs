//! Per-task forward and backward pass of the meta objective: every query is
//! adapted twice (against the positive and against the negative supports),
//! compared with the tailored prototypes, and scored by cross-entropy.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{axpy, Mat};
use crate::proto::{logit_cross_entropy, logit_cross_entropy_grad, prototype, Prediction};
use crate::task::Task;
use crate::transform::{split_set, stack_set, ForwardCache, Mode, TransformParams};

/// Gathers embedding rows for `nodes`.
pub fn gather(embeddings: &Mat, nodes: &[usize]) -> Result<Mat> {
    let mut data = Vec::with_capacity(nodes.len() * embeddings.cols());
    for &v in nodes {
        if v >= embeddings.rows() {
            return Err(Error::NodeOutOfRange {
                id: v,
                node_count: embeddings.rows(),
            });
        }
        data.extend_from_slice(embeddings.row(v));
    }
    Ok(Mat::from_vec(nodes.len(), embeddings.cols(), data))
}

struct SideCache {
    query_out: Vec<f64>,
    proto: Vec<f64>,
    supports: usize,
    cache: Option<ForwardCache>,
}

fn adapt_side(params: &TransformParams, query: &[f64], supports: &Mat, mode: &mut Mode<'_>, keep: bool) -> Result<SideCache> {
    let input = stack_set(query, supports)?;
    let mode = match mode {
        Mode::Eval => Mode::Eval,
        Mode::Train(r) => Mode::Train(r),
    };
    let (out, cache) = if keep {
        let (o, c) = params.forward_cached(&input, mode)?;
        (o, Some(c))
    } else {
        (params.forward(&input, mode)?, None)
    };
    let (query_out, support_out) = split_set(out);
    Ok(SideCache {
        proto: prototype(&support_out)?,
        query_out,
        supports: supports.rows(),
        cache,
    })
}

/// Prediction for one query against the two support sets.
pub fn classify_query(params: &TransformParams, query: &[f64], pos: &Mat, neg: &Mat, mut mode: Mode<'_>) -> Result<Prediction> {
    let p = adapt_side(params, query, pos, &mut mode, false)?;
    let n = adapt_side(params, query, neg, &mut mode, false)?;
    crate::proto::predict_prob(&p.query_out, &p.proto, &n.query_out, &n.proto)
}

/// Same prediction without any transformation: raw embeddings and plain
/// support means.
pub fn classify_query_identity(query: &[f64], pos: &Mat, neg: &Mat) -> Result<Prediction> {
    crate::proto::predict_prob(query, &prototype(pos)?, query, &prototype(neg)?)
}

/// Loss of one task and its gradients.
#[derive(Debug, Clone)]
pub struct TaskGrad {
    /// Summed cross-entropy over the task's queries (no weight decay).
    pub loss: f64,
    pub predictions: Vec<(Prediction, bool)>,
    pub params: TransformParams,
    /// Gradient per embedding row touched by the task.
    pub rows: BTreeMap<usize, Vec<f64>>,
}

/// Gradient of the summed query cross-entropy with respect to one side's
/// forward output, given `d_dist = ∂L/∂dist`.
fn side_output_grad(side: &SideCache, d_dist: f64) -> Mat {
    let d = side.query_out.len();
    let mut g = Mat::zeros(side.supports + 1, d);
    let diff: Vec<f64> = side
        .query_out
        .iter()
        .zip(&side.proto)
        .map(|(q, c)| q - c)
        .collect();
    axpy(2.0 * d_dist, &diff, g.row_mut(0));
    let share = -2.0 * d_dist / side.supports as f64;
    for i in 1..=side.supports {
        axpy(share, &diff, g.row_mut(i));
    }
    g
}

/// Forward and backward over every query of `task`. Dropout, when `mode` is
/// training, draws fresh masks for every set call.
pub fn task_gradients(params: &TransformParams, embeddings: &Mat, task: &Task, mut mode: Mode<'_>) -> Result<TaskGrad> {
    let pos = gather(embeddings, &task.support_pos)?;
    let neg = gather(embeddings, &task.support_neg)?;
    let mut grads = TransformParams::zeros(*params.config());
    let mut rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let dim = embeddings.cols();
    let mut add_row = |node: usize, g: &[f64]| {
        axpy(1.0, g, rows.entry(node).or_insert_with(|| vec![0.0; dim]));
    };
    let mut loss = 0.0;
    let mut predictions = Vec::new();
    for (node, truth) in task.queries() {
        if node >= embeddings.rows() {
            return Err(Error::NodeOutOfRange {
                id: node,
                node_count: embeddings.rows(),
            });
        }
        let query = embeddings.row(node);
        let p_side = adapt_side(params, query, &pos, &mut mode, true)?;
        let n_side = adapt_side(params, query, &neg, &mut mode, true)?;
        let pred = crate::proto::predict_prob(&p_side.query_out, &p_side.proto, &n_side.query_out, &n_side.proto)?;
        loss += logit_cross_entropy(pred.logit(), truth);
        predictions.push((pred, truth));

        // logit = dist_neg - dist_pos
        let d_logit = logit_cross_entropy_grad(pred.logit(), truth);
        if d_logit == 0.0 {
            continue;
        }
        for (side, d_dist, supports) in [(&p_side, -d_logit, &task.support_pos), (&n_side, d_logit, &task.support_neg)] {
            let d_out = side_output_grad(side, d_dist);
            let cache = side.cache.as_ref().expect("cached forward");
            let d_in = params.backward_into(cache, &d_out, &mut grads)?;
            add_row(node, d_in.row(0));
            for (i, &s) in supports.iter().enumerate() {
                add_row(s, d_in.row(i + 1));
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::numerical("non-finite task loss"));
    }
    Ok(TaskGrad {
        loss,
        predictions,
        params: grads,
        rows,
    })
}
