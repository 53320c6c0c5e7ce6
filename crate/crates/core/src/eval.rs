//! Inference on few-shot tasks and the AUC / F1 / Recall protocol.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::graph::LabelMatrix;
use crate::meta::{classify_query, classify_query_identity, gather};
use crate::rng::{Seeds, Stream};
use crate::task::{eligible_labels, sample_from_eligible, Task, TaskShape};
use crate::train::Model;
use crate::transform::Mode;
use crate::workers::Workers;

/// How query probabilities are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scorer {
    /// Adapted embeddings and tailored prototypes.
    Transform,
    /// Raw embeddings, plain support means (no transformation).
    Identity,
}

/// Per-query `(score, truth)` for one task, positives first.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskResult {
    pub label: usize,
    pub scores: Vec<(f64, bool)>,
}

pub fn classify_task(model: &Model, task: &Task, scorer: Scorer) -> Result<TaskResult> {
    let emb = &model.embeddings.center;
    let pos = gather(emb, &task.support_pos)?;
    let neg = gather(emb, &task.support_neg)?;
    let mut scores = Vec::with_capacity(task.query_pos.len() + task.query_neg.len());
    for (node, truth) in task.queries() {
        let q = gather(emb, &[node])?;
        let pred = match scorer {
            Scorer::Transform => classify_query(&model.transform, q.row(0), &pos, &neg, Mode::Eval)?,
            Scorer::Identity => classify_query_identity(q.row(0), &pos, &neg)?,
        };
        scores.push((pred.prob_positive, truth));
    }
    Ok(TaskResult {
        label: task.label,
        scores,
    })
}

/// Mann-Whitney AUC: `P(s⁺ > s⁻) + ½·P(s⁺ = s⁻)` from rank sums with
/// average ranks for ties.
pub fn auc(results: &[(f64, bool)]) -> Result<f64> {
    let n_pos = results.iter().filter(|r| r.1).count();
    let n_neg = results.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }
    if results.iter().any(|r| r.0.is_nan()) {
        return Err(Error::numerical("NaN score"));
    }
    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|&a, &b| results[a].0.total_cmp(&results[b].0));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && results[order[j + 1]].0 == results[order[i]].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += avg * order[i..=j].iter().filter(|&&k| results[k].1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// F1 and recall with predictions `score ≥ threshold`; a zero denominator
/// yields 0.
pub fn f1_recall(results: &[(f64, bool)], threshold: f64) -> (f64, f64) {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for &(s, truth) in results {
        match (s >= threshold, truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (f1, recall)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskMetrics {
    pub auc: Option<f64>,
    pub f1: f64,
    pub recall: f64,
}

pub fn task_metrics(result: &TaskResult, threshold: f64) -> Result<TaskMetrics> {
    let auc = match auc(&result.scores) {
        Ok(a) => Some(a),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    let (f1, recall) = f1_recall(&result.scores, threshold);
    Ok(TaskMetrics { auc, f1, recall })
}

/// Task-averaged metrics for one set of tasks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialMetrics {
    pub auc: f64,
    pub f1: f64,
    pub recall: f64,
    pub tasks: usize,
    pub auc_skipped: usize,
}

pub fn evaluate_tasks(model: &Model, tasks: &[Task], threshold: f64, scorer: Scorer, workers: &Workers) -> Result<TrialMetrics> {
    if tasks.is_empty() {
        return Err(Error::Evaluation("no tasks to evaluate".into()));
    }
    let per_task = workers.map(tasks, |_, t| {
        classify_task(model, t, scorer).and_then(|r| task_metrics(&r, threshold))
    });
    let mut auc_sum = 0.0;
    let mut auc_n = 0usize;
    let (mut f1, mut recall) = (0.0, 0.0);
    for m in per_task {
        let m = m?;
        if let Some(a) = m.auc {
            auc_sum += a;
            auc_n += 1;
        }
        f1 += m.f1;
        recall += m.recall;
    }
    let n = tasks.len() as f64;
    Ok(TrialMetrics {
        auc: if auc_n == 0 { f64::NAN } else { auc_sum / auc_n as f64 },
        f1: f1 / n,
        recall: recall / n,
        tasks: tasks.len(),
        auc_skipped: tasks.len() - auc_n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and population standard deviation; NaN entries are ignored.
    pub fn of(values: &[f64]) -> Stat {
        let v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
        if v.is_empty() {
            return Stat {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Stat {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub auc: Stat,
    pub f1: Stat,
    pub recall: Stat,
    pub n_trials: usize,
    pub n_tasks: usize,
    pub auc_skipped: usize,
    pub trials: Vec<TrialMetrics>,
}

impl MetricsReport {
    pub fn from_trials(trials: Vec<TrialMetrics>) -> Self {
        let col = |f: fn(&TrialMetrics) -> f64| trials.iter().map(f).collect::<Vec<_>>();
        MetricsReport {
            auc: Stat::of(&col(|t| t.auc)),
            f1: Stat::of(&col(|t| t.f1)),
            recall: Stat::of(&col(|t| t.recall)),
            n_trials: trials.len(),
            n_tasks: trials.first().map_or(0, |t| t.tasks),
            auc_skipped: trials.iter().map(|t| t.auc_skipped).sum(),
            trials,
        }
    }

    /// Human-readable table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8} {:>8} {:>8}", "metric", "mean", "std");
        for (name, stat) in self.rows() {
            let _ = writeln!(s, "{:<8} {:>8.4} {:>8.4}", name, stat.mean, stat.std);
        }
        let _ = writeln!(
            s,
            "{} trials x {} tasks, {} task(s) skipped for AUC",
            self.n_trials, self.n_tasks, self.auc_skipped
        );
        s
    }

    /// One `key=value` line per metric.
    pub fn key_values(&self) -> String {
        let mut s = String::new();
        for (name, stat) in self.rows() {
            let _ = writeln!(
                s,
                "metric={name} mean={:.6} std={:.6} n_tasks={} n_trials={} auc_skipped={}",
                stat.mean, stat.std, self.n_tasks, self.n_trials, self.auc_skipped
            );
        }
        s
    }

    fn rows(&self) -> [(&'static str, Stat); 3] {
        [("auc", self.auc), ("f1", self.f1), ("recall", self.recall)]
    }
}

/// Where evaluation tasks come from.
pub enum TaskSource<'a> {
    /// Fresh tasks per trial from `pool`.
    Sample {
        labels: &'a LabelMatrix,
        pool: &'a [usize],
        shape: TaskShape,
    },
    /// The same fixed tasks for every trial.
    Frozen(&'a [Task]),
}

pub struct EvalOptions {
    pub n_tasks: usize,
    pub n_trials: usize,
    pub seed: u64,
    pub threshold: f64,
    pub scorer: Scorer,
    pub threads: usize,
}

/// Runs `n_trials` trials, each averaging metrics over its tasks. The model
/// is fixed; only task sampling varies between trials.
pub fn evaluate(model: &Model, source: &TaskSource<'_>, opts: &EvalOptions) -> Result<MetricsReport> {
    if opts.n_tasks == 0 || opts.n_trials == 0 {
        return Err(Error::Evaluation("n_tasks and n_trials must be at least 1".into()));
    }
    let workers = Workers::new(opts.threads)?;
    let seeds = Seeds::new(opts.seed);
    let mut trials = Vec::with_capacity(opts.n_trials);
    for trial in 0..opts.n_trials {
        let metrics = match source {
            TaskSource::Frozen(tasks) => evaluate_tasks(model, tasks, opts.threshold, opts.scorer, &workers)?,
            TaskSource::Sample { labels, pool, shape } => {
                let eligible = eligible_labels(labels, pool, *shape);
                if eligible.is_empty() {
                    return Err(Error::Evaluation(format!("no eligible label for shape {shape}")));
                }
                let mut rng = seeds.item(Stream::Eval, trial as u64, 0);
                let tasks = (0..opts.n_tasks)
                    .map(|_| sample_from_eligible(labels, &eligible, *shape, &mut rng))
                    .collect::<Result<Vec<_>>>()?;
                evaluate_tasks(model, &tasks, opts.threshold, opts.scorer, &workers)?
            }
        };
        trials.push(metrics);
    }
    Ok(MetricsReport::from_trials(trials))
}
