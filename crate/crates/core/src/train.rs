//! Alternating optimization of the structural and meta objectives under the
//! staircase-decayed phase probability.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng as _;

use crate::config::{RunConfig, StructOptimizer};
use crate::embed::{draw_samples, sample_edge_batch, sgns_gradients, sgns_step, EmbeddingMatrix, NoiseDistribution};
use crate::error::{Error, Result};
use crate::eval::{evaluate_tasks, Scorer, TrialMetrics};
use crate::graph::{Graph, LabelMatrix, LabelSplit};
use crate::linalg::axpy;
use crate::meta::task_gradients;
use crate::optim::{tau, AdamConfig, AdamState, RowAdam};
use crate::rng::{Rng, Seeds, Stream};
use crate::task::{eligible_labels, sample_from_eligible, Task, TaskShape};
use crate::transform::{Mode, TransformParams};
use crate::workers::Workers;

/// Consecutive skipped steps tolerated before training aborts.
pub const MAX_CONSECUTIVE_SKIPS: u32 = 10;

/// Embeddings, transformation and the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub embeddings: EmbeddingMatrix,
    pub transform: TransformParams,
    pub config: RunConfig,
}

impl Model {
    pub fn init(node_count: usize, config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Seeds::new(config.seed).stream(Stream::Init);
        let embeddings = EmbeddingMatrix::init(node_count, config.d, &mut rng);
        let transform = TransformParams::init(config.transform(), &mut rng)?;
        Ok(Model {
            embeddings,
            transform,
            config: config.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Structural,
    Meta,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Structural => "struct",
            Phase::Meta => "meta",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub phase: Phase,
    pub tau: f64,
    /// `None` when the step was skipped for a numerical error.
    pub loss: Option<f64>,
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step={} phase={} tau={:.6} loss=", self.step, self.phase, self.tau)?;
        match self.loss {
            Some(l) => write!(f, "{l:.6}"),
            None => f.write_str("skipped"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationRecord {
    pub step: u64,
    pub metrics: TrialMetrics,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Best model by validation F1, or the final model when no validation
    /// ran.
    pub model: Model,
    pub final_model: Model,
    pub best_step: Option<u64>,
    pub history: Vec<StepRecord>,
    pub validations: Vec<ValidationRecord>,
    /// Reason training stopped early, if it did.
    pub aborted: Option<String>,
}

/// Training state. [`train`] drives it; tests and examples can step phases
/// individually.
pub struct Trainer<'a> {
    pub model: Model,
    graph: &'a Graph,
    labels: &'a LabelMatrix,
    noise: NoiseDistribution,
    shape: TaskShape,
    train_labels: Vec<usize>,
    val_tasks: Vec<Task>,
    seeds: Seeds,
    schedule_rng: Rng,
    struct_rng: Rng,
    task_rng: Rng,
    struct_center: RowAdam,
    struct_context: RowAdam,
    meta_rows: RowAdam,
    meta_theta: AdamState,
    workers: Workers,
    meta_steps: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(graph: &'a Graph, labels: &'a LabelMatrix, split: &LabelSplit, config: &RunConfig) -> Result<Self> {
        config.validate()?;
        if labels.node_count() != graph.node_count() {
            return Err(Error::Shape {
                field: "label node count".into(),
                expected: graph.node_count(),
                found: labels.node_count(),
            });
        }
        let model = Model::init(graph.node_count(), config)?;
        Self::with_model(graph, labels, split, model)
    }

    /// Continues from an existing model (its config is used).
    pub fn with_model(graph: &'a Graph, labels: &'a LabelMatrix, split: &LabelSplit, model: Model) -> Result<Self> {
        let config = model.config.clone();
        let shape = config.shape()?;
        let train_labels = eligible_labels(labels, &split.known, shape);
        if train_labels.is_empty() {
            return Err(Error::NoEligibleLabel {
                shape: shape.to_string(),
            });
        }
        let seeds = Seeds::new(config.seed);
        let val_eligible = eligible_labels(labels, &split.validation, shape);
        let mut val_rng = seeds.stream(Stream::Validation);
        let val_tasks = if val_eligible.is_empty() {
            Vec::new()
        } else {
            (0..config.val_tasks)
                .map(|_| sample_from_eligible(labels, &val_eligible, shape, &mut val_rng))
                .collect::<Result<_>>()?
        };
        let (n, d) = (graph.node_count(), config.d);
        let adam = AdamConfig::default();
        let shapes: Vec<usize> = model.transform.tensors().iter().map(|t| t.len()).collect();
        Ok(Trainer {
            noise: NoiseDistribution::from_graph(graph, config.noise_exponent),
            graph,
            labels,
            shape,
            train_labels,
            val_tasks,
            schedule_rng: seeds.stream(Stream::Schedule),
            struct_rng: seeds.stream(Stream::Struct),
            task_rng: seeds.stream(Stream::Tasks),
            seeds,
            struct_center: RowAdam::new(adam, n, d),
            struct_context: RowAdam::new(adam, n, d),
            meta_rows: RowAdam::new(adam, n, d),
            meta_theta: AdamState::new(adam, &shapes),
            workers: Workers::new(config.threads)?,
            meta_steps: 0,
            model,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.model.config
    }

    pub fn validation_tasks(&self) -> &[Task] {
        &self.val_tasks
    }

    /// Chooses the phase for `step` by comparing a uniform draw with τ.
    pub fn choose_phase(&mut self, step: u64) -> (Phase, f64) {
        let t = tau(step, &self.model.config.schedule());
        let r: f64 = self.schedule_rng.gen();
        (if r < t { Phase::Structural } else { Phase::Meta }, t)
    }

    /// One structural update on a fresh batch of neighbor pairs. Returns the
    /// mean pair loss before the update.
    pub fn structural_phase(&mut self) -> Result<f64> {
        if self.graph.edge_count() == 0 {
            // nothing to preserve
            return Ok(0.0);
        }
        let cfg = &self.model.config;
        let pairs = sample_edge_batch(self.graph, cfg.n1, &mut self.struct_rng)?;
        match cfg.struct_optimizer {
            StructOptimizer::Sgd => sgns_step(
                &mut self.model.embeddings,
                &pairs,
                &self.noise,
                cfg.n_neg,
                cfg.lr_struct,
                &mut self.struct_rng,
            ),
            StructOptimizer::Adam => {
                let samples = draw_samples(&pairs, &self.noise, cfg.n_neg, &mut self.struct_rng);
                let mut grad = sgns_gradients(&self.model.embeddings, &samples);
                if !grad.is_finite() {
                    return Err(Error::numerical("non-finite structural loss"));
                }
                let scale = 1.0 / grad.pairs as f64;
                for g in grad.center.values_mut().chain(grad.context.values_mut()) {
                    g.iter_mut().for_each(|x| *x *= scale);
                }
                let lr = cfg.lr_struct;
                self.struct_center.update(&mut self.model.embeddings.center, &grad.center, lr)?;
                self.struct_context.update(&mut self.model.embeddings.context, &grad.context, lr)?;
                Ok(grad.mean_loss())
            }
        }
    }

    /// Samples a batch of training tasks.
    pub fn sample_meta_batch(&mut self) -> Result<Vec<Task>> {
        (0..self.model.config.n2)
            .map(|_| sample_from_eligible(self.labels, &self.train_labels, self.shape, &mut self.task_rng))
            .collect()
    }

    /// One meta update on a fresh task batch. Returns the batch objective:
    /// mean per-task cross-entropy plus the weight-decay term.
    pub fn meta_phase(&mut self) -> Result<f64> {
        let tasks = self.sample_meta_batch()?;
        self.meta_update(&tasks)
    }

    /// Meta update on the given tasks. Only Θ and the embedding rows of
    /// nodes appearing in `tasks` change.
    pub fn meta_update(&mut self, tasks: &[Task]) -> Result<f64> {
        self.meta_steps += 1;
        let step = self.meta_steps;
        let model = &self.model;
        let seeds = self.seeds;
        let results = self.workers.map(tasks, |i, task| {
            let mut rng = seeds.item(Stream::Dropout, step, i as u64);
            task_gradients(&model.transform, &model.embeddings.center, task, Mode::Train(&mut rng))
        });

        let n = tasks.len() as f64;
        let lambda = model.config.lambda;
        let mut theta_grad = TransformParams::zeros(*model.transform.config());
        let mut rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut ce = 0.0;
        for r in results {
            let r = r?;
            ce += r.loss;
            theta_grad.add_assign(&r.params);
            for (node, g) in r.rows {
                match rows.get_mut(&node) {
                    Some(acc) => axpy(1.0, &g, acc),
                    None => {
                        rows.insert(node, g);
                    }
                }
            }
        }
        theta_grad.scale(1.0 / n);
        theta_grad.add_scaled(2.0 * lambda, &model.transform);
        for g in rows.values_mut() {
            g.iter_mut().for_each(|x| *x /= n);
        }
        let loss = ce / n + lambda * model.transform.sum_sq();
        if !loss.is_finite() || !theta_grad.is_finite() {
            return Err(Error::numerical("non-finite meta objective"));
        }

        let lr = model.config.lr_meta;
        let grads = theta_grad.tensors();
        let mut params = self.model.transform.tensors_mut();
        self.meta_theta.update(&mut params, &grads, lr)?;
        self.meta_rows.update(&mut self.model.embeddings.center, &rows, lr)?;
        Ok(loss)
    }

    pub fn validate(&self) -> Result<Option<TrialMetrics>> {
        if self.val_tasks.is_empty() {
            return Ok(None);
        }
        evaluate_tasks(
            &self.model,
            &self.val_tasks,
            self.model.config.threshold,
            Scorer::Transform,
            &self.workers,
        )
        .map(Some)
    }
}

/// Runs `total_steps` steps (`step = 0 .. total_steps`). `on_step` sees each
/// step record as it happens.
pub fn train(
    graph: &Graph,
    labels: &LabelMatrix,
    split: &LabelSplit,
    config: &RunConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(graph, labels, split, config)?;
    let total = config.total_steps;
    let period = config.validation_period();
    let mut history = Vec::with_capacity(total as usize);
    let mut validations = Vec::new();
    let mut best: Option<(f64, u64, Model)> = None;
    let mut skips = 0u32;
    let mut aborted = None;

    for step in 0..total {
        let (phase, t) = trainer.choose_phase(step);
        let outcome = match phase {
            Phase::Structural => trainer.structural_phase(),
            Phase::Meta => trainer.meta_phase(),
        };
        let loss = match outcome {
            Ok(l) => {
                skips = 0;
                Some(l)
            }
            Err(Error::Numerical(msg)) => {
                skips += 1;
                if skips > MAX_CONSECUTIVE_SKIPS {
                    aborted = Some(format!("{skips} consecutive skipped steps at step {step}: {msg}"));
                }
                None
            }
            Err(e) => return Err(e),
        };
        let record = StepRecord {
            step,
            phase,
            tau: t,
            loss,
        };
        on_step(&record);
        history.push(record);
        if aborted.is_some() {
            break;
        }

        if (step + 1) % period == 0 || step + 1 == total {
            if let Some(metrics) = trainer.validate()? {
                validations.push(ValidationRecord {
                    step: step + 1,
                    metrics,
                });
                if best.as_ref().is_none_or(|(f1, _, _)| metrics.f1 > *f1) {
                    best = Some((metrics.f1, step + 1, trainer.model.clone()));
                }
            }
        }
    }

    let final_model = trainer.model;
    let (model, best_step) = match best {
        Some((_, step, m)) => (m, Some(step)),
        None => (final_model.clone(), None),
    };
    Ok(TrainOutput {
        model,
        final_model,
        best_step,
        history,
        validations,
        aborted,
    })
}
