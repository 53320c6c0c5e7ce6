//! Computes AUC, F1 and recall for a handful of scored queries, then runs a
//! multi-trial evaluation of an untrained model and prints the table.

use fewshot_graph::eval::{auc, evaluate, f1_recall, EvalOptions, Scorer, TaskSource};
use fewshot_graph::graph::split_labels;
use fewshot_graph::rng::{Seeds, Stream};
use fewshot_graph::synth::{planted_benchmark, planted_config};
use fewshot_graph::train::Model;

fn main() -> fewshot_graph::Result<()> {
    let scored = [(0.9, true), (0.7, false), (0.7, true), (0.4, true), (0.2, false), (0.1, false)];
    let (f1, recall) = f1_recall(&scored, 0.5);
    println!("auc {:.4}  f1 {f1:.4}  recall {recall:.4}", auc(&scored)?);

    let cfg = planted_config();
    let (graph, labels) = planted_benchmark(&mut Seeds::new(0).stream(Stream::Data))?;
    let split = split_labels(&labels, cfg.split_ratio(), 0)?;
    let model = Model::init(graph.node_count(), &cfg)?;
    let source = TaskSource::Sample {
        labels: &labels,
        pool: &split.novel,
        shape: cfg.shape()?,
    };
    let report = evaluate(
        &model,
        &source,
        &EvalOptions {
            n_tasks: 50,
            n_trials: 5,
            seed: 0,
            threshold: 0.5,
            scorer: Scorer::Identity,
            threads: 1,
        },
    )?;
    print!("{}", report.table());
    Ok(())
}
