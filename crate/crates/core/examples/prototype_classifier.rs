//! Scores one task with tailored prototypes and with plain support means,
//! printing each query's probability and cross-entropy.

use fewshot_graph::eval::{classify_task, Scorer};
use fewshot_graph::proto::cross_entropy;
use fewshot_graph::rng::{Seeds, Stream};
use fewshot_graph::synth::{planted_benchmark, planted_config};
use fewshot_graph::task::{sample_task, TaskShape};
use fewshot_graph::train::Model;

fn main() -> fewshot_graph::Result<()> {
    let (graph, labels) = planted_benchmark(&mut Seeds::new(0).stream(Stream::Data))?;
    let model = Model::init(graph.node_count(), &planted_config())?;
    let task = sample_task(&labels, &[0, 8], TaskShape::new(3, 3, 2, 2)?, &mut Seeds::new(0).stream(Stream::Tasks))?;
    println!("label {}: support +{:?} -{:?}", task.label, task.support_pos, task.support_neg);
    for scorer in [Scorer::Transform, Scorer::Identity] {
        let result = classify_task(&model, &task, scorer)?;
        println!("{scorer:?}");
        for ((node, truth), (p, _)) in task.queries().zip(&result.scores) {
            println!("  node {node:3} truth {truth:5}  p {p:.4}  loss {:.4}", cross_entropy(*p, truth));
        }
    }
    Ok(())
}
