//! Parses an edge list and a label file with string node ids, then splits
//! the labels into known, validation and novel sets.

use std::io::Cursor;

use fewshot_graph::config::RunConfig;
use fewshot_graph::graph::{load_edge_list_remapped, load_labels_remapped, split_labels};

const EDGES: &str = "\
# user follows user
alice,bob
bob,carol
carol,alice
dave erin
erin frank
";

const LABELS: &str = "\
alice 0
bob 0
carol 1
dave 1
erin 2
frank 2
alice 3
frank 4
";

fn main() -> fewshot_graph::Result<()> {
    let (graph, ids) = load_edge_list_remapped(Cursor::new(EDGES))?;
    println!("{} nodes, {} edges", graph.node_count(), graph.edge_count());
    for v in 0..graph.node_count() {
        let names: Vec<&str> = graph.neighbors(v).iter().map(|&u| ids.external(u)).collect();
        println!("  {} (degree {}): {}", ids.external(v), graph.degree(v), names.join(" "));
    }

    let labels = load_labels_remapped(Cursor::new(LABELS), &ids)?;
    let split = split_labels(&labels, RunConfig::default().split_ratio(), 7)?;
    println!("known {:?}, validation {:?}, novel {:?}", split.known, split.validation, split.novel);
    Ok(())
}
