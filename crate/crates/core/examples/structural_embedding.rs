//! Fits skip-gram embeddings with negative sampling on two cliques joined
//! by one edge and prints the cosine similarity within and across them.

use fewshot_graph::embed::{sample_edge_batch, sgns_step, EmbeddingMatrix, NoiseDistribution};
use fewshot_graph::graph::Graph;
use fewshot_graph::linalg::{dot, norm};
use fewshot_graph::rng::{Seeds, Stream};

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

fn main() -> fewshot_graph::Result<()> {
    let mut edges = Vec::new();
    for base in [0, 6] {
        for i in 0..6 {
            for j in i + 1..6 {
                edges.push((base + i, base + j));
            }
        }
    }
    edges.push((5, 6));
    let graph = Graph::from_edges(12, edges)?;

    let seeds = Seeds::new(1);
    let mut rng = seeds.stream(Stream::Struct);
    let mut emb = EmbeddingMatrix::init(12, 16, &mut seeds.stream(Stream::Init));
    let noise = NoiseDistribution::from_graph(&graph, 0.75);
    for step in 0..3000 {
        let batch = sample_edge_batch(&graph, 16, &mut rng)?;
        let loss = sgns_step(&mut emb, &batch, &noise, 5, 0.05, &mut rng)?;
        if step % 500 == 0 {
            println!("step {step:4}  loss {loss:.4}");
        }
    }
    println!("cos(0, 1)  = {:+.3}  same clique", cosine(emb.row(0), emb.row(1)));
    println!("cos(0, 11) = {:+.3}  other clique", cosine(emb.row(0), emb.row(11)));
    Ok(())
}
