mod common;

use common::rng;
use fewshot_graph::embed::{sample_edge_batch, sgns_step, EmbeddingMatrix, NoiseDistribution};
use fewshot_graph::graph::Graph;
use fewshot_graph::linalg::{dot, norm};

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

#[test]
fn two_cliques_separate_in_embedding_space() {
    let mut edges = Vec::new();
    for base in [0, 5] {
        for u in base..base + 5 {
            for v in u + 1..base + 5 {
                edges.push((u, v));
            }
        }
    }
    edges.push((4, 5));
    let g = Graph::from_edges(10, edges).unwrap();
    let noise = NoiseDistribution::from_graph(&g, 0.75);
    let mut r = rng(12);
    let mut emb = EmbeddingMatrix::init(10, 16, &mut r);
    for _ in 0..2000 {
        let pairs = sample_edge_batch(&g, 16, &mut r).unwrap();
        sgns_step(&mut emb, &pairs, &noise, 5, 0.05, &mut r).unwrap();
    }
    let (mut intra, mut inter) = (Vec::new(), Vec::new());
    for u in 0..10 {
        for v in u + 1..10 {
            let c = cosine(emb.row(u), emb.row(v));
            if (u < 5) == (v < 5) {
                intra.push(c);
            } else {
                inter.push(c);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&intra) > mean(&inter), "{} vs {}", mean(&intra), mean(&inter));
}

#[test]
fn loss_is_positive_and_falls_on_a_fixed_batch() {
    let g = Graph::from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)]).unwrap();
    let noise = NoiseDistribution::from_graph(&g, 0.75);
    let mut r = rng(3);
    let mut emb = EmbeddingMatrix::init(6, 8, &mut r);
    let pairs = sample_edge_batch(&g, 8, &mut r).unwrap();
    let mut losses = Vec::new();
    for _ in 0..100 {
        losses.push(sgns_step(&mut emb, &pairs, &noise, 2, 0.05, &mut r).unwrap());
    }
    assert!(losses.iter().all(|&l| l > 0.0));
    assert!(losses.last().unwrap() < losses.first().unwrap());
}

#[test]
fn noise_distribution_sums_to_one() {
    let g = Graph::from_edges(5, [(0, 1), (0, 2), (0, 3), (3, 4)]).unwrap();
    for e in [0.0, 0.5, 0.75, 1.0] {
        let p = NoiseDistribution::from_graph(&g, e).probabilities();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
