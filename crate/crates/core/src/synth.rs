//! Planted-partition graphs with community and union-of-communities labels,
//! for desk-scale experiments.

use rand::Rng as _;

use crate::config::RunConfig;
use crate::error::Result;
use crate::graph::{Graph, LabelMatrix};
use crate::rng::Rng;

/// Stochastic block model: nodes are assigned to consecutive blocks of the
/// given sizes; each pair is linked with `p_in` inside a block and `p_out`
/// across blocks. Returns the graph and each node's block.
pub fn stochastic_block_model(sizes: &[usize], p_in: f64, p_out: f64, rng: &mut Rng) -> Result<(Graph, Vec<usize>)> {
    let block: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &n)| std::iter::repeat_n(b, n))
        .collect();
    let n = block.len();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if block[u] == block[v] { p_in } else { p_out };
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Ok((Graph::from_edges(n, edges)?, block))
}

/// One label per block, followed by one label per `(a, b)` pair in
/// `unions` whose positives are the members of both blocks.
pub fn block_labels(block: &[usize], blocks: usize, unions: &[(usize, usize)]) -> Result<LabelMatrix> {
    let mut positives = vec![Vec::new(); blocks + unions.len()];
    for (v, &b) in block.iter().enumerate() {
        positives[b].push(v);
        for (k, &(x, y)) in unions.iter().enumerate() {
            if b == x || b == y {
                positives[blocks + k].push(v);
            }
        }
    }
    LabelMatrix::new(block.len(), positives)
}

/// The benchmark used for desk-scale learning checks: 8 blocks of 50 nodes,
/// `p_in = 0.2`, `p_out = 0.01`, 8 block labels plus the 8 unions of
/// neighboring blocks `(i, i+1 mod 8)`.
pub fn planted_benchmark(rng: &mut Rng) -> Result<(Graph, LabelMatrix)> {
    let (graph, block) = stochastic_block_model(&[50; 8], 0.2, 0.01, rng)?;
    let unions: Vec<(usize, usize)> = (0..8).map(|i| (i, (i + 1) % 8)).collect();
    let labels = block_labels(&block, 8, &unions)?;
    Ok((graph, labels))
}

/// Hyperparameters sized for [`planted_benchmark`]: small embeddings, a
/// 5/10 task shape and 3000 steps, a few minutes on one core.
pub fn planted_config() -> RunConfig {
    RunConfig {
        d: 32,
        d_prime: 32,
        heads: 2,
        d_ff: 64,
        n1: 256,
        n2: 8,
        lr_struct: 0.01,
        lr_meta: 0.001,
        lambda: 0.001,
        k_support_pos: 5,
        k_support_neg: 10,
        k_query_pos: 5,
        k_query_neg: 10,
        total_steps: 3000,
        decay_period: 100,
        val_tasks: 100,
        ..RunConfig::default()
    }
}
