//! Task-agnostic node embeddings learned by skip-gram with negative sampling
//! over 1-hop neighbor pairs.

use std::collections::BTreeMap;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::{axpy, dot, Mat};
use crate::rng::Rng;

/// Center vectors (the embedding matrix read downstream) and the context
/// vectors used only by the negative-sampling objective.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub center: Mat,
    pub context: Mat,
}

impl EmbeddingMatrix {
    /// Center entries uniform in `[-0.5/d, 0.5/d]`, context entries zero.
    pub fn init(node_count: usize, dim: usize, rng: &mut Rng) -> Self {
        assert!(dim >= 1, "embedding dimension must be positive");
        let bound = 0.5 / dim as f64;
        let data = (0..node_count * dim)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        EmbeddingMatrix {
            center: Mat::from_vec(node_count, dim, data),
            context: Mat::zeros(node_count, dim),
        }
    }

    pub fn node_count(&self) -> usize {
        self.center.rows()
    }

    pub fn dim(&self) -> usize {
        self.center.cols()
    }

    pub fn row(&self, node: usize) -> &[f64] {
        self.center.row(node)
    }

    pub fn is_finite(&self) -> bool {
        self.center.is_finite() && self.context.is_finite()
    }
}

/// Degree-based noise distribution for drawing negative nodes.
#[derive(Debug, Clone)]
pub struct NoiseDistribution {
    cumulative: Vec<f64>,
    exponent: f64,
}

impl NoiseDistribution {
    /// Node weight `degree^exponent`; uniform when every degree is zero.
    pub fn from_graph(graph: &Graph, exponent: f64) -> Self {
        let weights: Vec<f64> = (0..graph.node_count())
            .map(|v| match graph.degree(v) {
                0 => 0.0,
                d => (d as f64).powf(exponent),
            })
            .collect();
        Self::from_weights(&weights, exponent)
    }

    pub fn from_weights(weights: &[f64], exponent: f64) -> Self {
        assert!(!weights.is_empty(), "noise distribution over zero nodes");
        let uniform = weights.iter().all(|&w| w <= 0.0);
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|&w| {
                acc += if uniform { 1.0 } else { w.max(0.0) };
                acc
            })
            .collect();
        NoiseDistribution {
            cumulative,
            exponent,
        }
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let total = self.total();
        let mut prev = 0.0;
        self.cumulative
            .iter()
            .map(|&c| {
                let p = (c - prev) / total;
                prev = c;
                p
            })
            .collect()
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        let x = rng.gen::<f64>() * self.total();
        // first index whose cumulative weight exceeds x; zero-weight nodes
        // share their predecessor's cumulative value and are never chosen
        self.cumulative
            .partition_point(|&c| c <= x)
            .min(self.cumulative.len() - 1)
    }

    /// `n` negatives for a positive pair; a draw equal to `avoid` is redrawn
    /// up to 8 times before being kept.
    pub fn draw_negatives(&self, n: usize, avoid: usize, rng: &mut Rng) -> Vec<usize> {
        (0..n)
            .map(|_| {
                let mut k = self.sample(rng);
                for _ in 0..8 {
                    if k != avoid {
                        break;
                    }
                    k = self.sample(rng);
                }
                k
            })
            .collect()
    }
}

/// Uniform draws over directed edge occurrences.
pub fn sample_edge_batch(graph: &Graph, n: usize, rng: &mut Rng) -> Result<Vec<(usize, usize)>> {
    let edges = graph.edges();
    if edges.is_empty() {
        return Err(Error::Sampling("graph has no edges".into()));
    }
    Ok((0..n)
        .map(|_| {
            let (u, v) = edges[rng.gen_range(0..edges.len())];
            if rng.gen::<bool>() {
                (u, v)
            } else {
                (v, u)
            }
        })
        .collect())
}

/// One positive pair plus its negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SgnsSample {
    pub center: usize,
    pub context: usize,
    pub negatives: Vec<usize>,
}

/// Row gradients of a summed SGNS loss, keyed by node id.
#[derive(Debug, Clone, Default)]
pub struct SgnsGrad {
    pub loss_sum: f64,
    pub pairs: usize,
    pub center: BTreeMap<usize, Vec<f64>>,
    pub context: BTreeMap<usize, Vec<f64>>,
}

impl SgnsGrad {
    pub fn mean_loss(&self) -> f64 {
        self.loss_sum / self.pairs.max(1) as f64
    }

    pub fn is_finite(&self) -> bool {
        self.loss_sum.is_finite()
            && self
                .center
                .values()
                .chain(self.context.values())
                .all(|g| g.iter().all(|x| x.is_finite()))
    }
}

/// `ln σ(x)` without overflow.
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln σ(u_i·c_j) - Σ_k ln σ(-u_i·c_k)`
pub fn pair_loss(emb: &EmbeddingMatrix, s: &SgnsSample) -> f64 {
    let u = emb.center.row(s.center);
    let mut loss = -log_sigmoid(dot(u, emb.context.row(s.context)));
    for &k in &s.negatives {
        loss -= log_sigmoid(-dot(u, emb.context.row(k)));
    }
    loss
}

/// Loss and gradients of the summed loss over `samples`, all evaluated at
/// the current parameters.
pub fn sgns_gradients(emb: &EmbeddingMatrix, samples: &[SgnsSample]) -> SgnsGrad {
    let dim = emb.dim();
    let mut grad = SgnsGrad {
        pairs: samples.len(),
        ..Default::default()
    };
    for s in samples {
        let u = emb.center.row(s.center);
        let mut gu = vec![0.0; dim];

        let c = emb.context.row(s.context);
        let score = dot(u, c);
        grad.loss_sum -= log_sigmoid(score);
        let coef = sigmoid(score) - 1.0;
        axpy(coef, c, &mut gu);
        axpy(
            coef,
            u,
            grad.context.entry(s.context).or_insert_with(|| vec![0.0; dim]),
        );

        for &k in &s.negatives {
            let ck = emb.context.row(k);
            let score = dot(u, ck);
            grad.loss_sum -= log_sigmoid(-score);
            let coef = sigmoid(score);
            axpy(coef, ck, &mut gu);
            axpy(
                coef,
                u,
                grad.context.entry(k).or_insert_with(|| vec![0.0; dim]),
            );
        }

        let slot = grad.center.entry(s.center).or_insert_with(|| vec![0.0; dim]);
        axpy(1.0, &gu, slot);
    }
    grad
}

pub fn draw_samples(
    pairs: &[(usize, usize)],
    noise: &NoiseDistribution,
    n_neg: usize,
    rng: &mut Rng,
) -> Vec<SgnsSample> {
    pairs
        .iter()
        .map(|&(center, context)| SgnsSample {
            center,
            context,
            negatives: noise.draw_negatives(n_neg, context, rng),
        })
        .collect()
}

/// Plain stochastic gradient step on one batch of pairs. Returns the mean
/// per-pair loss measured before the update. Nothing is written when the
/// loss or a gradient is not finite.
pub fn sgns_step(
    emb: &mut EmbeddingMatrix,
    pairs: &[(usize, usize)],
    noise: &NoiseDistribution,
    n_neg: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<f64> {
    if n_neg == 0 {
        return Err(Error::Config("n_neg must be at least 1".into()));
    }
    if !(lr > 0.0) {
        return Err(Error::Config("learning rate must be positive".into()));
    }
    let n = emb.node_count();
    if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a >= n || b >= n) {
        return Err(Error::NodeOutOfRange {
            id: a.max(b),
            node_count: n,
        });
    }
    let samples = draw_samples(pairs, noise, n_neg, rng);
    let grad = sgns_gradients(emb, &samples);
    if !grad.is_finite() {
        return Err(Error::numerical("non-finite structural loss"));
    }
    apply_sgd(&mut emb.center, &grad.center, lr);
    apply_sgd(&mut emb.context, &grad.context, lr);
    Ok(grad.mean_loss())
}

fn apply_sgd(mat: &mut Mat, grads: &BTreeMap<usize, Vec<f64>>, lr: f64) {
    for (&row, g) in grads {
        axpy(-lr, g, mat.row_mut(row));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Seeds, Stream};

    fn rng() -> Rng {
        Seeds::new(11).stream(Stream::Struct)
    }

    fn path() -> Graph {
        Graph::from_edges(3, [(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn init_bounds_and_determinism() {
        let a = EmbeddingMatrix::init(3, 4, &mut rng());
        assert_eq!(a.center.shape(), (3, 4));
        assert!(a.center.as_slice().iter().all(|x| x.abs() <= 0.125));
        assert!(a.context.as_slice().iter().all(|&x| x == 0.0));
        assert_eq!(a, EmbeddingMatrix::init(3, 4, &mut rng()));
    }

    #[test]
    fn noise_probabilities() {
        let p = NoiseDistribution::from_graph(&path(), 1.0).probabilities();
        for (a, b) in p.iter().zip([0.25, 0.5, 0.25]) {
            assert!((a - b).abs() < 1e-12);
        }
        let p = NoiseDistribution::from_graph(&path(), 0.75).probabilities();
        // proportional to [1, 2^0.75, 1]: [0.27161, 0.45678, 0.27161]
        let z = 2.0 + 2f64.powf(0.75);
        for (a, b) in p.iter().zip([1.0 / z, 2f64.powf(0.75) / z, 1.0 / z]) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!((p[1] - 0.45678).abs() < 5e-5);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let empty = Graph::from_edges(2, []).unwrap();
        assert_eq!(
            NoiseDistribution::from_graph(&empty, 0.75).probabilities(),
            vec![0.5, 0.5]
        );
    }

    #[test]
    fn noise_skips_isolated_nodes() {
        let g = Graph::from_edges(4, [(1, 2)]).unwrap();
        let noise = NoiseDistribution::from_graph(&g, 0.75);
        let mut r = rng();
        for _ in 0..2000 {
            let k = noise.sample(&mut r);
            assert!(k == 1 || k == 2);
        }
    }

    #[test]
    fn negatives_avoid_context() {
        let noise = NoiseDistribution::from_graph(&path(), 1.0);
        let mut r = rng();
        let hits = (0..500)
            .flat_map(|_| noise.draw_negatives(3, 1, &mut r))
            .filter(|&k| k == 1)
            .count();
        // P(kept collision) = 0.5^9
        assert!(hits <= 3, "{hits}");
    }

    #[test]
    fn edge_batch() {
        let g = Graph::from_edges(2, [(0, 1)]).unwrap();
        let b = sample_edge_batch(&g, 4, &mut rng()).unwrap();
        assert_eq!(b.len(), 4);
        assert!(b.iter().all(|&p| p == (0, 1) || p == (1, 0)));
        let none = Graph::from_edges(2, []).unwrap();
        assert!(matches!(
            sample_edge_batch(&none, 1, &mut rng()),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn zero_dot_loss() {
        let emb = EmbeddingMatrix {
            center: Mat::zeros(3, 2),
            context: Mat::zeros(3, 2),
        };
        let s = SgnsSample {
            center: 0,
            context: 1,
            negatives: vec![2],
        };
        assert!((pair_loss(&emb, &s) - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn center_gradient_matches_finite_differences() {
        let mut r = rng();
        let mut emb = EmbeddingMatrix::init(6, 5, &mut r);
        emb.context = Mat::from_vec(6, 5, (0..30).map(|_| r.gen_range(-1.0..1.0)).collect());
        emb.center.scale(20.0);
        let s = SgnsSample {
            center: 0,
            context: 2,
            negatives: vec![3, 4, 5, 2],
        };
        let g = sgns_gradients(&emb, std::slice::from_ref(&s));
        let eps = 1e-5;
        for (mat_is_center, node) in [(true, 0), (false, 2), (false, 4)] {
            let analytic = if mat_is_center {
                &g.center[&node]
            } else {
                &g.context[&node]
            };
            for k in 0..5 {
                let mut plus = emb.clone();
                let mut minus = emb.clone();
                let (p, m) = if mat_is_center {
                    (&mut plus.center, &mut minus.center)
                } else {
                    (&mut plus.context, &mut minus.context)
                };
                p[(node, k)] += eps;
                m[(node, k)] -= eps;
                let fd = (pair_loss(&plus, &s) - pair_loss(&minus, &s)) / (2.0 * eps);
                let rel = (fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-8);
                assert!(rel < 1e-5, "node {node} coord {k}: {fd} vs {}", analytic[k]);
            }
        }
    }

    #[test]
    fn repeated_batch_reduces_loss() {
        let g = Graph::from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        let noise = NoiseDistribution::from_graph(&g, 0.75);
        let mut r = rng();
        let mut emb = EmbeddingMatrix::init(5, 8, &mut r);
        let pairs = vec![(0, 1), (1, 0), (2, 3), (3, 4)];
        let first = sgns_step(&mut emb, &pairs, &noise, 2, 0.1, &mut r).unwrap();
        let mut last = first;
        for _ in 0..99 {
            last = sgns_step(&mut emb, &pairs, &noise, 2, 0.1, &mut r).unwrap();
            assert!(last > 0.0);
        }
        assert!(last < first, "{last} !< {first}");
    }

    #[test]
    fn step_rejects_bad_input() {
        let g = path();
        let noise = NoiseDistribution::from_graph(&g, 0.75);
        let mut emb = EmbeddingMatrix::init(3, 2, &mut rng());
        assert!(sgns_step(&mut emb, &[(0, 1)], &noise, 0, 0.1, &mut rng()).is_err());
        assert!(sgns_step(&mut emb, &[(0, 9)], &noise, 1, 0.1, &mut rng()).is_err());
        emb.center[(0, 0)] = f64::NAN;
        let before = emb.clone();
        assert!(matches!(
            sgns_step(&mut emb, &[(0, 1)], &noise, 1, 0.1, &mut rng()),
            Err(Error::Numerical(_))
        ));
        assert_eq!(format!("{before:?}"), format!("{emb:?}"));
    }
}
