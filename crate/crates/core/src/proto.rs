//! Prototype-based binary classifier over adapted embeddings.

use crate::embed::sigmoid;
use crate::error::{Error, Result};
use crate::linalg::{sq_dist, Mat};
use crate::transform::TransformParams;

pub const PROB_CLAMP: f64 = 1e-12;

/// Mean of the rows.
pub fn prototype(rows: &Mat) -> Result<Vec<f64>> {
    if rows.rows() == 0 {
        return Err(Error::InvalidTask("empty support set".into()));
    }
    let mut acc = vec![0.0; rows.cols()];
    for i in 0..rows.rows() {
        for (a, v) in acc.iter_mut().zip(rows.row(i)) {
            *a += v;
        }
    }
    let n = rows.rows() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub prob_positive: f64,
    pub dist_pos: f64,
    pub dist_neg: f64,
}

impl Prediction {
    /// Two-way softmax over negated squared distances.
    pub fn from_distances(dist_pos: f64, dist_neg: f64) -> Result<Self> {
        if !(dist_pos.is_finite() && dist_neg.is_finite()) {
            return Err(Error::numerical("non-finite prototype distance"));
        }
        Ok(Prediction {
            prob_positive: sigmoid(dist_neg - dist_pos),
            dist_pos,
            dist_neg,
        })
    }

    pub fn prob_negative(&self) -> f64 {
        sigmoid(self.dist_pos - self.dist_neg)
    }

    /// `dist_neg - dist_pos`, so that `prob_positive = σ(logit)`.
    pub fn logit(&self) -> f64 {
        self.dist_neg - self.dist_pos
    }
}

/// Compares each adapted query vector with the prototype of the set it was
/// adapted against.
pub fn predict_prob(query_pos: &[f64], proto_pos: &[f64], query_neg: &[f64], proto_neg: &[f64]) -> Result<Prediction> {
    let d = query_pos.len();
    for (name, v) in [("proto_pos", proto_pos), ("query_neg", query_neg), ("proto_neg", proto_neg)] {
        if v.len() != d {
            return Err(Error::Shape {
                field: name.into(),
                expected: d,
                found: v.len(),
            });
        }
    }
    Prediction::from_distances(sq_dist(query_pos, proto_pos), sq_dist(query_neg, proto_neg))
}

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Binary cross-entropy on a clamped probability.
pub fn cross_entropy(prob: f64, truth: bool) -> f64 {
    let p = clamp(prob);
    if truth {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Derivative of [`cross_entropy`] with respect to the logit
/// `dist_neg - dist_pos`. Zero where the clamp is active.
pub fn cross_entropy_logit_grad(prob: f64, truth: bool) -> f64 {
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&prob) {
        return 0.0;
    }
    prob - if truth { 1.0 } else { 0.0 }
}

/// Logit bound matching the probability clamp: `σ(±logit_bound())` is
/// `1 - PROB_CLAMP` and `PROB_CLAMP`.
pub fn logit_bound() -> f64 {
    ((1.0 - PROB_CLAMP) / PROB_CLAMP).ln()
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// [`cross_entropy`] of `σ(logit)`, evaluated on the logit so that it stays
/// accurate when the probability is close to 0 or 1.
pub fn logit_cross_entropy(logit: f64, truth: bool) -> f64 {
    let bound = logit_bound();
    let z = logit.clamp(-bound, bound);
    if truth {
        softplus(-z)
    } else {
        softplus(z)
    }
}

/// Derivative of [`logit_cross_entropy`]; zero where the clamp is active.
pub fn logit_cross_entropy_grad(logit: f64, truth: bool) -> f64 {
    if logit.abs() > logit_bound() {
        return 0.0;
    }
    if truth {
        -sigmoid(-logit)
    } else {
        sigmoid(logit)
    }
}

/// Summed cross-entropy over the task's queries plus `λ·‖Θ‖²`.
pub fn task_loss(predictions: &[(Prediction, bool)], params: &TransformParams, lambda: f64) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::InvalidTask("task has no query predictions".into()));
    }
    let ce: f64 = predictions
        .iter()
        .map(|(p, t)| logit_cross_entropy(p.logit(), *t))
        .sum();
    Ok(ce + lambda * params.sum_sq())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::TransformConfig;

    #[test]
    fn prototypes() {
        let v = [0.3, -1.0, 2.0];
        assert_eq!(prototype(&Mat::from_rows(&[v, v])).unwrap(), v.to_vec());
        assert_eq!(
            prototype(&Mat::from_rows(&[[1.0, 0.0], [0.0, 1.0]])).unwrap(),
            vec![0.5, 0.5]
        );
        assert!(prototype(&Mat::zeros(0, 2)).is_err());
    }

    #[test]
    fn probabilities() {
        let p = Prediction::from_distances(2.0, 2.0).unwrap();
        assert_eq!(p.prob_positive, 0.5);
        let p = Prediction::from_distances(0.0, 3f64.ln()).unwrap();
        assert!((p.prob_positive - 0.75).abs() < 1e-15);
        let p = Prediction::from_distances(0.0, 50.0).unwrap();
        // 1 - 1e-20 is not representable; compare through the complement
        assert!(1.0 - p.prob_positive < 1e-20 && p.prob_positive.is_finite());
        assert!(p.prob_negative() > 0.0 && p.prob_negative() < 1e-20);
        let p = Prediction::from_distances(1e300, 0.0).unwrap();
        assert_eq!(p.prob_positive, 0.0);
        assert!(Prediction::from_distances(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn predict_checks_dims() {
        assert!(predict_prob(&[0.0, 1.0], &[0.0], &[0.0, 0.0], &[0.0, 0.0]).is_err());
        let p = predict_prob(&[1.0, 0.0], &[1.0, 0.0], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!((p.dist_pos, p.dist_neg), (0.0, 2.0));
    }

    #[test]
    fn loss_values() {
        let params = TransformParams::zeros(TransformConfig {
            d: 2,
            d_prime: 2,
            heads: 1,
            d_ff: 2,
            blocks: 1,
            ..Default::default()
        });
        let half = Prediction::from_distances(1.0, 1.0).unwrap();
        let l = task_loss(&[(half, true)], &params, 0.0).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let sure = Prediction::from_distances(0.0, 80.0).unwrap();
        let l = task_loss(&[(sure, true)], &params, 0.0).unwrap();
        assert!((0.0..1e-11).contains(&l));
        assert!(task_loss(&[], &params, 0.0).is_err());
        assert_eq!(cross_entropy_logit_grad(sure.prob_positive, true), 0.0);
    }

    #[test]
    fn logit_forms_match_probability_forms() {
        for z in [-27.0, -5.0, -0.3, 0.0, 0.7, 4.0, 26.0] {
            for truth in [true, false] {
                let a = logit_cross_entropy(z, truth);
                // -ln σ(±z) = ln(1 + e^(∓z))
                let s: f64 = if truth { -z } else { z };
                let exact = s.max(0.0) + (-s.abs()).exp().ln_1p();
                assert!((a - exact).abs() <= 1e-15 * exact.max(1.0), "{z} {truth}: {a} vs {exact}");
                if z.abs() < 10.0 {
                    let p = sigmoid(z);
                    assert!((a - cross_entropy(p, truth)).abs() < 1e-12);
                    assert!((logit_cross_entropy_grad(z, truth) - cross_entropy_logit_grad(p, truth)).abs() < 1e-15);
                }
            }
        }
        assert_eq!(logit_cross_entropy_grad(31.0, false), 0.0);
        assert!((logit_cross_entropy_grad(26.0, true) + (-26f64).exp() / (1.0 + (-26f64).exp())).abs() < 1e-25);
        assert!((sigmoid(logit_bound()) - (1.0 - PROB_CLAMP)).abs() < 1e-15);
        // far side of the clamp: the loss saturates at -ln(1e-12)
        assert!((logit_cross_entropy(-40.0, true) - 1e12f64.ln()).abs() < 1e-9);
    }
}
