mod common;

use common::{config, oracle_forward, random_mat, random_params, rng, rows_of};
use fewshot_graph::linalg::Mat;
use fewshot_graph::transform::{attention_weights, stack_set, Activation, Mode, TransformParams};
use proptest::prelude::*;
use rand::Rng as _;

#[test]
fn forward_matches_naive_oracle() {
    let mut r = rng(11);
    for case in 0..100 {
        let heads = [1, 2, 4][case % 3];
        let act = if case % 2 == 0 { Activation::Relu } else { Activation::Tanh };
        let c = config(8, heads, 8, 12, 1 + case % 2, act);
        let params = random_params(c, &mut r);
        let n = r.gen_range(1..7);
        let x = random_mat(n, 8, &mut r);
        let got = params.forward(&x, Mode::Eval).unwrap();
        let want = oracle_forward(&params, &rows_of(&x)).out;
        for i in 0..n {
            for j in 0..8 {
                assert!((got[(i, j)] - want[i][j]).abs() < 1e-8, "case {case}: ({i},{j})");
            }
        }
    }
}

#[test]
fn transform_set_is_forward_on_the_stacked_set() {
    let mut r = rng(3);
    let params = random_params(config(8, 2, 8, 16, 2, Activation::Relu), &mut r);
    let q = random_mat(1, 8, &mut r);
    let s = random_mat(3, 8, &mut r);
    let (qo, so) = params.transform_set(q.row(0), &s, Mode::Eval).unwrap();
    let full = oracle_forward(&params, &rows_of(&stack_set(q.row(0), &s).unwrap())).out;
    for j in 0..8 {
        assert!((qo[j] - full[0][j]).abs() < 1e-8);
        for i in 0..3 {
            assert!((so[(i, j)] - full[i + 1][j]).abs() < 1e-8);
        }
    }
    assert_eq!(so.shape(), (3, 8));
}

/// Brute-force softmax without max subtraction.
fn naive_attention(x: &Mat, wq: &Mat, wk: &Mat) -> Vec<Vec<f64>> {
    let q = x.matmul_t(wq);
    let k = x.matmul_t(wk);
    let dh = wq.rows() as f64;
    (0..x.rows())
        .map(|i| {
            let e: Vec<f64> = (0..x.rows())
                .map(|j| (fewshot_graph::linalg::dot(q.row(i), k.row(j)) / dh.sqrt()).exp())
                .collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|v| v / z).collect()
        })
        .collect()
}

#[test]
fn attention_matches_brute_force_softmax() {
    let mut r = rng(5);
    for _ in 0..50 {
        let x = random_mat(3, 8, &mut r);
        let wq = random_mat(4, 8, &mut r);
        let wk = random_mat(4, 8, &mut r);
        let a = attention_weights(&x, &wq, &wk).unwrap();
        let want = naive_attention(&x, &wq, &wk);
        for i in 0..3 {
            for j in 0..3 {
                assert!((a[(i, j)] - want[i][j]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn attention_edge_cases() {
    let mut r = rng(6);
    let x = random_mat(1, 8, &mut r);
    let w = random_mat(4, 8, &mut r);
    assert_eq!(attention_weights(&x, &w, &w).unwrap().as_slice(), &[1.0]);

    let x = random_mat(5, 8, &mut r);
    let a = attention_weights(&x, &Mat::zeros(4, 8), &w).unwrap();
    assert!(a.as_slice().iter().all(|&v| (v - 0.2).abs() < 1e-15));
}

#[test]
fn eval_mode_is_deterministic() {
    let mut r = rng(8);
    let params = TransformParams::init(config(16, 4, 16, 32, 2, Activation::Relu), &mut r).unwrap();
    let x = random_mat(6, 16, &mut r);
    let a = params.forward(&x, Mode::Eval).unwrap();
    let b = params.forward(&x, Mode::Eval).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_rows_are_stochastic(seed in any::<u64>(), n in 1usize..8, scale in 0.1f64..5.0) {
        let mut r = rng(seed);
        let mut x = random_mat(n, 8, &mut r);
        x.scale(scale);
        for heads in [1, 2, 4] {
            let dh = 8 / heads;
            let wq = random_mat(dh, 8, &mut r);
            let wk = random_mat(dh, 8, &mut r);
            let a = attention_weights(&x, &wq, &wk).unwrap();
            for i in 0..n {
                let s: f64 = a.row(i).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
                prop_assert!(a.row(i).iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn supports_are_permutation_equivariant(seed in any::<u64>(), n in 1usize..7, blocks in 1usize..3) {
        let mut r = rng(seed);
        let params = random_params(config(8, 2, 8, 16, blocks, Activation::Relu), &mut r);
        let q = random_mat(1, 8, &mut r);
        let s = random_mat(n, 8, &mut r);
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut r);
        let permuted = Mat::from_rows(&perm.iter().map(|&i| s.row(i).to_vec()).collect::<Vec<_>>());
        let (q1, s1) = params.transform_set(q.row(0), &s, Mode::Eval).unwrap();
        let (q2, s2) = params.transform_set(q.row(0), &permuted, Mode::Eval).unwrap();
        prop_assert_eq!(q1, q2);
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(s1.row(i), s2.row(k));
        }
    }

    #[test]
    fn output_keeps_input_dimension(seed in any::<u64>(), n in 1usize..6, blocks in 1usize..4) {
        let mut r = rng(seed);
        let params = random_params(config(8, 4, 12, 6, blocks, Activation::Tanh), &mut r);
        let x = random_mat(n, 8, &mut r);
        prop_assert_eq!(params.forward(&x, Mode::Eval).unwrap().shape(), (n, 8));
    }
}
