use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::eval;
use super::*;
use crate::tensor::Tensor;

fn rand_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    Tensor::randn(rows, cols, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn single_key_returns_value_row() {
    let q = rand_matrix(3, 4, 1);
    let k = rand_matrix(1, 4, 2);
    let v = Tensor::from_rows(&[[0.5, -1.5]]).unwrap();
    let (out, w) = eval::attention(&q, &k, &v).unwrap();
    assert_eq!(w.data(), &[1.0, 1.0, 1.0]);
    for i in 0..3 {
        assert_eq!(out.row(i), &[0.5, -1.5]);
    }
}

#[test]
fn zero_query_averages_values() {
    let q = Tensor::zeros(2, 3);
    let k = rand_matrix(4, 3, 3);
    let v = rand_matrix(4, 2, 4);
    let (out, _) = eval::attention(&q, &k, &v).unwrap();
    for j in 0..2 {
        let mean = (0..4).map(|i| v.get(i, j)).sum::<f64>() / 4.0;
        assert!((out.get(0, j) - mean).abs() < 1e-15);
        assert!((out.get(1, j) - mean).abs() < 1e-15);
    }
}

#[test]
fn attention_dimension_errors() {
    let q = rand_matrix(2, 3, 1);
    assert!(eval::attention(&q, &rand_matrix(4, 2, 2), &rand_matrix(4, 2, 3)).is_err());
    assert!(eval::attention(&q, &rand_matrix(4, 3, 2), &rand_matrix(5, 2, 3)).is_err());
}

#[test]
fn identity_single_head_is_plain_attention() {
    let d = 4;
    let p = MabParams::identity(d);
    let q = rand_matrix(3, d, 5);
    let kv = rand_matrix(6, d, 6);
    let mh = eval::multihead(&q, &kv, &kv, &p).unwrap();
    let (plain, _) = eval::attention(&q, &kv, &kv).unwrap();
    assert!(mh.max_abs_diff(&plain).unwrap() < 1e-15);
}

#[test]
fn multihead_rejects_indivisible_heads() {
    let (mut p, _) = init_params(8, 4, 2, 0).unwrap();
    p.heads = 3;
    let x = rand_matrix(5, 8, 1);
    assert!(eval::multihead(&x, &x, &x, &p).is_err());
}

#[test]
fn mab_width_mismatch() {
    let (p, _) = init_params(8, 2, 2, 0).unwrap();
    assert!(eval::mab(&rand_matrix(2, 8, 1), &rand_matrix(5, 6, 2), &p).is_err());
    assert!(eval::mab(&rand_matrix(2, 6, 1), &rand_matrix(5, 8, 2), &p).is_err());
}

#[test]
fn sab_on_singleton_matches_mab() {
    let (p, _) = init_params(8, 2, 1, 9).unwrap();
    let x = rand_matrix(1, 8, 10);
    assert_eq!(eval::sab(&x, &p).unwrap(), eval::mab(&x, &x, &p).unwrap());
}

#[test]
fn pma_equals_single_step_cascade_exactly() {
    let (p, t0) = init_params(8, 4, 3, 21).unwrap();
    let x = rand_matrix(11, 8, 22);
    let pooled = eval::pma(&x, &t0, &p).unwrap();
    let (cascaded, records) = eval::picaso_block(&x, &t0, &p, 1).unwrap();
    assert_eq!(pooled, cascaded);
    assert_eq!(records.len(), 4);
}

#[test]
fn zero_steps_rejected() {
    let (p, t0) = init_params(8, 2, 2, 1).unwrap();
    let x = rand_matrix(4, 8, 2);
    assert!(eval::picaso_block(&x, &t0, &p, 0).is_err());
    assert!(eval::generalized_picaso_block(&x, &t0, &p, &p, 0).is_err());
}

#[test]
fn records_are_normalized() {
    let (p, t0) = init_params(8, 4, 3, 31).unwrap();
    let x = rand_matrix(17, 8, 32);
    let (_, records) = eval::picaso_block(&x, &t0, &p, 3).unwrap();
    assert_eq!(records.len(), 3 * 4);
    for r in &records {
        assert_eq!(r.weights.shape(), &[3, 17]);
        assert_eq!(r.set_size, 17);
        assert!(r.max_row_sum_error().unwrap() < 1e-9);
    }
    let steps: Vec<usize> = records.iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]);
}

#[test]
fn generalized_single_step_is_plain_update() {
    let (pt, t0) = init_params(8, 2, 3, 41).unwrap();
    let (px, _) = init_params(8, 2, 3, 42).unwrap();
    let x = rand_matrix(6, 8, 43);
    let (t1, set, records) = eval::generalized_picaso_block(&x, &t0, &pt, &px, 1).unwrap();
    assert_eq!(t1, eval::mab(&t0.matrix, &x, &pt).unwrap());
    assert_eq!(set, x);
    assert_eq!(records.len(), 2);
}

#[test]
fn cascade_keeps_template_rows() {
    let (p, t0) = init_params(8, 2, 5, 1).unwrap();
    for n in [1, 2, 30] {
        let (t, _) = eval::picaso_block(&rand_matrix(n, 8, n as u64), &t0, &p, 2).unwrap();
        assert_eq!(t.shape(), &[5, 8]);
    }
}

#[test]
fn unlearned_inducing_points_rejected() {
    let (p, t) = init_params(8, 2, 3, 1).unwrap();
    let x = rand_matrix(4, 8, 2);
    let derived = Templates::derived(t.matrix.clone());
    assert!(eval::ae_block(&x, &derived, &p, &p).is_err());
    assert_eq!(eval::ae_block(&x, &t, &p, &p).unwrap().shape(), &[4, 8]);
}

#[test]
fn pooling_single_element() {
    let x = Tensor::from_rows(&[[1.0, -2.0, 3.5]]).unwrap();
    assert_eq!(eval::pool_mean(&x).unwrap(), x);
    assert_eq!(eval::pool_max(&x).unwrap(), x);
}
