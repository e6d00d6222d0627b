//! Loop-based reference implementations and shared fixtures.
//!
//! Nothing here goes through the autodiff graph or the gemm kernels.

#![allow(dead_code)]

use picaso::set_ops::MabParams;
use picaso::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_mat(t: &Tensor) -> Mat {
    t.to_rows()
}

pub fn from_mat(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i][l] * b[l][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

fn add_bias_relu(a: &Mat, b: &[f64]) -> Mat {
    a.iter()
        .map(|r| r.iter().zip(b).map(|(x, y)| (x + y).max(0.0)).collect())
        .collect()
}

fn cols(a: &Mat, start: usize, len: usize) -> Mat {
    a.iter().map(|r| r[start..start + len].to_vec()).collect()
}

/// `softmax(q kᵀ / √d_q) v`, row by row.
pub fn attention(q: &Mat, k: &Mat, v: &Mat) -> (Mat, Mat) {
    let scale = (q[0].len() as f64).sqrt();
    let mut weights = vec![];
    let mut out = vec![];
    for qi in q {
        let logits: Vec<f64> = k
            .iter()
            .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / scale)
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = e.iter().sum();
        let w: Vec<f64> = e.iter().map(|x| x / z).collect();
        let mut row = vec![0.0; v[0].len()];
        for (wj, vj) in w.iter().zip(v) {
            for (r, x) in row.iter_mut().zip(vj) {
                *r += wj * x;
            }
        }
        weights.push(w);
        out.push(row);
    }
    (out, weights)
}

/// Heads see column blocks of the packed projections; outputs are
/// concatenated and mapped through `w_o`.
pub fn multihead(q: &Mat, k: &Mat, v: &Mat, p: &MabParams) -> Mat {
    let d = p.w_q.cols();
    let dh = d / p.heads;
    let (qp, kp, vp) = (
        matmul(q, &to_mat(&p.w_q)),
        matmul(k, &to_mat(&p.w_k)),
        matmul(v, &to_mat(&p.w_v)),
    );
    let mut concat: Mat = vec![vec![]; q.len()];
    for j in 0..p.heads {
        let (o, _) = attention(&cols(&qp, j * dh, dh), &cols(&kp, j * dh, dh), &cols(&vp, j * dh, dh));
        for (c, r) in concat.iter_mut().zip(o) {
            c.extend(r);
        }
    }
    matmul(&concat, &to_mat(&p.w_o))
}

pub fn mab(y: &Mat, x: &Mat, p: &MabParams) -> Mat {
    let m = multihead(y, x, x, p);
    let inner = add_bias_relu(&matmul(&m, &to_mat(&p.ff_inner_w)), p.ff_inner_b.data());
    let h = add(&matmul(y, &to_mat(&p.w_y)), &inner);
    let outer = add_bias_relu(&matmul(&h, &to_mat(&p.ff_outer_w)), p.ff_outer_b.data());
    add(&h, &outer)
}

pub fn picaso(x: &Mat, t0: &Mat, p: &MabParams, steps: usize) -> Mat {
    let mut t = t0.clone();
    for _ in 0..steps {
        t = mab(&t, x, p);
    }
    t
}

/// Per-point average of `log Σ_j π_j 𝒩(x; μ_j, σ_j² I)` in two dimensions.
pub fn gmm_ll(x: &Mat, means: &Mat, stds: &[f64], logits: &[f64]) -> f64 {
    let max_l = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse_l = max_l + logits.iter().map(|l| (l - max_l).exp()).sum::<f64>().ln();
    let mut total = 0.0;
    for p in x {
        let terms: Vec<f64> = (0..means.len())
            .map(|j| {
                let sq: f64 = p.iter().zip(&means[j]).map(|(a, b)| (a - b).powi(2)).sum();
                let var = stds[j] * stds[j];
                logits[j] - lse_l - (2.0 * std::f64::consts::PI * var).ln() - sq / (2.0 * var)
            })
            .collect();
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        total += m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
    }
    total / x.len() as f64
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(r, s)| {
            assert_eq!(r.len(), s.len());
            r.iter().zip(s).map(|(x, y)| (x - y).abs())
        })
        .fold(0.0, f64::max)
}

/// MAB weights with every entry random, biases included.
pub fn random_mab(d: usize, heads: usize, rng: &mut ChaCha8Rng) -> MabParams {
    MabParams::init(d, heads, rng)
        .unwrap()
        .map(|t| Tensor::randn(t.rows(), t.cols(), 0.5, rng))
}

/// Rows of `x` reordered by `perm`: row `i` of the result is row `perm[i]`.
pub fn permute(x: &Tensor, perm: &[usize]) -> Tensor {
    x.permute_rows(perm).unwrap()
}

pub fn random_perm(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}
