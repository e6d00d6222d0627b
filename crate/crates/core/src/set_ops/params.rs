use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::tensor::{Result, Tensor, TensorError};

/// Weights of one multihead attention block.
///
/// The per-head projections are stored packed: column block `j` (columns
/// `j·d/h .. (j+1)·d/h`) of `w_q`, `w_k` and `w_v` is head `j`'s `d×(d/h)`
/// projection. The feed-forward layers are single affine maps followed by relu.
///
/// Generic over the leaf type so the same layout serves plain tensors and
/// graph handles.
#[derive(Debug, Clone, PartialEq)]
pub struct MabParams<T = Tensor> {
    pub heads: usize,
    pub w_q: T,
    pub w_k: T,
    pub w_v: T,
    pub w_o: T,
    pub w_y: T,
    pub ff_inner_w: T,
    pub ff_inner_b: T,
    pub ff_outer_w: T,
    pub ff_outer_b: T,
}

pub const MAB_FIELDS: [&str; 9] = [
    "w_q",
    "w_k",
    "w_v",
    "w_o",
    "w_y",
    "ff_inner_w",
    "ff_inner_b",
    "ff_outer_w",
    "ff_outer_b",
];

impl<T> MabParams<T> {
    pub fn leaves(&self) -> [&T; 9] {
        [
            &self.w_q,
            &self.w_k,
            &self.w_v,
            &self.w_o,
            &self.w_y,
            &self.ff_inner_w,
            &self.ff_inner_b,
            &self.ff_outer_w,
            &self.ff_outer_b,
        ]
    }

    pub fn leaves_mut(&mut self) -> [&mut T; 9] {
        [
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.w_o,
            &mut self.w_y,
            &mut self.ff_inner_w,
            &mut self.ff_inner_b,
            &mut self.ff_outer_w,
            &mut self.ff_outer_b,
        ]
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> MabParams<U> {
        MabParams {
            heads: self.heads,
            w_q: f(&self.w_q),
            w_k: f(&self.w_k),
            w_v: f(&self.w_v),
            w_o: f(&self.w_o),
            w_y: f(&self.w_y),
            ff_inner_w: f(&self.ff_inner_w),
            ff_inner_b: f(&self.ff_inner_b),
            ff_outer_w: f(&self.ff_outer_w),
            ff_outer_b: f(&self.ff_outer_b),
        }
    }
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn check_heads(d: usize, h: usize) -> Result<()> {
    if h == 0 || d == 0 || !d.is_multiple_of(h) {
        return Err(TensorError::Invalid(format!(
            "feature width {d} is not divisible by head count {h}"
        )));
    }
    Ok(())
}

impl MabParams<Tensor> {
    /// Xavier-uniform matrices and zero biases.
    pub fn init<R: rand::Rng + ?Sized>(d: usize, heads: usize, rng: &mut R) -> Result<Self> {
        check_heads(d, heads)?;
        let bound = xavier_bound(d, d);
        let mut mat = || Tensor::uniform(d, d, bound, rng);
        let (w_q, w_k, w_v, w_o, w_y) = (mat(), mat(), mat(), mat(), mat());
        let ff_inner_w = mat();
        let ff_outer_w = mat();
        Ok(Self {
            heads,
            w_q,
            w_k,
            w_v,
            w_o,
            w_y,
            ff_inner_w,
            ff_inner_b: Tensor::zeros(1, d),
            ff_outer_w,
            ff_outer_b: Tensor::zeros(1, d),
        })
    }

    /// Single head, identity projections. The feed-forward weights are zero,
    /// so only the attention path through `multihead` is meaningful.
    pub fn identity(d: usize) -> Self {
        Self {
            heads: 1,
            w_q: Tensor::identity(d),
            w_k: Tensor::identity(d),
            w_v: Tensor::identity(d),
            w_o: Tensor::identity(d),
            w_y: Tensor::identity(d),
            ff_inner_w: Tensor::zeros(d, d),
            ff_inner_b: Tensor::zeros(1, d),
            ff_outer_w: Tensor::zeros(d, d),
            ff_outer_b: Tensor::zeros(1, d),
        }
    }

    pub fn width(&self) -> usize {
        self.w_q.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.width();
        check_heads(d, self.heads)?;
        for (name, t) in MAB_FIELDS.iter().zip(self.leaves()) {
            let want: &[usize] = if name.ends_with("_b") { &[1, d] } else { &[d, d] };
            if t.shape() != want {
                return Err(TensorError::Invalid(format!(
                    "{name} has shape {:?}, expected {want:?}",
                    t.shape()
                )));
            }
            if !t.all_finite() {
                return Err(TensorError::Invalid(format!("{name} holds non-finite values")));
            }
        }
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.leaves().iter().map(|t| t.len()).sum()
    }

    /// Head `j`'s `d×(d/h)` slice of one packed projection.
    pub fn head_projection(&self, packed: &Tensor, j: usize) -> Tensor {
        let d = self.width();
        let dh = d / self.heads;
        let rows: Vec<Vec<f64>> = (0..d).map(|i| packed.row(i)[j * dh..(j + 1) * dh].to_vec()).collect();
        Tensor::from_rows(&rows).expect("non-empty head slice")
    }

    /// Inserts every matrix as a graph leaf, tracked or constant.
    pub fn bind(&self, g: &mut Graph, tracked: bool) -> MabParams<Var> {
        self.map(|t| {
            if tracked {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        })
    }
}

/// A `k×d` matrix of template (query) vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Templates {
    pub matrix: Tensor,
    /// `true` for a trainable starting template, `false` for a cascade output.
    pub learned: bool,
}

impl Templates {
    /// Standard normal entries scaled by `1/√d`.
    pub fn init<R: rand::Rng + ?Sized>(k: usize, d: usize, rng: &mut R) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(TensorError::Invalid("templates need k ≥ 1 and d ≥ 1".into()));
        }
        Ok(Self {
            matrix: Tensor::randn(k, d, 1.0 / (d as f64).sqrt(), rng),
            learned: true,
        })
    }

    pub fn learned(matrix: Tensor) -> Self {
        Self { matrix, learned: true }
    }

    pub fn derived(matrix: Tensor) -> Self {
        Self { matrix, learned: false }
    }

    pub fn k(&self) -> usize {
        self.matrix.rows()
    }
}

/// Seeded MAB weights plus a `k×d` starting template. Matrices are drawn
/// first, in field order, then the template.
pub fn init_params(d: usize, heads: usize, k: usize, seed: u64) -> Result<(MabParams, Templates)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = MabParams::init(d, heads, &mut rng)?;
    let templates = Templates::init(k, d, &mut rng)?;
    Ok((params, templates))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_params() {
        let a = init_params(8, 2, 3, 11).unwrap();
        let b = init_params(8, 2, 3, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let (a, ta) = init_params(8, 2, 3, 1).unwrap();
        let (b, tb) = init_params(8, 2, 3, 2).unwrap();
        assert_ne!(a.w_q, b.w_q);
        assert_ne!(ta, tb);
    }

    #[test]
    fn xavier_entries_within_bound() {
        let d = 16;
        let (p, _) = init_params(d, 4, 2, 5).unwrap();
        let bound = (6.0 / (2.0 * d as f64)).sqrt();
        for (name, t) in MAB_FIELDS.iter().zip(p.leaves()) {
            if name.ends_with("_b") {
                assert!(t.data().iter().all(|&v| v == 0.0));
            } else {
                assert!(t.data().iter().all(|v| v.abs() <= bound), "{name}");
            }
        }
        p.validate().unwrap();
    }

    #[test]
    fn indivisible_width_rejected() {
        assert!(init_params(10, 4, 2, 0).is_err());
    }

    #[test]
    fn head_projection_is_column_block() {
        let (p, _) = init_params(8, 4, 1, 3).unwrap();
        let h2 = p.head_projection(&p.w_k, 2);
        assert_eq!(h2.shape(), &[8, 2]);
        assert_eq!(h2.get(5, 1), p.w_k.get(5, 5));
    }
}
