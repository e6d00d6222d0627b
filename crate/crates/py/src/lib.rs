//! Python bindings. Matrices cross the boundary as lists of rows.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use picaso::kmeans;
use picaso::mog::{self, GmmParams, MogConfig};
use picaso::set_ops::{eval, AttentionRecord, Templates};
use picaso::trainer::checkpoint::Checkpoint;
use picaso::trainer::{self, EncoderKind, ModelConfig, PoolKind, Scorer, TrainConfig, TrainData, Trainer};
use picaso::Tensor;

type Rows = Vec<Vec<f64>>;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn tensor(rows: &Rows) -> PyResult<Tensor> {
    Tensor::from_rows(rows).map_err(err)
}

fn records<'py>(py: Python<'py>, recs: &[AttentionRecord]) -> PyResult<Vec<Bound<'py, PyDict>>> {
    recs.iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("step", r.step)?;
            d.set_item("head", r.head)?;
            d.set_item("weights", r.weights.to_rows())?;
            Ok(d)
        })
        .collect()
}

fn gmm_dict<'py>(py: Python<'py>, p: &GmmParams) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("means", p.means.to_rows())?;
    d.set_item("stds", p.stds.clone())?;
    d.set_item("mix_logits", p.mix_logits.clone())?;
    Ok(d)
}

/// `softmax(q kᵀ/√d) v`; returns `(output, weights)`.
#[pyfunction]
fn attention(q: Rows, k: Rows, v: Rows) -> PyResult<(Rows, Rows)> {
    let (out, w) = eval::attention(&tensor(&q)?, &tensor(&k)?, &tensor(&v)?).map_err(err)?;
    Ok((out.to_rows(), w.to_rows()))
}

/// One soft K-means update; returns `(responsibilities, centroids)`.
#[pyfunction]
fn soft_kmeans_step(t: Rows, x: Rows) -> PyResult<(Rows, Rows)> {
    let a = kmeans::soft_kmeans_step(&tensor(&t)?, &tensor(&x)?).map_err(err)?;
    Ok((a.responsibilities.to_rows(), a.centroids.to_rows()))
}

/// Weight-free PICASO step (identity projections, one head).
#[pyfunction]
fn stripped_pb_step(t: Rows, x: Rows) -> PyResult<Rows> {
    Ok(kmeans::stripped_pb_step(&tensor(&t)?, &tensor(&x)?)
        .map_err(err)?
        .to_rows())
}

#[pyfunction]
fn gmm_log_likelihood(x: Rows, means: Rows, stds: Vec<f64>, mix_logits: Vec<f64>) -> PyResult<f64> {
    let p = GmmParams {
        means: tensor(&means)?,
        stds,
        mix_logits,
    };
    mog::gmm_log_likelihood(&tensor(&x)?, &p).map_err(err)
}

/// Synthetic mixture sets as dicts with `points`, `labels` and generative parameters.
#[pyfunction]
#[pyo3(signature = (num_sets, seed, k=4, n_min=300, n_max=600, sigma=0.3))]
fn sample_mog<'py>(
    py: Python<'py>,
    num_sets: usize,
    seed: u64,
    k: usize,
    n_min: usize,
    n_max: usize,
    sigma: f64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = MogConfig {
        k,
        n_min,
        n_max,
        sigma,
        ..MogConfig::default()
    };
    let batch = mog::sample_mog(&cfg, num_sets, seed).map_err(err)?;
    batch
        .sets
        .iter()
        .map(|s| {
            let d = gmm_dict(py, s.params.as_ref().expect("generated"))?;
            d.set_item("points", s.points.to_rows())?;
            d.set_item("labels", s.labels.clone())?;
            Ok(d)
        })
        .collect()
}

/// Seeded weights of one multihead attention block.
#[pyclass(name = "MabParams")]
struct PyMab {
    inner: picaso::set_ops::MabParams,
}

#[pymethods]
impl PyMab {
    #[new]
    #[pyo3(signature = (d, heads, seed=0))]
    fn new(d: usize, heads: usize, seed: u64) -> PyResult<Self> {
        let (inner, _) = picaso::set_ops::init_params(d, heads, 1, seed).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.num_scalars()
    }

    fn mab(&self, y: Rows, x: Rows) -> PyResult<Rows> {
        Ok(eval::mab(&tensor(&y)?, &tensor(&x)?, &self.inner)
            .map_err(err)?
            .to_rows())
    }

    fn sab(&self, x: Rows) -> PyResult<Rows> {
        Ok(eval::sab(&tensor(&x)?, &self.inner).map_err(err)?.to_rows())
    }

    /// Returns the final templates and one attention record per step and head.
    fn picaso_block<'py>(
        &self,
        py: Python<'py>,
        x: Rows,
        t0: Rows,
        steps: usize,
    ) -> PyResult<(Rows, Vec<Bound<'py, PyDict>>)> {
        let (t, recs) =
            eval::picaso_block(&tensor(&x)?, &Templates::learned(tensor(&t0)?), &self.inner, steps).map_err(err)?;
        Ok((t.to_rows(), records(py, &recs)?))
    }
}

/// Encoder, pooling and mixture head for the clustering task.
#[pyclass(name = "Model")]
struct PyModel {
    trainer: Trainer,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (encoder="ae32", pool="pb", steps=2, d=64, heads=4, k=4, encoder_depth=2, post_sa=false, seed=0, lr=1e-3))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        encoder: &str,
        pool: &str,
        steps: usize,
        d: usize,
        heads: usize,
        k: usize,
        encoder_depth: usize,
        post_sa: bool,
        seed: u64,
        lr: f64,
    ) -> PyResult<Self> {
        let encoder: EncoderKind = encoder.parse().map_err(err)?;
        let pool: PoolKind = pool.parse().map_err(err)?;
        let cfg = ModelConfig {
            encoder,
            encoder_depth,
            pool,
            steps,
            d,
            heads,
            k,
            post_sa,
            input_dim: mog::DIMS,
        };
        let model = trainer::build_model(&cfg, seed).map_err(err)?;
        Ok(Self {
            trainer: Trainer::new(model, lr, seed),
        })
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.trainer.model.num_scalars()
    }

    #[getter]
    fn epochs_trained(&self) -> usize {
        self.trainer.epoch
    }

    /// Templates, mixture parameters and pooling attention for one set.
    fn predict<'py>(&self, py: Python<'py>, x: Rows) -> PyResult<Bound<'py, PyDict>> {
        let p = self.trainer.model.predict(&tensor(&x)?).map_err(err)?;
        let d = gmm_dict(py, &p.gmm)?;
        d.set_item("templates", p.templates.to_rows())?;
        d.set_item("attention", records(py, &p.attention)?)?;
        Ok(d)
    }

    fn avg_log_likelihood(&self, sets: Vec<Rows>) -> PyResult<f64> {
        let ts = sets.iter().map(tensor).collect::<PyResult<Vec<_>>>()?;
        let refs: Vec<&Tensor> = ts.iter().collect();
        self.trainer.model.avg_log_likelihood(&refs).map_err(err)
    }

    /// Trains on freshly generated sets until `epochs` epochs have run in
    /// total; returns the per-epoch average log-likelihoods.
    #[pyo3(signature = (epochs, train_sets=200, batch_size=10, seed=0, n_min=300, n_max=600))]
    fn train(
        &mut self,
        epochs: usize,
        train_sets: usize,
        batch_size: usize,
        seed: u64,
        n_min: usize,
        n_max: usize,
    ) -> PyResult<Vec<f64>> {
        let mog = MogConfig {
            k: self.trainer.model.config.k,
            ..MogConfig::default()
        };
        let tc = TrainConfig {
            epochs,
            batch_size,
            lr: self.trainer.adam.config.lr,
            train_sets,
            set_sizes: Some((n_min, n_max)),
        };
        let data = TrainData::generate(&mog, &tc, seed).map_err(err)?;
        let mut out = vec![];
        self.trainer.train(&data, epochs, |r| out.push(r.avg_ll)).map_err(err)?;
        Ok(out)
    }

    /// `[(shift, avg_ll)]` on freshly generated, shifted test sets.
    #[pyo3(signature = (shifts, num_sets=100, seed=0))]
    fn evaluate_shifts(&self, shifts: Vec<f64>, num_sets: usize, seed: u64) -> PyResult<Vec<(f64, f64)>> {
        let mog = MogConfig {
            k: self.trainer.model.config.k,
            ..MogConfig::default()
        };
        let rows =
            trainer::evaluate_shifts(Scorer::Model(&self.trainer.model), &mog, &shifts, num_sets, seed).map_err(err)?;
        Ok(rows.into_iter().map(|r| (r.shift, r.avg_ll)).collect())
    }

    fn to_checkpoint_json(&self) -> String {
        String::from_utf8(Checkpoint::from_trainer(&self.trainer, None).to_bytes()).expect("json is utf-8")
    }

    #[staticmethod]
    fn from_checkpoint_json(text: &str) -> PyResult<Self> {
        let ck = Checkpoint::read(text.as_bytes()).map_err(err)?;
        Ok(Self {
            trainer: ck.to_trainer().map_err(err)?,
        })
    }
}

#[pymodule]
fn picaso_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(attention, m)?)?;
    m.add_function(wrap_pyfunction!(soft_kmeans_step, m)?)?;
    m.add_function(wrap_pyfunction!(stripped_pb_step, m)?)?;
    m.add_function(wrap_pyfunction!(gmm_log_likelihood, m)?)?;
    m.add_function(wrap_pyfunction!(sample_mog, m)?)?;
    m.add_class::<PyMab>()?;
    m.add_class::<PyModel>()?;
    m.add("DEFAULT_SHIFTS", trainer::DEFAULT_SHIFTS.to_vec())?;
    Ok(())
}
