//! Synthetic mixture sets and the JSON Lines dataset file.
//!
//! The file starts with one header object (format tag, schema version, seed,
//! generator config and an optional run-config echo) followed by one object
//! per set. Floats are written with shortest round-trip formatting, so a
//! write/read cycle is bit-exact.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::seed::rng_for;
use crate::tensor::{Tensor, TensorError};

use super::config::{MogConfig, DIMS};
use super::gmm::GmmParams;

pub const DATASET_FORMAT: &str = "picaso-mog-dataset";
pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// One set: `n×2` points with optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MogSet {
    pub points: Tensor,
    pub labels: Option<Vec<usize>>,
    pub params: Option<GmmParams>,
}

impl MogSet {
    pub fn n(&self) -> usize {
        self.points.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SetBatch {
    pub sets: Vec<MogSet>,
}

impl SetBatch {
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

/// Draws one set of `n` points. Component means are uniform in the mean
/// range, mixture weights are Dirichlet(1, …, 1), and points are the labelled
/// component mean plus isotropic noise.
pub fn sample_set<R: Rng + ?Sized>(config: &MogConfig, n: usize, rng: &mut R) -> MogSet {
    let k = config.k;
    let mut means = Vec::with_capacity(k * DIMS);
    for _ in 0..k * DIMS {
        means.push(rng.random_range(config.mu_min..=config.mu_max));
    }
    let raw: Vec<f64> = (0..k)
        .map(|_| {
            let e: f64 = Exp1.sample(rng);
            e.max(f64::MIN_POSITIVE)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();

    let mut labels = Vec::with_capacity(n);
    let mut points = Vec::with_capacity(n * DIMS);
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut label = k - 1;
        for (j, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                label = j;
                break;
            }
        }
        labels.push(label);
        for c in 0..DIMS {
            let z: f64 = StandardNormal.sample(rng);
            points.push(means[label * DIMS + c] + config.sigma * z);
        }
    }
    MogSet {
        points: Tensor::matrix(n, DIMS, points).expect("n ≥ 1"),
        labels: Some(labels),
        params: Some(GmmParams {
            means: Tensor::matrix(k, DIMS, means).expect("k ≥ 1"),
            stds: vec![config.sigma; k],
            mix_logits: weights.iter().map(|w| w.ln()).collect(),
        }),
    }
}

/// `num_sets` sets; set `i` uses its own stream derived from `(seed, i)`, and
/// draws its size uniformly from the configured range.
pub fn sample_mog(config: &MogConfig, num_sets: usize, seed: u64) -> Result<SetBatch, TensorError> {
    config.validate()?;
    if num_sets == 0 {
        return Err(TensorError::Invalid("num_sets must be at least 1".into()));
    }
    let sets = (0..num_sets)
        .map(|i| {
            let mut rng = rng_for(seed, &format!("mog-set/{i}"));
            let n = rng.random_range(config.n_min..=config.n_max);
            sample_set(config, n, &mut rng)
        })
        .collect();
    Ok(SetBatch { sets })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub schema_version: u32,
    pub seed: u64,
    pub num_sets: usize,
    pub config: MogConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
}

impl DatasetHeader {
    pub fn new(config: MogConfig, seed: u64, num_sets: usize) -> Self {
        Self {
            format: DATASET_FORMAT.to_string(),
            schema_version: DATASET_SCHEMA_VERSION,
            seed,
            num_sets,
            config,
            run_config: None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SetRecord {
    n: usize,
    points: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    means: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stds: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mix_logits: Option<Vec<f64>>,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub fn write_dataset<W: Write>(header: &DatasetHeader, batch: &SetBatch, mut out: W) -> Result<(), DatasetError> {
    let line = serde_json::to_string(header).map_err(|e| DatasetError::Json { line: 1, source: e })?;
    writeln!(out, "{line}")?;
    for (i, set) in batch.sets.iter().enumerate() {
        let rec = SetRecord {
            n: set.n(),
            points: set.points.data().to_vec(),
            labels: set.labels.clone(),
            means: set.params.as_ref().map(|p| p.means.data().to_vec()),
            stds: set.params.as_ref().map(|p| p.stds.clone()),
            mix_logits: set.params.as_ref().map(|p| p.mix_logits.clone()),
        };
        let line = serde_json::to_string(&rec).map_err(|e| DatasetError::Json { line: i + 2, source: e })?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<(DatasetHeader, SetBatch), DatasetError> {
    let mut lines = input.lines();
    let first = lines
        .next()
        .ok_or_else(|| DatasetError::Format("empty dataset file".into()))??;
    let header: DatasetHeader = serde_json::from_str(&first).map_err(|e| DatasetError::Json { line: 1, source: e })?;
    if header.format != DATASET_FORMAT {
        return Err(DatasetError::Format(format!("unknown format tag `{}`", header.format)));
    }
    if header.schema_version != DATASET_SCHEMA_VERSION {
        return Err(DatasetError::Format(format!(
            "unsupported schema version {}",
            header.schema_version
        )));
    }
    let mut sets = Vec::with_capacity(header.num_sets);
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 2;
        let rec: SetRecord = serde_json::from_str(&line).map_err(|e| DatasetError::Json {
            line: lineno,
            source: e,
        })?;
        let points = Tensor::matrix(rec.n, DIMS, rec.points)?;
        if let Some(labels) = &rec.labels {
            if labels.len() != rec.n || labels.iter().any(|&l| l >= header.config.k) {
                return Err(DatasetError::Format(format!("line {lineno}: bad labels")));
            }
        }
        let params = match (rec.means, rec.stds, rec.mix_logits) {
            (Some(means), Some(stds), Some(mix_logits)) => {
                let k = stds.len();
                Some(GmmParams {
                    means: Tensor::matrix(k, DIMS, means)?,
                    stds,
                    mix_logits,
                })
            }
            (None, None, None) => None,
            _ => {
                return Err(DatasetError::Format(format!(
                    "line {lineno}: partial mixture parameters"
                )))
            }
        };
        if let Some(p) = &params {
            p.validate()?;
        }
        sets.push(MogSet {
            points,
            labels: rec.labels,
            params,
        });
    }
    if sets.len() != header.num_sets {
        return Err(DatasetError::Format(format!(
            "header declares {} sets, file holds {}",
            header.num_sets,
            sets.len()
        )));
    }
    Ok((header, SetBatch { sets }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let cfg = MogConfig::default();
        assert_eq!(sample_mog(&cfg, 3, 5).unwrap(), sample_mog(&cfg, 3, 5).unwrap());
        assert_ne!(sample_mog(&cfg, 3, 5).unwrap(), sample_mog(&cfg, 3, 6).unwrap());
    }

    #[test]
    fn sizes_and_labels_in_range() {
        let cfg = MogConfig::default();
        let batch = sample_mog(&cfg, 20, 1).unwrap();
        for set in &batch.sets {
            assert!((300..=600).contains(&set.n()));
            assert!(set.labels.as_ref().unwrap().iter().all(|&l| l < 4));
            let w: f64 = set.params.as_ref().unwrap().weights().iter().sum();
            assert!((w - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn vanishing_sigma_pins_points_to_means() {
        let cfg = MogConfig {
            sigma: 1e-9,
            ..MogConfig::default()
        };
        let batch = sample_mog(&cfg, 5, 2).unwrap();
        for set in &batch.sets {
            let p = set.params.as_ref().unwrap();
            for (i, &l) in set.labels.as_ref().unwrap().iter().enumerate() {
                for c in 0..2 {
                    assert!((set.points.get(i, c) - p.means.get(l, c)).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn invalid_requests() {
        assert!(sample_mog(&MogConfig::default(), 0, 1).is_err());
        let cfg = MogConfig {
            n_min: 1,
            ..MogConfig::default()
        };
        assert!(sample_mog(&cfg, 1, 1).is_err());
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let cfg = MogConfig::default();
        let batch = sample_mog(&cfg, 2, 9).unwrap();
        let header = DatasetHeader::new(cfg, 9, 2);
        let mut buf = vec![];
        write_dataset(&header, &batch, &mut buf).unwrap();
        let (h2, b2) = read_dataset(&buf[..]).unwrap();
        assert_eq!(h2, header);
        assert_eq!(b2, batch);
    }

    #[test]
    fn truncated_file_rejected() {
        let cfg = MogConfig::default();
        let batch = sample_mog(&cfg, 2, 9).unwrap();
        let mut buf = vec![];
        write_dataset(&DatasetHeader::new(cfg, 9, 3), &batch, &mut buf).unwrap();
        assert!(matches!(read_dataset(&buf[..]), Err(DatasetError::Format(_))));
    }
}
