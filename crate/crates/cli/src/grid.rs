//! Training runs over a grid of power deformations, input ridges and BN on/off.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use spd_gbw::batchnorm::GbwbnConfig;
use spd_gbw::linalg::io::{load_batch, write_atomic};
use spd_gbw::network::{train_model_observed, Dataset, EpochMetrics, LayerSpec, Model, TrainConfig};
use spd_gbw::{Error, Result, SpdMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BnAblation {
    With,
    Without,
    Both,
}

#[derive(Clone, Debug)]
pub struct GridConfig {
    /// BiMap dimensions `{d₀, …, d_L}`.
    pub arch: Vec<usize>,
    pub thetas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub bn: BnAblation,
    /// Template for the GBWBN layers; `theta` is overridden per grid point.
    pub bn_config: GbwbnConfig,
    /// `lambda_reg` is overridden per grid point.
    pub train: TrainConfig,
    pub test_fraction: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            arch: vec![15, 12],
            thetas: vec![1.0],
            lambdas: vec![0.0],
            bn: BnAblation::With,
            bn_config: GbwbnConfig::default(),
            train: TrainConfig::default(),
            test_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub id: usize,
    pub bn: bool,
    /// `None` without BN, where the deformation has no effect.
    pub theta: Option<f64>,
    pub lambda: f64,
}

impl GridPoint {
    pub fn label(&self) -> String {
        match self.theta {
            Some(t) => format!("bn_theta{t}_lambda{}", self.lambda),
            None => format!("nobn_lambda{}", self.lambda),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Status {
    Ok,
    Diverged { epoch: usize, detail: String },
    Failed { detail: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub point: GridPoint,
    pub status: Status,
    pub history: Vec<EpochMetrics>,
}

impl PointResult {
    pub fn final_metrics(&self) -> Option<&EpochMetrics> {
        self.history.last()
    }

    pub fn best_test_acc(&self) -> Option<f64> {
        self.history.iter().map(|m| m.test_acc).reduce(f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub seed: u64,
    pub results: Vec<PointResult>,
}

/// Shortest representation that parses back to the same value.
fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

impl GridReport {
    /// One row per (grid point, epoch).
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("id,bn,theta,lambda,epoch,train_loss,train_acc,test_loss,test_acc\n");
        for r in &self.results {
            let p = &r.point;
            for m in &r.history {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    p.id,
                    p.bn,
                    opt(p.theta),
                    num(p.lambda),
                    m.epoch,
                    num(m.train_loss),
                    num(m.train_acc),
                    num(m.test_loss),
                    num(m.test_acc)
                ));
            }
        }
        out
    }

    /// One row per grid point with its final and best test accuracy.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("id,bn,theta,lambda,status,epochs,final_test_acc,best_test_acc,final_test_loss,detail\n");
        for r in &self.results {
            let p = &r.point;
            let (status, detail) = match &r.status {
                Status::Ok => ("ok", String::new()),
                Status::Diverged { detail, .. } => ("diverged", detail.clone()),
                Status::Failed { detail } => ("failed", detail.clone()),
            };
            let last = r.final_metrics();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                p.id,
                p.bn,
                opt(p.theta),
                num(p.lambda),
                status,
                r.history.len(),
                opt(last.map(|m| m.test_acc)),
                opt(r.best_test_acc()),
                opt(last.map(|m| m.test_loss)),
                if detail.is_empty() { detail } else { quote(&detail) }
            ));
        }
        out
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.bn_config.validate()?;
        if self.thetas.is_empty() || self.lambdas.is_empty() {
            return Err(Error::Config("grids must be nonempty".into()));
        }
        if self.thetas.iter().any(|t| *t == 0.0 || !t.is_finite()) {
            return Err(Error::Config("theta values must be finite and nonzero".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test fraction must be in (0, 1), got {}", self.test_fraction)));
        }
        Ok(())
    }

    /// Per ridge value: the BN points in θ order, then the point without BN.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &lambda in &self.lambdas {
            if self.bn != BnAblation::Without {
                for &theta in &self.thetas {
                    out.push(GridPoint {
                        id: out.len(),
                        bn: true,
                        theta: Some(theta),
                        lambda,
                    });
                }
            }
            if self.bn != BnAblation::With {
                out.push(GridPoint {
                    id: out.len(),
                    bn: false,
                    theta: None,
                    lambda,
                });
            }
        }
        out
    }

    pub fn spec_for(&self, point: &GridPoint, num_classes: usize) -> Result<LayerSpec> {
        let bn = point.theta.map(|theta| GbwbnConfig {
            theta,
            ..self.bn_config.clone()
        });
        LayerSpec::spdnet(&self.arch, bn, num_classes)
    }
}

/// Stratified split: a seeded `test_fraction` of each class (at least one sample) goes
/// to the test set. Both sets keep the original sample order.
pub fn split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let classes = data.labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test = vec![false; data.len()];
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == c).collect();
        if idx.len() < 2 {
            return Err(Error::Precondition(format!("class {c} needs at least two samples to split")));
        }
        idx.shuffle(&mut rng);
        let k = ((idx.len() as f64 * test_fraction).round() as usize).clamp(1, idx.len() - 1);
        for &i in &idx[..k] {
            test[i] = true;
        }
    }
    let train_idx: Vec<usize> = (0..data.len()).filter(|&i| !test[i]).collect();
    let test_idx: Vec<usize> = (0..data.len()).filter(|&i| test[i]).collect();
    Ok((data.subset(&train_idx), data.subset(&test_idx)))
}

/// Labeled dataset from a manifest; every entry needs a label.
pub fn load_dataset(manifest: &Path) -> Result<Dataset> {
    let (_, batch) = load_batch(manifest)?;
    let mut samples = Vec::with_capacity(batch.matrices.len());
    let mut labels = Vec::with_capacity(batch.matrices.len());
    for (i, (m, label)) in batch.matrices.into_iter().zip(batch.labels).enumerate() {
        samples.push(SpdMatrix::new(m).map_err(|e| e.with_context(&format!("matrix {i}")))?);
        labels.push(label.ok_or_else(|| Error::Parse(format!("manifest entry {i} has no label")))?);
    }
    Dataset::new(samples, labels)
}

fn run_point(cfg: &GridConfig, point: &GridPoint, train_set: &Dataset, test_set: &Dataset, classes: usize, out_dir: Option<&Path>) -> PointResult {
    let train_cfg = TrainConfig {
        lambda_reg: point.lambda,
        ..cfg.train.clone()
    };
    let mut history = Vec::new();
    let outcome = cfg.spec_for(point, classes).and_then(|spec| {
        let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
        let model = Model::new(spec, &mut rng)?;
        train_model_observed(model, train_set, test_set, &train_cfg, &mut rng, |m| history.push(m.clone()))
    });
    let status = match outcome {
        Ok(o) => match out_dir.map(|dir| o.model.save(&dir.join(format!("checkpoint_{:03}.json", point.id)))) {
            Some(Err(e)) => Status::Failed { detail: e.to_string() },
            _ => Status::Ok,
        },
        Err(Error::Divergence { epoch, detail }) => Status::Diverged { epoch, detail },
        Err(e) => Status::Failed { detail: e.to_string() },
    };
    PointResult {
        point: point.clone(),
        status,
        history,
    }
}

/// Train every grid point from the same seed. A failing point is recorded and the run
/// moves on. With `out_dir`, each finished point's checkpoint is written atomically.
pub fn run_grid(cfg: &GridConfig, data: &Dataset, out_dir: Option<&Path>) -> Result<GridReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Precondition("dataset is empty".into()));
    }
    let dim = data.samples[0].dim();
    if cfg.arch.first() != Some(&dim) {
        return Err(Error::Config(format!(
            "architecture starts at {:?} but the data has dimension {dim}",
            cfg.arch.first()
        )));
    }
    let classes = data.labels.iter().copied().max().unwrap_or(0) + 1;
    let (train_set, test_set) = split(data, cfg.test_fraction, cfg.train.seed)?;
    let results = cfg
        .points()
        .par_iter()
        .map(|p| run_point(cfg, p, &train_set, &test_set, classes, out_dir))
        .collect();
    Ok(GridReport {
        seed: cfg.train.seed,
        results,
    })
}

pub fn write_report(report: &GridReport, dir: &Path, json: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    if json {
        let mut text = serde_json::to_string_pretty(report)?;
        text.push('\n');
        write_atomic(&dir.join("report.json"), text.as_bytes())
    } else {
        write_atomic(&dir.join("metrics.csv"), report.metrics_csv().as_bytes())?;
        write_atomic(&dir.join("summary.csv"), report.summary_csv().as_bytes())
    }
}
