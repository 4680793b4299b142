//! Condition-number statistics of a batch without normalization, in the layer's working
//! space, and after a train-mode GBWBN pass.

use serde::{Deserialize, Serialize};

use spd_gbw::batchnorm::{GbwbnConfig, GbwbnState, Mode};
use spd_gbw::linalg::{condition_number, regularize};
use spd_gbw::{Result, SpdMatrix, SymmetricMatrix};

pub const DEFAULT_THRESHOLDS: [f64; 3] = [1e3, 1e4, 1e5];

#[derive(Clone, Debug)]
pub struct DiagnoseConfig {
    pub lambda: f64,
    pub bn: GbwbnConfig,
    pub thresholds: Vec<f64>,
    pub epoch: usize,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        DiagnoseConfig {
            lambda: 0.0,
            bn: GbwbnConfig::default(),
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            epoch: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Regularized inputs.
    Without,
    /// `M^{-1/2} X^θ M^{-1/2}`, where the layer computes its statistics.
    Before,
    After,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Without => "without",
            Stage::Before => "before",
            Stage::After => "after",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCount {
    pub threshold: f64,
    pub count: usize,
    pub percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub max_kappa: f64,
    pub counts: Vec<ThresholdCount>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub epoch: usize,
    pub lambda: f64,
    pub theta: f64,
    pub size: usize,
    pub stages: Vec<StageReport>,
}

impl DiagnosticsReport {
    pub fn stage(&self, stage: Stage) -> &StageReport {
        self.stages.iter().find(|s| s.stage == stage).expect("all stages present")
    }

    /// `stage,threshold,count,size,percent`, percentages with four decimals.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# epoch={} lambda={} theta={}\n", self.epoch, self.lambda, self.theta);
        out.push_str("stage,threshold,count,size,percent\n");
        for s in &self.stages {
            for c in &s.counts {
                out.push_str(&format!(
                    "{},{:e},{},{},{:.4}\n",
                    s.stage.name(),
                    c.threshold,
                    c.count,
                    self.size,
                    c.percent
                ));
            }
        }
        out
    }
}

fn stage_report(stage: Stage, kappas: &[f64], thresholds: &[f64]) -> StageReport {
    let size = kappas.len();
    let counts = thresholds
        .iter()
        .map(|&t| {
            let count = kappas.iter().filter(|&&k| k > t).count();
            let percent = if size == 0 { 0.0 } else { count as f64 / size as f64 * 100.0 };
            ThresholdCount {
                threshold: t,
                count,
                percent,
            }
        })
        .collect();
    StageReport {
        stage,
        max_kappa: kappas.iter().copied().fold(0.0, f64::max),
        counts,
    }
}

/// Counts of `κ > t` per stage. The layer runs in train mode with `M = 𝒢 = I`, `s = 1`.
pub fn diagnose(batch: &[SymmetricMatrix], cfg: &DiagnoseConfig) -> Result<DiagnosticsReport> {
    let inputs: Vec<SpdMatrix> = batch
        .iter()
        .enumerate()
        .map(|(i, x)| regularize(x, cfg.lambda).map_err(|e| e.with_context(&format!("matrix {i}"))))
        .collect::<Result<_>>()?;
    let mut stages = Vec::with_capacity(3);
    let without: Vec<f64> = inputs.iter().map(condition_number).collect();
    stages.push(stage_report(Stage::Without, &without, &cfg.thresholds));
    let (before, after) = if inputs.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        let mut state = GbwbnState::new(inputs[0].dim(), cfg.bn.clone())?;
        state.set_mode(Mode::Train);
        let before = inputs
            .iter()
            .map(|x| state.to_hat(x).map(|h| condition_number(&h)))
            .collect::<Result<Vec<_>>>()?;
        let (out, _) = state.forward_pure(&inputs)?;
        (before, out.iter().map(condition_number).collect())
    };
    stages.push(stage_report(Stage::Before, &before, &cfg.thresholds));
    stages.push(stage_report(Stage::After, &after, &cfg.thresholds));
    Ok(DiagnosticsReport {
        epoch: cfg.epoch,
        lambda: cfg.lambda,
        theta: cfg.bn.theta,
        size: inputs.len(),
        stages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, KappaSpacing, SyntheticSpec};
    use nalgebra::DMatrix;
    use spd_gbw::Error;

    fn sym(m: DMatrix<f64>) -> SymmetricMatrix {
        SymmetricMatrix::new(m).unwrap()
    }

    #[test]
    fn identity_batch_counts_nothing() {
        let batch = vec![SymmetricMatrix::identity(3); 5];
        let r = diagnose(&batch, &DiagnoseConfig::default()).unwrap();
        assert_eq!(r.stages.len(), 3);
        for s in &r.stages {
            assert!(s.counts.iter().all(|c| c.count == 0));
        }
    }

    #[test]
    fn rank_one_batch_with_small_ridge() {
        // u uᵀ with |u| = 1 plus λI has eigenvalues {1 + λ, λ}.
        let u = nalgebra::DVector::from_vec(vec![0.6, 0.8, 0.0]);
        let uv = nalgebra::DVector::from_vec(vec![0.0, 0.6, 0.8]);
        let batch = vec![sym(&u * u.transpose()), sym(&uv * uv.transpose())];
        let cfg = DiagnoseConfig {
            lambda: 1e-5,
            ..DiagnoseConfig::default()
        };
        let r = diagnose(&batch, &cfg).unwrap();
        let w = r.stage(Stage::Without);
        assert!((w.max_kappa / (1.0 + 1e5) - 1.0).abs() < 1e-6, "{}", w.max_kappa);
        assert_eq!(w.counts[0].count, 2);
        assert_eq!(w.counts[1].count, 2);
        assert_eq!(w.counts[0].percent, 100.0);
    }

    #[test]
    fn non_spd_input_names_the_matrix() {
        let batch = vec![
            SymmetricMatrix::identity(2),
            SymmetricMatrix::from_diagonal(&[1.0, -1.0]),
        ];
        match diagnose(&batch, &DiagnoseConfig::default()).unwrap_err() {
            Error::OutOfDomain { context, .. } => assert!(context.contains("matrix 1"), "{context}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn percentages_recompute_from_counts() {
        let spec = SyntheticSpec {
            dim: 5,
            count_per_class: 7,
            kappa_min: 10.0,
            kappa_max: 1e6,
            ..SyntheticSpec::default()
        };
        let data = generate(&spec).unwrap();
        let batch: Vec<SymmetricMatrix> = data.samples.iter().map(|x| x.sym().clone()).collect();
        let r = diagnose(&batch, &DiagnoseConfig::default()).unwrap();
        assert_eq!(r.size, 14);
        let csv = r.to_csv();
        for s in &r.stages {
            for c in &s.counts {
                assert!(c.count <= r.size);
                assert_eq!(c.percent, c.count as f64 / 14.0 * 100.0);
                let line = format!("{},{:e},{},14,{:.4}", s.stage.name(), c.threshold, c.count, c.percent);
                assert!(csv.contains(&line), "{line}");
            }
        }
        // The working space at θ = 1, M = I is the input itself.
        let (w, b) = (r.stage(Stage::Without), r.stage(Stage::Before));
        assert!((w.max_kappa / b.max_kappa - 1.0).abs() < 1e-9);
        assert_eq!(w.counts, b.counts);
    }

    #[test]
    fn contraction_on_a_wide_condition_range() {
        let spec = SyntheticSpec {
            dim: 8,
            count_per_class: 60,
            num_classes: 1,
            kappa_min: 1e3,
            kappa_max: 1e8,
            spacing: KappaSpacing::Grid,
            ..SyntheticSpec::default()
        };
        let data = generate(&spec).unwrap();
        let batch: Vec<SymmetricMatrix> = data.samples.iter().map(|x| x.sym().clone()).collect();
        let r = diagnose(&batch, &DiagnoseConfig::default()).unwrap();
        // The first sample sits on the lowest threshold.
        assert!(r.stage(Stage::Without).counts[0].count >= 59);
        assert!(r.stage(Stage::After).counts.iter().all(|c| c.count == 0), "{:?}", r.stage(Stage::After));
    }
}
