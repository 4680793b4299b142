//! Seeded synthetic SPD classification data.
//!
//! Class `c` has the base matrix `B_c = Q diag(exp(σ p_c)) Qᵀ`, with a shared random
//! basis `Q` and the log-spectral profile `p_c(k) = cos(2π(k/d + c/C))`. A sample is
//! a Wishart draw around `B_c` with `dof` degrees of freedom, pushed through a random
//! near-identity congruence; its log-spectrum is then rescaled affinely, keeping the
//! eigenvectors, so the condition number hits a per-sample target.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use spd_gbw::linalg::io::{write_matrix, BatchManifest, ManifestEntry};
use spd_gbw::linalg::random::{gaussian_matrix, random_orthogonal};
use spd_gbw::linalg::eigh;
use spd_gbw::{Error, Result, SpdMatrix};

/// Scale of the per-sample congruence perturbation `I + η G/√d`.
const CONGRUENCE_NOISE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KappaSpacing {
    /// Log-uniform draw per sample.
    #[default]
    Random,
    /// Log-spaced over the whole dataset, in sample order.
    Grid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub count_per_class: usize,
    pub num_classes: usize,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub seed: u64,
    /// `σ`, the amplitude of the class log-spectral profile.
    pub separation: f64,
    /// Wishart degrees of freedom; `0` means `3·dim`.
    #[serde(default)]
    pub dof: usize,
    #[serde(default)]
    pub spacing: KappaSpacing,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            dim: 15,
            count_per_class: 150,
            num_classes: 2,
            kappa_min: 10.0,
            kappa_max: 1e6,
            seed: 0,
            separation: 1.5,
            dof: 0,
            spacing: KappaSpacing::Random,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config(format!("dimension must be at least 2, got {}", self.dim)));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("need at least one class".into()));
        }
        let ok = |k: f64| k.is_finite() && (1.0..=1e12).contains(&k);
        if !ok(self.kappa_min) || !ok(self.kappa_max) || self.kappa_min > self.kappa_max {
            return Err(Error::Config(format!(
                "condition range [{}, {}] must lie in [1, 1e12]",
                self.kappa_min, self.kappa_max
            )));
        }
        if !(self.separation >= 0.0) || !self.separation.is_finite() {
            return Err(Error::Config("separation must be nonnegative".into()));
        }
        if self.dof != 0 && self.dof < self.dim {
            return Err(Error::Config(format!(
                "{} degrees of freedom give singular draws in dimension {}",
                self.dof, self.dim
            )));
        }
        Ok(())
    }

    pub fn degrees_of_freedom(&self) -> usize {
        if self.dof == 0 {
            3 * self.dim
        } else {
            self.dof
        }
    }

    pub fn total(&self) -> usize {
        self.count_per_class * self.num_classes
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub samples: Vec<SpdMatrix>,
    pub labels: Vec<usize>,
}

fn profile(k: usize, d: usize, c: usize, classes: usize) -> f64 {
    (std::f64::consts::TAU * (k as f64 / d as f64 + c as f64 / classes as f64)).cos()
}

fn target_kappa(spec: &SyntheticSpec, index: usize, rng: &mut ChaCha8Rng) -> f64 {
    let (lo, hi) = (spec.kappa_min.ln(), spec.kappa_max.ln());
    match spec.spacing {
        KappaSpacing::Random if hi > lo => rng.random_range(lo..=hi).exp(),
        KappaSpacing::Grid if spec.total() > 1 => {
            (lo + (hi - lo) * index as f64 / (spec.total() - 1) as f64).exp()
        }
        _ => spec.kappa_min,
    }
}

/// Rescale the log-spectrum of `x` to span `ln κ` around zero, keeping its eigenvectors
/// and eigenvalue order. A flat spectrum is spread by rank instead.
fn stretch(x: &DMatrix<f64>, kappa: f64) -> Result<SpdMatrix> {
    let e = eigh(x)?;
    if !(e.min_value() > 0.0) {
        return Err(Error::Numerical {
            context: "synthetic draw".into(),
            detail: format!("singular draw, eigenvalue {:e}", e.min_value()),
        });
    }
    let logs: Vec<f64> = e.values().iter().map(|v| v.ln()).collect();
    let (hi, lo) = (logs[0], logs[logs.len() - 1]);
    let span = kappa.ln();
    let n = logs.len();
    let stretched: Vec<f64> = if hi - lo > 1e-12 {
        let mid = 0.5 * (hi + lo);
        logs.iter().map(|l| ((l - mid) * span / (hi - lo)).exp()).collect()
    } else {
        (0..n)
            .map(|k| (span * (0.5 - k as f64 / (n - 1) as f64)).exp())
            .collect()
    };
    let u = e.vectors();
    let d = DMatrix::from_diagonal(&DVector::from_vec(stretched));
    SpdMatrix::from_matrix(u * d * u.transpose())
}

/// Samples in class-interleaved order: sample `i` has label `i mod C`.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let d = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let q = random_orthogonal(&mut rng, d);
    let roots: Vec<DMatrix<f64>> = (0..spec.num_classes)
        .map(|c| {
            let half = DVector::from_fn(d, |k, _| (0.5 * spec.separation * profile(k, d, c, spec.num_classes)).exp());
            &q * DMatrix::from_diagonal(&half) * q.transpose()
        })
        .collect();
    let dof = spec.degrees_of_freedom();
    let mut samples = Vec::with_capacity(spec.total());
    let mut labels = Vec::with_capacity(spec.total());
    for i in 0..spec.total() {
        let c = i % spec.num_classes;
        let z = &roots[c] * gaussian_matrix(&mut rng, d, dof);
        let w = &z * z.transpose() / dof as f64;
        let a = DMatrix::identity(d, d) + gaussian_matrix(&mut rng, d, d) * (CONGRUENCE_NOISE / (d as f64).sqrt());
        let x = &a * w * a.transpose();
        let kappa = target_kappa(spec, i, &mut rng);
        samples.push(stretch(&((&x + x.transpose()) * 0.5), kappa).map_err(|e| e.with_context(&format!("sample {i}")))?);
        labels.push(c);
    }
    Ok(SyntheticData { samples, labels })
}

/// Write `matrices/NNNNN.csv` and `manifest.json` under `dir`; returns the manifest.
pub fn write_dataset(spec: &SyntheticSpec, dir: &Path) -> Result<BatchManifest> {
    let data = generate(spec)?;
    fs::create_dir_all(dir.join("matrices"))?;
    let mut files = Vec::with_capacity(data.samples.len());
    for (i, (x, &label)) in data.samples.iter().zip(&data.labels).enumerate() {
        let rel = format!("matrices/{i:05}.csv");
        write_matrix(&dir.join(&rel), x.as_matrix())?;
        files.push(ManifestEntry {
            path: rel,
            label: Some(label),
        });
    }
    let manifest = BatchManifest {
        dim: spec.dim,
        count: files.len(),
        num_classes: Some(spec.num_classes),
        files,
        generator: Some(serde_json::to_value(spec)?),
    };
    manifest.write(&dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use spd_gbw::linalg::condition_number;

    fn spec(count: usize) -> SyntheticSpec {
        SyntheticSpec {
            dim: 6,
            count_per_class: count,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn validation() {
        assert!(spec(1).validate().is_ok());
        for bad in [
            SyntheticSpec { dim: 1, ..spec(1) },
            SyntheticSpec { kappa_min: 0.5, ..spec(1) },
            SyntheticSpec { kappa_max: 1e13, ..spec(1) },
            SyntheticSpec { kappa_min: 1e4, kappa_max: 1e3, ..spec(1) },
            SyntheticSpec { num_classes: 0, ..spec(1) },
            SyntheticSpec { dof: 3, ..spec(1) },
            SyntheticSpec { separation: f64::NAN, ..spec(1) },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn fixed_target_condition_number() {
        let s = SyntheticSpec {
            kappa_min: 1e6,
            kappa_max: 1e6,
            ..spec(10)
        };
        for x in generate(&s).unwrap().samples {
            let k = condition_number(&x);
            assert!(k > 0.5e6 && k < 2e6, "{k}");
        }
    }

    #[test]
    fn grid_spacing_is_monotone_and_hits_the_ends() {
        let s = SyntheticSpec {
            kappa_min: 1e3,
            kappa_max: 1e8,
            spacing: KappaSpacing::Grid,
            num_classes: 1,
            ..spec(20)
        };
        let ks: Vec<f64> = generate(&s).unwrap().samples.iter().map(condition_number).collect();
        assert!((ks[0] / 1e3 - 1.0).abs() < 1e-6);
        assert!((ks[19] / 1e8 - 1.0).abs() < 1e-4);
        assert!(ks.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn labels_interleave_and_seed_determines_output() {
        let a = generate(&spec(3)).unwrap();
        assert_eq!(a.labels, vec![0, 1, 0, 1, 0, 1]);
        let b = generate(&spec(3)).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.as_matrix(), y.as_matrix());
        }
        let c = generate(&SyntheticSpec { seed: 1, ..spec(3) }).unwrap();
        assert_ne!(a.samples[0].as_matrix(), c.samples[0].as_matrix());
    }

    #[test]
    fn empty_dataset_writes_an_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_dataset(&spec(0), dir.path()).unwrap();
        assert_eq!(m.count, 0);
        assert!(m.files.is_empty());
        assert_eq!(BatchManifest::read(&dir.path().join("manifest.json")).unwrap(), m);
    }
}
