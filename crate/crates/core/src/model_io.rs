//! Model persistence: a versioned, human-readable JSON record holding the
//! kernel, inducing inputs, variational parameters, standardization
//! statistics and enough training metadata to rebuild the original split.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::SplitSpec;
use crate::kernels::KernelSpec;
use crate::likelihoods::{BernoulliProbit, GaussianLik, Likelihood};
use crate::numerics::LowerTriangular;
use crate::svgp::{InducingInputs, SvgpModel, VariationalGaussian};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Error, Debug)]
pub enum ModelIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("model file is version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("model record is inconsistent: {0}")]
    Inconsistent(String),
}

pub type Result<T> = std::result::Result<T, ModelIoError>;

/// Kernel description with hyperparameters stored as plain values, not logs.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelConfig {
    Rbf {
        lengthscale: f64,
        signal_variance: f64,
    },
    Matern32 {
        lengthscale: f64,
        signal_variance: f64,
    },
    White {
        noise_variance: f64,
    },
    Sum {
        terms: Vec<KernelConfig>,
    },
}

impl KernelConfig {
    pub fn from_spec(spec: &KernelSpec<f64>) -> Self {
        match spec {
            KernelSpec::Rbf {
                log_lengthscale,
                log_signal_variance,
            } => Self::Rbf {
                lengthscale: log_lengthscale.exp(),
                signal_variance: log_signal_variance.exp(),
            },
            KernelSpec::Matern32 {
                log_lengthscale,
                log_signal_variance,
            } => Self::Matern32 {
                lengthscale: log_lengthscale.exp(),
                signal_variance: log_signal_variance.exp(),
            },
            KernelSpec::White { log_noise_variance } => Self::White {
                noise_variance: log_noise_variance.exp(),
            },
            KernelSpec::Sum(terms) => Self::Sum {
                terms: terms.iter().map(Self::from_spec).collect(),
            },
        }
    }

    pub fn to_spec(&self) -> Result<KernelSpec<f64>> {
        let bad = |e| ModelIoError::Inconsistent(format!("kernel config: {e}"));
        match self {
            Self::Rbf {
                lengthscale,
                signal_variance,
            } => KernelSpec::rbf(*lengthscale, *signal_variance).map_err(bad),
            Self::Matern32 {
                lengthscale,
                signal_variance,
            } => KernelSpec::matern32(*lengthscale, *signal_variance).map_err(bad),
            Self::White { noise_variance } => KernelSpec::white(*noise_variance).map_err(bad),
            Self::Sum { terms } => {
                let t: Result<Vec<_>> = terms.iter().map(Self::to_spec).collect();
                KernelSpec::sum(t?).map_err(bad)
            }
        }
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LikelihoodConfig {
    Bernoulli { quadrature_order: usize },
    Gaussian { noise_variance: f64 },
}

/// Split parameters recorded so evaluation can rebuild the training split.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub test_fraud_ratio: Option<f64>,
    pub seed: u64,
}

impl SplitConfig {
    pub fn to_spec(&self) -> SplitSpec<f64> {
        SplitSpec {
            train_fraction: self.train_fraction,
            test_fraud_ratio: self.test_fraud_ratio,
            seed: self.seed,
        }
    }
}

/// Training provenance stored alongside the parameters.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq, Default)]
pub struct TrainMetadata {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: String,
    pub learning_rate: f64,
    pub freeze_inducing: bool,
    pub train_hyperparams: bool,
    pub label_column: String,
    pub split: Option<SplitConfig>,
}

/// On-disk model record (`model.gpc`).
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub version: u32,
    pub kernel: KernelConfig,
    pub likelihood: LikelihoodConfig,
    /// Inducing inputs, row-major, `m_rows × dim`.
    pub z: Vec<Vec<f64>>,
    /// Variational mean.
    pub m: Vec<f64>,
    /// Row-major lower-triangular Cholesky factor of the variational covariance.
    pub l_s: Vec<Vec<f64>>,
    pub feature_names: Vec<String>,
    /// Per-feature (mean, stddev) used to standardize the training data.
    pub standardization: Option<Vec<(f64, f64)>>,
    pub train: TrainMetadata,
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(ModelIoError::Inconsistent(format!("{what} is empty")));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(ModelIoError::Inconsistent(format!("{what} is ragged")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

impl ModelFile {
    pub fn from_model(
        model: &SvgpModel<f64>,
        feature_names: Vec<String>,
        standardization: Option<Vec<(f64, f64)>>,
        train: TrainMetadata,
    ) -> Self {
        let likelihood = match &model.likelihood {
            Likelihood::Bernoulli(l) => LikelihoodConfig::Bernoulli {
                quadrature_order: l.quadrature_order(),
            },
            Likelihood::Gaussian(l) => LikelihoodConfig::Gaussian {
                noise_variance: l.noise_variance(),
            },
        };
        Self {
            version: MODEL_FORMAT_VERSION,
            kernel: KernelConfig::from_spec(&model.kernel),
            likelihood,
            z: matrix_to_rows(model.inducing.as_matrix()),
            m: model.q.m.iter().copied().collect(),
            l_s: matrix_to_rows(model.q.l_s.as_matrix()),
            feature_names,
            standardization,
            train,
        }
    }

    pub fn to_model(&self) -> Result<SvgpModel<f64>> {
        if self.version != MODEL_FORMAT_VERSION {
            return Err(ModelIoError::VersionMismatch {
                found: self.version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let bad = ModelIoError::Inconsistent;
        let kernel = self.kernel.to_spec()?;
        let likelihood = match &self.likelihood {
            LikelihoodConfig::Bernoulli { quadrature_order } => Likelihood::Bernoulli(
                BernoulliProbit::new(*quadrature_order).map_err(|e| bad(e.to_string()))?,
            ),
            LikelihoodConfig::Gaussian { noise_variance } => Likelihood::Gaussian(
                GaussianLik::new(*noise_variance).map_err(|e| bad(e.to_string()))?,
            ),
        };
        let z = rows_to_matrix(&self.z, "z")?;
        let inducing = InducingInputs::new(z).map_err(|e| bad(e.to_string()))?;
        let l_s_mat = rows_to_matrix(&self.l_s, "l_s")?;
        let l_s = LowerTriangular::new(l_s_mat).map_err(|e| bad(e.to_string()))?;
        if self.m.len() != inducing.m() || l_s.dim() != inducing.m() {
            return Err(ModelIoError::Inconsistent(
                "m / l_s / z sizes disagree".to_string(),
            ));
        }
        Ok(SvgpModel {
            kernel,
            inducing,
            q: VariationalGaussian {
                m: DVector::from_vec(self.m.clone()),
                l_s,
            },
            likelihood,
            freeze_inducing: self.train.freeze_inducing,
        })
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&text)?;
        if file.version != MODEL_FORMAT_VERSION {
            return Err(ModelIoError::VersionMismatch {
                found: file.version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        Ok(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample_model() -> SvgpModel<f64> {
        let kernel = KernelSpec::sum(vec![
            KernelSpec::matern32(1.0, 2.0).unwrap(),
            KernelSpec::white(1.0).unwrap(),
        ])
        .unwrap();
        let z = DMatrix::from_row_slice(3, 2, &[0.0, 0.1, 1.0, -0.5, -1.0, 0.7]);
        let inducing = InducingInputs::new(z).unwrap();
        let mut model = SvgpModel::init(
            kernel,
            inducing,
            Likelihood::Bernoulli(BernoulliProbit::default()),
            false,
        )
        .unwrap();
        model.q.m = DVector::from_row_slice(&[0.3, -0.2, 1.5]);
        model
    }

    #[test]
    fn kernel_config_json_shape() {
        let cfg = KernelConfig::from_spec(&KernelSpec::rbf(1.0, 2.0).unwrap());
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(
            json,
            r#"{"kind":"rbf","lengthscale":1.0,"signal_variance":2.0}"#
        );
        let back: KernelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn kernel_config_round_trip_sum() {
        let spec = KernelSpec::sum(vec![
            KernelSpec::matern32(0.7, 1.3).unwrap(),
            KernelSpec::white(0.25).unwrap(),
        ])
        .unwrap();
        let cfg = KernelConfig::from_spec(&spec);
        let back = cfg.to_spec().unwrap();
        let a = spec.log_params();
        let b = back.log_params();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_relative_eq!(x, y, epsilon = 1e-14);
        }
    }

    #[test]
    fn model_save_load_round_trip() {
        let model = sample_model();
        let meta = TrainMetadata {
            seed: 42,
            epochs: 10,
            batch_size: 100,
            optimizer: "adam".to_string(),
            learning_rate: 0.01,
            freeze_inducing: false,
            train_hyperparams: true,
            label_column: "Class".to_string(),
            split: Some(SplitConfig {
                train_fraction: 0.8,
                test_fraud_ratio: Some(0.15),
                seed: 42,
            }),
        };
        let file = ModelFile::from_model(
            &model,
            vec!["a".into(), "b".into()],
            Some(vec![(0.5, 2.0), (-1.0, 3.0)]),
            meta.clone(),
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gpc");
        file.save(&path).unwrap();
        let loaded = ModelFile::load(&path).unwrap();
        assert_eq!(loaded, file);
        let rebuilt = loaded.to_model().unwrap();
        assert_eq!(rebuilt.q.m, model.q.m);
        assert_eq!(rebuilt.q.l_s.as_matrix(), model.q.l_s.as_matrix());
        assert_eq!(rebuilt.inducing.as_matrix(), model.inducing.as_matrix());
        assert_eq!(rebuilt.kernel.log_params(), model.kernel.log_params());
        assert_eq!(loaded.train, meta);
    }

    #[test]
    fn save_is_byte_deterministic() {
        let model = sample_model();
        let file = ModelFile::from_model(&model, vec![], None, TrainMetadata::default());
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.gpc");
        let p2 = dir.path().join("b.gpc");
        file.save(&p1).unwrap();
        file.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn version_mismatch_rejected() {
        let model = sample_model();
        let mut file = ModelFile::from_model(&model, vec![], None, TrainMetadata::default());
        file.version = 999;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gpc");
        let json = serde_json::to_string(&file).unwrap();
        std::fs::write(&path, json).unwrap();
        assert!(matches!(
            ModelFile::load(&path),
            Err(ModelIoError::VersionMismatch { found: 999, .. })
        ));
    }

    #[test]
    fn inconsistent_record_rejected() {
        let model = sample_model();
        let mut file = ModelFile::from_model(&model, vec![], None, TrainMetadata::default());
        file.m.pop();
        assert!(matches!(
            file.to_model(),
            Err(ModelIoError::Inconsistent(_))
        ));
    }
}
