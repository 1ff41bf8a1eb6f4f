//! Baseline emulator: storm parameters around landfall → per-component
//! Gaussian processes on the principal components of the surge field.

mod pca;
mod regression;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::docio;
use crate::error::{Error, Result};
use crate::storm_data::{StormRecord, N_FEATURES};
use crate::tensor::Tensor;
use crate::training::{LabelTransform, StandardizationStats, DEFAULT_SIGMA_FLOOR};

pub use pca::{ComponentCount, PcaBasis};
pub use regression::{
    cholesky, cholesky_solve, cholesky_with_jitter, gram_matrix, log_marginal_likelihood, optimize_hyperparameters,
    GpComponent, HyperoptConfig, KernelParams,
};

pub const GP_FORMAT: &str = "stormsurge-gp";
pub const GP_FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    /// Features are taken at the landfall step and at `landfall ± k` for
    /// every `k` listed here.
    #[serde(default = "default_offsets")]
    pub feature_offsets: Vec<usize>,
    /// Fixed component count; when absent, the smallest count reaching
    /// `variance_ratio`, capped at `n_storms − 1`.
    #[serde(default)]
    pub n_components: Option<usize>,
    #[serde(default = "default_variance_ratio")]
    pub variance_ratio: f64,
    /// Starting (or, with `optimize = false`, fixed) hyperparameters; when
    /// absent, derived from the data.
    #[serde(default)]
    pub kernel: Option<KernelParams>,
    #[serde(default = "default_true")]
    pub optimize: bool,
    #[serde(default)]
    pub hyperopt: HyperoptConfig,
    /// Fit on tanh-normalized labels instead of raw surge.
    #[serde(default)]
    pub label_transform: Option<LabelTransform>,
}

fn default_offsets() -> Vec<usize> {
    vec![10]
}
fn default_variance_ratio() -> f64 {
    0.99
}
fn default_true() -> bool {
    true
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            feature_offsets: default_offsets(),
            n_components: None,
            variance_ratio: default_variance_ratio(),
            kernel: None,
            optimize: true,
            hyperopt: HyperoptConfig::default(),
            label_transform: None,
        }
    }
}

impl GpConfig {
    pub fn feature_dim(&self) -> usize {
        N_FEATURES * (2 * self.feature_offsets.len() + 1)
    }
}

/// The four inputs at the landfall step, then at `landfall − k` and
/// `landfall + k` for each offset (clamped to the series).
pub fn storm_features(record: &StormRecord, offsets: &[usize]) -> Vec<f64> {
    let t_max = record.n_steps() - 1;
    let lf = record.landfall_step;
    let mut steps = vec![lf];
    for &k in offsets {
        steps.push(lf.saturating_sub(k));
        steps.push((lf + k).min(t_max));
    }
    let mut out = Vec::with_capacity(N_FEATURES * steps.len());
    for t in steps {
        out.extend_from_slice(&record.inputs.data()[t * N_FEATURES..(t + 1) * N_FEATURES]);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpEmulator {
    pub config: GpConfig,
    pub n_steps: usize,
    pub n_sp: usize,
    pub feature_stats: StandardizationStats,
    pub basis: PcaBasis,
    /// Standardized training features.
    pub features: Vec<Vec<f64>>,
    pub components: Vec<GpComponent>,
}

#[derive(Serialize, Deserialize)]
struct GpDoc {
    format: String,
    format_version: u64,
    #[serde(flatten)]
    model: GpEmulator,
}

impl GpEmulator {
    pub fn fit(records: &[StormRecord], cfg: &GpConfig) -> Result<Self> {
        if records.len() < 2 {
            return Err(Error::Contract(format!(
                "GP fit needs at least 2 storms, got {}",
                records.len()
            )));
        }
        let (n_steps, n_sp) = (records[0].n_steps(), records[0].labels.shape()[1]);
        let raw: Vec<Vec<f64>> = records
            .iter()
            .map(|r| storm_features(r, &cfg.feature_offsets))
            .collect();
        let dim = cfg.feature_dim();
        let flat = Tensor::new(vec![raw.len(), dim], raw.concat())?;
        let feature_stats = StandardizationStats::fit(&flat, DEFAULT_SIGMA_FLOOR)?;
        let std = feature_stats.apply(&flat)?;
        let features: Vec<Vec<f64>> = std.data().chunks_exact(dim).map(<[f64]>::to_vec).collect();

        let fields: Vec<Vec<f64>> = records
            .iter()
            .map(|r| {
                if r.labels.shape() != [n_steps, n_sp] {
                    return Err(Error::Dimension(format!(
                        "storm labels {:?} differ from [{n_steps}, {n_sp}]",
                        r.labels.shape()
                    )));
                }
                let y = match &cfg.label_transform {
                    Some(t) => t.normalize(&r.labels),
                    None => r.labels.clone(),
                };
                Ok(y.into_data())
            })
            .collect::<Result<_>>()?;
        let count = match cfg.n_components {
            Some(k) => ComponentCount::Exactly(k),
            None => ComponentCount::VarianceRatio(cfg.variance_ratio),
        };
        let basis = PcaBasis::fit(&fields, count)?;
        let coeffs: Vec<Vec<f64>> = fields.iter().map(|f| basis.project(f)).collect::<Result<_>>()?;

        let mut components = Vec::with_capacity(basis.n_components());
        for c in 0..basis.n_components() {
            let y: Vec<f64> = coeffs.iter().map(|v| v[c]).collect();
            let init = match &cfg.kernel {
                Some(k) if k.length_scales.len() == dim => k.clone(),
                Some(k) => {
                    return Err(Error::Config(format!(
                        "kernel has {} length scales, features have {dim} dimensions",
                        k.length_scales.len()
                    )))
                }
                None => {
                    let var = (y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64).max(1e-12);
                    KernelParams::isotropic(var, (dim as f64).sqrt(), 1e-6 * var, dim)
                }
            };
            let params = if cfg.optimize {
                let h = HyperoptConfig {
                    seed: cfg.hyperopt.seed.wrapping_add(c as u64),
                    ..cfg.hyperopt
                };
                optimize_hyperparameters(&features, &y, &init, &h)
            } else {
                init
            };
            components.push(GpComponent::fit(&features, &y, params, c)?);
        }
        Ok(Self {
            config: cfg.clone(),
            n_steps,
            n_sp,
            feature_stats,
            basis,
            features,
            components,
        })
    }

    /// Posterior-mean PCA coefficients for a raw feature vector.
    pub fn predict_coefficients(&self, raw_features: &[f64]) -> Result<Vec<f64>> {
        let dim = self.config.feature_dim();
        if raw_features.len() != dim {
            return Err(Error::Contract(format!(
                "feature vector of length {}, model expects {dim}",
                raw_features.len()
            )));
        }
        let x = self
            .feature_stats
            .apply(&Tensor::new(vec![1, dim], raw_features.to_vec())?)?
            .into_data();
        Ok(self.components.iter().map(|c| c.predict(&self.features, &x)).collect())
    }

    /// Surge field `[T, n_sp]` for a raw feature vector.
    pub fn predict_features(&self, raw_features: &[f64]) -> Result<Tensor> {
        let field = self.basis.reconstruct(&self.predict_coefficients(raw_features)?)?;
        let y = Tensor::new(vec![self.n_steps, self.n_sp], field)?;
        Ok(match &self.config.label_transform {
            Some(t) => t.denormalize(&y),
            None => y,
        })
    }

    pub fn predict(&self, record: &StormRecord) -> Result<Tensor> {
        if record.n_steps() != self.n_steps {
            return Err(Error::Contract(format!(
                "storm has {} steps, model was fitted on {}",
                record.n_steps(),
                self.n_steps
            )));
        }
        self.predict_features(&storm_features(record, &self.config.feature_offsets))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = GpDoc {
            format: GP_FORMAT.into(),
            format_version: GP_FORMAT_VERSION,
            model: self.clone(),
        };
        docio::write_document(path, &doc, false)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let doc: GpDoc = docio::read_document(path, Some(GP_FORMAT), GP_FORMAT_VERSION)?;
        Ok(doc.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storm_data::{generate_dataset, GeneratorConfig};

    fn records(n: usize) -> Vec<StormRecord> {
        let cfg = GeneratorConfig {
            n_storms: n,
            n_test: 0,
            n_steps: 20,
            landfall_step: 14,
            grid: crate::storm_data::GridSpec {
                grid_h: 4,
                grid_w: 3,
                ..crate::storm_data::GridSpec::desk()
            },
            ..GeneratorConfig::desk()
        };
        generate_dataset(&cfg).unwrap()
    }

    fn fixed(noise: f64, n_components: Option<usize>) -> GpConfig {
        GpConfig {
            n_components,
            kernel: Some(KernelParams::isotropic(1.0, 3.0, noise, 12)),
            optimize: false,
            ..GpConfig::default()
        }
    }

    #[test]
    fn feature_layout() {
        let r = &records(1)[0];
        let f = storm_features(r, &[10]);
        assert_eq!(f.len(), 12);
        assert_eq!(&f[0..4], &r.inputs.data()[14 * 4..15 * 4]);
        assert_eq!(&f[4..8], &r.inputs.data()[4 * 4..5 * 4]);
        assert_eq!(&f[8..12], &r.inputs.data()[19 * 4..20 * 4]);
    }

    #[test]
    fn noiseless_training_storms_reproduce_truncated_fields() {
        let recs = records(6);
        let gp = GpEmulator::fit(&recs, &fixed(1e-10, Some(5))).unwrap();
        for r in &recs {
            let coeffs = gp.basis.project(r.labels.data()).unwrap();
            let pred = gp.predict_coefficients(&storm_features(r, &[10])).unwrap();
            for (a, b) in pred.iter().zip(&coeffs) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-6));
            }
        }
    }

    #[test]
    fn zero_signal_predicts_mean_field() {
        let recs = records(5);
        let mut cfg = fixed(1e-6, Some(3));
        cfg.kernel.as_mut().unwrap().signal_variance = 0.0;
        let gp = GpEmulator::fit(&recs, &cfg).unwrap();
        let pred = gp.predict(&recs[0]).unwrap();
        assert_eq!(pred.data(), gp.basis.mean.as_slice());
    }

    #[test]
    fn wrong_feature_length_is_contract_error() {
        let gp = GpEmulator::fit(&records(3), &fixed(1e-6, Some(1))).unwrap();
        assert!(matches!(gp.predict_features(&[0.0; 5]), Err(Error::Contract(_))));
    }

    #[test]
    fn file_round_trip_predicts_identically() {
        let recs = records(5);
        let gp = GpEmulator::fit(&recs, &fixed(1e-6, None)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gp.json");
        gp.save(&path).unwrap();
        let back = GpEmulator::load(&path).unwrap();
        assert_eq!(back, gp);
        assert!(back.predict(&recs[1]).unwrap().bit_eq(&gp.predict(&recs[1]).unwrap()));
    }
}
