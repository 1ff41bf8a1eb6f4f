//! Input standardization and the tanh label transform.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-8;
/// Normalized labels are clipped to `±(1 − LABEL_CLIP)` before `atanh`.
pub const LABEL_CLIP: f64 = 1e-9;

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl StandardizationStats {
    /// Statistics over every leading index of `inputs`; the last axis is
    /// the feature axis.
    pub fn fit(inputs: &Tensor, sigma_floor: f64) -> Result<Self> {
        let f = *inputs.shape().last().expect("rank >= 1");
        let rows = inputs.len() / f;
        if inputs.ndim() < 2 || rows < 2 {
            return Err(Error::Contract(format!(
                "standardization needs at least 2 samples per feature, got {rows} from {:?}",
                inputs.shape()
            )));
        }
        let data = inputs.data();
        let mut mu = vec![0.0; f];
        for row in data.chunks_exact(f) {
            for (m, v) in mu.iter_mut().zip(row) {
                *m += v;
            }
        }
        mu.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; f];
        for row in data.chunks_exact(f) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mu) {
                *s += (v - m) * (v - m);
            }
        }
        let sigma = var
            .into_iter()
            .map(|s| (s / rows as f64).sqrt().max(sigma_floor))
            .collect();
        Ok(Self { mu, sigma })
    }

    pub fn apply(&self, inputs: &Tensor) -> Result<Tensor> {
        let f = *inputs.shape().last().expect("rank >= 1");
        if f != self.mu.len() {
            return Err(Error::Dimension(format!(
                "inputs have {f} features, statistics were fitted on {}",
                self.mu.len()
            )));
        }
        let mut out = inputs.clone();
        for row in out.data_mut().chunks_exact_mut(f) {
            for ((v, m), s) in row.iter_mut().zip(&self.mu).zip(&self.sigma) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

/// `y′ = tanh(y / y_scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelTransform {
    y_scale: f64,
}

impl LabelTransform {
    pub fn new(y_scale: f64) -> Result<Self> {
        if !(y_scale.is_finite() && y_scale > 0.0) {
            return Err(Error::Config(format!(
                "y_scale must be positive and finite, got {y_scale}"
            )));
        }
        Ok(Self { y_scale })
    }

    /// Three times the 95th percentile of `|y|` (linear interpolation
    /// between order statistics).
    pub fn from_labels(labels: &Tensor) -> Result<Self> {
        let mut mags: Vec<f64> = labels.data().iter().map(|v| v.abs()).collect();
        mags.sort_by(f64::total_cmp);
        let pos = 0.95 * (mags.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let p95 = mags[lo] + (mags[hi] - mags[lo]) * (pos - lo as f64);
        Self::new(3.0 * p95)
    }

    pub fn y_scale(&self) -> f64 {
        self.y_scale
    }

    pub fn normalize(&self, y: &Tensor) -> Tensor {
        y.map(|v| (v / self.y_scale).tanh())
    }

    pub fn denormalize(&self, y: &Tensor) -> Tensor {
        let lim = 1.0 - LABEL_CLIP;
        y.map(|v| self.y_scale * v.clamp(-lim, lim).atanh())
    }
}

/// Everything needed to map raw data into network units and back; stored
/// alongside trained parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub standardization: StandardizationStats,
    pub labels: LabelTransform,
}

impl Preprocessing {
    pub fn fit(train_inputs: &Tensor, train_labels: &Tensor) -> Result<Self> {
        Ok(Self {
            standardization: StandardizationStats::fit(train_inputs, DEFAULT_SIGMA_FLOOR)?,
            labels: LabelTransform::from_labels(train_labels)?,
        })
    }

    pub fn inputs(&self, raw: &Tensor) -> Result<Tensor> {
        self.standardization.apply(raw)
    }

    pub fn labels(&self, raw: &Tensor) -> Tensor {
        self.labels.normalize(raw)
    }

    pub fn restore_labels(&self, normalized: &Tensor) -> Tensor {
        self.labels.denormalize(normalized)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: &[f64]) -> Tensor {
        Tensor::new(vec![values.len(), 1], values.to_vec()).unwrap()
    }

    #[test]
    fn population_convention() {
        let x = column(&[1.0, 2.0, 3.0]);
        let stats = StandardizationStats::fit(&x, DEFAULT_SIGMA_FLOOR).unwrap();
        assert_eq!(stats.mu, vec![2.0]);
        assert!((stats.sigma[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let y = stats.apply(&x).unwrap();
        let expected = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((y.data()[0] + expected).abs() < 1e-12);
        assert_eq!(y.data()[1], 0.0);
        assert!((y.data()[2] - expected).abs() < 1e-12);
        assert!((expected - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn constant_feature_is_clamped() {
        let x = column(&[5.0, 5.0, 5.0]);
        let stats = StandardizationStats::fit(&x, DEFAULT_SIGMA_FLOOR).unwrap();
        assert_eq!(stats.sigma, vec![DEFAULT_SIGMA_FLOOR]);
        assert!(stats.apply(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardized_data_is_a_fixed_point() {
        let a = 2.0f64.sqrt();
        let x = column(&[-a, 0.0, a, 0.0]);
        let stats = StandardizationStats::fit(&x, DEFAULT_SIGMA_FLOOR).unwrap();
        assert!(stats.mu[0].abs() < 1e-15 && (stats.sigma[0] - 1.0).abs() < 1e-12);
        assert!(stats.apply(&x).unwrap().max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            StandardizationStats::fit(&column(&[1.0]), DEFAULT_SIGMA_FLOOR),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn feature_count_mismatch() {
        let stats = StandardizationStats::fit(&column(&[1.0, 2.0]), DEFAULT_SIGMA_FLOOR).unwrap();
        let x = Tensor::zeros(&[2, 3]);
        assert!(matches!(stats.apply(&x), Err(Error::Dimension(_))));
    }

    #[test]
    fn label_examples() {
        let t = LabelTransform::new(0.4).unwrap();
        let zero = Tensor::from_vec(vec![0.0]);
        assert_eq!(t.normalize(&zero).item(), 0.0);
        assert_eq!(t.denormalize(&zero).item(), 0.0);
        let y = Tensor::from_vec(vec![0.4]);
        let n = t.normalize(&y);
        assert!((n.item() - 1.0f64.tanh()).abs() < 1e-15);
        assert!((n.item() - 0.76159).abs() < 1e-5);
        assert!((t.denormalize(&n).item() - 0.4).abs() < 1e-12);
        let edge = t.denormalize(&Tensor::from_vec(vec![0.999999, 1.0, -1.0, 2.0]));
        assert!(edge.all_finite());
    }

    #[test]
    fn nonpositive_scale_is_config_error() {
        for s in [0.0, -1.0, f64::NAN] {
            assert!(matches!(LabelTransform::new(s), Err(Error::Config(_))));
        }
        assert!(matches!(
            LabelTransform::from_labels(&Tensor::zeros(&[3, 2])),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn scale_from_percentile() {
        // |y| = 0..=100, p95 = 95
        let y = Tensor::from_fn(&[101], |i| if i % 2 == 0 { i as f64 } else { -(i as f64) });
        let t = LabelTransform::from_labels(&y).unwrap();
        assert!((t.y_scale() - 285.0).abs() < 1e-12);
    }
}
