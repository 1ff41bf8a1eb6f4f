//! Principal components of flattened surge fields.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// Orthonormal rows, ordered by decreasing singular value.
    pub components: Vec<Vec<f64>>,
    pub singular_values: Vec<f64>,
    /// Share of the total training variance carried by each component.
    pub explained_variance_ratio: Vec<f64>,
}

/// How many components to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComponentCount {
    Exactly(usize),
    /// Smallest count reaching this cumulative variance ratio, capped at
    /// `n_samples − 1`.
    VarianceRatio(f64),
}

impl PcaBasis {
    pub fn fit(rows: &[Vec<f64>], count: ComponentCount) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if n == 0 || d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension(format!(
                "PCA needs equally sized non-empty rows, got {n} rows"
            )));
        }
        let max = n.min(d);
        if let ComponentCount::Exactly(k) = count {
            if k == 0 || k > max {
                return Err(Error::Contract(format!("n_components {k} outside 1..={max}")));
            }
        }
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let x = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
        let svd = x.svd(false, true);
        let v_t = svd.v_t.expect("requested V^T");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b]
                .total_cmp(&svd.singular_values[a])
                .then(a.cmp(&b))
        });

        let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();
        let k = match count {
            ComponentCount::Exactly(k) => k,
            ComponentCount::VarianceRatio(target) => {
                let cap = n.saturating_sub(1).clamp(1, max);
                let mut acc = 0.0;
                let mut k = cap;
                for (i, &j) in order.iter().enumerate().take(cap) {
                    acc += svd.singular_values[j].powi(2);
                    if total == 0.0 || acc / total >= target {
                        k = i + 1;
                        break;
                    }
                }
                k
            }
        };
        let mut components = Vec::with_capacity(k);
        let mut singular_values = Vec::with_capacity(k);
        let mut explained_variance_ratio = Vec::with_capacity(k);
        for &j in order.iter().take(k) {
            let mut row: Vec<f64> = v_t.row(j).iter().copied().collect();
            // sign convention: largest-magnitude entry positive
            let pivot = row
                .iter()
                .copied()
                .fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            if pivot < 0.0 {
                row.iter_mut().for_each(|v| *v = -*v);
            }
            let s = svd.singular_values[j];
            components.push(row);
            singular_values.push(s);
            explained_variance_ratio.push(if total > 0.0 { s * s / total } else { 0.0 });
        }
        Ok(Self {
            mean,
            components,
            singular_values,
            explained_variance_ratio,
        })
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn project(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check(row.len())?;
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(row).zip(&self.mean).map(|((c, v), m)| c * (v - m)).sum())
            .collect())
    }

    pub fn reconstruct(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.n_components() {
            return Err(Error::Dimension(format!(
                "{} coefficients for {} components",
                coeffs.len(),
                self.n_components()
            )));
        }
        let mut out = self.mean.clone();
        for (c, a) in self.components.iter().zip(coeffs) {
            for (o, v) in out.iter_mut().zip(c) {
                *o += a * v;
            }
        }
        Ok(out)
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Dimension(format!(
                "row of length {len}, basis dimension {}",
                self.dim()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        num / den
    }

    #[test]
    fn rank_one_needs_one_component() {
        let v = [1.0, -2.0, 0.5];
        let rows: Vec<Vec<f64>> = [-2.0, -1.0, 1.0, 2.0]
            .iter()
            .map(|a| v.iter().map(|x| a * x).collect())
            .collect();
        let b = PcaBasis::fit(&rows, ComponentCount::VarianceRatio(0.99)).unwrap();
        assert_eq!(b.n_components(), 1);
        assert!((b.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn complete_basis_round_trip() {
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|i| {
                (0..6)
                    .map(|j| ((i * 7 + j * 3) % 11) as f64 - 4.0 + 0.1 * (i * j) as f64)
                    .collect()
            })
            .collect();
        let b = PcaBasis::fit(&rows, ComponentCount::Exactly(5)).unwrap();
        for r in &rows {
            let back = b.reconstruct(&b.project(r).unwrap()).unwrap();
            assert!(rel_err(&back, r) <= 1e-10);
        }
        for (i, a) in b.components.iter().enumerate() {
            for (j, c) in b.components.iter().enumerate() {
                let dot: f64 = a.iter().zip(c).map(|(x, y)| x * y).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn diagonal_point_cloud() {
        let rows = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0], vec![-1.0, -1.0]];
        let b = PcaBasis::fit(&rows, ComponentCount::Exactly(1)).unwrap();
        let h = 0.5f64.sqrt();
        assert!((b.components[0][0] - h).abs() < 1e-12 && (b.components[0][1] - h).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_count_is_contract_error() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 1.0]];
        for k in [0, 3] {
            assert!(matches!(
                PcaBasis::fit(&rows, ComponentCount::Exactly(k)),
                Err(Error::Contract(_))
            ));
        }
    }

    #[test]
    fn variance_ratios_non_increasing() {
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|i| (0..5).map(|j| ((i * 13 + j * 5) % 7) as f64 * (j + 1) as f64).collect())
            .collect();
        let b = PcaBasis::fit(&rows, ComponentCount::Exactly(5)).unwrap();
        assert!(b.explained_variance_ratio.windows(2).all(|w| w[0] >= w[1]));
    }
}
