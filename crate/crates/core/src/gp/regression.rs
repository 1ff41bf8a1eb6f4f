//! Squared-exponential ARD Gaussian-process regression with a zero prior mean.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub length_scales: Vec<f64>,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn isotropic(signal_variance: f64, length_scale: f64, noise_variance: f64, dim: usize) -> Self {
        Self {
            signal_variance,
            length_scales: vec![length_scale; dim],
            noise_variance,
        }
    }

    /// `σ_f² exp(−½ Σ_d ((a_d − b_d)/ℓ_d)²)`
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.length_scales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        self.signal_variance * (-0.5 * r2).exp()
    }

    fn to_log(&self) -> Vec<f64> {
        let mut v = vec![self.signal_variance.ln()];
        v.extend(self.length_scales.iter().map(|l| l.ln()));
        v.push(self.noise_variance.ln());
        v
    }

    fn from_log(v: &[f64]) -> Self {
        Self {
            signal_variance: v[0].exp(),
            length_scales: v[1..v.len() - 1].iter().map(|x| x.exp()).collect(),
            noise_variance: v[v.len() - 1].exp(),
        }
    }
}

/// Row-major `K + σ_n² I`.
pub fn gram_matrix(x: &[Vec<f64>], params: &KernelParams) -> Vec<f64> {
    let n = x.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = params.eval(&x[i], &x[j]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
        k[i * n + i] += params.noise_variance;
    }
    k
}

/// Lower Cholesky factor of a row-major SPD matrix, or `None` if a pivot is
/// not positive.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / djj;
        }
    }
    Some(l)
}

/// Factorizes `a`, adding diagonal jitter `10^k · 1e-12 · trace/n` for
/// growing `k` up to `1e-6 · trace/n` when needed. Returns the factor and the
/// jitter used.
pub fn cholesky_with_jitter(a: &[f64], n: usize, component: usize) -> Result<(Vec<f64>, f64)> {
    if let Some(l) = cholesky(a, n) {
        return Ok((l, 0.0));
    }
    let scale = (0..n).map(|i| a[i * n + i]).sum::<f64>() / n as f64;
    let mut jitter = 1e-12 * scale;
    let max = 1e-6 * scale;
    let mut work = a.to_vec();
    while jitter <= max * (1.0 + 1e-9) {
        for i in 0..n {
            work[i * n + i] = a[i * n + i] + jitter;
        }
        if let Some(l) = cholesky(&work, n) {
            return Ok((l, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::Conditioning { component, jitter: max })
}

/// Solves `L Lᵀ x = b`.
pub fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (y[i] - s) / l[i * n + i];
    }
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * y[k]).sum();
        y[i] = (y[i] - s) / l[i * n + i];
    }
    y
}

/// One fitted output: factor of the Gram matrix and `α = (K + σ_n² I)⁻¹ y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpComponent {
    pub params: KernelParams,
    pub jitter: f64,
    pub cholesky: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl GpComponent {
    pub fn fit(x: &[Vec<f64>], y: &[f64], params: KernelParams, component: usize) -> Result<Self> {
        let n = x.len();
        let k = gram_matrix(x, &params);
        let (cholesky, jitter) = cholesky_with_jitter(&k, n, component)?;
        let alpha = cholesky_solve(&cholesky, n, y);
        Ok(Self {
            params,
            jitter,
            cholesky,
            alpha,
        })
    }

    pub fn predict(&self, x: &[Vec<f64>], query: &[f64]) -> f64 {
        x.iter()
            .zip(&self.alpha)
            .map(|(xi, a)| self.params.eval(xi, query) * a)
            .sum()
    }
}

/// `log p(y | X, θ)`, or `None` when the Gram matrix cannot be factorized.
pub fn log_marginal_likelihood(x: &[Vec<f64>], y: &[f64], params: &KernelParams) -> Option<f64> {
    let n = x.len();
    let l = cholesky(&gram_matrix(x, params), n)?;
    let alpha = cholesky_solve(&l, n, y);
    let fit: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let logdet: f64 = (0..n).map(|i| l[i * n + i].ln()).sum();
    Some(-0.5 * fit - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperoptConfig {
    pub restarts: usize,
    pub sweeps: usize,
    /// Golden-section iterations per coordinate.
    pub line_iters: usize,
    pub seed: u64,
}

impl Default for HyperoptConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            sweeps: 3,
            line_iters: 30,
            seed: 0,
        }
    }
}

/// Maximizes the log marginal likelihood over log-parameters by coordinate-wise
/// golden-section search from `restarts` seeded starting points (the first is
/// `init`). Bounds scale with the target variance.
pub fn optimize_hyperparameters(x: &[Vec<f64>], y: &[f64], init: &KernelParams, cfg: &HyperoptConfig) -> KernelParams {
    let dim = init.length_scales.len();
    let var = (y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64).max(1e-12);
    let mut bounds = vec![((var * 1e-3).ln(), (var * 1e3).ln())];
    bounds.extend(std::iter::repeat_n((0.05f64.ln(), 50.0f64.ln()), dim));
    bounds.push(((var * 1e-10).ln(), var.ln()));

    let objective = |v: &[f64]| log_marginal_likelihood(x, y, &KernelParams::from_log(v)).unwrap_or(f64::NEG_INFINITY);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best = init.to_log();
    for (v, &(lo, hi)) in best.iter_mut().zip(&bounds) {
        *v = v.clamp(lo, hi);
    }
    let mut best_val = objective(&best);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for restart in 0..cfg.restarts {
        let mut cur: Vec<f64> = if restart == 0 {
            best.clone()
        } else {
            bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect()
        };
        let mut cur_val = objective(&cur);
        for _ in 0..cfg.sweeps {
            for c in 0..cur.len() {
                let (mut a, mut b) = bounds[c];
                let mut probe = cur.clone();
                let mut f = |t: f64| {
                    probe[c] = t;
                    objective(&probe)
                };
                let mut x1 = b - phi * (b - a);
                let mut x2 = a + phi * (b - a);
                let (mut f1, mut f2) = (f(x1), f(x2));
                for _ in 0..cfg.line_iters {
                    if f1 >= f2 {
                        b = x2;
                        x2 = x1;
                        f2 = f1;
                        x1 = b - phi * (b - a);
                        f1 = f(x1);
                    } else {
                        a = x1;
                        x1 = x2;
                        f1 = f2;
                        x2 = a + phi * (b - a);
                        f2 = f(x2);
                    }
                }
                let (t, ft) = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
                if ft > cur_val {
                    cur[c] = t;
                    cur_val = ft;
                }
            }
        }
        if cur_val > best_val {
            best = cur;
            best_val = cur_val;
        }
    }
    KernelParams::from_log(&best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_reconstructs() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.7, (i * i) as f64 * 0.1]).collect();
        let p = KernelParams::isotropic(1.3, 0.9, 1e-6, 2);
        let k = gram_matrix(&x, &p);
        let l = cholesky(&k, 6).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let v: f64 = (0..6).map(|m| l[i * 6 + m] * l[j * 6 + m]).sum();
                assert!((v - k[i * 6 + j]).abs() <= 1e-12);
                assert_eq!(k[i * 6 + j], k[j * 6 + i]);
            }
        }
    }

    #[test]
    fn two_point_closed_form() {
        let x = vec![vec![0.0], vec![1.0]];
        let y = [0.0, 1.0];
        let p = KernelParams::isotropic(1.0, 1.0, 1e-8, 1);
        let gp = GpComponent::fit(&x, &y, p, 0).unwrap();
        // [a b; b a]⁻¹ [0; 1] = [−b; a]/(a² − b²)
        let (a, b) = (1.0 + 1e-8, (-0.5f64).exp());
        let k = (-0.125f64).exp();
        let expected = k * (a - b) / (a * a - b * b);
        assert!((gp.predict(&x, &[0.5]) - expected).abs() < 1e-12);
    }

    #[test]
    fn single_point_interpolates_and_decays() {
        let x = vec![vec![0.3, -0.2]];
        let gp = GpComponent::fit(&x, &[2.5], KernelParams::isotropic(1.0, 1.0, 1e-10, 2), 0).unwrap();
        assert!((gp.predict(&x, &[0.3, -0.2]) - 2.5).abs() < 1e-8);
        assert!(gp.predict(&x, &[100.0, 100.0]).abs() < 1e-300);
    }

    #[test]
    fn duplicate_inputs_need_jitter() {
        let x = vec![vec![0.0]; 3];
        let p = KernelParams::isotropic(1.0, 1.0, 0.0, 1);
        let k = gram_matrix(&x, &p);
        assert!(cholesky(&k, 3).is_none());
        let (_, jitter) = cholesky_with_jitter(&k, 3, 0).unwrap();
        assert!(jitter > 0.0 && jitter <= 1e-6);
    }

    #[test]
    fn indefinite_matrix_is_conditioning_error() {
        let a = [1.0, 2.0, 2.0, 1.0];
        assert!(matches!(
            cholesky_with_jitter(&a, 2, 4),
            Err(Error::Conditioning { component: 4, .. })
        ));
    }

    #[test]
    fn hyperopt_does_not_lower_likelihood() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 / 4.0]).collect();
        let y: Vec<f64> = x.iter().map(|v| (2.0 * v[0]).sin()).collect();
        let init = KernelParams::isotropic(1.0, 1.0, 1e-2, 1);
        let cfg = HyperoptConfig {
            restarts: 2,
            ..HyperoptConfig::default()
        };
        let tuned = optimize_hyperparameters(&x, &y, &init, &cfg);
        let before = log_marginal_likelihood(&x, &y, &init).unwrap();
        let after = log_marginal_likelihood(&x, &y, &tuned).unwrap();
        assert!(after >= before);
        assert_eq!(tuned, optimize_hyperparameters(&x, &y, &init, &cfg));
    }
}
