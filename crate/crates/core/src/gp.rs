//! Gaussian-process surrogate and expected improvement.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

pub const NOISE: f64 = 1e-4;
pub const JITTER: f64 = 1e-8;
pub const MAX_JITTER: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpError {
    #[error("no observations")]
    Empty,
    #[error("observation {row} has {found} coordinates, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite target at observation {0}")]
    NonFinite(usize),
    #[error("covariance not positive definite even with jitter {0:e}")]
    NotPositiveDefinite(f64),
}

/// Lower Cholesky factor of the `n × n` row-major matrix `a`.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solves `L x = b` for lower-triangular `L`.
fn forward_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[i * n + k] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// Solves `Lᵀ x = b` for lower-triangular `L`.
fn backward_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise Euclidean distance, or 1 when undefined or zero.
pub fn median_length_scale(x: &[Vec<f64>]) -> f64 {
    let mut d: Vec<f64> = Vec::new();
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            d.push(sq_dist(&x[i], &x[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// GP regression with an RBF kernel on standardized targets.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    x: Vec<Vec<f64>>,
    chol: Vec<f64>,
    alpha: Vec<f64>,
    pub length_scale: f64,
    pub signal_variance: f64,
    pub jitter: f64,
    y_mean: f64,
    y_std: f64,
}

impl GaussianProcess {
    pub fn fit(x: &[Vec<f64>], y: &[f64]) -> Result<Self, GpError> {
        let n = x.len();
        if n == 0 || y.len() != n {
            return Err(GpError::Empty);
        }
        let dim = x[0].len();
        for (row, v) in x.iter().enumerate() {
            if v.len() != dim {
                return Err(GpError::Ragged {
                    row,
                    expected: dim,
                    found: v.len(),
                });
            }
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(GpError::NonFinite(i));
        }
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64;
        let y_std = if var > 0.0 { var.sqrt() } else { 1.0 };
        let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_std).collect();

        let length_scale = median_length_scale(x);
        let signal_variance = 1.0;
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] = rbf(&x[i], &x[j], length_scale, signal_variance);
            }
            k[i * n + i] += NOISE;
        }
        let mut jitter = JITTER;
        let chol = loop {
            let mut kj = k.clone();
            for i in 0..n {
                kj[i * n + i] += jitter;
            }
            if let Some(l) = cholesky(&kj, n) {
                break l;
            }
            if jitter >= MAX_JITTER {
                return Err(GpError::NotPositiveDefinite(jitter));
            }
            jitter *= 10.0;
        };
        let alpha = backward_solve(&chol, n, &forward_solve(&chol, n, &ys));
        Ok(Self {
            x: x.to_vec(),
            chol,
            alpha,
            length_scale,
            signal_variance,
            jitter,
            y_mean,
            y_std,
        })
    }

    /// Posterior mean and standard deviation of the latent function at
    /// `q`, in target units.
    pub fn predict(&self, q: &[f64]) -> (f64, f64) {
        let n = self.x.len();
        let ks: Vec<f64> = self
            .x
            .iter()
            .map(|xi| rbf(xi, q, self.length_scale, self.signal_variance))
            .collect();
        let mu: f64 = ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let v = forward_solve(&self.chol, n, &ks);
        let var = (self.signal_variance - v.iter().map(|x| x * x).sum::<f64>()).max(0.0);
        (self.y_mean + self.y_std * mu, self.y_std * var.sqrt())
    }
}

fn rbf(a: &[f64], b: &[f64], length_scale: f64, signal_variance: f64) -> f64 {
    signal_variance * (-sq_dist(a, b) / (2.0 * length_scale * length_scale)).exp()
}

/// Expected improvement below `best` for a minimization problem.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64) -> f64 {
    let gain = best - mu;
    if sigma <= 0.0 {
        return gain.max(0.0);
    }
    let z = gain / sigma;
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    (gain * n.cdf(z) + sigma * n.pdf(z)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ei_examples() {
        assert_eq!(expected_improvement(1.0, 0.0, 1.0), 0.0);
        let phi0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((expected_improvement(1.0, 1.0, 1.0) - phi0).abs() < 1e-12);
        assert!((phi0 - 0.398942).abs() < 1e-6);
        assert_eq!(expected_improvement(0.0, 0.0, 1.0), 1.0);
    }

    #[test]
    fn cholesky_of_spd() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let l = cholesky(&a, 2).unwrap();
        assert_eq!(l, vec![2.0, 0.0, 1.0, 2.0_f64.sqrt()]);
        assert!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
    }

    #[test]
    fn interpolates_training_points() {
        let x = vec![vec![0.0], vec![0.5], vec![1.0]];
        let y = [3.0, 1.0, 2.0];
        let gp = GaussianProcess::fit(&x, &y).unwrap();
        let std = (y.iter().map(|v| (v - 2.0_f64).powi(2)).sum::<f64>() / 3.0).sqrt();
        for (xi, yi) in x.iter().zip(&y) {
            let (mu, sigma) = gp.predict(xi);
            assert!((mu - yi).abs() <= 0.05 * std, "{mu} vs {yi}");
            assert!(sigma < 0.05 * std);
        }
    }

    #[test]
    fn far_query_reverts_to_prior() {
        let gp = GaussianProcess::fit(&[vec![0.0, 0.0]], &[5.0]).unwrap();
        assert_eq!(gp.length_scale, 1.0);
        let (mu, sigma) = gp.predict(&[100.0, 100.0]);
        assert!((mu - 5.0).abs() < 1e-12);
        assert!((sigma - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicated_points_fit() {
        let x = vec![vec![0.2], vec![0.2], vec![0.7]];
        let gp = GaussianProcess::fit(&x, &[1.0, 1.1, 0.3]).unwrap();
        let (mu, sigma) = gp.predict(&[0.2]);
        assert!(mu.is_finite() && sigma >= 0.0);
    }
}
