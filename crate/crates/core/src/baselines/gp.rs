//! Gaussian-process regression with an RBF kernel, and expected improvement.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

const JITTERS: [f64; 4] = [0.0, 1e-8, 1e-6, 1e-4];

#[derive(Debug, Clone)]
pub struct Gp {
    xs: Vec<Vec<f64>>,
    length_scale: f64,
    noise: f64,
    y_mean: f64,
    y_std: f64,
    alpha: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

pub fn rbf(a: &[f64], b: &[f64], length_scale: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-0.5 * d2 / (length_scale * length_scale)).exp()
}

impl Gp {
    /// Fits on standardized targets. A singular kernel is retried with
    /// growing diagonal jitter before giving up.
    pub fn fit(xs: &[Vec<f64>], ys: &[f64], length_scale: f64, noise: f64) -> Result<Self> {
        let n = xs.len();
        if n == 0 || n != ys.len() {
            return Err(Error::InsufficientData(format!(
                "gaussian process needs matching non-empty inputs, got {n} points and {} targets",
                ys.len()
            )));
        }
        let y_mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n as f64;
        let y_std = if var > 1e-24 { var.sqrt() } else { 1.0 };
        let y = DVector::from_iterator(n, ys.iter().map(|v| (v - y_mean) / y_std));
        let k = DMatrix::from_fn(n, n, |i, j| rbf(&xs[i], &xs[j], length_scale));
        for jitter in JITTERS {
            let mut kk = k.clone();
            for i in 0..n {
                kk[(i, i)] += noise + jitter;
            }
            if let Some(chol) = kk.cholesky() {
                let alpha = chol.solve(&y);
                return Ok(Gp {
                    xs: xs.to_vec(),
                    length_scale,
                    noise,
                    y_mean,
                    y_std,
                    alpha,
                    chol,
                });
            }
            log::debug!("kernel not positive definite with jitter {jitter:e}, retrying");
        }
        Err(Error::Training {
            param: "gaussian process".into(),
            reason: "kernel matrix singular after jitter retries".into(),
        })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    /// Posterior mean and standard deviation of the latent function, in the
    /// units of the observed targets.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(self.xs.len(), self.xs.iter().map(|p| rbf(p, x, self.length_scale)));
        let mean = ks.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&ks).unwrap_or_else(|| ks.clone());
        let var = (1.0 - v.dot(&v)).max(1e-12);
        (self.y_mean + self.y_std * mean, self.y_std * var.sqrt())
    }

    /// Expected improvement over `best` for maximization.
    pub fn expected_improvement(&self, x: &[f64], best: f64) -> f64 {
        let (mu, sigma) = self.predict(x);
        expected_improvement(mu, sigma, best)
    }
}

pub fn expected_improvement(mu: f64, sigma: f64, best: f64) -> f64 {
    if sigma <= 0.0 {
        return (mu - best).max(0.0);
    }
    let z = (mu - best) / sigma;
    let n = Normal::standard();
    ((mu - best) * n.cdf(z) + sigma * n.pdf(z)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_point_mean_matches_closed_form() {
        let xs = vec![vec![-0.5], vec![0.0], vec![0.7]];
        let ys = [1.0, -0.3, 0.4];
        let (ls, noise) = (0.5, 1e-2);
        let gp = Gp::fit(&xs, &ys, ls, noise).unwrap();

        // closed form on standardized targets with an explicit 3x3 inverse
        let m = ys.iter().sum::<f64>() / 3.0;
        let sd = (ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / 3.0).sqrt();
        let k = |a: f64, b: f64| (-0.5 * (a - b).powi(2) / (ls * ls)).exp();
        let p = [-0.5, 0.0, 0.7];
        let mut a = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] = k(p[i], p[j]) + if i == j { noise } else { 0.0 };
            }
        }
        let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
        let cof = |i: usize, j: usize| {
            let r: Vec<usize> = (0..3).filter(|&r| r != j).collect();
            let c: Vec<usize> = (0..3).filter(|&c| c != i).collect();
            let minor = a[r[0]][c[0]] * a[r[1]][c[1]] - a[r[0]][c[1]] * a[r[1]][c[0]];
            if (i + j) % 2 == 0 { minor } else { -minor }
        };
        for &q in &[-0.5, 0.0, 0.7, 0.2] {
            let mut mean = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    mean += k(q, p[i]) * cof(i, j) / det * (ys[j] - m) / sd;
                }
            }
            let want = m + sd * mean;
            assert!((gp.predict(&[q]).0 - want).abs() < 1e-10);
        }
        for (x, y) in xs.iter().zip(ys) {
            assert!((gp.predict(x).0 - y).abs() < 0.05 * sd);
        }
    }

    #[test]
    fn duplicate_points_recover_the_value() {
        let xs = vec![vec![0.3, 0.1], vec![0.3, 0.1], vec![-0.8, 0.9]];
        let gp = Gp::fit(&xs, &[2.0, 2.0, -1.0], 0.5, 1e-2).unwrap();
        assert!((gp.predict(&[0.3, 0.1]).0 - 2.0).abs() < 0.03);
    }

    #[test]
    fn singular_kernel_is_rescued_by_jitter() {
        let xs = vec![vec![0.0]; 5];
        let gp = Gp::fit(&xs, &[1.0; 5], 0.5, 0.0).unwrap();
        assert!((gp.predict(&[0.0]).0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn improvement_is_non_negative_and_grows_with_mean() {
        assert!(expected_improvement(0.0, 1.0, 0.0) > 0.39);
        assert!(expected_improvement(-5.0, 0.1, 0.0) >= 0.0);
        assert!(expected_improvement(1.0, 0.5, 0.0) > expected_improvement(0.5, 0.5, 0.0));
        assert_eq!(expected_improvement(1.0, 0.0, 0.5), 0.5);
    }
}
