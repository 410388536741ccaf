//! Generative classifiers: Gaussian naive Bayes and quadratic discriminant
//! analysis. Both score `log p(y) + log p(x | y)` per class and turn the
//! two scores into a posterior with a numerically safe softmax.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const NB_VAR_FLOOR: f64 = 1e-9;

/// Posterior of class 1 from two log joint scores.
#[inline]
pub(crate) fn posterior1(log0: f64, log1: f64) -> f64 {
    let m = log0.max(log1);
    let (e0, e1) = ((log0 - m).exp(), (log1 - m).exp());
    e1 / (e0 + e1)
}

fn class_rows<'a>(x: &'a [Vec<f64>], y: &[usize], c: usize) -> Vec<&'a [f64]> {
    x.iter()
        .zip(y)
        .filter(|(_, &l)| l == c)
        .map(|(r, _)| r.as_slice())
        .collect()
}

fn mean_of(rows: &[&[f64]], d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d];
    for r in rows {
        for (a, v) in m.iter_mut().zip(r.iter()) {
            *a += v;
        }
    }
    m.iter_mut().for_each(|a| *a /= rows.len() as f64);
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNaiveBayes {
    pub priors: [f64; 2],
    pub means: [Vec<f64>; 2],
    pub vars: [Vec<f64>; 2],
}

impl GaussianNaiveBayes {
    pub fn fit(x: &[Vec<f64>], y: &[usize]) -> Self {
        let d = x[0].len();
        let fit_class = |c: usize| {
            let rows = class_rows(x, y, c);
            let mean = mean_of(&rows, d);
            let mut var = vec![0.0; d];
            for r in &rows {
                for k in 0..d {
                    var[k] += (r[k] - mean[k]).powi(2);
                }
            }
            let var = var
                .into_iter()
                .map(|v| (v / rows.len() as f64).max(NB_VAR_FLOOR))
                .collect();
            (rows.len() as f64 / x.len() as f64, mean, var)
        };
        let (p0, m0, v0) = fit_class(0);
        let (p1, m1, v1) = fit_class(1);
        GaussianNaiveBayes {
            priors: [p0, p1],
            means: [m0, m1],
            vars: [v0, v1],
        }
    }

    pub fn log_joint(&self, x: &[f64], c: usize) -> f64 {
        let mut s = self.priors[c].ln();
        for ((v, m), s2) in x.iter().zip(&self.means[c]).zip(&self.vars[c]) {
            s += -0.5 * (2.0 * PI * s2).ln() - (v - m).powi(2) / (2.0 * s2);
        }
        s
    }

    pub fn prob1(&self, x: &[f64]) -> f64 {
        posterior1(self.log_joint(x, 0), self.log_joint(x, 1))
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Per-class Gaussian with its own full covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGaussian {
    pub prior: f64,
    pub mean: Vec<f64>,
    /// Row-major Cholesky factor of the covariance.
    pub chol: Vec<f64>,
    pub log_det: f64,
}

impl ClassGaussian {
    pub fn new(prior: f64, mean: Vec<f64>, cov: &[f64]) -> Result<Self> {
        let d = mean.len();
        let chol = cholesky(cov, d).ok_or_else(|| {
            Error::InvalidParameter("class covariance is not positive definite".into())
        })?;
        let log_det = 2.0 * (0..d).map(|i| chol[i * d + i].ln()).sum::<f64>();
        Ok(ClassGaussian {
            prior,
            mean,
            chol,
            log_det,
        })
    }

    fn mahalanobis2(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        // forward substitution L z = x - mu
        let mut z = vec![0.0; d];
        for i in 0..d {
            let mut s = x[i] - self.mean[i];
            for k in 0..i {
                s -= self.chol[i * d + k] * z[k];
            }
            z[i] = s / self.chol[i * d + i];
        }
        z.iter().map(|v| v * v).sum()
    }

    pub fn log_joint(&self, x: &[f64]) -> f64 {
        let d = self.mean.len() as f64;
        self.prior.ln() - 0.5 * (d * (2.0 * PI).ln() + self.log_det + self.mahalanobis2(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QdaParams {
    /// Ridge added to each covariance as `gamma * trace / d * I`.
    pub gamma: f64,
}

impl Default for QdaParams {
    fn default() -> Self {
        QdaParams { gamma: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Qda {
    pub classes: [ClassGaussian; 2],
}

impl Qda {
    pub fn fit(x: &[Vec<f64>], y: &[usize], p: &QdaParams) -> Result<Self> {
        let d = x[0].len();
        let fit_class = |c: usize| -> Result<ClassGaussian> {
            let rows = class_rows(x, y, c);
            let mean = mean_of(&rows, d);
            let mut cov = vec![0.0; d * d];
            for r in &rows {
                for i in 0..d {
                    for j in 0..d {
                        cov[i * d + j] += (r[i] - mean[i]) * (r[j] - mean[j]);
                    }
                }
            }
            let denom = (rows.len().max(2) - 1) as f64;
            cov.iter_mut().for_each(|v| *v /= denom);
            let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
            let ridge = (p.gamma * trace / d as f64).max(1e-12);
            for i in 0..d {
                cov[i * d + i] += ridge;
            }
            ClassGaussian::new(rows.len() as f64 / x.len() as f64, mean, &cov)
        };
        Ok(Qda {
            classes: [fit_class(0)?, fit_class(1)?],
        })
    }

    pub fn prob1(&self, x: &[f64]) -> f64 {
        posterior1(self.classes[0].log_joint(x), self.classes[1].log_joint(x))
    }
}
