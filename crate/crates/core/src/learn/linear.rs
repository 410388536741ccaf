use serde::{Deserialize, Serialize};

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticParams {
    pub l2: f64,
    pub iterations: usize,
    pub step: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            l2: 1e-3,
            iterations: 500,
            step: 0.1,
        }
    }
}

/// Binary logistic regression fitted by full-batch gradient descent on the
/// mean log-loss plus `l2/2 * |w|^2` (bias unpenalized).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticRegression {
    pub fn fit(x: &[Vec<f64>], y: &[usize], p: &LogisticParams) -> Self {
        let d = x[0].len();
        let n = x.len() as f64;
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        let mut gw = vec![0.0; d];
        for _ in 0..p.iterations {
            gw.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = 0.0;
            for (xi, &yi) in x.iter().zip(y) {
                let z = b + xi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                let r = sigmoid(z) - yi as f64;
                for (g, v) in gw.iter_mut().zip(xi) {
                    *g += r * v;
                }
                gb += r;
            }
            for (wj, g) in w.iter_mut().zip(&gw) {
                *wj -= p.step * (g / n + p.l2 * *wj);
            }
            b -= p.step * gb / n;
        }
        LogisticRegression {
            weights: w,
            bias: b,
        }
    }

    pub fn prob1(&self, x: &[f64]) -> f64 {
        sigmoid(self.bias + x.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>())
    }
}
