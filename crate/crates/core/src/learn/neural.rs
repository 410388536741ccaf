use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuralParams {
    pub hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub step: f64,
    pub init_scale: f64,
}

impl Default for NeuralParams {
    fn default() -> Self {
        NeuralParams {
            hidden: 16,
            epochs: 200,
            batch: 32,
            step: 0.05,
            init_scale: 0.1,
        }
    }
}

/// One tanh hidden layer and a two-way softmax output, trained with
/// minibatch SGD on mean cross-entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralNet {
    pub inputs: usize,
    pub hidden: usize,
    /// `hidden x inputs`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `2 x hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl NeuralNet {
    pub fn init(inputs: usize, hidden: usize, scale: f64, seed: u64) -> Self {
        let mut rng = rng_for(seed, &[0]);
        let mut draw =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-scale..=scale)).collect() };
        NeuralNet {
            inputs,
            hidden,
            w1: draw(hidden * inputs),
            b1: draw(hidden),
            w2: draw(2 * hidden),
            b2: draw(2),
        }
    }

    fn forward(&self, x: &[f64], h: &mut [f64]) -> [f64; 2] {
        for (j, hj) in h.iter_mut().enumerate() {
            let row = &self.w1[j * self.inputs..(j + 1) * self.inputs];
            *hj = (self.b1[j] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()).tanh();
        }
        let mut z = [self.b2[0], self.b2[1]];
        for (c, zc) in z.iter_mut().enumerate() {
            *zc += self.w2[c * self.hidden..(c + 1) * self.hidden]
                .iter()
                .zip(h.iter())
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
        let m = z[0].max(z[1]);
        let e = [(z[0] - m).exp(), (z[1] - m).exp()];
        let s = e[0] + e[1];
        [e[0] / s, e[1] / s]
    }

    pub fn prob1(&self, x: &[f64]) -> f64 {
        let mut h = vec![0.0; self.hidden];
        self.forward(x, &mut h)[1]
    }

    /// Flat parameter vector `[w1, b1, w2, b2]`.
    pub fn params(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let (a, rest) = p.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2.copy_from_slice(d);
    }

    /// Mean cross-entropy over the rows and its gradient in the
    /// [`params`](Self::params) layout.
    pub fn loss_and_gradient(&self, x: &[&[f64]], y: &[usize]) -> (f64, Vec<f64>) {
        let (ni, nh) = (self.inputs, self.hidden);
        let mut gw1 = vec![0.0; nh * ni];
        let mut gb1 = vec![0.0; nh];
        let mut gw2 = vec![0.0; 2 * nh];
        let mut gb2 = [0.0; 2];
        let mut h = vec![0.0; nh];
        let mut loss = 0.0;
        let n = x.len() as f64;
        for (xi, &yi) in x.iter().zip(y) {
            let p = self.forward(xi, &mut h);
            loss -= p[yi].max(1e-300).ln();
            // d loss / d logits = p - onehot
            let dz = [p[0] - (yi == 0) as u8 as f64, p[1] - (yi == 1) as u8 as f64];
            for c in 0..2 {
                gb2[c] += dz[c];
                for j in 0..nh {
                    gw2[c * nh + j] += dz[c] * h[j];
                }
            }
            for j in 0..nh {
                let back = dz[0] * self.w2[j] + dz[1] * self.w2[nh + j];
                let da = back * (1.0 - h[j] * h[j]);
                gb1[j] += da;
                for k in 0..ni {
                    gw1[j * ni + k] += da * xi[k];
                }
            }
        }
        let mut g = [&gw1[..], &gb1, &gw2, &gb2].concat();
        g.iter_mut().for_each(|v| *v /= n);
        (loss / n, g)
    }

    pub fn fit(x: &[Vec<f64>], y: &[usize], p: &NeuralParams, seed: u64) -> Self {
        let mut net = NeuralNet::init(x[0].len(), p.hidden, p.init_scale, seed);
        let mut rng = rng_for(seed, &[1]);
        let mut order: Vec<usize> = (0..x.len()).collect();
        let mut params = net.params();
        let mut bx: Vec<&[f64]> = Vec::with_capacity(p.batch);
        let mut by: Vec<usize> = Vec::with_capacity(p.batch);
        for _ in 0..p.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(p.batch.max(1)) {
                bx.clear();
                by.clear();
                for &i in chunk {
                    bx.push(&x[i]);
                    by.push(y[i]);
                }
                let (_, g) = net.loss_and_gradient(&bx, &by);
                for (w, gi) in params.iter_mut().zip(&g) {
                    *w -= p.step * gi;
                }
                net.set_params(&params);
            }
        }
        net
    }
}
