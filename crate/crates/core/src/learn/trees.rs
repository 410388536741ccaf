//! Random forest (Gini CART trees on bootstrap samples) and discrete
//! AdaBoost over decision stumps.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        p1: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn prob1(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { p1 } => return *p1,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }
}

#[inline]
fn gini(pos: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let p = pos / n;
    2.0 * p * (1.0 - p)
}

struct TreeBuilder<'a, R: Rng> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    max_depth: usize,
    max_features: usize,
    rng: R,
}

impl<R: Rng> TreeBuilder<'_, R> {
    fn build(&mut self, idx: &mut [usize], depth: usize) -> Node {
        let n = idx.len() as f64;
        let pos = idx.iter().filter(|&&i| self.y[i] == 1).count() as f64;
        if depth >= self.max_depth || idx.len() < 2 || pos == 0.0 || pos == n {
            return Node::Leaf { p1: pos / n };
        }
        let d = self.x[0].len();
        let features = sample(&mut self.rng, d, self.max_features.min(d));
        let parent = gini(pos, n);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order: Vec<usize> = idx.to_vec();
        for f in features.iter() {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let mut left_pos = 0.0;
            for k in 0..order.len() - 1 {
                left_pos += (self.y[order[k]] == 1) as u8 as f64;
                let (v, next) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                if v == next {
                    continue;
                }
                let nl = (k + 1) as f64;
                let nr = n - nl;
                let score = (nl * gini(left_pos, nl) + nr * gini(pos - left_pos, nr)) / n;
                if best.is_none_or(|(s, _, _)| score < s) {
                    best = Some((score, f, 0.5 * (v + next)));
                }
            }
        }
        let Some((score, feature, threshold)) = best else {
            return Node::Leaf { p1: pos / n };
        };
        if score >= parent {
            return Node::Leaf { p1: pos / n };
        }
        let mut split = 0;
        for k in 0..idx.len() {
            if self.x[idx[k]][feature] <= threshold {
                idx.swap(k, split);
                split += 1;
            }
        }
        let (l, r) = idx.split_at_mut(split);
        let left = Box::new(self.build(l, depth + 1));
        let right = Box::new(self.build(r, depth + 1));
        Node::Split {
            feature,
            threshold,
            left,
            right,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            trees: 50,
            max_depth: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<Node>,
}

impl RandomForest {
    /// Each tree sees a bootstrap sample and `ceil(sqrt(d))` candidate
    /// features per split.
    pub fn fit(x: &[Vec<f64>], y: &[usize], p: &ForestParams, seed: u64) -> Self {
        let d = x[0].len();
        let max_features = ((d as f64).sqrt().ceil() as usize).max(1);
        let trees = (0..p.trees)
            .map(|t| {
                let mut rng = rng_for(seed, &[t as u64]);
                let mut idx: Vec<usize> =
                    (0..x.len()).map(|_| rng.random_range(0..x.len())).collect();
                let mut b = TreeBuilder {
                    x,
                    y,
                    max_depth: p.max_depth,
                    max_features,
                    rng,
                };
                b.build(&mut idx, 0)
            })
            .collect();
        RandomForest { trees }
    }

    pub fn prob1(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.prob1(x)).sum::<f64>() / self.trees.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    /// Vote `+1` when `x > threshold` if true, when `x <= threshold` otherwise.
    pub above_is_positive: bool,
}

impl Stump {
    #[inline]
    pub fn vote(&self, x: &[f64]) -> f64 {
        if (x[self.feature] > self.threshold) == self.above_is_positive {
            1.0
        } else {
            -1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostParams {
    pub rounds: usize,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams { rounds: 50 }
    }
}

pub const BOOST_ERR_CLAMP: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaBoost {
    pub stumps: Vec<(Stump, f64)>,
}

impl AdaBoost {
    pub fn fit(x: &[Vec<f64>], y: &[usize], p: &BoostParams) -> Self {
        let n = x.len();
        let d = x[0].len();
        let sorted: Vec<Vec<usize>> = (0..d)
            .map(|f| {
                let mut o: Vec<usize> = (0..n).collect();
                o.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
                o
            })
            .collect();
        let sign: Vec<f64> = y.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
        let mut w = vec![1.0 / n as f64; n];
        let mut stumps = Vec::with_capacity(p.rounds);
        for _ in 0..p.rounds {
            let total_pos: f64 = (0..n).filter(|&i| y[i] == 1).map(|i| w[i]).sum();
            // error of "positive above threshold" with the threshold below
            // every sample: all negatives are wrong
            let mut best: Option<(f64, Stump)> = None;
            for (f, order) in sorted.iter().enumerate() {
                let mut err_above = 1.0 - total_pos;
                let first = x[order[0]][f];
                let consider = |err: f64, thr: f64, best: &mut Option<(f64, Stump)>| {
                    for (e, above) in [(err, true), (1.0 - err, false)] {
                        if best.is_none_or(|(b, _)| e < b) {
                            *best = Some((
                                e,
                                Stump {
                                    feature: f,
                                    threshold: thr,
                                    above_is_positive: above,
                                },
                            ));
                        }
                    }
                };
                consider(err_above, first - 1.0, &mut best);
                for k in 0..n {
                    let i = order[k];
                    // sample i moves to the "below" side
                    err_above += if y[i] == 1 { w[i] } else { -w[i] };
                    let v = x[i][f];
                    if k + 1 < n && x[order[k + 1]][f] == v {
                        continue;
                    }
                    let thr = if k + 1 < n {
                        0.5 * (v + x[order[k + 1]][f])
                    } else {
                        v
                    };
                    consider(err_above, thr, &mut best);
                }
            }
            let Some((err, stump)) = best else { break };
            let err = err.clamp(BOOST_ERR_CLAMP, 1.0 - BOOST_ERR_CLAMP);
            if err >= 0.5 {
                if stumps.is_empty() {
                    stumps.push((stump, 0.0));
                }
                break;
            }
            let alpha = 0.5 * ((1.0 - err) / err).ln();
            let mut z = 0.0;
            for i in 0..n {
                w[i] *= (-alpha * sign[i] * stump.vote(&x[i])).exp();
                z += w[i];
            }
            w.iter_mut().for_each(|v| *v /= z);
            stumps.push((stump, alpha));
            if err <= BOOST_ERR_CLAMP {
                break;
            }
        }
        AdaBoost { stumps }
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.stumps.iter().map(|(s, a)| a * s.vote(x)).sum()
    }

    /// `1 / (1 + exp(-2F))` of the additive score `F`.
    pub fn prob1(&self, x: &[f64]) -> f64 {
        let f = self.score(x);
        super::linear::sigmoid(2.0 * f)
    }
}
