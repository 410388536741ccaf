//! Binary classifiers and ensemble-vote data pruning.
//!
//! Six model families take part: logistic regression, random forest,
//! AdaBoost, Gaussian naive Bayes, QDA and a one-hidden-layer neural net.
//! Labels are class indices `0`/`1` (see [`Group::class_index`]).
//!
//! [`Group::class_index`]: crate::Group::class_index

mod ensemble;
pub mod gaussian;
pub mod linear;
pub mod neural;
pub mod trees;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use ensemble::{
    out_of_fold_bits, prune, stratified_folds, EnsembleReport, IterationReport, OutOfFold,
    PruneConfig,
};
pub use gaussian::{ClassGaussian, GaussianNaiveBayes, Qda, QdaParams};
pub use linear::{LogisticParams, LogisticRegression};
pub use neural::{NeuralNet, NeuralParams};
pub use trees::{AdaBoost, BoostParams, ForestParams, RandomForest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassifierKind {
    LogisticRegression,
    RandomForest,
    AdaBoost,
    NaiveBayes,
    Qda,
    NeuralNet,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 6] = [
        ClassifierKind::LogisticRegression,
        ClassifierKind::RandomForest,
        ClassifierKind::AdaBoost,
        ClassifierKind::NaiveBayes,
        ClassifierKind::Qda,
        ClassifierKind::NeuralNet,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            ClassifierKind::LogisticRegression => "LR",
            ClassifierKind::RandomForest => "RF",
            ClassifierKind::AdaBoost => "AB",
            ClassifierKind::NaiveBayes => "NB",
            ClassifierKind::Qda => "QDA",
            ClassifierKind::NeuralNet => "NN",
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Hyperparameters of every family.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierParams {
    pub logistic: LogisticParams,
    pub forest: ForestParams,
    pub boost: BoostParams,
    pub qda: QdaParams,
    pub neural: NeuralParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelState {
    LogisticRegression(LogisticRegression),
    RandomForest(RandomForest),
    AdaBoost(AdaBoost),
    NaiveBayes(GaussianNaiveBayes),
    Qda(Qda),
    NeuralNet(NeuralNet),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub kind: ClassifierKind,
    pub state: ModelState,
    pub training_seed: u64,
}

/// Predicted label and the model's posterior for each class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub posterior: [f64; 2],
}

impl Prediction {
    fn from_prob1(p1: f64) -> Self {
        Prediction {
            label: (p1 >= 0.5) as usize,
            posterior: [1.0 - p1, p1],
        }
    }

    /// Posterior of the predicted label.
    pub fn confidence(&self) -> f64 {
        self.posterior[self.label]
    }
}

fn check_training_set(x: &[Vec<f64>], y: &[usize]) -> Result<()> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "{} rows with {} labels",
            x.len(),
            y.len()
        )));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidParameter(
            "rows must share a nonzero width".into(),
        ));
    }
    if y.iter().any(|&l| l > 1) {
        return Err(Error::InvalidParameter("labels must be 0 or 1".into()));
    }
    let ones = y.iter().filter(|&&l| l == 1).count();
    if ones == 0 || ones == y.len() {
        return Err(Error::DegenerateLabels);
    }
    if ones < 2 || y.len() - ones < 2 {
        return Err(Error::InvalidParameter(
            "each class needs at least 2 training examples".into(),
        ));
    }
    Ok(())
}

pub fn train(
    kind: ClassifierKind,
    x: &[Vec<f64>],
    y: &[usize],
    params: &ClassifierParams,
    seed: u64,
) -> Result<TrainedModel> {
    check_training_set(x, y)?;
    let state = match kind {
        ClassifierKind::LogisticRegression => {
            ModelState::LogisticRegression(LogisticRegression::fit(x, y, &params.logistic))
        }
        ClassifierKind::RandomForest => {
            ModelState::RandomForest(RandomForest::fit(x, y, &params.forest, seed))
        }
        ClassifierKind::AdaBoost => ModelState::AdaBoost(AdaBoost::fit(x, y, &params.boost)),
        ClassifierKind::NaiveBayes => ModelState::NaiveBayes(GaussianNaiveBayes::fit(x, y)),
        ClassifierKind::Qda => ModelState::Qda(Qda::fit(x, y, &params.qda)?),
        ClassifierKind::NeuralNet => {
            ModelState::NeuralNet(NeuralNet::fit(x, y, &params.neural, seed))
        }
    };
    Ok(TrainedModel {
        kind,
        state,
        training_seed: seed,
    })
}

impl TrainedModel {
    pub fn prob1(&self, x: &[f64]) -> f64 {
        match &self.state {
            ModelState::LogisticRegression(m) => m.prob1(x),
            ModelState::RandomForest(m) => m.prob1(x),
            ModelState::AdaBoost(m) => m.prob1(x),
            ModelState::NaiveBayes(m) => m.prob1(x),
            ModelState::Qda(m) => m.prob1(x),
            ModelState::NeuralNet(m) => m.prob1(x),
        }
    }
}

pub fn predict(model: &TrainedModel, x: &[f64]) -> Prediction {
    Prediction::from_prob1(model.prob1(x))
}

/// Fraction of rows whose predicted label matches.
pub fn accuracy(model: &TrainedModel, x: &[Vec<f64>], y: &[usize]) -> f64 {
    let hits = x
        .iter()
        .zip(y)
        .filter(|(r, &l)| predict(model, r).label == l)
        .count();
    hits as f64 / x.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn blobs(n: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = crate::rng::rng_for(seed, &[]);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let l = i % 2;
            let c = if l == 1 { sep / 2.0 } else { -sep / 2.0 };
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            x.push(vec![c + a, b]);
            y.push(l);
        }
        (x, y)
    }

    fn xor(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = crate::rng::rng_for(seed, &[]);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let (sx, sy) = ([-1.0, 1.0][i % 2], [-1.0, 1.0][(i / 2) % 2]);
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            x.push(vec![2.0 * sx + 0.3 * a, 2.0 * sy + 0.3 * b]);
            y.push(((sx > 0.0) != (sy > 0.0)) as usize);
        }
        (x, y)
    }

    #[test]
    fn logistic_on_separable_blobs() {
        // centres 8 sigma apart: margin of 4 sigma on either side
        let (x, y) = blobs(400, 8.0, 1);
        let m = train(
            ClassifierKind::LogisticRegression,
            &x,
            &y,
            &Default::default(),
            0,
        )
        .unwrap();
        assert!(accuracy(&m, &x, &y) >= 0.99);
    }

    #[test]
    fn naive_bayes_without_signal() {
        let x = vec![vec![1.0, 2.0]; 200];
        let y: Vec<usize> = (0..200).map(|i| i % 2).collect();
        let m = train(ClassifierKind::NaiveBayes, &x, &y, &Default::default(), 0).unwrap();
        let acc = accuracy(&m, &x, &y);
        assert!((acc - 0.5).abs() <= 0.1, "{acc}");
    }

    #[test]
    fn forest_beats_logistic_on_xor() {
        let (x, y) = xor(400, 3);
        let p = ClassifierParams::default();
        let rf = train(ClassifierKind::RandomForest, &x, &y, &p, 9).unwrap();
        let lr = train(ClassifierKind::LogisticRegression, &x, &y, &p, 9).unwrap();
        assert!(accuracy(&rf, &x, &y) >= 0.95);
        assert!(accuracy(&lr, &x, &y) <= 0.6);
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        for kind in ClassifierKind::ALL {
            assert!(matches!(
                train(kind, &x, &[1, 1, 1], &Default::default(), 0),
                Err(Error::DegenerateLabels)
            ));
        }
    }

    #[test]
    fn qda_symmetric_point() {
        let d = 10;
        let mut eye = vec![0.0; d * d];
        (0..d).for_each(|i| eye[i * d + i] = 1.0);
        let mut mu = vec![0.0; d];
        mu[0] = 1.0;
        let neg: Vec<f64> = mu.iter().map(|v| -v).collect();
        let qda = Qda {
            classes: [
                ClassGaussian::new(0.5, neg, &eye).unwrap(),
                ClassGaussian::new(0.5, mu, &eye).unwrap(),
            ],
        };
        let m = TrainedModel {
            kind: ClassifierKind::Qda,
            state: ModelState::Qda(qda),
            training_seed: 0,
        };
        let p = predict(&m, &vec![0.0; d]);
        assert!((p.posterior[0] - 0.5).abs() < 1e-12 && (p.posterior[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_stump_boost_matches_stump() {
        let (x, y) = blobs(200, 3.0, 5);
        let p = ClassifierParams {
            boost: BoostParams { rounds: 1 },
            ..Default::default()
        };
        let m = train(ClassifierKind::AdaBoost, &x, &y, &p, 0).unwrap();
        let ModelState::AdaBoost(ab) = &m.state else {
            unreachable!()
        };
        assert_eq!(ab.stumps.len(), 1);
        let stump = ab.stumps[0].0;
        for r in &x {
            assert_eq!(predict(&m, r).label, (stump.vote(r) > 0.0) as usize);
        }
    }

    #[test]
    fn decision_rules_match_brute_force() {
        let (x, y) = blobs(300, 2.0, 11);
        let p = ClassifierParams::default();
        let mut rng = crate::rng::rng_for(99, &[]);
        let probes: Vec<Vec<f64>> = (0..100)
            .map(|_| vec![rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)])
            .collect();
        let lr = train(ClassifierKind::LogisticRegression, &x, &y, &p, 0).unwrap();
        let nb = train(ClassifierKind::NaiveBayes, &x, &y, &p, 0).unwrap();
        let qda = train(ClassifierKind::Qda, &x, &y, &p, 0).unwrap();
        for r in &probes {
            let pr = predict(&lr, r);
            assert_eq!(pr.label == 1, pr.posterior[1] >= 0.5);
            let ModelState::NaiveBayes(m) = &nb.state else {
                unreachable!()
            };
            let want = (m.log_joint(r, 1) >= m.log_joint(r, 0)) as usize;
            assert_eq!(predict(&nb, r).label, want);
            let ModelState::Qda(m) = &qda.state else {
                unreachable!()
            };
            let want = (m.classes[1].log_joint(r) >= m.classes[0].log_joint(r)) as usize;
            assert_eq!(predict(&qda, r).label, want);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = blobs(200, 1.5, 2);
        let p = ClassifierParams::default();
        for kind in ClassifierKind::ALL {
            let a = train(kind, &x, &y, &p, 42).unwrap();
            let b = train(kind, &x, &y, &p, 42).unwrap();
            assert_eq!(a, b, "{kind}");
        }
    }
}
