//! Stratified out-of-fold evaluation and iterative ensemble-vote pruning.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{predict, train, ClassifierKind, ClassifierParams};
use crate::rng::{derive, rng_for};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub vote_thresholds: Vec<usize>,
    pub final_unanimity: bool,
    pub folds: usize,
    pub seed: u64,
    /// Stop before the schedule ends once no classifier's out-of-fold
    /// accuracy moves by 0.5 points or more between iterations.
    pub early_stop: bool,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            vote_thresholds: vec![1, 2, 3, 4, 5],
            final_unanimity: true,
            folds: 5,
            seed: 0,
            early_stop: false,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidParameter("folds must be at least 2".into()));
        }
        let n = ClassifierKind::ALL.len();
        if self.vote_thresholds.iter().any(|&t| t == 0 || t > n) {
            return Err(Error::InvalidParameter(format!(
                "vote thresholds must lie in 1..={n}"
            )));
        }
        if self.vote_thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "vote thresholds must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// Out-of-fold correctness of every classifier on every row.
#[derive(Debug, Clone, PartialEq)]
pub struct OutOfFold {
    /// Indexed like [`ClassifierKind::ALL`].
    pub bits: Vec<[bool; 6]>,
    pub accuracies: [f64; 6],
}

impl OutOfFold {
    pub fn votes(&self, row: usize) -> usize {
        self.bits[row].iter().filter(|&&b| b).count()
    }
}

/// Fold index per row. Each class is shuffled with its own derived stream
/// and dealt round-robin, so every fold holds `floor` or `ceil` of
/// `count / folds` members of each class.
pub fn stratified_folds(y: &[usize], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::InvalidParameter("folds must be at least 2".into()));
    }
    let mut fold = vec![0; y.len()];
    for class in 0..2 {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        if members.len() < folds {
            return Err(Error::StratificationError {
                class,
                count: members.len(),
                folds,
            });
        }
        members.shuffle(&mut rng_for(seed, &[class as u64]));
        for (k, &i) in members.iter().enumerate() {
            fold[i] = k % folds;
        }
    }
    Ok(fold)
}

pub fn out_of_fold_bits(
    x: &[Vec<f64>],
    y: &[usize],
    folds: usize,
    seed: u64,
    params: &ClassifierParams,
) -> Result<OutOfFold> {
    if x.len() != y.len() {
        return Err(Error::InvalidParameter(
            "row and label counts differ".into(),
        ));
    }
    if y.iter().any(|&l| l > 1) {
        return Err(Error::InvalidParameter("labels must be 0 or 1".into()));
    }
    let fold = stratified_folds(y, folds, derive(seed, &[0]))?;
    let jobs: Vec<(usize, usize)> = (0..folds)
        .flat_map(|f| (0..ClassifierKind::ALL.len()).map(move |k| (f, k)))
        .collect();
    let results: Vec<Vec<(usize, bool)>> = jobs
        .par_iter()
        .map(|&(f, k)| -> Result<Vec<(usize, bool)>> {
            let (mut tx, mut ty) = (Vec::new(), Vec::new());
            for i in (0..x.len()).filter(|&i| fold[i] != f) {
                tx.push(x[i].clone());
                ty.push(y[i]);
            }
            let model = train(
                ClassifierKind::ALL[k],
                &tx,
                &ty,
                params,
                derive(seed, &[1, f as u64, k as u64]),
            )?;
            Ok((0..x.len())
                .filter(|&i| fold[i] == f)
                .map(|i| (i, predict(&model, &x[i]).label == y[i]))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut bits = vec![[false; 6]; x.len()];
    for (&(_, k), res) in jobs.iter().zip(&results) {
        for &(i, ok) in res {
            bits[i][k] = ok;
        }
    }
    let mut accuracies = [0.0; 6];
    for (k, acc) in accuracies.iter_mut().enumerate() {
        *acc = bits.iter().filter(|b| b[k]).count() as f64 / x.len().max(1) as f64;
    }
    Ok(OutOfFold { bits, accuracies })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    /// Minimum number of correct votes needed to stay; 6 for the
    /// unanimity pass.
    pub threshold: usize,
    pub n_in: usize,
    pub n_retained: usize,
    pub accuracies: BTreeMap<ClassifierKind, f64>,
    /// Out-of-fold correctness per instance, in [`ClassifierKind::ALL`] order.
    pub bits: BTreeMap<String, [bool; 6]>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub folds: usize,
    pub seed: u64,
    pub n_initial: usize,
    pub iterations: Vec<IterationReport>,
    pub stopped_early: bool,
}

impl EnsembleReport {
    pub fn retained_fractions(&self) -> Vec<f64> {
        self.iterations
            .iter()
            .map(|it| it.n_retained as f64 / self.n_initial.max(1) as f64)
            .collect()
    }
}

fn saturated(prev: &IterationReport, cur: &IterationReport) -> bool {
    prev.accuracies
        .iter()
        .all(|(k, a)| cur.accuracies.get(k).is_some_and(|b| (a - b).abs() < 0.005))
}

/// Iteratively drop instances that too few classifiers get right out of
/// fold. Returns the ids kept after the last iteration.
pub fn prune(
    ids: &[String],
    x: &[Vec<f64>],
    y: &[usize],
    cfg: &PruneConfig,
    params: &ClassifierParams,
) -> Result<(Vec<String>, EnsembleReport)> {
    cfg.validate()?;
    if ids.len() != x.len() || x.len() != y.len() {
        return Err(Error::InvalidParameter(
            "ids, rows and labels must have equal length".into(),
        ));
    }
    if !(y.contains(&0) && y.contains(&1)) {
        return Err(Error::DegenerateLabels);
    }
    let mut schedule = cfg.vote_thresholds.clone();
    if cfg.final_unanimity {
        schedule.push(ClassifierKind::ALL.len());
    }
    let mut report = EnsembleReport {
        folds: cfg.folds,
        seed: cfg.seed,
        n_initial: x.len(),
        ..Default::default()
    };
    let mut current: Vec<usize> = (0..x.len()).collect();
    for (t, &threshold) in schedule.iter().enumerate() {
        let sx: Vec<Vec<f64>> = current.iter().map(|&i| x[i].clone()).collect();
        let sy: Vec<usize> = current.iter().map(|&i| y[i]).collect();
        let oof = out_of_fold_bits(&sx, &sy, cfg.folds, derive(cfg.seed, &[t as u64]), params)?;
        let kept: Vec<usize> = (0..current.len())
            .filter(|&r| oof.votes(r) >= threshold)
            .map(|r| current[r])
            .collect();
        let iteration = IterationReport {
            threshold,
            n_in: current.len(),
            n_retained: kept.len(),
            accuracies: ClassifierKind::ALL
                .iter()
                .zip(oof.accuracies)
                .map(|(&k, a)| (k, a))
                .collect(),
            bits: current
                .iter()
                .zip(&oof.bits)
                .map(|(&i, b)| (ids[i].clone(), *b))
                .collect(),
        };
        log::info!(
            "prune iteration {t}: threshold {threshold}, kept {}/{}",
            kept.len(),
            current.len()
        );
        let stop = cfg.early_stop
            && report
                .iterations
                .last()
                .is_some_and(|prev| saturated(prev, &iteration));
        report.iterations.push(iteration);
        current = kept;
        let classes = (
            current.iter().any(|&i| y[i] == 0),
            current.iter().any(|&i| y[i] == 1),
        );
        if classes != (true, true) {
            return Err(Error::PrunedToDegenerate {
                iteration: t,
                report: Box::new(report),
            });
        }
        if stop {
            report.stopped_early = true;
            break;
        }
    }
    Ok((current.iter().map(|&i| ids[i].clone()).collect(), report))
}
