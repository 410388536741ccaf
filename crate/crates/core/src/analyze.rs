//! Low-dimensional embedding, per-group clustering and representative-cell
//! panels.

use std::collections::{BTreeMap, HashMap};

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{FeatureMatrix, NUM_FEATURES};
use crate::rng::{derive, rng_for};
use crate::{CellInstance, Error, Group, RegionImage, Result};

/// Squared Euclidean distance.
#[inline]
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Pairwise Euclidean distances, row-major `n x n`.
pub fn euclidean_dissimilarity(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.par_iter()
        .map(|a| rows.iter().map(|b| dist2(a, b).sqrt()).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub points: Vec<Vec<f64>>,
    /// `sum over i != j of (delta_ij - |x_i - x_j|)^2`.
    pub stress: f64,
    pub iterations_run: usize,
    /// Stress of the start configuration followed by one entry per
    /// iteration.
    pub stress_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdsParams {
    pub dims: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for MdsParams {
    fn default() -> Self {
        MdsParams {
            dims: 3,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

fn check_dissimilarity(d: &[Vec<f64>]) -> Result<()> {
    let n = d.len();
    for (i, row) in d.iter().enumerate() {
        if row.len() != n {
            return Err(Error::BadDissimilarity(format!(
                "row {i} has {} entries",
                row.len()
            )));
        }
        if row[i] != 0.0 {
            return Err(Error::BadDissimilarity(format!(
                "diagonal entry {i} is {}",
                row[i]
            )));
        }
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::BadDissimilarity(format!("entry ({i}, {j}) is {v}")));
            }
            if (v - d[j][i]).abs() > 1e-9 * v.abs().max(1.0) {
                return Err(Error::BadDissimilarity(format!(
                    "entry ({i}, {j}) is not symmetric"
                )));
            }
        }
    }
    Ok(())
}

fn stress(d: &[Vec<f64>], x: &[Vec<f64>]) -> f64 {
    (0..d.len())
        .into_par_iter()
        .map(|i| {
            (0..d.len())
                .filter(|&j| j != i)
                .map(|j| (d[i][j] - dist2(&x[i], &x[j]).sqrt()).powi(2))
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .sum()
}

/// Guttman transform `X <- B(X) X / n` (unit weights).
fn guttman(d: &[Vec<f64>], x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = d.len();
    let dims = x[0].len();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut out = vec![0.0; dims];
            let mut diag = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let dist = dist2(&x[i], &x[j]).sqrt();
                let b = if dist > 1e-300 { -d[i][j] / dist } else { 0.0 };
                diag -= b;
                for k in 0..dims {
                    out[k] += b * x[j][k];
                }
            }
            for k in 0..dims {
                out[k] = (out[k] + diag * x[i][k]) / n as f64;
            }
            out
        })
        .collect()
}

/// Metric MDS by stress majorization from a seeded random start.
pub fn mds_embed(d: &[Vec<f64>], p: &MdsParams, seed: u64) -> Result<Embedding> {
    check_dissimilarity(d)?;
    if p.dims == 0 || p.dims >= NUM_FEATURES {
        return Err(Error::InvalidParameter(format!(
            "embedding dimension must lie in 1..{NUM_FEATURES}"
        )));
    }
    let n = d.len();
    let scale = d.iter().flatten().cloned().fold(0.0, f64::max).max(1e-12);
    let mut rng = rng_for(seed, &[]);
    let mut x: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..p.dims)
                .map(|_| rng.random_range(-scale..scale))
                .collect()
        })
        .collect();
    let mut s = stress(d, &x);
    let mut history = vec![s];
    let mut iterations = 0;
    while iterations < p.max_iter && s > 0.0 {
        let next = guttman(d, &x);
        let s_next = stress(d, &next);
        iterations += 1;
        // majorization cannot increase stress; a rise is rounding noise
        if s_next > s {
            break;
        }
        let rel = (s - s_next) / s;
        x = next;
        s = s_next;
        history.push(s);
        if rel < p.tol {
            break;
        }
    }
    Ok(Embedding {
        points: x,
        stress: s,
        iterations_run: iterations,
        stress_history: history,
    })
}

/// Up to `max` row indices with each group represented in proportion to
/// its size, chosen with a seeded shuffle; returned sorted.
pub fn stratified_subsample(groups: &[Group], max: usize, seed: u64) -> Vec<usize> {
    if groups.len() <= max {
        return (0..groups.len()).collect();
    }
    let mut out = Vec::with_capacity(max);
    let mut remaining = max;
    for (k, g) in Group::ALL.iter().enumerate() {
        let mut idx: Vec<usize> = (0..groups.len()).filter(|&i| groups[i] == *g).collect();
        let take = if k + 1 == Group::ALL.len() {
            remaining
        } else {
            ((idx.len() as f64 / groups.len() as f64) * max as f64).round() as usize
        }
        .min(idx.len());
        idx.shuffle(&mut rng_for(seed, &[k as u64]));
        out.extend_from_slice(&idx[..take]);
        remaining -= take.min(remaining);
    }
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub sse: f64,
    /// SSE after each assignment step.
    pub sse_history: Vec<f64>,
    pub iterations: usize,
}

fn assign(x: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<(usize, f64)> {
    x.par_iter()
        .map(|r| {
            let mut best = (0, f64::INFINITY);
            for (c, m) in centroids.iter().enumerate() {
                let d = dist2(r, m);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .collect()
}

fn lloyd(x: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iter: usize) -> KMeansResult {
    let dims = x[0].len();
    let k = centroids.len();
    let mut history = Vec::new();
    let mut prev: Option<Vec<usize>> = None;
    let mut iterations = 0;
    loop {
        let a = assign(x, &centroids);
        let labels: Vec<usize> = a.iter().map(|p| p.0).collect();
        history.push(a.iter().map(|p| p.1).sum::<f64>());
        if prev.as_ref() == Some(&labels) || iterations >= max_iter {
            return KMeansResult {
                centroids,
                assignments: labels,
                sse: *history.last().expect("one entry"),
                sse_history: history,
                iterations,
            };
        }
        iterations += 1;
        let mut sums = vec![vec![0.0; dims]; k];
        let mut counts = vec![0usize; k];
        for (r, &l) in x.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(r) {
                *s += v;
            }
        }
        for c in 0..k {
            // an emptied cluster keeps its centroid
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        prev = Some(labels);
    }
}

/// Add centres by D^2 sampling until there are `k`.
fn plus_plus(
    x: &[Vec<f64>],
    mut centroids: Vec<Vec<f64>>,
    k: usize,
    rng: &mut impl Rng,
) -> Vec<Vec<f64>> {
    if centroids.is_empty() {
        centroids.push(x[rng.random_range(0..x.len())].clone());
    }
    let mut d: Vec<f64> = x
        .iter()
        .map(|r| {
            centroids
                .iter()
                .map(|c| dist2(r, c))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    while centroids.len() < k {
        let total: f64 = d.iter().sum();
        let pick = if total <= 0.0 {
            // every point already sits on a centre
            rng.random_range(0..x.len())
        } else {
            let mut t = rng.random_range(0.0..total);
            let mut pick = x.len() - 1;
            for (i, di) in d.iter().enumerate() {
                if t < *di {
                    pick = i;
                    break;
                }
                t -= di;
            }
            pick
        };
        let c = x[pick].clone();
        for (di, r) in d.iter_mut().zip(x) {
            *di = di.min(dist2(r, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn check_k(x: &[Vec<f64>], k: usize) -> Result<()> {
    if k == 0 || k > x.len() {
        return Err(Error::BadK { k, n: x.len() });
    }
    Ok(())
}

/// k-means++ seeding followed by Lloyd iterations to a fixpoint.
pub fn kmeans(x: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult> {
    check_k(x, k)?;
    let init = plus_plus(x, Vec::new(), k, &mut rng_for(seed, &[]));
    Ok(lloyd(x, init, max_iter))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElbowParams {
    pub k_max: usize,
    pub threshold: f64,
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for ElbowParams {
    fn default() -> Self {
        ElbowParams {
            k_max: 10,
            threshold: 0.15,
            restarts: 5,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elbow {
    pub k: usize,
    /// `(K, SSE)` for `K = 1..=k_max`.
    pub sse_curve: Vec<(usize, f64)>,
    /// No clear elbow: K = 1, the fallback to `k_max`, or a drop into K
    /// below twice the threshold.
    pub weak: bool,
    /// Best clustering for every K on the curve.
    #[serde(skip)]
    pub fits: Vec<KMeansResult>,
}

/// Sweep K, keep the best of the seeded restarts (plus a warm start from
/// the best K-1 solution, so the curve never rises), and pick the first
/// K whose relative SSE decrease to K+1 is below the threshold.
pub fn elbow_k(x: &[Vec<f64>], p: &ElbowParams, seed: u64) -> Result<Elbow> {
    if x.is_empty() || p.k_max == 0 {
        return Err(Error::BadK {
            k: p.k_max,
            n: x.len(),
        });
    }
    let k_max = p.k_max.min(x.len());
    let mut fits: Vec<KMeansResult> = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let mut candidates: Vec<KMeansResult> = (0..p.restarts.max(1))
            .into_par_iter()
            .map(|r| {
                let mut rng = rng_for(seed, &[k as u64, r as u64]);
                lloyd(x, plus_plus(x, Vec::new(), k, &mut rng), p.max_iter)
            })
            .collect();
        if let Some(prev) = fits.last() {
            let mut rng = rng_for(seed, &[k as u64, u64::MAX]);
            let init = plus_plus(x, prev.centroids.clone(), k, &mut rng);
            candidates.push(lloyd(x, init, p.max_iter));
        }
        let best = candidates
            .into_iter()
            .reduce(|a, b| if b.sse < a.sse { b } else { a })
            .expect("at least one restart");
        fits.push(best);
    }
    let sse: Vec<f64> = fits.iter().map(|f| f.sse).collect();
    let drop = |k: usize| -> f64 {
        // relative decrease from K to K+1 (1-based K)
        let (a, b) = (sse[k - 1], sse[k]);
        if a <= 0.0 {
            0.0
        } else {
            (a - b) / a
        }
    };
    let found = (1..k_max).find(|&k| drop(k) < p.threshold);
    let (k, fallback) = match found {
        Some(k) => (k, false),
        None => {
            log::warn!("no elbow below {} up to K = {k_max}", p.threshold);
            (k_max, true)
        }
    };
    let weak = fallback || k == 1 || drop(k - 1) < 2.0 * p.threshold;
    Ok(Elbow {
        k,
        sse_curve: sse.iter().enumerate().map(|(i, &s)| (i + 1, s)).collect(),
        weak,
        fits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub group: Group,
    pub k: usize,
    /// Centroids in normalized feature space.
    pub centroids: Vec<Vec<f64>>,
    pub assignments: BTreeMap<String, usize>,
    pub sse_curve: Vec<(usize, f64)>,
    pub weak_elbow: bool,
}

/// Elbow-selected K-means on the rows of one group.
pub fn cluster_group(
    matrix: &FeatureMatrix,
    group: Group,
    p: &ElbowParams,
    seed: u64,
) -> Result<ClusterModel> {
    let rows: Vec<_> = matrix.rows.iter().filter(|r| r.group == group).collect();
    if rows.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no rows for group {group}"
        )));
    }
    let x: Vec<Vec<f64>> = rows.iter().map(|r| r.values().to_vec()).collect();
    let elbow = elbow_k(&x, p, derive(seed, &[group.class_index() as u64]))?;
    let fit = &elbow.fits[elbow.k - 1];
    Ok(ClusterModel {
        group,
        k: elbow.k,
        centroids: fit.centroids.clone(),
        assignments: rows
            .iter()
            .zip(&fit.assignments)
            .map(|(r, &a)| (r.cell_id.clone(), a))
            .collect(),
        sse_curve: elbow.sse_curve,
        weak_elbow: elbow.weak,
    })
}

pub const PANEL_SIDE: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanelParams {
    pub per_cluster: usize,
    pub x_margin: u32,
    pub y_margin: u32,
}

impl Default for PanelParams {
    fn default() -> Self {
        PanelParams {
            per_cluster: 100,
            x_margin: 4,
            y_margin: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub group: Group,
    pub cluster: usize,
    /// Retrieved cells, nearest to the centroid first.
    pub cell_ids: Vec<String>,
    pub distances: Vec<f64>,
    /// Uniform crop size `(w_final, h_final)`.
    pub crop_size: (u32, u32),
    /// True when blank tiles fill part of the mosaic.
    pub padded: bool,
    pub crops: Vec<RgbImage>,
    pub mosaic: RgbImage,
}

/// Members of `cluster`, nearest to its centroid first (ties by cell id).
pub fn rank_members(
    model: &ClusterModel,
    features: &FeatureMatrix,
    cluster: usize,
) -> Vec<(String, f64)> {
    let centroid = &model.centroids[cluster];
    let mut ranked: Vec<(String, f64)> = features
        .rows
        .iter()
        .filter(|r| r.group == model.group && model.assignments.get(&r.cell_id) == Some(&cluster))
        .map(|r| (r.cell_id.clone(), dist2(&r.values(), centroid).sqrt()))
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

/// Crop with edge replication outside the image.
fn crop_replicate(img: &RgbImage, x0: i64, y0: i64, w: u32, h: u32) -> RgbImage {
    let (iw, ih) = (img.width() as i64, img.height() as i64);
    RgbImage::from_fn(w, h, |x, y| {
        let sx = (x0 + x as i64).clamp(0, iw - 1) as u32;
        let sy = (y0 + y as i64).clamp(0, ih - 1) as u32;
        *img.get_pixel(sx, sy)
    })
}

/// Build one panel per non-empty cluster of the model's group.
pub fn retrieve_representatives(
    model: &ClusterModel,
    features: &FeatureMatrix,
    cells: &HashMap<String, CellInstance>,
    images: &HashMap<String, RegionImage>,
    p: &PanelParams,
) -> Result<Vec<Panel>> {
    if p.per_cluster == 0 || p.per_cluster > PANEL_SIDE * PANEL_SIDE {
        return Err(Error::InvalidParameter(format!(
            "per_cluster must lie in 1..={}",
            PANEL_SIDE * PANEL_SIDE
        )));
    }
    let mut panels = Vec::new();
    for cluster in 0..model.k {
        let ranked = rank_members(model, features, cluster);
        if ranked.is_empty() {
            log::warn!("{} cluster {cluster} has no members", model.group);
            continue;
        }
        let chosen: Vec<(String, f64)> = ranked.into_iter().take(p.per_cluster).collect();
        let mut boxes = Vec::with_capacity(chosen.len());
        for (id, _) in &chosen {
            let cell = cells
                .get(id)
                .ok_or_else(|| Error::InvalidParameter(format!("no mask for cell {id}")))?;
            let (mut x0, mut y0, mut x1, mut y1) = (i32::MAX, i32::MAX, i32::MIN, i32::MIN);
            for &(x, y) in &cell.boundary {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
            boxes.push((cell, x0, y0, (x1 - x0) as u32, (y1 - y0) as u32));
        }
        let w_final = boxes.iter().map(|b| b.3).max().unwrap_or(0) + p.x_margin;
        let h_final = boxes.iter().map(|b| b.4).max().unwrap_or(0) + p.y_margin;
        let (w_final, h_final) = (w_final.max(1), h_final.max(1));
        let mut crops = Vec::with_capacity(boxes.len());
        for (cell, x0, y0, _, _) in &boxes {
            let img = images
                .get(&cell.image_id)
                .ok_or_else(|| Error::InvalidParameter(format!("no image {}", cell.image_id)))?;
            crops.push(crop_replicate(
                &img.pixels,
                *x0 as i64,
                *y0 as i64,
                w_final,
                h_final,
            ));
        }
        let side = PANEL_SIDE as u32;
        let mut mosaic = RgbImage::from_pixel(side * w_final, side * h_final, Rgb([255, 255, 255]));
        for (t, crop) in crops.iter().enumerate() {
            let (tx, ty) = ((t % PANEL_SIDE) as u32, (t / PANEL_SIDE) as u32);
            image::imageops::replace(
                &mut mosaic,
                crop,
                (tx * w_final) as i64,
                (ty * h_final) as i64,
            );
        }
        panels.push(Panel {
            group: model.group,
            cluster,
            padded: crops.len() < PANEL_SIDE * PANEL_SIDE,
            cell_ids: chosen.iter().map(|c| c.0.clone()).collect(),
            distances: chosen.iter().map(|c| c.1).collect(),
            crop_size: (w_final, h_final),
            crops,
            mosaic,
        });
    }
    Ok(panels)
}

/// Raster scatter of the first two coordinates: MUT blue, WT red.
pub fn scatter_png(points: &[Vec<f64>], groups: &[Group], size: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(size, size, Rgb([255, 255, 255]));
    if points.is_empty() || points[0].len() < 2 {
        return img;
    }
    let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let pad = 6.0;
    let span = (size as f64 - 2.0 * pad).max(1.0);
    for (p, g) in points.iter().zip(groups) {
        let color = match g {
            Group::Mut => Rgb([30, 80, 200]),
            Group::Wt => Rgb([210, 40, 40]),
        };
        let px: [f64; 2] = std::array::from_fn(|k| {
            let r = hi[k] - lo[k];
            pad + if r > 0.0 {
                (p[k] - lo[k]) / r * span
            } else {
                span / 2.0
            }
        });
        let (cx, cy) = (px[0].round() as i64, (size as f64 - px[1]).round() as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (x, y) = (cx + dx, cy + dy);
                if x >= 0 && y >= 0 && x < size as i64 && y < size as i64 {
                    img.put_pixel(x as u32, y as u32, color);
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn dissim(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
        euclidean_dissimilarity(points)
    }

    #[test]
    fn rejects_bad_dissimilarity() {
        let asym = vec![vec![0.0, 1.0], vec![2.0, 0.0]];
        let neg = vec![vec![0.0, -1.0], vec![-1.0, 0.0]];
        let diag = vec![vec![1.0, 1.0], vec![1.0, 0.0]];
        for d in [asym, neg, diag] {
            assert!(matches!(
                mds_embed(&d, &MdsParams::default(), 0),
                Err(Error::BadDissimilarity(_))
            ));
        }
    }

    #[test]
    fn two_points_zero_stress() {
        let d = vec![vec![0.0, 3.5], vec![3.5, 0.0]];
        let e = mds_embed(&d, &MdsParams::default(), 4).unwrap();
        assert!(e.stress < 1e-12, "{}", e.stress);
    }

    #[test]
    fn stress_never_increases() {
        let mut rng = rng_for(1, &[]);
        let pts: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..10).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let e = mds_embed(&dissim(&pts), &MdsParams::default(), 2).unwrap();
        assert!(e.stress_history.len() > 2);
        for w in e.stress_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn kmeans_edge_cases() {
        let x: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let all = kmeans(&x, 7, 3, 100).unwrap();
        assert_eq!(all.sse, 0.0);
        let one = kmeans(&x, 1, 3, 100).unwrap();
        let mean = [3.0, 13.0];
        assert!(dist2(&one.centroids[0], &mean) < 1e-20);
        let total: f64 = x.iter().map(|r| dist2(r, &mean)).sum();
        assert!((one.sse - total).abs() < 1e-9);
        assert!(matches!(
            kmeans(&x, 8, 0, 10),
            Err(Error::BadK { k: 8, n: 7 })
        ));
    }

    #[test]
    fn lloyd_sse_monotone() {
        let mut rng = rng_for(8, &[]);
        let x: Vec<Vec<f64>> = (0..300)
            .map(|_| (0..4).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let r = kmeans(&x, 6, 1, 300).unwrap();
        for w in r.sse_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        // fixpoint: reassigning to the final centroids changes nothing
        let again: Vec<usize> = assign(&x, &r.centroids).iter().map(|p| p.0).collect();
        assert_eq!(again, r.assignments);
    }

    #[test]
    fn subsample_is_proportional() {
        let groups: Vec<Group> = (0..5000)
            .map(|i| if i % 5 == 0 { Group::Mut } else { Group::Wt })
            .collect();
        let idx = stratified_subsample(&groups, 2000, 3);
        assert_eq!(idx.len(), 2000);
        let m = idx.iter().filter(|&&i| groups[i] == Group::Mut).count();
        assert_eq!(m, 400);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }
}
