//! Per-cell morphometry and intensity features, cohort normalization and
//! group summaries.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::imagecore::{CellInstance, Group, RegionImage, ScalarImage};
use crate::{Error, Result};

pub const NUM_FEATURES: usize = 10;

/// Scale applied to the √2-weighted chain length so that straight edges of
/// random orientation are measured without bias.
const CHAIN_CORRECTION: f64 = PI * (1.0 + std::f64::consts::SQRT_2) / 8.0;

/// Floor reported for the std of constant feature columns.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Area,
    Perimeter,
    MaxDistance,
    EquivalentDiameter,
    Eccentricity,
    Circularity,
    Extent,
    IntensityMean,
    IntensityStd,
    IntensityEntropy,
}

impl Feature {
    pub const ALL: [Feature; NUM_FEATURES] = [
        Feature::Area,
        Feature::Perimeter,
        Feature::MaxDistance,
        Feature::EquivalentDiameter,
        Feature::Eccentricity,
        Feature::Circularity,
        Feature::Extent,
        Feature::IntensityMean,
        Feature::IntensityStd,
        Feature::IntensityEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Area => "area",
            Feature::Perimeter => "perimeter",
            Feature::MaxDistance => "max_distance",
            Feature::EquivalentDiameter => "equivalent_diameter",
            Feature::Eccentricity => "eccentricity",
            Feature::Circularity => "circularity",
            Feature::Extent => "extent",
            Feature::IntensityMean => "intensity_mean",
            Feature::IntensityStd => "intensity_std",
            Feature::IntensityEntropy => "intensity_entropy",
        }
    }
}

/// One CSV row: identifiers plus the ten features, in fixed column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub cell_id: String,
    pub image_id: String,
    pub group: Group,
    pub area: f64,
    pub perimeter: f64,
    pub max_distance: f64,
    pub equivalent_diameter: f64,
    pub eccentricity: f64,
    pub circularity: f64,
    pub extent: f64,
    pub intensity_mean: f64,
    pub intensity_std: f64,
    pub intensity_entropy: f64,
}

impl FeatureVector {
    pub fn values(&self) -> [f64; NUM_FEATURES] {
        [
            self.area,
            self.perimeter,
            self.max_distance,
            self.equivalent_diameter,
            self.eccentricity,
            self.circularity,
            self.extent,
            self.intensity_mean,
            self.intensity_std,
            self.intensity_entropy,
        ]
    }

    pub fn set_values(&mut self, v: [f64; NUM_FEATURES]) {
        [
            self.area,
            self.perimeter,
            self.max_distance,
            self.equivalent_diameter,
            self.eccentricity,
            self.circularity,
            self.extent,
            self.intensity_mean,
            self.intensity_std,
            self.intensity_entropy,
        ] = v;
    }

    pub fn from_values(
        cell_id: impl Into<String>,
        image_id: impl Into<String>,
        group: Group,
        v: [f64; NUM_FEATURES],
    ) -> Self {
        let mut fv = FeatureVector {
            cell_id: cell_id.into(),
            image_id: image_id.into(),
            group,
            area: 0.0,
            perimeter: 0.0,
            max_distance: 0.0,
            equivalent_diameter: 0.0,
            eccentricity: 0.0,
            circularity: 0.0,
            extent: 0.0,
            intensity_mean: 0.0,
            intensity_std: 0.0,
            intensity_entropy: 0.0,
        };
        fv.set_values(v);
        fv
    }

    pub fn get(&self, f: Feature) -> f64 {
        self.values()[f as usize]
    }
}

/// Length of a closed 8-connected contour through pixel centres.
///
/// Axis steps count 1 and diagonal steps √2; the chain length is scaled by
/// `π(1+√2)/8` to remove the orientation bias of chain codes, and `π` is
/// added for the half-pixel band between the centre-line contour and the
/// true object edge.
pub fn contour_perimeter(boundary: &[(i32, i32)]) -> f64 {
    let n = boundary.len();
    let (mut even, mut odd) = (0usize, 0usize);
    if n > 1 {
        for i in 0..n {
            let (a, b) = (boundary[i], boundary[(i + 1) % n]);
            if a.0 != b.0 && a.1 != b.1 {
                odd += 1;
            } else {
                even += 1;
            }
        }
    }
    CHAIN_CORRECTION * (even as f64 + std::f64::consts::SQRT_2 * odd as f64) + PI
}

fn max_pairwise_distance(points: &[(i32, i32)]) -> f64 {
    let mut best = 0i64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            let dx = (a.0 - b.0) as i64;
            let dy = (a.1 - b.1) as i64;
            best = best.max(dx * dx + dy * dy);
        }
    }
    (best as f64).sqrt()
}

/// Ellipse-equivalent eccentricity from second central moments.
fn eccentricity(mask: &[(u32, u32)]) -> f64 {
    let n = mask.len() as f64;
    let (mx, my) = mask.iter().fold((0.0, 0.0), |(sx, sy), &(x, y)| {
        (sx + x as f64, sy + y as f64)
    });
    let (mx, my) = (mx / n, my / n);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in mask {
        let (dx, dy) = (x as f64 - mx, y as f64 - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let (lo, hi) = crate::segment::symmetric_eigen(sxx / n, sxy / n, syy / n);
    if hi <= 0.0 {
        return 0.0;
    }
    (1.0 - (lo.max(0.0) / hi)).max(0.0).sqrt()
}

/// Mean, population std and histogram entropy (bits) of `values`, binned
/// into `bins` equal bins over `[lo, hi)`.
fn intensity_stats(values: &[f64], lo: f64, hi: f64, bins: usize) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut hist = vec![0usize; bins];
    for &v in values {
        let b = ((v - lo) / (hi - lo) * bins as f64).floor();
        hist[(b.max(0.0) as usize).min(bins - 1)] += 1;
    }
    let entropy = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>();
    (mean, var.sqrt(), entropy.max(0.0))
}

/// Where per-pixel intensities come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityChannel {
    /// Rec. 601 luma of the (stain-normalized) RGB tile, 0..=255.
    #[default]
    Luma,
    /// Deconvolved Hematoxylin concentration.
    Hematoxylin,
}

#[inline]
pub fn luma(rgb: [u8; 3]) -> f64 {
    0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64
}

/// Shape features plus intensity features over luma with a 64-bin histogram.
pub fn compute_features(cell: &CellInstance, img: &RegionImage) -> Result<FeatureVector> {
    let intensities: Vec<f64> = cell
        .mask
        .iter()
        .map(|&(x, y)| {
            if x >= img.width() || y >= img.height() {
                Err(Error::InvalidImage(format!(
                    "cell {} pixel ({x}, {y}) outside image {}",
                    cell.cell_id, img.id
                )))
            } else {
                Ok(luma(img.rgb(x, y)))
            }
        })
        .collect::<Result<_>>()?;
    compute_features_from(cell, img.group, &intensities, (0.0, 256.0), 64)
}

/// Same as [`compute_features`] with intensities read from a scalar channel
/// and histogrammed over `range`.
pub fn compute_features_on_channel(
    cell: &CellInstance,
    group: Group,
    channel: &ScalarImage,
    range: (f64, f64),
    bins: usize,
) -> Result<FeatureVector> {
    let intensities: Vec<f64> = cell
        .mask
        .iter()
        .map(|&(x, y)| channel.get(x as usize, y as usize))
        .collect();
    compute_features_from(cell, group, &intensities, range, bins)
}

fn compute_features_from(
    cell: &CellInstance,
    group: Group,
    intensities: &[f64],
    range: (f64, f64),
    bins: usize,
) -> Result<FeatureVector> {
    if cell.mask.len() < 4 {
        return Err(Error::TooSmall(cell.mask.len()));
    }
    if bins == 0 || !(range.1 > range.0) {
        return Err(Error::InvalidParameter(format!(
            "histogram needs bins > 0 and a nonempty range, got {bins} over {range:?}"
        )));
    }
    let area = cell.mask.len() as f64;
    let perimeter = contour_perimeter(&cell.boundary);
    let (x0, y0, x1, y1) = cell.bbox();
    let bbox_area = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
    let (mean, std, entropy) = intensity_stats(intensities, range.0, range.1, bins);
    Ok(FeatureVector::from_values(
        cell.cell_id.clone(),
        cell.image_id.clone(),
        group,
        [
            area,
            perimeter,
            max_pairwise_distance(&cell.boundary),
            (4.0 * area / PI).sqrt(),
            eccentricity(&cell.mask),
            4.0 * PI * area / (perimeter * perimeter),
            area / bbox_area,
            mean,
            std,
            entropy,
        ],
    ))
}

/// Per-feature z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; NUM_FEATURES],
    pub std: [f64; NUM_FEATURES],
    /// Features whose cohort variance was zero; their std is [`NORM_EPS`].
    pub constant: [bool; NUM_FEATURES],
}

impl Normalization {
    pub fn fit(rows: &[FeatureVector]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "normalization needs at least 2 rows, got {}",
                rows.len()
            )));
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; NUM_FEATURES];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.values()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; NUM_FEATURES];
        for r in rows {
            for (k, v) in r.values().iter().enumerate() {
                var[k] += (v - mean[k]).powi(2);
            }
        }
        let mut std = [0.0; NUM_FEATURES];
        let mut constant = [false; NUM_FEATURES];
        for k in 0..NUM_FEATURES {
            let s = (var[k] / n).sqrt();
            // relative test so large-magnitude constant columns are caught
            if s <= 1e-12 * mean[k].abs().max(1.0) {
                std[k] = NORM_EPS;
                constant[k] = true;
            } else {
                std[k] = s;
            }
        }
        Ok(Normalization {
            mean,
            std,
            constant,
        })
    }

    pub fn apply(&self, v: [f64; NUM_FEATURES]) -> [f64; NUM_FEATURES] {
        std::array::from_fn(|k| {
            if self.constant[k] {
                0.0
            } else {
                (v[k] - self.mean[k]) / self.std[k]
            }
        })
    }

    pub fn invert(&self, z: [f64; NUM_FEATURES]) -> [f64; NUM_FEATURES] {
        std::array::from_fn(|k| {
            if self.constant[k] {
                self.mean[k]
            } else {
                z[k] * self.std[k] + self.mean[k]
            }
        })
    }
}

/// Cohort feature table. When `normalization` is set, the row values are
/// z-scores under it; otherwise they are raw pixel units.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMatrix {
    pub rows: Vec<FeatureVector>,
    pub normalization: Option<Normalization>,
}

impl FeatureMatrix {
    pub fn new(rows: Vec<FeatureVector>) -> Self {
        FeatureMatrix {
            rows,
            normalization: None,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row values as arrays, in row order.
    pub fn values(&self) -> Vec<[f64; NUM_FEATURES]> {
        self.rows.iter().map(FeatureVector::values).collect()
    }

    /// Rows in raw units regardless of normalization state.
    pub fn raw_rows(&self) -> Vec<FeatureVector> {
        match &self.normalization {
            None => self.rows.clone(),
            Some(n) => self
                .rows
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    r.set_values(n.invert(r.values()));
                    r
                })
                .collect(),
        }
    }

    /// Keep rows whose cell id is in `ids`, preserving order.
    pub fn subset(&self, ids: &std::collections::HashSet<String>) -> FeatureMatrix {
        FeatureMatrix {
            rows: self
                .rows
                .iter()
                .filter(|r| ids.contains(&r.cell_id))
                .cloned()
                .collect(),
            normalization: self.normalization.clone(),
        }
    }
}

/// Z-score every feature with cohort mean and population std.
pub fn normalize(matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
    let raw = matrix.raw_rows();
    let norm = Normalization::fit(&raw)?;
    Ok(normalize_with(&raw, norm))
}

/// Apply existing z-score parameters to raw rows.
pub fn normalize_with(raw: &[FeatureVector], norm: Normalization) -> FeatureMatrix {
    let rows = raw
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.set_values(norm.apply(r.values()));
            r
        })
        .collect();
    FeatureMatrix {
        rows,
        normalization: Some(norm),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Per-group, per-feature mean and population std in raw units.
pub type GroupStats = BTreeMap<(Group, Feature), MeanStd>;

pub fn group_stats(matrix: &FeatureMatrix) -> Result<GroupStats> {
    let raw = matrix.raw_rows();
    let mut out = GroupStats::new();
    for g in Group::ALL {
        let rows: Vec<&FeatureVector> = raw.iter().filter(|r| r.group == g).collect();
        if rows.is_empty() {
            return Err(Error::InvalidParameter(format!("no rows for group {g}")));
        }
        let n = rows.len() as f64;
        for f in Feature::ALL {
            let mean = rows.iter().map(|r| r.get(f)).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r.get(f) - mean).powi(2)).sum::<f64>() / n;
            out.insert(
                (g, f),
                MeanStd {
                    mean,
                    std: var.sqrt(),
                    count: rows.len(),
                },
            );
        }
    }
    Ok(out)
}

pub fn write_features_csv(rows: &[FeatureVector], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<features csv>", e))?;
    Ok(())
}

/// Read a features CSV; every column of the fixed header must be present.
pub fn read_features_csv(input: impl Read) -> Result<Vec<FeatureVector>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    for col in ["cell_id", "image_id", "group"]
        .into_iter()
        .chain(Feature::ALL.iter().map(|f| f.name()))
    {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::InvalidParameter(format!(
                "features CSV is missing column `{col}`"
            )));
        }
    }
    let rows = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(rows)
}
