//! Seeded synthetic cohorts: rendered H&E-like tiles with ground-truth
//! nuclei, and Gaussian-mixture feature tables with a tunable group overlap.

use image::RgbImage;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

use crate::features::{FeatureMatrix, FeatureVector, NUM_FEATURES};
use crate::rng::{derive, rng_for};
use crate::stain::StainMatrix;
use crate::{CellInstance, Error, Group, RegionImage, Result};

/// Per-mode shift added to the group's base parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeOffset {
    pub radius: f64,
    pub axis_ratio: f64,
    pub intensity: f64,
}

/// Cell population of one group.
///
/// `radius` is the geometric-mean radius `sqrt(a * b)` of the ellipse, so
/// the expected area is `pi * (radius_mean^2 + radius_std^2)`.
/// `axis_ratio` is `a / b >= 1`. `intensity` is the Hematoxylin
/// concentration inside the nucleus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub group: Group,
    pub n_cells_per_image: usize,
    pub radius_mean: f64,
    pub radius_std: f64,
    pub axis_ratio_mean: f64,
    pub axis_ratio_std: f64,
    pub intensity_mean: f64,
    pub intensity_std: f64,
    #[serde(default = "one")]
    pub n_modes: usize,
    /// One entry per mode; missing entries mean no shift.
    #[serde(default)]
    pub mode_offsets: Vec<ModeOffset>,
}

fn one() -> usize {
    1
}

pub const MIN_RADIUS: f64 = 3.0;
pub const MAX_FILL: f64 = 0.30;
pub const NOISE_SIGMA: f64 = 2.0;
/// Background stain concentrations (Hematoxylin, Eosin).
pub const BACKGROUND: (f64, f64) = (0.05, 0.35);
/// Eosin concentration inside nuclei.
pub const NUCLEUS_EOSIN: f64 = 0.1;
/// Minimum free space between the outlines of two cells, in pixels.
pub const CELL_GAP: f64 = 6.0;

impl GroupSpec {
    /// Size and shape targets of the mutant group: area 448.28 ± 162.88,
    /// perimeter about 76, max distance about 28, darker nuclei.
    pub fn mut_preset() -> Self {
        GroupSpec {
            group: Group::Mut,
            n_cells_per_image: 40,
            radius_mean: 11.74,
            radius_std: 2.21,
            axis_ratio_mean: 1.4,
            axis_ratio_std: 0.2,
            intensity_mean: 1.02,
            intensity_std: 0.2,
            n_modes: 1,
            mode_offsets: Vec::new(),
        }
    }

    /// Wildtype targets: area 198.97 ± 82.12, perimeter about 54, max
    /// distance about 22, paler nuclei.
    pub fn wt_preset() -> Self {
        GroupSpec {
            group: Group::Wt,
            n_cells_per_image: 40,
            radius_mean: 7.78,
            radius_std: 1.68,
            axis_ratio_mean: 2.0,
            axis_ratio_std: 0.3,
            intensity_mean: 0.8,
            intensity_std: 0.25,
            n_modes: 1,
            mode_offsets: Vec::new(),
        }
    }

    pub fn preset(group: Group) -> Self {
        match group {
            Group::Mut => Self::mut_preset(),
            Group::Wt => Self::wt_preset(),
        }
    }

    fn offset(&self, mode: usize) -> ModeOffset {
        self.mode_offsets.get(mode).copied().unwrap_or_default()
    }

    /// Largest semi-major axis the sampler can produce.
    fn max_semi_axis(&self) -> f64 {
        let (r, q) = (0..self.n_modes.max(1)).fold((0.0f64, 0.0f64), |(r, q), m| {
            let o = self.offset(m);
            (
                r.max(self.radius_mean + o.radius),
                q.max(self.axis_ratio_mean + o.axis_ratio),
            )
        });
        (r + 3.0 * self.radius_std) * (q + 3.0 * self.axis_ratio_std).max(1.0).sqrt()
    }

    pub fn validate(&self, image_size: (u32, u32)) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_modes == 0 {
            return bad("n_modes must be at least 1".into());
        }
        if self.mode_offsets.len() > self.n_modes {
            return bad("more mode offsets than modes".into());
        }
        for m in 0..self.n_modes {
            let o = self.offset(m);
            if self.radius_mean + o.radius < MIN_RADIUS {
                return bad(format!("mode {m} radius below {MIN_RADIUS} px"));
            }
            if self.axis_ratio_mean + o.axis_ratio < 1.0 {
                return bad(format!("mode {m} axis ratio below 1"));
            }
        }
        let stds = [self.radius_std, self.axis_ratio_std, self.intensity_std];
        if stds.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return bad("standard deviations must be finite and nonnegative".into());
        }
        let r2 = self.radius_mean.powi(2) + self.radius_std.powi(2);
        let fill = self.n_cells_per_image as f64 * std::f64::consts::PI * r2
            / (image_size.0 as f64 * image_size.1 as f64);
        if fill > MAX_FILL {
            return bad(format!("expected area fill {fill:.2} exceeds {MAX_FILL}"));
        }
        Ok(())
    }
}

/// Parameters a ground-truth cell was drawn with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseParams {
    pub cx: f64,
    pub cy: f64,
    /// Semi-major and semi-minor axes.
    pub a: f64,
    pub b: f64,
    pub theta: f64,
    pub concentration: f64,
}

impl EllipseParams {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u * u + v * v <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthCell {
    pub cell_id: String,
    pub mode: usize,
    pub params: EllipseParams,
    pub area: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthImage {
    pub image_id: String,
    pub group: Group,
    pub cells: Vec<GroundTruthCell>,
    /// Masks in the same order as `cells`; not serialized (the label
    /// raster carries them on disk).
    #[serde(skip)]
    pub masks: Vec<CellInstance>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub images: Vec<GroundTruthImage>,
}

impl GroundTruth {
    pub fn cells(&self) -> impl Iterator<Item = (&GroundTruthImage, &GroundTruthCell)> {
        self.images
            .iter()
            .flat_map(|im| im.cells.iter().map(move |c| (im, c)))
    }
}

fn draw_cell(spec: &GroupSpec, mode: usize, rng: &mut impl Rng) -> (f64, f64, f64, f64) {
    let o = spec.offset(mode);
    let mut normal = |m: f64, s: f64| m + s * rng.sample::<f64, _>(StandardNormal);
    let r = normal(spec.radius_mean + o.radius, spec.radius_std).max(MIN_RADIUS);
    let q = normal(spec.axis_ratio_mean + o.axis_ratio, spec.axis_ratio_std).max(1.0);
    let c = normal(spec.intensity_mean + o.intensity, spec.intensity_std).max(0.3);
    let theta = rng.random_range(0.0..std::f64::consts::PI);
    (r * q.sqrt(), r / q.sqrt(), theta, c)
}

fn render_image(
    spec: &GroupSpec,
    image_id: String,
    size: (u32, u32),
    stains: &StainMatrix,
    seed: u64,
) -> Result<(RegionImage, GroundTruthImage)> {
    let (w, h) = size;
    let mut rng = rng_for(seed, &[0]);
    let n = spec.n_cells_per_image;
    let margin = spec.max_semi_axis() + 2.0;
    if 2.0 * margin >= w.min(h) as f64 {
        return Err(Error::InvalidParameter(format!(
            "image {w}x{h} too small for cells of semi-axis {margin:.1}"
        )));
    }
    let mut placed: Vec<(EllipseParams, usize)> = Vec::with_capacity(n);
    let mut attempts = 0;
    // shapes are drawn once and only positions are retried, so crowding
    // does not bias the size distribution toward small cells
    while placed.len() < n {
        let mode = rng.random_range(0..spec.n_modes);
        let (a, b, theta, c) = draw_cell(spec, mode, &mut rng);
        loop {
            if attempts >= 10 * n {
                return Err(Error::PlacementError {
                    placed: placed.len(),
                    requested: n,
                });
            }
            attempts += 1;
            let cx = rng.random_range(margin..w as f64 - margin);
            let cy = rng.random_range(margin..h as f64 - margin);
            // circumscribed circles keep outlines CELL_GAP apart
            let free = placed.iter().all(|(p, _)| {
                let d = ((p.cx - cx).powi(2) + (p.cy - cy).powi(2)).sqrt();
                d >= p.a + a + CELL_GAP
            });
            if free {
                let params = EllipseParams {
                    cx,
                    cy,
                    a,
                    b,
                    theta,
                    concentration: c,
                };
                placed.push((params, mode));
                break;
            }
        }
    }
    let (bg_h, bg_e) = BACKGROUND;
    let mut conc_h = vec![bg_h; (w * h) as usize];
    let mut conc_e = vec![bg_e; (w * h) as usize];
    let mut cells = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    for (k, (p, mode)) in placed.iter().enumerate() {
        let x0 = (p.cx - p.a).floor().max(0.0) as u32;
        let x1 = ((p.cx + p.a).ceil() as u32).min(w - 1);
        let y0 = (p.cy - p.a).floor().max(0.0) as u32;
        let y1 = ((p.cy + p.a).ceil() as u32).min(h - 1);
        let mut px = Vec::new();
        for y in y0..=y1 {
            for x in x0..=x1 {
                if p.contains(x as f64, y as f64) {
                    px.push((x, y));
                    let i = (y * w + x) as usize;
                    conc_h[i] = p.concentration;
                    conc_e[i] = NUCLEUS_EOSIN;
                }
            }
        }
        let cell_id = crate::imagecore::io_cell_id(&image_id, k + 1);
        let cell = CellInstance::from_pixels(cell_id.clone(), image_id.clone(), px)?;
        cells.push(GroundTruthCell {
            cell_id,
            mode: *mode,
            params: *p,
            area: cell.area(),
        });
        masks.push(cell);
    }
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("positive sigma");
    let mut noise_rng = rng_for(seed, &[1]);
    let mut pixels = RgbImage::new(w, h);
    for (i, px) in pixels.pixels_mut().enumerate() {
        let v = stains.render(conc_h[i], conc_e[i]);
        px.0 = v.map(|c| (c + noise.sample(&mut noise_rng)).round().clamp(0.0, 255.0) as u8);
    }
    let region = RegionImage::new(image_id.clone(), spec.group, pixels)?;
    Ok((
        region,
        GroundTruthImage {
            image_id,
            group: spec.group,
            cells,
            masks,
        },
    ))
}

/// Render `n_images` tiles per spec. Image ids are `<GROUP>_<index>`.
pub fn synth_cohort(
    specs: &[GroupSpec],
    n_images: usize,
    image_size: (u32, u32),
    stains: &StainMatrix,
    seed: u64,
) -> Result<(Vec<RegionImage>, GroundTruth)> {
    for s in specs {
        s.validate(image_size)?;
    }
    let jobs: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|s| (0..n_images).map(move |i| (s, i)))
        .collect();
    let rendered: Vec<(RegionImage, GroundTruthImage)> = jobs
        .par_iter()
        .map(|&(s, i)| {
            let spec = &specs[s];
            let id = format!("{}_{:03}", spec.group, i);
            render_image(
                spec,
                id,
                image_size,
                stains,
                derive(seed, &[s as u64, i as u64]),
            )
        })
        .collect::<Result<_>>()?;
    let (images, truth) = rendered.into_iter().unzip();
    Ok((images, GroundTruth { images: truth }))
}

/// Feature-space cohort with planted modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFeatures {
    pub matrix: FeatureMatrix,
    pub labels: Vec<usize>,
    /// Planted mode index of each row within its group.
    pub modes: Vec<usize>,
}

/// Distance between the two group means along the first axis for a given
/// overlap. The Bayes error of the two unit-variance groups is
/// `overlap / 2`.
pub fn group_separation(overlap: f64) -> f64 {
    if overlap <= 0.0 {
        return MAX_SEPARATION;
    }
    if overlap >= 1.0 {
        return 0.0;
    }
    let n = StatNormal::new(0.0, 1.0).expect("unit normal");
    (-2.0 * n.inverse_cdf(overlap / 2.0)).min(MAX_SEPARATION)
}

pub const MAX_SEPARATION: f64 = 8.0;
/// Distance of each planted mode from the group centre.
pub const MODE_SPREAD: f64 = 6.0;

/// Component `k` of the unit direction of mode `m` over the non-group
/// axes: an orthonormal cosine basis, so every axis carries a share of
/// every mode and per-feature standardization keeps the mixture's shape.
fn mode_direction(m: usize, k: usize) -> f64 {
    let n = NUM_FEATURES - 1;
    let f = (m + 1) % n;
    if f == 0 {
        return (1.0 / n as f64).sqrt();
    }
    let n = n as f64;
    (2.0 / n).sqrt() * (std::f64::consts::PI * f as f64 * (k as f64 + 0.5) / n).cos()
}

/// Sample `n_per_group` 10-D rows per group spec. Feature 0 carries the group
/// difference; mode `m` of a group sits at `MODE_SPREAD` along
/// [`mode_direction`] `m` in the other nine axes. Every coordinate has unit
/// within-mode variance.
pub fn synth_features(
    specs: &[GroupSpec],
    n_per_group: usize,
    overlap: f64,
    seed: u64,
) -> Result<SyntheticFeatures> {
    if !(0.0..=1.0).contains(&overlap) {
        return Err(Error::InvalidParameter(format!(
            "overlap {overlap} outside [0, 1]"
        )));
    }
    if specs
        .iter()
        .any(|s| s.n_modes == 0 || s.n_modes >= NUM_FEATURES)
    {
        return Err(Error::InvalidParameter(format!(
            "n_modes must lie in 1..{NUM_FEATURES}"
        )));
    }
    let sep = group_separation(overlap);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut modes = Vec::new();
    for (s, spec) in specs.iter().enumerate() {
        let mut rng = rng_for(seed, &[s as u64]);
        let side = if spec.group == Group::Mut { 0.5 } else { -0.5 };
        for i in 0..n_per_group {
            let mode = i % spec.n_modes;
            let mut v = [0.0; NUM_FEATURES];
            for (k, x) in v.iter_mut().enumerate() {
                *x = rng.sample::<f64, _>(StandardNormal);
                if k == 0 {
                    *x += side * sep;
                }
            }
            if spec.n_modes > 1 {
                for (k, x) in v[1..].iter_mut().enumerate() {
                    *x += MODE_SPREAD * mode_direction(mode, k);
                }
            }
            let id = format!("syn_{}_{:05}", spec.group, i);
            rows.push(FeatureVector::from_values(id, "synthetic", spec.group, v));
            labels.push(spec.group.class_index());
            modes.push(mode);
        }
    }
    Ok(SyntheticFeatures {
        matrix: FeatureMatrix::new(rows),
        labels,
        modes,
    })
}
