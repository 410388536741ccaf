//! Stain handling: LAB mean/std normalization and Lambert-Beer color
//! deconvolution.
//!
//! LAB conversion goes through linear sRGB and CIE XYZ with the D65 white
//! point. Optical density uses `OD = -log10((v + 1) / 256)` so that a
//! saturated-white pixel (255) has zero density and black stays finite.

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::imagecore::{RegionImage, ScalarImage, ValueKind};
use crate::{Error, Result};

/// Floor applied to a channel's standard deviation.
pub const STD_EPS: f64 = 1e-6;

/// Incident light level of the optical-density model.
pub const INCIDENT: f64 = 256.0;

/// Condition number of `[H|E]` above which deconvolution is refused.
pub const MAX_CONDITION: f64 = 1e6;

const WHITE_D65: [f64; 3] = [0.95047, 1.0, 1.08883];

const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.240_454_2, -1.537_138_5, -0.498_531_4],
    [-0.969_266_0, 1.876_010_8, 0.041_556_0],
    [0.055_643_4, -0.204_025_9, 1.057_225_2],
];

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

const DELTA: f64 = 6.0 / 29.0;

fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// 8-bit sRGB to CIE L*a*b* (D65).
pub fn rgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = rgb.map(|c| srgb_to_linear(c as f64 / 255.0));
    let xyz = mat_vec(&RGB_TO_XYZ, lin);
    let fx = lab_f(xyz[0] / WHITE_D65[0]);
    let fy = lab_f(xyz[1] / WHITE_D65[1]);
    let fz = lab_f(xyz[2] / WHITE_D65[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// CIE L*a*b* (D65) back to 8-bit sRGB, rounded and clamped.
pub fn lab_to_rgb(lab: [f64; 3]) -> [u8; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [
        WHITE_D65[0] * lab_f_inv(fx),
        WHITE_D65[1] * lab_f_inv(fy),
        WHITE_D65[2] * lab_f_inv(fz),
    ];
    let lin = mat_vec(&XYZ_TO_RGB, xyz);
    lin.map(|c| {
        (linear_to_srgb(c.clamp(0.0, 1.0)) * 255.0)
            .round()
            .clamp(0.0, 255.0) as u8
    })
}

/// Per-channel LAB mean and standard deviation of an image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl LabStats {
    pub fn new(mean: [f64; 3], std: [f64; 3]) -> Result<Self> {
        if mean.iter().chain(&std).any(|v| !v.is_finite()) || std.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "LAB stats need finite means and positive stds, got {mean:?} / {std:?}"
            )));
        }
        Ok(LabStats { mean, std })
    }
}

fn lab_sums(img: &RgbImage) -> (f64, [f64; 3], [f64; 3]) {
    // Row partial sums combined in row order keep the result independent of
    // thread scheduling.
    let rows: Vec<([f64; 3], [f64; 3])> = img
        .par_chunks(img.width() as usize * 3)
        .map(|row| {
            let mut s = [0.0; 3];
            let mut s2 = [0.0; 3];
            for px in row.chunks_exact(3) {
                let lab = rgb_to_lab([px[0], px[1], px[2]]);
                for c in 0..3 {
                    s[c] += lab[c];
                    s2[c] += lab[c] * lab[c];
                }
            }
            (s, s2)
        })
        .collect();
    let mut s = [0.0; 3];
    let mut s2 = [0.0; 3];
    for (a, b) in rows {
        for c in 0..3 {
            s[c] += a[c];
            s2[c] += b[c];
        }
    }
    ((img.width() * img.height()) as f64, s, s2)
}

pub fn compute_lab_stats(img: &RegionImage) -> LabStats {
    let (n, s, s2) = lab_sums(&img.pixels);
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for c in 0..3 {
        mean[c] = s[c] / n;
        let var = (s2[c] / n - mean[c] * mean[c]).max(0.0);
        // float noise on constant channels lands around 1e-7
        std[c] = if var.sqrt() < 1e-4 {
            STD_EPS
        } else {
            var.sqrt()
        };
    }
    LabStats { mean, std }
}

/// Map each LAB channel to the target mean/std and convert back to RGB.
pub fn normalize_to_target(img: &RegionImage, target: &LabStats) -> RegionImage {
    let src = compute_lab_stats(img);
    let scale: [f64; 3] = std::array::from_fn(|c| target.std[c] / src.std[c]);
    let mut out = img.pixels.clone();
    let w = img.width() as usize;
    out.par_chunks_mut(w * 3).for_each(|row| {
        for px in row.chunks_exact_mut(3) {
            let lab = rgb_to_lab([px[0], px[1], px[2]]);
            let mapped: [f64; 3] =
                std::array::from_fn(|c| (lab[c] - src.mean[c]) * scale[c] + target.mean[c]);
            px.copy_from_slice(&lab_to_rgb(mapped));
        }
    });
    img.with_pixels(out)
}

/// Two unit absorption directions in RGB optical-density space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StainMatrix {
    pub hematoxylin: [f64; 3],
    pub eosin: [f64; 3],
}

fn normalized(v: [f64; 3]) -> Result<[f64; 3]> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if v.iter().any(|&x| x < 0.0 || !x.is_finite()) || n == 0.0 {
        return Err(Error::InvalidParameter(format!(
            "stain vector {v:?} must be nonnegative and nonzero"
        )));
    }
    Ok(v.map(|x| x / n))
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl Default for StainMatrix {
    fn default() -> Self {
        StainMatrix::new([0.650, 0.704, 0.286], [0.072, 0.990, 0.105])
            .expect("default stain vectors are valid")
    }
}

impl StainMatrix {
    /// Columns are rescaled to unit length.
    pub fn new(hematoxylin: [f64; 3], eosin: [f64; 3]) -> Result<Self> {
        Ok(StainMatrix {
            hematoxylin: normalized(hematoxylin)?,
            eosin: normalized(eosin)?,
        })
    }

    /// Ratio of the singular values of the 3x2 matrix `[H|E]`.
    pub fn condition_number(&self) -> f64 {
        let (h, e) = (self.hematoxylin, self.eosin);
        // Gram matrix [[1, c], [c, 1]] for unit columns has eigenvalues 1 ± c.
        let c = dot(h, e).abs();
        if c >= 1.0 {
            return f64::INFINITY;
        }
        ((1.0 + c) / (1.0 - c)).sqrt()
    }

    /// Rows of the pseudo-inverse mapping an OD vector to (c_H, c_E).
    ///
    /// The basis is completed with the residual direction `H x E`; the first
    /// two rows of the inverse of `[H|E|R]` are returned.
    pub fn unmixing_rows(&self) -> Result<[[f64; 3]; 2]> {
        let cond = self.condition_number();
        if !(cond <= MAX_CONDITION) {
            return Err(Error::SingularStains(cond));
        }
        let (h, e) = (self.hematoxylin, self.eosin);
        let r = cross(h, e);
        // inverse of the column matrix [h e r]: rows are (e x r, r x h, h x e) / det
        let det = dot(h, cross(e, r));
        let row_h = cross(e, r).map(|v| v / det);
        let row_e = cross(r, h).map(|v| v / det);
        Ok([row_h, row_e])
    }

    /// Optical density of a pixel with the given stain concentrations.
    pub fn forward_od(&self, c_h: f64, c_e: f64) -> [f64; 3] {
        std::array::from_fn(|c| self.hematoxylin[c] * c_h + self.eosin[c] * c_e)
    }

    /// Continuous RGB value of a pixel with the given concentrations,
    /// `v = 256 * 10^(-OD) - 1`.
    pub fn render(&self, c_h: f64, c_e: f64) -> [f64; 3] {
        self.forward_od(c_h, c_e).map(rgb_from_od)
    }
}

#[inline]
pub fn optical_density(v: f64) -> f64 {
    -((v + 1.0) / INCIDENT).log10()
}

#[inline]
pub fn rgb_from_od(od: f64) -> f64 {
    INCIDENT * 10f64.powf(-od) - 1.0
}

/// Unmix one pixel into nonnegative (c_H, c_E).
#[inline]
pub fn unmix_pixel(rows: &[[f64; 3]; 2], rgb: [f64; 3]) -> (f64, f64) {
    let od = rgb.map(optical_density);
    let h = dot(rows[0], od).max(0.0);
    let e = dot(rows[1], od).max(0.0);
    (h, e)
}

/// Separate an RGB tile into Hematoxylin and Eosin concentration channels.
pub fn deconvolve(img: &RegionImage, stains: &StainMatrix) -> Result<(ScalarImage, ScalarImage)> {
    let rows = stains.unmixing_rows()?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pairs: Vec<(f64, f64)> = img
        .pixels
        .par_chunks(w * 3)
        .flat_map_iter(|row| {
            row.chunks_exact(3)
                .map(|p| unmix_pixel(&rows, [p[0] as f64, p[1] as f64, p[2] as f64]))
                .collect::<Vec<_>>()
        })
        .collect();
    let (hv, ev): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    Ok((
        ScalarImage::new(w, h, hv, ValueKind::OpticalDensity)?,
        ScalarImage::new(w, h, ev, ValueKind::OpticalDensity)?,
    ))
}
