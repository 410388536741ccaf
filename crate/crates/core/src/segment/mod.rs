//! Nucleus segmentation on the Hematoxylin concentration channel.
//!
//! The channel is smoothed at several Gaussian scales; at each scale the
//! scale-normalized Hessian is negated (nuclei are bright, so their raw
//! Hessian is negative definite) and its eigenvalues `l1 <= l2` feed the
//! blob likelihood
//!
//! ```text
//! f = (1 - exp(-(l1/l2)^2 / (2 alpha^2))) * (1 - exp(-(l1^2 + l2^2) / (2 beta^2)))
//! ```
//!
//! which is zero unless `0 < l1 <= l2`. The per-pixel maximum over scales is
//! thresholded with hysteresis and the resulting components are cleaned up
//! by [`postprocess`].

mod filter;
mod post;

use serde::{Deserialize, Serialize};

use crate::imagecore::{BinaryMask, CellInstance, Connectivity, ScalarImage, ValueKind};
use crate::{Error, Result};

pub use post::{postprocess, smooth_component};

/// Knobs for enhancement, thresholding and post-processing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhancementParams {
    /// Sensitivity of the eigenvalue-ratio term.
    pub alpha: f64,
    /// Sensitivity of the curvature-magnitude term. `None` picks half of the
    /// 99.5th percentile of `sqrt(l1^2 + l2^2)` over all scales and pixels.
    pub beta: Option<f64>,
    /// Gaussian scales in pixels, strictly increasing.
    pub sigmas: Vec<f64>,
    pub t_low: f64,
    pub t_high: f64,
    pub min_area_px: usize,
    /// Candidates whose mean Hematoxylin concentration is below this are too
    /// pale to be nuclei.
    pub min_mean_concentration: f64,
    /// Number of Fourier harmonics kept on each side of DC when smoothing
    /// the contour is `smoothing_cutoff / 2`.
    pub smoothing_cutoff: usize,
    /// Components less circular than this are treated as clumps and dropped.
    pub min_circularity: f64,
    /// Re-fit each candidate to the pixels at least halfway between the
    /// image's background concentration and the candidate's median.
    pub refine: bool,
    /// How far refinement may grow a candidate, in pixels.
    pub refine_reach_px: usize,
}

impl Default for EnhancementParams {
    fn default() -> Self {
        EnhancementParams {
            alpha: 0.5,
            beta: None,
            sigmas: vec![2.0, 3.0, 4.0, 6.0, 8.0],
            t_low: 0.05,
            t_high: 0.15,
            min_area_px: 30,
            min_mean_concentration: 0.15,
            smoothing_cutoff: 16,
            min_circularity: 0.25,
            refine: true,
            refine_reach_px: 4,
        }
    }
}

impl EnhancementParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if let Some(b) = self.beta {
            if !(b > 0.0) {
                return bad(format!("beta must be positive, got {b}"));
            }
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|&s| !(s >= 0.5)) {
            return bad(format!(
                "sigmas must be nonempty and >= 0.5: {:?}",
                self.sigmas
            ));
        }
        if self.sigmas.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!(
                "sigmas must be strictly increasing: {:?}",
                self.sigmas
            ));
        }
        if !(0.0 < self.t_low && self.t_low < self.t_high && self.t_high < 1.0) {
            return bad(format!(
                "need 0 < t_low < t_high < 1, got {} / {}",
                self.t_low, self.t_high
            ));
        }
        if self.min_area_px < 4 {
            return bad(format!(
                "min_area_px must be >= 4, got {}",
                self.min_area_px
            ));
        }
        if self.smoothing_cutoff < 2 {
            return bad("smoothing_cutoff must be >= 2".into());
        }
        Ok(())
    }
}

/// Ordered eigenvalues of the negated, scale-normalized Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianEigenField {
    pub lambda1: ScalarImage,
    pub lambda2: ScalarImage,
}

/// Eigenvalues of the symmetric matrix `[[a, b], [b, c]]`, ascending.
#[inline]
pub fn symmetric_eigen(a: f64, b: f64, c: f64) -> (f64, f64) {
    let mean = 0.5 * (a + c);
    let d = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    (mean - d, mean + d)
}

pub fn hessian_eigen(h: &ScalarImage, sigma: f64) -> Result<HessianEigenField> {
    if !(sigma >= 0.5) {
        return Err(Error::InvalidParameter(format!(
            "sigma must be >= 0.5, got {sigma}"
        )));
    }
    let (w, ht) = (h.width(), h.height());
    let (lxx, lxy, lyy) = filter::second_derivatives(h.values(), w, ht, sigma);
    let s2 = sigma * sigma;
    let mut l1 = Vec::with_capacity(w * ht);
    let mut l2 = Vec::with_capacity(w * ht);
    for i in 0..w * ht {
        let (a, b) = symmetric_eigen(-s2 * lxx[i], -s2 * lxy[i], -s2 * lyy[i]);
        l1.push(a);
        l2.push(b);
    }
    Ok(HessianEigenField {
        lambda1: ScalarImage::new(w, ht, l1, ValueKind::Intensity)?,
        lambda2: ScalarImage::new(w, ht, l2, ValueKind::Intensity)?,
    })
}

/// Blob likelihood for one eigenvalue pair (`l1 <= l2`).
#[inline]
pub fn blob_response(l1: f64, l2: f64, alpha: f64, beta: f64) -> f64 {
    if l1 <= 0.0 || l2 <= 0.0 {
        return 0.0;
    }
    let ratio = l1 / l2;
    let shape = 1.0 - (-(ratio * ratio) / (2.0 * alpha * alpha)).exp();
    let strength = 1.0 - (-(l1 * l1 + l2 * l2) / (2.0 * beta * beta)).exp();
    shape * strength
}

fn robust_beta(fields: &[HessianEigenField]) -> f64 {
    let mut norms: Vec<f64> = fields
        .iter()
        .flat_map(|f| {
            f.lambda1
                .values()
                .iter()
                .zip(f.lambda2.values())
                .map(|(a, b)| (a * a + b * b).sqrt())
        })
        .collect();
    if norms.is_empty() {
        return 1.0;
    }
    let k = ((norms.len() - 1) as f64 * 0.995).round() as usize;
    let (_, v, _) = norms.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    let beta = 0.5 * *v;
    if beta > 0.0 {
        beta
    } else {
        1.0
    }
}

/// Maximum blob likelihood over all scales, in `[0, 1)`.
pub fn enhance(h: &ScalarImage, p: &EnhancementParams) -> Result<ScalarImage> {
    p.validate()?;
    let fields: Vec<HessianEigenField> = p
        .sigmas
        .iter()
        .map(|&s| hessian_eigen(h, s))
        .collect::<Result<_>>()?;
    let beta = p.beta.unwrap_or_else(|| robust_beta(&fields));
    let mut out = vec![0.0f64; h.width() * h.height()];
    for f in &fields {
        for ((o, &a), &b) in out
            .iter_mut()
            .zip(f.lambda1.values())
            .zip(f.lambda2.values())
        {
            *o = o.max(blob_response(a, b, p.alpha, beta));
        }
    }
    ScalarImage::new(h.width(), h.height(), out, ValueKind::Likelihood)
}

/// Keep 8-connected components of `{v >= t_low}` that reach `t_high`.
pub fn hysteresis(likelihood: &ScalarImage, t_low: f64, t_high: f64) -> Result<BinaryMask> {
    if t_low > t_high {
        return Err(Error::InvalidParameter(format!(
            "t_low {t_low} must not exceed t_high {t_high}"
        )));
    }
    let (w, h) = (likelihood.width(), likelihood.height());
    let weak = BinaryMask::from_fn(w, h, |x, y| likelihood.get(x, y) >= t_low);
    let mut out = BinaryMask::new(w, h);
    for comp in weak.components(Connectivity::Eight) {
        if comp
            .iter()
            .any(|&(x, y)| likelihood.get(x as usize, y as usize) >= t_high)
        {
            for (x, y) in comp {
                out.set(x as usize, y as usize, true);
            }
        }
    }
    Ok(out)
}

/// Enhancement, hysteresis and post-processing in one call.
pub fn segment_hematoxylin(
    h: &ScalarImage,
    image_id: &str,
    p: &EnhancementParams,
) -> Result<Vec<CellInstance>> {
    let likelihood = enhance(h, p)?;
    let mask = hysteresis(&likelihood, p.t_low, p.t_high)?;
    postprocess(&mask, h, image_id, p)
}
