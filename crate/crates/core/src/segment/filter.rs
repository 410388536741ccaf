//! Separable Gaussian-derivative filtering with reflected borders.

use rayon::prelude::*;

/// Sampled Gaussian and its first two derivatives, truncated at 4 sigma.
pub(crate) struct GaussianKernels {
    pub g: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl GaussianKernels {
    pub fn new(sigma: f64) -> Self {
        let radius = (4.0 * sigma).ceil() as usize;
        let s2 = sigma * sigma;
        let xs: Vec<f64> = (0..=2 * radius).map(|i| i as f64 - radius as f64).collect();
        let raw: Vec<f64> = xs.iter().map(|x| (-x * x / (2.0 * s2)).exp()).collect();
        let norm: f64 = raw.iter().sum();
        let g: Vec<f64> = raw.iter().map(|v| v / norm).collect();
        let d1: Vec<f64> = xs.iter().zip(&g).map(|(x, g)| -x / s2 * g).collect();
        let mut d2: Vec<f64> = xs
            .iter()
            .zip(&g)
            .map(|(x, g)| (x * x / (s2 * s2) - 1.0 / s2) * g)
            .collect();
        // flat signals must give exactly zero curvature
        let mean = d2.iter().sum::<f64>() / d2.len() as f64;
        d2.iter_mut().for_each(|v| *v -= mean);
        GaussianKernels { g, d1, d2 }
    }
}

/// Mirror an index into `0..n` (`d c b a | a b c d | d c b a`).
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

pub(crate) fn convolve_rows(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let line = &src[y * w..(y + 1) * w];
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                acc += kv * line[reflect(x as isize + j as isize - r, w)];
            }
            *o = acc;
        }
    });
    out
}

pub(crate) fn convolve_cols(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (j, kv) in k.iter().enumerate() {
            let sy = reflect(y as isize + j as isize - r, h);
            let line = &src[sy * w..(sy + 1) * w];
            for (o, s) in row.iter_mut().zip(line) {
                *o += kv * s;
            }
        }
    });
    out
}

/// Second derivatives `(Lxx, Lxy, Lyy)` of the Gaussian-smoothed image.
pub(crate) fn second_derivatives(
    src: &[f64],
    w: usize,
    h: usize,
    sigma: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let k = GaussianKernels::new(sigma);
    let gx = convolve_rows(src, w, h, &k.g);
    let d1x = convolve_rows(src, w, h, &k.d1);
    let d2x = convolve_rows(src, w, h, &k.d2);
    let lxx = convolve_cols(&d2x, w, h, &k.g);
    let lxy = convolve_cols(&d1x, w, h, &k.d1);
    let lyy = convolve_cols(&gx, w, h, &k.d2);
    (lxx, lxy, lyy)
}
