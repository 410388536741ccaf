use std::collections::HashSet;
use std::f64::consts::PI;

use crate::features::contour_perimeter;
use crate::imagecore::{trace_boundary, BinaryMask, CellInstance, Connectivity, ScalarImage};
use crate::segment::EnhancementParams;
use crate::Result;

/// Bounding box of a pixel list padded by `pad`, clipped to the raster.
fn padded_box(px: &[(u32, u32)], pad: u32, w: usize, h: usize) -> (u32, u32, u32, u32) {
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for &(x, y) in px {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    (
        x0.saturating_sub(pad),
        y0.saturating_sub(pad),
        (x1 + pad).min(w as u32 - 1),
        (y1 + pad).min(h as u32 - 1),
    )
}

/// Fill interior holes of a pixel set (holes are background regions that do
/// not reach the set's padded bounding box).
pub(crate) fn fill_component_holes(px: &[(u32, u32)]) -> Vec<(u32, u32)> {
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for &(x, y) in px {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let (w, h) = ((x1 - x0 + 3) as usize, (y1 - y0 + 3) as usize);
    let local: Vec<(u32, u32)> = px.iter().map(|&(x, y)| (x - x0 + 1, y - y0 + 1)).collect();
    let filled = BinaryMask::from_pixels(w, h, &local).fill_holes();
    filled
        .pixels()
        .into_iter()
        .map(|(x, y)| (x + x0 - 1, y + y0 - 1))
        .collect()
}

/// Low-pass the outer contour of `px` by keeping harmonics `-m..=m` of its
/// complex Fourier series (`m = cutoff / 2`), push the curve half a pixel
/// outward (the traced contour runs through boundary pixel centres) and
/// return the pixel centres enclosed by the result.
///
/// Contours too short to carry more than `2m + 1` samples are returned
/// unchanged.
pub fn smooth_component(px: &[(u32, u32)], cutoff: usize) -> Vec<(u32, u32)> {
    let contour = trace_boundary(px);
    let n = contour.len();
    let m = (cutoff / 2).max(1);
    if n <= 2 * m + 1 {
        return px.to_vec();
    }
    let mut coef = Vec::with_capacity(2 * m + 1);
    for k in -(m as i64)..=(m as i64) {
        let (mut re, mut im) = (0.0, 0.0);
        for (j, &(x, y)) in contour.iter().enumerate() {
            let phi = -2.0 * PI * k as f64 * j as f64 / n as f64;
            let (s, c) = phi.sin_cos();
            re += x as f64 * c - y as f64 * s;
            im += x as f64 * s + y as f64 * c;
        }
        coef.push((k as f64, re / n as f64, im / n as f64));
    }
    let samples = (4 * n).max(64);
    let mut curve = Vec::with_capacity(samples);
    let mut tangent = Vec::with_capacity(samples);
    for j in 0..samples {
        let t = 2.0 * PI * j as f64 / samples as f64;
        let (mut x, mut y, mut dx, mut dy) = (0.0, 0.0, 0.0, 0.0);
        for &(k, re, im) in &coef {
            let (s, c) = (k * t).sin_cos();
            x += re * c - im * s;
            y += re * s + im * c;
            dx += k * (-re * s - im * c);
            dy += k * (re * c - im * s);
        }
        curve.push((x, y));
        tangent.push((dx, dy));
    }
    let signed_area: f64 = (0..samples)
        .map(|j| {
            let (a, b) = (curve[j], curve[(j + 1) % samples]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        * 0.5;
    let orient = if signed_area >= 0.0 { 1.0 } else { -1.0 };
    let offset: Vec<(f64, f64)> = curve
        .iter()
        .zip(&tangent)
        .map(|(&(x, y), &(dx, dy))| {
            let len = (dx * dx + dy * dy).sqrt();
            if len < 1e-12 {
                (x, y)
            } else {
                (x + 0.5 * orient * dy / len, y - 0.5 * orient * dx / len)
            }
        })
        .collect();
    rasterize_polygon(&offset)
}

/// Pixel centres inside a polygon under the even-odd rule.
pub(crate) fn rasterize_polygon(poly: &[(f64, f64)]) -> Vec<(u32, u32)> {
    let ymin = poly.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let ymax = poly.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::new();
    let y_start = ymin.ceil().max(0.0) as i64;
    let y_end = ymax.floor() as i64;
    let mut xs = Vec::new();
    for y in y_start..=y_end {
        let yc = y as f64;
        xs.clear();
        for i in 0..poly.len() {
            let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
            if (a.1 <= yc) != (b.1 <= yc) {
                xs.push(a.0 + (yc - a.1) * (b.0 - a.0) / (b.1 - a.1));
            }
        }
        xs.sort_by(|a, b| a.total_cmp(b));
        for pair in xs.chunks_exact(2) {
            let x_start = pair[0].ceil().max(0.0) as i64;
            let x_end = pair[1].floor() as i64;
            for x in x_start..=x_end {
                out.push((x as u32, y as u32));
            }
        }
    }
    out.sort_unstable_by_key(|&(x, y)| (y, x));
    out.dedup();
    out
}

fn largest_component4(px: &[(u32, u32)], w: usize, h: usize) -> Vec<(u32, u32)> {
    if px.is_empty() {
        return Vec::new();
    }
    let (x0, y0, x1, y1) = padded_box(px, 0, w, h);
    let (lw, lh) = ((x1 - x0 + 1) as usize, (y1 - y0 + 1) as usize);
    let local: Vec<(u32, u32)> = px.iter().map(|&(x, y)| (x - x0, y - y0)).collect();
    let comps = BinaryMask::from_pixels(lw, lh, &local).components(Connectivity::Four);
    comps
        .into_iter()
        .max_by_key(|c| c.len())
        .map(|c| c.into_iter().map(|(x, y)| (x + x0, y + y0)).collect())
        .unwrap_or_default()
}

/// Median of the concentration image, taken as the background level.
fn background_level(h: &ScalarImage) -> f64 {
    let mut v = h.values().to_vec();
    let k = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    *m
}

/// Pixels within `reach` steps (4-connected) of `comp` whose concentration
/// is at least halfway from `background` to the median over `comp`;
/// largest 4-connected piece. `allowed` vetoes pixels owned by others.
fn refine_component(
    comp: &[(u32, u32)],
    h: &ScalarImage,
    background: f64,
    reach: usize,
    allowed: impl Fn(u32, u32) -> bool,
) -> Vec<(u32, u32)> {
    let mut inside: Vec<f64> = comp
        .iter()
        .map(|&(x, y)| h.get(x as usize, y as usize))
        .collect();
    let k = inside.len() / 2;
    let (_, core, _) = inside.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    if *core <= background {
        return comp.to_vec();
    }
    let level = 0.5 * (background + *core);
    let (w, hh) = (h.width(), h.height());
    let (x0, y0, x1, y1) = padded_box(comp, reach as u32, w, hh);
    let (lw, lh) = ((x1 - x0 + 1) as usize, (y1 - y0 + 1) as usize);
    let mut depth = vec![usize::MAX; lw * lh];
    let mut queue = std::collections::VecDeque::new();
    for &(x, y) in comp {
        let i = (y - y0) as usize * lw + (x - x0) as usize;
        depth[i] = 0;
        queue.push_back((x - x0, y - y0));
    }
    while let Some((x, y)) = queue.pop_front() {
        let d = depth[y as usize * lw + x as usize];
        if d == reach {
            continue;
        }
        let nbrs = [
            (x.wrapping_sub(1), y),
            (x + 1, y),
            (x, y.wrapping_sub(1)),
            (x, y + 1),
        ];
        for (nx, ny) in nbrs {
            if (nx as usize) < lw && (ny as usize) < lh {
                let j = ny as usize * lw + nx as usize;
                if depth[j] == usize::MAX {
                    depth[j] = d + 1;
                    queue.push_back((nx, ny));
                }
            }
        }
    }
    let mut keep = Vec::new();
    for ly in 0..lh {
        for lx in 0..lw {
            let (x, y) = (lx as u32 + x0, ly as u32 + y0);
            if depth[ly * lw + lx] != usize::MAX
                && allowed(x, y)
                && h.get(x as usize, y as usize) >= level
            {
                keep.push((x, y));
            }
        }
    }
    largest_component4(&keep, w, hh)
}

fn circularity(px: &[(u32, u32)]) -> f64 {
    let p = contour_perimeter(&trace_boundary(px));
    4.0 * PI * px.len() as f64 / (p * p)
}

/// Turn a binary candidate mask into cells.
///
/// Components (8-connected) are dropped when smaller than `min_area_px`,
/// paler than `min_mean_concentration`, touching the raster border or less
/// circular than `min_circularity`. With `refine` set, each candidate is
/// re-fit to its half-maximum concentration level within
/// `refine_reach_px`. Survivors get their holes filled and
/// their contour Fourier-smoothed; smoothing never moves a cell onto pixels
/// of another candidate. Cell ids are `<image_id>_<k:05>` with `k` counting
/// survivors in raster order of their first pixel.
pub fn postprocess(
    mask: &BinaryMask,
    original_h: &ScalarImage,
    image_id: &str,
    p: &EnhancementParams,
) -> Result<Vec<CellInstance>> {
    p.validate()?;
    let (w, h) = (mask.width(), mask.height());
    let comps = mask.components(Connectivity::Eight);
    let mut owner = vec![u32::MAX; w * h];
    for (ci, comp) in comps.iter().enumerate() {
        for &(x, y) in comp {
            owner[y as usize * w + x as usize] = ci as u32;
        }
    }
    let mut claimed: HashSet<(u32, u32)> = HashSet::new();
    let mut cells = Vec::new();
    let background = background_level(original_h);
    for (ci, comp) in comps.iter().enumerate() {
        if comp.len() < p.min_area_px {
            continue;
        }
        let mean_h = comp
            .iter()
            .map(|&(x, y)| original_h.get(x as usize, y as usize))
            .sum::<f64>()
            / comp.len() as f64;
        if mean_h < p.min_mean_concentration {
            continue;
        }
        let refined;
        let comp = if p.refine {
            refined = refine_component(comp, original_h, background, p.refine_reach_px, |x, y| {
                let o = owner[y as usize * w + x as usize];
                (o == u32::MAX || o == ci as u32) && !claimed.contains(&(x, y))
            });
            if refined.len() < p.min_area_px {
                continue;
            }
            &refined
        } else {
            comp
        };
        let filled = fill_component_holes(comp);
        let smoothed = smooth_component(&filled, p.smoothing_cutoff);
        let free = |&(x, y): &(u32, u32)| {
            (x as usize) < w
                && (y as usize) < h
                && {
                    let o = owner[y as usize * w + x as usize];
                    o == u32::MAX || o == ci as u32
                }
                && !claimed.contains(&(x, y))
        };
        let allowed: Vec<(u32, u32)> = smoothed.into_iter().filter(free).collect();
        let body = largest_component4(&allowed, w, h);
        if body.is_empty() {
            continue;
        }
        let body: Vec<(u32, u32)> = fill_component_holes(&body)
            .into_iter()
            .filter(free)
            .collect();
        let body = largest_component4(&body, w, h);
        if body.len() < p.min_area_px {
            continue;
        }
        let (bx0, by0, bx1, by1) = padded_box(&body, 0, w, h);
        if bx0 == 0 || by0 == 0 || bx1 as usize + 1 >= w || by1 as usize + 1 >= h {
            continue;
        }
        if circularity(&body) < p.min_circularity {
            continue;
        }
        claimed.extend(body.iter().copied());
        let id = crate::imagecore::io_cell_id(image_id, cells.len() + 1);
        cells.push(CellInstance::from_pixels(id, image_id, body)?);
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::ValueKind;

    fn disk(cx: f64, cy: f64, r: f64, w: usize, h: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| {
            (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r
        })
    }

    fn stained(w: usize, h: usize) -> ScalarImage {
        ScalarImage::filled(w, h, 0.8, ValueKind::OpticalDensity)
    }

    #[test]
    fn single_disk_gives_one_cell() {
        let m = disk(30.0, 30.0, 9.0, 64, 64);
        let cells =
            postprocess(&m, &stained(64, 64), "img", &EnhancementParams::default()).unwrap();
        assert_eq!(cells.len(), 1);
        let c = &cells[0];
        assert_eq!(c.cell_id, "img_00001");
        let filled = BinaryMask::from_pixels(64, 64, &c.mask).fill_holes();
        assert_eq!(filled.count(), c.area());
        let rel = (c.area() as f64 - m.count() as f64).abs() / m.count() as f64;
        assert!(rel < 0.05, "area {} vs {}", c.area(), m.count());
    }

    #[test]
    fn hole_is_filled() {
        let m = disk(30.0, 30.0, 9.0, 64, 64);
        let n = m.count();
        let mut holed = m.clone();
        holed.set(30, 30, false);
        let filled = fill_component_holes(&holed.pixels());
        assert_eq!(filled.len(), n);
        assert_eq!(filled.len(), holed.count() + 1);
    }

    #[test]
    fn square_gets_rounder() {
        let sq: Vec<(u32, u32)> = (10..30)
            .flat_map(|y| (10..30).map(move |x| (x, y)))
            .collect();
        let sm = smooth_component(&sq, 16);
        let p_raw = contour_perimeter(&trace_boundary(&sq));
        let p_sm = contour_perimeter(&trace_boundary(&sm));
        assert!(p_sm < p_raw, "{p_sm} vs {p_raw}");
        let rel = (sm.len() as f64 - sq.len() as f64).abs() / sq.len() as f64;
        assert!(rel < 0.10, "area {} vs {}", sm.len(), sq.len());
    }

    #[test]
    fn filters_small_pale_and_border() {
        let w = 80;
        let mut m = BinaryMask::new(w, w);
        for (x, y) in disk(20.0, 20.0, 2.0, w, w).pixels() {
            m.set(x as usize, y as usize, true); // small
        }
        for (x, y) in disk(50.0, 50.0, 8.0, w, w).pixels() {
            m.set(x as usize, y as usize, true); // pale, see below
        }
        for (x, y) in disk(2.0, 60.0, 8.0, w, w).pixels() {
            m.set(x as usize, y as usize, true); // on the border
        }
        let h = ScalarImage::from_fn(w, w, ValueKind::OpticalDensity, |x, _| {
            if x > 40 {
                0.05
            } else {
                0.8
            }
        })
        .unwrap();
        let cells = postprocess(&m, &h, "i", &EnhancementParams::default()).unwrap();
        assert!(cells.is_empty());
    }

    #[test]
    fn neighbours_stay_disjoint() {
        let w = 64;
        let mut m = disk(20.0, 30.0, 8.0, w, w);
        for (x, y) in disk(38.0, 30.0, 8.0, w, w).pixels() {
            m.set(x as usize, y as usize, true);
        }
        // the two disks are separated by a one-pixel background gap
        for y in 0..w {
            m.set(29, y, false);
        }
        let cells = postprocess(&m, &stained(w, w), "i", &EnhancementParams::default()).unwrap();
        assert_eq!(cells.len(), 2);
        let a: HashSet<_> = cells[0].mask.iter().collect();
        assert!(cells[1].mask.iter().all(|p| !a.contains(p)));
    }
}
