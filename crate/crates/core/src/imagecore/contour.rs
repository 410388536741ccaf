//! Moore-neighbour border following.

use std::collections::HashSet;

/// Eight neighbours, clockwise on screen (y grows downward), starting west.
const RING: [(i32, i32); 8] = [
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
];

fn ring_index(dx: i32, dy: i32) -> usize {
    RING.iter()
        .position(|&d| d == (dx, dy))
        .expect("backtrack pixel must be an 8-neighbour")
}

/// Trace the outer contour of a pixel set.
///
/// Tracing starts at the first pixel in raster order and walks clockwise;
/// it stops when the initial move (start -> second pixel) is about to
/// repeat. A single isolated pixel yields a one-point contour.
pub fn trace_boundary(pixels: &[(u32, u32)]) -> Vec<(i32, i32)> {
    let Some(&start) = pixels.iter().min_by_key(|&&(x, y)| (y, x)) else {
        return Vec::new();
    };
    let set: HashSet<(i32, i32)> = pixels.iter().map(|&(x, y)| (x as i32, y as i32)).collect();
    let start = (start.0 as i32, start.1 as i32);
    let inside = |p: (i32, i32)| set.contains(&p);

    // The west neighbour of the raster-first pixel is background.
    let mut cur = start;
    let mut back = 0usize;
    let mut contour = vec![start];
    let mut first_move: Option<(i32, i32)> = None;

    // Every boundary pixel is visited at most 4 times (once per side).
    let limit = 4 * set.len() + 8;
    for _ in 0..limit {
        let mut next = None;
        for i in 1..=8 {
            let d = (back + i) % 8;
            let cand = (cur.0 + RING[d].0, cur.1 + RING[d].1);
            if inside(cand) {
                let prev = (back + i - 1) % 8;
                let b_abs = (cur.0 + RING[prev].0, cur.1 + RING[prev].1);
                next = Some((cand, b_abs));
                break;
            }
        }
        let Some((n, b_abs)) = next else {
            return contour; // isolated pixel
        };
        match first_move {
            None => first_move = Some(n),
            Some(f) if cur == start && n == f => {
                contour.pop(); // start was pushed again on arrival
                return contour;
            }
            _ => {}
        }
        back = ring_index(b_abs.0 - n.0, b_abs.1 - n.1);
        cur = n;
        contour.push(cur);
    }
    contour
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pixel() {
        assert_eq!(trace_boundary(&[(3, 4)]), vec![(3, 4)]);
    }

    #[test]
    fn square_contour() {
        let mut px = Vec::new();
        for y in 0..3 {
            for x in 0..3 {
                px.push((x, y));
            }
        }
        let c = trace_boundary(&px);
        assert_eq!(
            c,
            vec![
                (0, 0),
                (1, 0),
                (2, 0),
                (2, 1),
                (2, 2),
                (1, 2),
                (0, 2),
                (0, 1)
            ]
        );
    }

    #[test]
    fn horizontal_line_walks_back() {
        let c = trace_boundary(&[(0, 0), (1, 0), (2, 0)]);
        assert_eq!(c, vec![(0, 0), (1, 0), (2, 0), (1, 0)]);
    }

    #[test]
    fn contour_points_belong_to_mask() {
        let px: Vec<(u32, u32)> = (0..10)
            .flat_map(|y| (0..10).map(move |x| (x, y)))
            .filter(|&(x, y)| {
                let (dx, dy) = (x as f64 - 4.5, y as f64 - 4.5);
                dx * dx + dy * dy <= 20.0
            })
            .collect();
        let c = trace_boundary(&px);
        let set: HashSet<_> = px.iter().map(|&(x, y)| (x as i32, y as i32)).collect();
        assert!(c.iter().all(|p| set.contains(p)));
        // consecutive points are 8-neighbours, including the closing step
        for i in 0..c.len() {
            let (a, b) = (c[i], c[(i + 1) % c.len()]);
            assert!((a.0 - b.0).abs() <= 1 && (a.1 - b.1).abs() <= 1 && a != b);
        }
    }
}
