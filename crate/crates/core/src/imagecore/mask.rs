use std::collections::{HashSet, VecDeque};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(i64, i64)] {
        match self {
            Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
            Connectivity::Eight => &[
                (1, 0),
                (-1, 0),
                (0, 1),
                (0, -1),
                (1, 1),
                (1, -1),
                (-1, 1),
                (-1, -1),
            ],
        }
    }
}

/// Row-major boolean raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        BinaryMask {
            width,
            height,
            data,
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: &[(u32, u32)]) -> Self {
        let mut m = Self::new(width, height);
        for &(x, y) in pixels {
            m.set(x as usize, y as usize, true);
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Out-of-range coordinates read as background.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.data[y as usize * self.width + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    /// Foreground pixels in row-major order.
    pub fn pixels(&self) -> Vec<(u32, u32)> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| ((i % self.width) as u32, (i / self.width) as u32))
            .collect()
    }

    /// Connected components, each as a row-major pixel list. Components are
    /// ordered by their first pixel in raster order.
    pub fn components(&self, conn: Connectivity) -> Vec<Vec<(u32, u32)>> {
        let mut seen = vec![false; self.data.len()];
        let mut out = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..self.data.len() {
            if !self.data[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            queue.push_back(start);
            let mut comp = Vec::new();
            while let Some(i) = queue.pop_front() {
                let (x, y) = ((i % self.width) as i64, (i / self.width) as i64);
                comp.push((x as u32, y as u32));
                for &(dx, dy) in conn.offsets() {
                    let (nx, ny) = (x + dx, y + dy);
                    if self.get_signed(nx, ny) {
                        let j = ny as usize * self.width + nx as usize;
                        if !seen[j] {
                            seen[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
            comp.sort_unstable_by_key(|&(x, y)| (y, x));
            out.push(comp);
        }
        out
    }

    /// Set every background pixel that cannot reach the raster border through
    /// 4-connected background.
    pub fn fill_holes(&self) -> BinaryMask {
        let (w, h) = (self.width, self.height);
        let mut outside = vec![false; w * h];
        let mut queue = VecDeque::new();
        let seed = |x: usize, y: usize, q: &mut VecDeque<usize>, o: &mut Vec<bool>| {
            let i = y * w + x;
            if !self.data[i] && !o[i] {
                o[i] = true;
                q.push_back(i);
            }
        };
        for x in 0..w {
            seed(x, 0, &mut queue, &mut outside);
            seed(x, h - 1, &mut queue, &mut outside);
        }
        for y in 0..h {
            seed(0, y, &mut queue, &mut outside);
            seed(w - 1, y, &mut queue, &mut outside);
        }
        while let Some(i) = queue.pop_front() {
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for &(dx, dy) in Connectivity::Four.offsets() {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !self.data[j] && !outside[j] {
                    outside[j] = true;
                    queue.push_back(j);
                }
            }
        }
        BinaryMask {
            width: w,
            height: h,
            data: outside.iter().map(|&o| !o).collect(),
        }
    }
}

/// True when the pixel set forms a single 4-connected component.
pub(crate) fn is_connected4(pixels: &[(u32, u32)]) -> bool {
    if pixels.is_empty() {
        return false;
    }
    let set: HashSet<(u32, u32)> = pixels.iter().copied().collect();
    let mut seen = HashSet::with_capacity(set.len());
    let mut stack = vec![pixels[0]];
    seen.insert(pixels[0]);
    while let Some((x, y)) = stack.pop() {
        let cand = [
            (x.wrapping_add(1), y),
            (x.wrapping_sub(1), y),
            (x, y.wrapping_add(1)),
            (x, y.wrapping_sub(1)),
        ];
        for n in cand {
            if set.contains(&n) && seen.insert(n) {
                stack.push(n);
            }
        }
    }
    seen.len() == set.len()
}
