//! Image and geometry types shared by every stage, plus manifest and raster I/O.

mod contour;
mod io;
mod manifest;
mod mask;

use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use contour::trace_boundary;
pub(crate) use io::cell_id as io_cell_id;
pub use io::{
    cells_from_labels, load_label_raster, save_float_tiff, save_label_raster, save_rgb_png,
    write_atomic, write_instance_mask, LabelRaster,
};
pub use manifest::{load_manifest, CohortManifest, ManifestEntry};
pub use mask::{BinaryMask, Connectivity};

/// Smallest accepted tile side in pixels.
pub const MIN_REGION_SIDE: u32 = 32;

/// Molecular group of a region (and of every cell segmented from it).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    #[serde(rename = "MUT")]
    Mut,
    #[serde(rename = "WT")]
    Wt,
}

impl Group {
    pub const ALL: [Group; 2] = [Group::Mut, Group::Wt];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Mut => "MUT",
            Group::Wt => "WT",
        }
    }

    /// Binary class index used by the classifiers (MUT = 1, WT = 0).
    pub fn class_index(self) -> usize {
        match self {
            Group::Mut => 1,
            Group::Wt => 0,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "MUT" => Ok(Group::Mut),
            "WT" => Ok(Group::Wt),
            _ => Err(Error::BadLabel(s.to_string())),
        }
    }
}

/// An RGB tile of annotated tissue.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionImage {
    pub id: String,
    pub group: Group,
    pub pixels: RgbImage,
    pub pixel_size_um: Option<f64>,
}

impl RegionImage {
    pub fn new(id: impl Into<String>, group: Group, pixels: RgbImage) -> Result<Self> {
        let (w, h) = pixels.dimensions();
        if w < MIN_REGION_SIDE || h < MIN_REGION_SIDE {
            return Err(Error::InvalidImage(format!(
                "region is {w}x{h}, both sides must be at least {MIN_REGION_SIDE}"
            )));
        }
        Ok(RegionImage {
            id: id.into(),
            group,
            pixels,
            pixel_size_um: None,
        })
    }

    /// Load an 8-bit RGB image (PNG or TIFF); other layouts are converted.
    pub fn load(path: &std::path::Path, id: impl Into<String>, group: Group) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingImage(path.to_path_buf()));
        }
        let img = image::open(path)?.to_rgb8();
        Self::new(id, group, img)
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    #[inline]
    pub fn rgb(&self, x: u32, y: u32) -> [u8; 3] {
        self.pixels.get_pixel(x, y).0
    }

    /// Same pixels under a different id/group; handy for derived tiles.
    pub fn with_pixels(&self, pixels: RgbImage) -> Self {
        RegionImage {
            id: self.id.clone(),
            group: self.group,
            pixels,
            pixel_size_um: self.pixel_size_um,
        }
    }
}

/// What the values of a [`ScalarImage`] mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueKind {
    OpticalDensity,
    Likelihood,
    Intensity,
}

/// Single-channel real-valued raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
    pub kind: ValueKind,
}

impl ScalarImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>, kind: ValueKind) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{} values for a {width}x{height} raster",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidImage(format!(
                "non-finite value at ({}, {})",
                i % width.max(1),
                i / width.max(1)
            )));
        }
        Ok(ScalarImage {
            width,
            height,
            values,
            kind,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64, kind: ValueKind) -> Self {
        ScalarImage {
            width,
            height,
            values: vec![value; width * height],
            kind,
        }
    }

    /// Build from a closure evaluated at every `(x, y)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        kind: ValueKind,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, values, kind)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// One segmented cell.
///
/// `mask` holds interior pixels sorted row-major; `boundary` is the closed
/// outer contour of the mask traced with 8-connectivity, clockwise in image
/// coordinates, without repeating the start point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellInstance {
    pub cell_id: String,
    pub image_id: String,
    pub boundary: Vec<(i32, i32)>,
    pub mask: Vec<(u32, u32)>,
}

impl CellInstance {
    /// Build a cell from its pixel set. The pixels must form one
    /// 4-connected component; the boundary is derived by border following.
    pub fn from_pixels(
        cell_id: impl Into<String>,
        image_id: impl Into<String>,
        mut pixels: Vec<(u32, u32)>,
    ) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::InvalidImage("cell mask is empty".into()));
        }
        pixels.sort_unstable_by_key(|&(x, y)| (y, x));
        pixels.dedup();
        if !mask::is_connected4(&pixels) {
            return Err(Error::InvalidImage("cell mask is not 4-connected".into()));
        }
        let boundary = trace_boundary(&pixels);
        Ok(CellInstance {
            cell_id: cell_id.into(),
            image_id: image_id.into(),
            boundary,
            mask: pixels,
        })
    }

    pub fn area(&self) -> usize {
        self.mask.len()
    }

    /// Inclusive pixel bounding box `(x_min, y_min, x_max, y_max)` of the mask.
    pub fn bbox(&self) -> (u32, u32, u32, u32) {
        let mut b = (u32::MAX, u32::MAX, 0, 0);
        for &(x, y) in &self.mask {
            b.0 = b.0.min(x);
            b.1 = b.1.min(y);
            b.2 = b.2.max(x);
            b.3 = b.3.max(y);
        }
        b
    }

    pub fn touches_border(&self, width: u32, height: u32) -> bool {
        let (x0, y0, x1, y1) = self.bbox();
        x0 == 0 || y0 == 0 || x1 + 1 >= width || y1 + 1 >= height
    }
}
