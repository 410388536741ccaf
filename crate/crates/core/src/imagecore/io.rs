use std::io::Cursor;
use std::path::Path;

use image::{ImageBuffer, ImageFormat, Luma, RgbImage};

use super::{CellInstance, ScalarImage};
use crate::{Error, Result};

/// 16-bit instance label raster; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRaster {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u16>,
}

impl LabelRaster {
    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.labels[(y * self.width + x) as usize]
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width, self.height, self.labels.clone())
                .ok_or_else(|| Error::InvalidImage("label buffer size mismatch".into()))?;
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }
}

/// Label cells 1..=n in ascending `cell_id` order.
pub fn write_instance_mask(cells: &[CellInstance], shape: (u32, u32)) -> Result<LabelRaster> {
    let (height, width) = shape;
    if cells.len() > u16::MAX as usize {
        return Err(Error::InvalidParameter(format!(
            "{} cells exceed the 16-bit label range",
            cells.len()
        )));
    }
    let mut order: Vec<&CellInstance> = cells.iter().collect();
    order.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));
    let mut labels = vec![0u16; (width * height) as usize];
    for (k, cell) in order.iter().enumerate() {
        for &(x, y) in &cell.mask {
            if x >= width || y >= height {
                return Err(Error::InvalidImage(format!(
                    "cell {} pixel ({x}, {y}) outside {width}x{height}",
                    cell.cell_id
                )));
            }
            let slot = &mut labels[(y * width + x) as usize];
            if *slot != 0 {
                return Err(Error::OverlapError { x, y });
            }
            *slot = (k + 1) as u16;
        }
    }
    Ok(LabelRaster {
        width,
        height,
        labels,
    })
}

/// Rebuild cells from a label raster. Cell ids are `<image_id>_<label:05>`.
pub fn cells_from_labels(raster: &LabelRaster, image_id: &str) -> Result<Vec<CellInstance>> {
    let max = raster.labels.iter().copied().max().unwrap_or(0) as usize;
    let mut groups: Vec<Vec<(u32, u32)>> = vec![Vec::new(); max + 1];
    for y in 0..raster.height {
        for x in 0..raster.width {
            let l = raster.get(x, y) as usize;
            if l != 0 {
                groups[l].push((x, y));
            }
        }
    }
    groups
        .into_iter()
        .enumerate()
        .skip(1)
        .filter(|(_, px)| !px.is_empty())
        .map(|(l, px)| CellInstance::from_pixels(cell_id(image_id, l), image_id, px))
        .collect()
}

pub(crate) fn cell_id(image_id: &str, label: usize) -> String {
    format!("{image_id}_{label:05}")
}

/// Write `bytes` to a sibling temp file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(d) = dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_label_raster(path: &Path, raster: &LabelRaster) -> Result<()> {
    write_atomic(path, &raster.to_png_bytes()?)
}

pub fn load_label_raster(path: &Path) -> Result<LabelRaster> {
    if !path.exists() {
        return Err(Error::MissingImage(path.to_path_buf()));
    }
    let img = image::open(path)?.to_luma16();
    let (width, height) = img.dimensions();
    Ok(LabelRaster {
        width,
        height,
        labels: img.into_raw(),
    })
}

pub fn save_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    write_atomic(path, &out.into_inner())
}

/// Dump a scalar raster as a single-channel 32-bit float TIFF.
pub fn save_float_tiff(path: &Path, img: &ScalarImage) -> Result<()> {
    let data: Vec<f32> = img.values().iter().map(|&v| v as f32).collect();
    let mut out = Cursor::new(Vec::new());
    let mut enc = tiff::encoder::TiffEncoder::new(&mut out)?;
    enc.write_image::<tiff::encoder::colortype::Gray32Float>(
        img.width() as u32,
        img.height() as u32,
        &data,
    )?;
    write_atomic(path, &out.into_inner())
}
