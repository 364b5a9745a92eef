use image::GrayImage;

use super::{Class, DataError, LabelMap};

/// Majority of four expert markings.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Expert-average soft map with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMap {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl SoftMap {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self, DataError> {
        if values.len() != width as usize * height as usize {
            return Err(DataError::ShapeMismatch(format!(
                "{} soft values for a {width}x{height} map",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: u32, height: u32, value: f32) -> Self {
        Self {
            width,
            height,
            values: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f32) -> Self {
        let mut values = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            values,
        }
    }

    /// 8-bit grey levels scaled to `[0, 1]`.
    pub fn from_gray(img: &GrayImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            values: img.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        }
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Thresholds both maps (`>=`) and nests the cup inside the disc: a cup pixel
/// outside the thresholded disc is promoted into it.
pub fn encode_mask(disc: &SoftMap, cup: &SoftMap, threshold: f64) -> Result<LabelMap, DataError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(DataError::InvalidThreshold(threshold));
    }
    if disc.dimensions() != cup.dimensions() {
        return Err(DataError::ShapeMismatch(format!(
            "disc map {:?} vs cup map {:?}",
            disc.dimensions(),
            cup.dimensions()
        )));
    }
    let data = disc
        .values
        .iter()
        .zip(&cup.values)
        .map(|(&d, &c)| {
            if c as f64 >= threshold {
                Class::Cup as u8
            } else if d as f64 >= threshold {
                Class::Rim as u8
            } else {
                Class::Background as u8
            }
        })
        .collect();
    LabelMap::new(disc.width, disc.height, data)
}
