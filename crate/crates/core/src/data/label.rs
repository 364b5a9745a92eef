use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use super::DataError;

pub const NUM_CLASSES: usize = 3;

/// Per-pixel class: 0 background, 1 disc rim (disc minus cup), 2 cup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Class {
    Background = 0,
    Rim = 1,
    Cup = 2,
}

/// Row-major map of class indices in `{0, 1, 2}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, DataError> {
        if data.len() != (width as usize) * (height as usize) {
            return Err(DataError::ShapeMismatch(format!(
                "{} labels for a {width}x{height} map",
                data.len()
            )));
        }
        if let Some(&bad) = data.iter().find(|&&v| v as usize >= NUM_CLASSES) {
            return Err(DataError::InvalidLabel(bad));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, class: Class) -> Self {
        Self {
            width,
            height,
            data: vec![class as u8; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> Class) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y) as u8);
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[(y as usize) * (self.width as usize) + x as usize]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Single-channel image holding the raw 0/1/2 values.
    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_raw(self.width, self.height, self.data.clone()).expect("sized buffer")
    }

    pub fn from_image(img: &GrayImage) -> Result<Self, DataError> {
        Self::new(img.width(), img.height(), img.as_raw().clone())
    }

    /// Grey-level rendering (0 / 128 / 255) for viewing.
    pub fn to_visible(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([[0u8, 128, 255][self.get(x, y) as usize]])
        })
    }

    /// Distinct label values present.
    pub fn classes_present(&self) -> Vec<u8> {
        let mut seen = [false; NUM_CLASSES];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (0..NUM_CLASSES as u8)
            .filter(|&c| seen[c as usize])
            .collect()
    }
}
