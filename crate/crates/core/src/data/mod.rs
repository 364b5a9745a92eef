//! Dataset ingestion: DRISHTI-GS and RIM-ONE layouts, soft-map thresholding
//! into 3-class label maps, resizing, seeded splits and augmentation.

mod cache;
mod encode;
mod label;
mod loaders;
mod manifest;
pub mod synthetic;
mod transform;

pub use cache::SampleCache;
pub use encode::{encode_mask, SoftMap, DEFAULT_THRESHOLD};
pub use label::{Class, LabelMap, NUM_CLASSES};
pub use loaders::{
    load_dataset, load_drishti, load_rimone, load_sample, DRISHTI_COUNT, RIMONE_COUNT,
    RIMONE_GLAUCOMA, RIMONE_HEALTHY,
};
pub use manifest::{split, DatasetManifest, Rejection, SampleRecord, Split, SplitRatios};
pub use transform::{augment, augment_random, resize_sample, AugmentOp};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label value {0} outside {{0, 1, 2}}")]
    InvalidLabel(u8),
    #[error("dataset not found at {0}")]
    NotFound(PathBuf),
    #[error("sample `{id}`: missing {}", path.display())]
    MissingFile { id: String, path: PathBuf },
    #[error("expected {expected} samples, found {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("split ratios {0:?} must be non-negative and sum to 1")]
    InvalidRatios([f64; 3]),
    #[error("threshold {0} must lie strictly between 0 and 1")]
    InvalidThreshold(f64),
    #[error("side {0} must be positive and divisible by 32")]
    InvalidSide(u32),
    #[error("unsupported augmentation `{0}`")]
    UnsupportedOp(String),
    #[error("unknown dataset `{0}` (expected drishti or rimone)")]
    UnknownDataset(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("sample `{id}`: {source}")]
    Image {
        id: String,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Diagnosis {
    Glaucoma,
    Healthy,
    Unknown,
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Glaucoma => "glaucoma",
            Self::Healthy => "healthy",
            Self::Unknown => "unknown",
        })
    }
}

impl FromStr for Diagnosis {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "glaucoma" => Ok(Self::Glaucoma),
            "healthy" => Ok(Self::Healthy),
            "unknown" => Ok(Self::Unknown),
            other => Err(DataError::Manifest(format!("unknown diagnosis `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Drishti,
    Rimone,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Drishti => "drishti",
            Self::Rimone => "rimone",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "drishti" | "drishtigs" => Ok(Self::Drishti),
            "rimone" => Ok(Self::Rimone),
            _ => Err(DataError::UnknownDataset(s.to_string())),
        }
    }
}

/// One fundus photograph with its 3-class label map.
#[derive(Debug, Clone, PartialEq)]
pub struct FundusSample {
    pub id: String,
    pub image: RgbImage,
    pub labels: LabelMap,
    pub source: DatasetKind,
    pub diagnosis: Diagnosis,
}

impl FundusSample {
    pub fn new(
        id: impl Into<String>,
        image: RgbImage,
        labels: LabelMap,
        source: DatasetKind,
        diagnosis: Diagnosis,
    ) -> Result<Self, DataError> {
        let id = id.into();
        if image.dimensions() != labels.dimensions() {
            return Err(DataError::ShapeMismatch(format!(
                "sample `{id}`: image {:?} vs labels {:?}",
                image.dimensions(),
                labels.dimensions()
            )));
        }
        Ok(Self {
            id,
            image,
            labels,
            source,
            diagnosis,
        })
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.image.dimensions()
    }
}
