use std::fmt;
use std::str::FromStr;

use image::imageops::{self, FilterType};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, FundusSample, LabelMap};

/// Square resize: bilinear for the photograph, nearest-neighbour for labels.
pub fn resize_sample(sample: &FundusSample, side: u32) -> Result<FundusSample, DataError> {
    if side == 0 || !side.is_multiple_of(32) {
        return Err(DataError::InvalidSide(side));
    }
    if sample.dimensions() == (side, side) {
        return Ok(sample.clone());
    }
    let image = imageops::resize(&sample.image, side, side, FilterType::Triangle);
    let labels = imageops::resize(&sample.labels.to_image(), side, side, FilterType::Nearest);
    Ok(FundusSample {
        image,
        labels: LabelMap::from_image(&labels)?,
        ..sample.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentOp {
    HFlip,
    VFlip,
    /// Quarter turn clockwise.
    Rotate90,
}

impl AugmentOp {
    pub const ALL: [AugmentOp; 3] = [AugmentOp::HFlip, AugmentOp::VFlip, AugmentOp::Rotate90];
}

impl fmt::Display for AugmentOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::HFlip => "hflip",
            Self::VFlip => "vflip",
            Self::Rotate90 => "rotate90",
        })
    }
}

impl FromStr for AugmentOp {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hflip" => Ok(Self::HFlip),
            "vflip" => Ok(Self::VFlip),
            "rotate90" => Ok(Self::Rotate90),
            other => Err(DataError::UnsupportedOp(other.to_string())),
        }
    }
}

fn apply(sample: &FundusSample, op: AugmentOp) -> FundusSample {
    let labels = sample.labels.to_image();
    let (image, labels) = match op {
        AugmentOp::HFlip => (
            imageops::flip_horizontal(&sample.image),
            imageops::flip_horizontal(&labels),
        ),
        AugmentOp::VFlip => (
            imageops::flip_vertical(&sample.image),
            imageops::flip_vertical(&labels),
        ),
        AugmentOp::Rotate90 => (
            imageops::rotate90(&sample.image),
            imageops::rotate90(&labels),
        ),
    };
    FundusSample {
        image,
        labels: LabelMap::from_image(&labels).expect("geometric maps keep label values"),
        ..sample.clone()
    }
}

/// Applies `ops` in order to image and labels alike.
pub fn augment(sample: &FundusSample, ops: &[AugmentOp]) -> FundusSample {
    ops.iter().fold(sample.clone(), |s, &op| apply(&s, op))
}

/// Applies each of `ops` with probability 1/2, drawn from `seed`.
pub fn augment_random(sample: &FundusSample, ops: &[AugmentOp], seed: u64) -> FundusSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<AugmentOp> = ops
        .iter()
        .copied()
        .filter(|_| rng.random_bool(0.5))
        .collect();
    augment(sample, &chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::synthetic_sample;

    #[test]
    fn group_laws() {
        let s = synthetic_sample(64, 48, 3);
        assert_eq!(augment(&s, &[AugmentOp::HFlip, AugmentOp::HFlip]), s);
        assert_eq!(augment(&s, &[AugmentOp::VFlip, AugmentOp::VFlip]), s);
        assert_eq!(augment(&s, &[AugmentOp::Rotate90; 4]), s);
        assert_ne!(augment(&s, &[AugmentOp::Rotate90]), s);
    }

    #[test]
    fn unsupported_op() {
        assert!(matches!(
            "shear".parse::<AugmentOp>(),
            Err(DataError::UnsupportedOp(_))
        ));
    }

    #[test]
    fn resize_keeps_label_values() {
        let s = synthetic_sample(100, 70, 1);
        let r = resize_sample(&s, 64).unwrap();
        assert_eq!(r.dimensions(), (64, 64));
        assert_eq!(r.labels.classes_present(), s.labels.classes_present());
        assert!(matches!(
            resize_sample(&s, 50),
            Err(DataError::InvalidSide(50))
        ));
        let square = resize_sample(&synthetic_sample(64, 64, 2), 64).unwrap();
        assert_eq!(square, synthetic_sample(64, 64, 2));
    }

    #[test]
    fn random_augment_is_seeded() {
        let s = synthetic_sample(32, 32, 4);
        assert_eq!(
            augment_random(&s, &AugmentOp::ALL, 9),
            augment_random(&s, &AugmentOp::ALL, 9)
        );
    }
}
