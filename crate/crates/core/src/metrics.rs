//! Overlap and screening metrics for optic disc (OD) and optic cup (OC) masks.
//!
//! Ratios are computed from per-structure confusion counts. When a ratio's
//! denominator vanishes it scores 1 if the structure it measures is absent from
//! both masks, 0 otherwise. Jaccard `O` is computed first and dice, overlap
//! error and balanced accuracy are derived from it, so the per-image identities
//! `DC = 2O/(1+O)`, `E = 1 - O` and `BA = (Sen+Sp)/2` hold exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Class, LabelMap};

/// Vertical cup-to-disc ratio above which an eye is flagged.
pub const CDR_SCREEN_THRESHOLD: f64 = 0.6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("mask shapes differ: {pred:?} vs {gt:?}")]
    ShapeMismatch { pred: (u32, u32), gt: (u32, u32) },
    #[error("cannot aggregate an empty list")]
    EmptyList,
    #[error("no disc detected")]
    NoDisc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Structure {
    #[serde(rename = "OD")]
    Disc,
    #[serde(rename = "OC")]
    Cup,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dimensions() == other.dimensions()
            && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}

/// OC is label 2; OD is labels 1 and 2 (the cup lies inside the disc).
pub fn structure_mask(labels: &LabelMap, structure: Structure) -> BinaryMask {
    let cup = Class::Cup as u8;
    let rim = Class::Rim as u8;
    BinaryMask {
        width: labels.width(),
        height: labels.height(),
        data: labels
            .as_slice()
            .iter()
            .map(|&v| match structure {
                Structure::Cup => v == cup,
                Structure::Disc => v == cup || v == rim,
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Swaps the roles of prediction and ground truth.
    pub fn transposed(&self) -> Self {
        Self {
            fp: self.fn_,
            fn_: self.fp,
            ..*self
        }
    }
}

pub fn confusion(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts, MetricsError> {
    if pred.dimensions() != gt.dimensions() {
        return Err(MetricsError::ShapeMismatch {
            pred: pred.dimensions(),
            gt: gt.dimensions(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub dice: f64,
    pub jaccard: f64,
    pub overlap_error: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub balanced_accuracy: f64,
}

impl SegMetrics {
    pub const FIELDS: [&'static str; 6] = ["DC", "JC", "E", "Sen", "Sp", "BA"];

    pub fn values(&self) -> [f64; 6] {
        [
            self.dice,
            self.jaccard,
            self.overlap_error,
            self.sensitivity,
            self.specificity,
            self.balanced_accuracy,
        ]
    }

    fn from_values(v: [f64; 6]) -> Self {
        Self {
            dice: v[0],
            jaccard: v[1],
            overlap_error: v[2],
            sensitivity: v[3],
            specificity: v[4],
            balanced_accuracy: v[5],
        }
    }
}

fn ratio(num: u64, den: u64, vacuous: bool) -> f64 {
    if den == 0 {
        if vacuous {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(c: &ConfusionCounts) -> SegMetrics {
    let jaccard = ratio(c.tp, c.tp + c.fp + c.fn_, true);
    // positives absent from gt; perfect only if the prediction has none either
    let sensitivity = ratio(c.tp, c.tp + c.fn_, c.fp == 0);
    // negatives absent from gt; perfect only if the prediction has none either
    let specificity = ratio(c.tn, c.tn + c.fp, c.fn_ == 0);
    SegMetrics {
        dice: 2.0 * jaccard / (1.0 + jaccard),
        jaccard,
        overlap_error: 1.0 - jaccard,
        sensitivity,
        specificity,
        balanced_accuracy: (sensitivity + specificity) / 2.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub od: SegMetrics,
    pub oc: SegMetrics,
}

pub fn evaluate_pair(pred: &LabelMap, gt: &LabelMap) -> Result<PairMetrics, MetricsError> {
    let counts = |s| confusion(&structure_mask(pred, s), &structure_mask(gt, s));
    Ok(PairMetrics {
        od: compute_metrics(&counts(Structure::Disc)?),
        oc: compute_metrics(&counts(Structure::Cup)?),
    })
}

/// Unweighted per-image mean of every field. The running-mean update returns
/// a list of identical rows unchanged.
pub fn aggregate(per_image: &[SegMetrics]) -> Result<SegMetrics, MetricsError> {
    let first = per_image.first().ok_or(MetricsError::EmptyList)?;
    let mut mean = first.values();
    for (k, m) in per_image.iter().enumerate().skip(1) {
        for (acc, v) in mean.iter_mut().zip(m.values()) {
            *acc += (v - *acc) / (k + 1) as f64;
        }
    }
    Ok(SegMetrics::from_values(mean))
}

/// Largest per-column vertical extent in pixels; 0 for an empty mask.
pub fn vertical_diameter(mask: &BinaryMask) -> u32 {
    (0..mask.width)
        .filter_map(|x| {
            let mut rows = (0..mask.height).filter(|&y| mask.get(x, y));
            let top = rows.next()?;
            let bottom = rows.next_back().unwrap_or(top);
            Some(bottom - top + 1)
        })
        .max()
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdrResult {
    pub cup_diameter: u32,
    pub disc_diameter: u32,
    pub cdr: f64,
    pub screen_positive: bool,
}

pub fn compute_cdr(labels: &LabelMap) -> Result<CdrResult, MetricsError> {
    let disc_diameter = vertical_diameter(&structure_mask(labels, Structure::Disc));
    if disc_diameter == 0 {
        return Err(MetricsError::NoDisc);
    }
    let cup_diameter = vertical_diameter(&structure_mask(labels, Structure::Cup));
    let cdr = cup_diameter as f64 / disc_diameter as f64;
    Ok(CdrResult {
        cup_diameter,
        disc_diameter,
        cdr,
        screen_positive: cdr > CDR_SCREEN_THRESHOLD,
    })
}
