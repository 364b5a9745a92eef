//! Generalized dice loss over per-pixel class probabilities.
//!
//! For probabilities `p[c, i]`, one-hot targets `g[c, i]` and class weights
//! `w[c] = 1 / (sum_i g[c, i])^2` (zero for classes absent from the target):
//!
//! ```text
//! GDL = 1 - 2 * sum_c w[c] sum_i p[c,i] g[c,i]
//!           / sum_c w[c] sum_i (p[c,i]^2 + g[c,i]^2)
//! ```
//!
//! The inverse squared class volume keeps the small cup class from being
//! swamped by background. Tensors are `(K, H, W)` per sample.

use ndarray::{Array3, Array4, Axis, Zip};
use thiserror::Error;

use crate::data::LabelMap;
use crate::nn::ops::softmax_channels;

/// Per-pixel tolerance on `sum_c p[c] == 1`.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-4;

/// Largest spatial side accepted by [`finite_difference_check`].
pub const FD_MAX_SIDE: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("probabilities {probs:?} and target {target:?} differ in shape")]
    ShapeMismatch {
        probs: (usize, usize, usize),
        target: (usize, usize, usize),
    },
    #[error("probabilities are not normalized (max deviation {0:e})")]
    NotNormalized(f64),
    #[error("invalid one-hot target: {0}")]
    InvalidTarget(String),
    #[error("finite-difference step must be in (0, 1e-3], got {0}")]
    InvalidEpsilon(f64),
    #[error("finite-difference check is limited to {FD_MAX_SIDE}x{FD_MAX_SIDE} inputs")]
    TooLarge,
    #[error("batch of {probs} probability maps but {targets} targets")]
    BatchMismatch { probs: usize, targets: usize },
}

/// One-hot encoding of a label map, `(K, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotTarget {
    data: Array3<f64>,
}

impl OneHotTarget {
    pub fn from_labels(labels: &LabelMap, num_classes: usize) -> Result<Self, LossError> {
        let (w, h) = (labels.width() as usize, labels.height() as usize);
        let mut data = Array3::zeros((num_classes, h, w));
        for (i, &l) in labels.as_slice().iter().enumerate() {
            if l as usize >= num_classes {
                return Err(LossError::InvalidTarget(format!(
                    "label {l} with only {num_classes} classes"
                )));
            }
            data[[l as usize, i / w, i % w]] = 1.0;
        }
        Ok(Self { data })
    }

    /// Wraps an explicit array, checking that each pixel holds exactly one 1.
    pub fn from_array(data: Array3<f64>) -> Result<Self, LossError> {
        for lane in data.lanes(Axis(0)) {
            let ones = lane.iter().filter(|&&v| v == 1.0).count();
            let zeros = lane.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != lane.len() {
                return Err(LossError::InvalidTarget(
                    "each pixel needs exactly one 1 and zeros elsewhere".into(),
                ));
            }
        }
        Ok(Self { data })
    }

    pub fn as_array(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn num_classes(&self) -> usize {
        self.data.dim().0
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    /// Pixel count of each class.
    pub fn class_volumes(&self) -> Vec<f64> {
        self.data.outer_iter().map(|plane| plane.sum()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights(pub Vec<f64>);

impl ClassWeights {
    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|w| w * factor).collect())
    }
}

/// `1 / n_c^2` for every class present in `target`, 0 for absent classes.
pub fn class_weights(target: &OneHotTarget) -> ClassWeights {
    ClassWeights(
        target
            .class_volumes()
            .into_iter()
            .map(|n| if n > 0.0 { 1.0 / (n * n) } else { 0.0 })
            .collect(),
    )
}

fn check_probs(probs: &Array3<f64>, target: &OneHotTarget) -> Result<(), LossError> {
    if probs.dim() != target.dim() {
        return Err(LossError::ShapeMismatch {
            probs: probs.dim(),
            target: target.dim(),
        });
    }
    let mut worst: f64 = 0.0;
    for lane in probs.lanes(Axis(0)) {
        worst = worst.max((lane.sum() - 1.0).abs());
        for &p in lane {
            if p < 0.0 {
                worst = worst.max(-p);
            }
        }
    }
    if worst.is_nan() || worst > NORMALIZATION_TOLERANCE {
        return Err(LossError::NotNormalized(worst));
    }
    Ok(())
}

/// Weighted intersection and weighted squared-volume sums.
fn weighted_sums(probs: &Array3<f64>, target: &OneHotTarget, weights: &ClassWeights) -> (f64, f64) {
    let mut inter = 0.0;
    let mut denom = 0.0;
    for ((p_plane, g_plane), &w) in probs
        .outer_iter()
        .zip(target.data.outer_iter())
        .zip(weights.0.iter())
    {
        if w == 0.0 {
            continue;
        }
        let mut pg = 0.0;
        let mut sq = 0.0;
        Zip::from(&p_plane).and(&g_plane).for_each(|&p, &g| {
            pg += p * g;
            sq += p * p + g * g;
        });
        inter += w * pg;
        denom += w * sq;
    }
    (inter, denom)
}

fn ratio_loss(inter: f64, denom: f64) -> f64 {
    // an empty weighted denominator only arises for empty inputs: treat as a perfect match
    if denom == 0.0 {
        0.0
    } else {
        1.0 - 2.0 * inter / denom
    }
}

/// Generalized dice loss of one sample.
pub fn generalized_dice_loss(probs: &Array3<f64>, target: &OneHotTarget) -> Result<f64, LossError> {
    check_probs(probs, target)?;
    let (inter, denom) = weighted_sums(probs, target, &class_weights(target));
    Ok(ratio_loss(inter, denom))
}

/// Loss under caller-supplied weights.
pub fn generalized_dice_loss_weighted(
    probs: &Array3<f64>,
    target: &OneHotTarget,
    weights: &ClassWeights,
) -> Result<f64, LossError> {
    check_probs(probs, target)?;
    let (inter, denom) = weighted_sums(probs, target, weights);
    Ok(ratio_loss(inter, denom))
}

/// Mean loss over a `(N, K, H, W)` batch.
pub fn batch_generalized_dice_loss(
    probs: &Array4<f64>,
    targets: &[OneHotTarget],
) -> Result<f64, LossError> {
    if probs.dim().0 != targets.len() || targets.is_empty() {
        return Err(LossError::BatchMismatch {
            probs: probs.dim().0,
            targets: targets.len(),
        });
    }
    let mut total = 0.0;
    for (p, t) in probs.outer_iter().zip(targets) {
        total += generalized_dice_loss(&p.to_owned(), t)?;
    }
    Ok(total / targets.len() as f64)
}

/// Loss and its gradient with respect to the probabilities.
pub fn gdl_grad_probs(
    probs: &Array3<f64>,
    target: &OneHotTarget,
) -> Result<(f64, Array3<f64>), LossError> {
    check_probs(probs, target)?;
    let weights = class_weights(target);
    let (inter, denom) = weighted_sums(probs, target, &weights);
    let mut grad = Array3::zeros(probs.dim());
    if denom == 0.0 {
        return Ok((0.0, grad));
    }
    // dL/dp = -2 w (g B - 2 A p) / B^2
    let scale = -2.0 / (denom * denom);
    for (c, mut plane) in grad.outer_iter_mut().enumerate() {
        let w = weights.0[c];
        if w == 0.0 {
            continue;
        }
        Zip::from(&mut plane)
            .and(probs.index_axis(Axis(0), c))
            .and(target.data.index_axis(Axis(0), c))
            .for_each(|d, &p, &g| *d = scale * w * (g * denom - 2.0 * inter * p));
    }
    Ok((ratio_loss(inter, denom), grad))
}

/// Softmax of `logits`, then loss, probabilities and gradient with respect to the logits.
pub fn gdl_grad_logits(
    logits: &Array3<f64>,
    target: &OneHotTarget,
) -> Result<(f64, Array3<f64>, Array3<f64>), LossError> {
    let probs = softmax_channels(logits);
    let (loss, dprobs) = gdl_grad_probs(&probs, target)?;
    let mut dlogits = Array3::zeros(probs.dim());
    for ((mut dz, p), dp) in dlogits
        .lanes_mut(Axis(0))
        .into_iter()
        .zip(probs.lanes(Axis(0)))
        .zip(dprobs.lanes(Axis(0)))
    {
        let dot: f64 = p.iter().zip(dp.iter()).map(|(a, b)| a * b).sum();
        for k in 0..dz.len() {
            dz[k] = p[k] * (dp[k] - dot);
        }
    }
    Ok((loss, probs, dlogits))
}

/// Maximum relative error between the analytic logit gradient and central
/// differences, with the denominator floored at 1e-8.
pub fn finite_difference_check(
    logits: &Array3<f64>,
    target: &OneHotTarget,
    epsilon: f64,
) -> Result<f64, LossError> {
    if !(epsilon > 0.0 && epsilon <= 1e-3) {
        return Err(LossError::InvalidEpsilon(epsilon));
    }
    let (_, h, w) = logits.dim();
    if h > FD_MAX_SIDE || w > FD_MAX_SIDE {
        return Err(LossError::TooLarge);
    }
    let (_, _, analytic) = gdl_grad_logits(logits, target)?;
    let loss_at = |z: &Array3<f64>| -> Result<f64, LossError> {
        generalized_dice_loss(&softmax_channels(z), target)
    };
    let mut worst: f64 = 0.0;
    let mut probe = logits.clone();
    for idx in ndarray::indices(logits.dim()) {
        let base = probe[idx];
        probe[idx] = base + epsilon;
        let plus = loss_at(&probe)?;
        probe[idx] = base - epsilon;
        let minus = loss_at(&probe)?;
        probe[idx] = base;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic[idx];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Class, LabelMap};

    fn labels(w: u32, h: u32, data: &[u8]) -> LabelMap {
        LabelMap::new(w, h, data.to_vec()).unwrap()
    }

    #[test]
    fn weights_follow_inverse_square_volume() {
        let t = OneHotTarget::from_labels(&labels(5, 1, &[0, 0, 0, 0, 1]), 2).unwrap();
        assert_eq!(class_weights(&t), ClassWeights(vec![1.0 / 16.0, 1.0]));

        let t = OneHotTarget::from_labels(&LabelMap::filled(4, 4, Class::Rim), 3).unwrap();
        assert_eq!(class_weights(&t), ClassWeights(vec![0.0, 1.0 / 256.0, 0.0]));

        let n = 64.0;
        let half: Vec<u8> = (0..64).map(|i| (i % 2) as u8).collect();
        let t = OneHotTarget::from_labels(&labels(8, 8, &half), 2).unwrap();
        assert_eq!(
            class_weights(&t),
            ClassWeights(vec![4.0 / (n * n), 4.0 / (n * n)])
        );
    }

    #[test]
    fn exact_match_is_zero() {
        let t = OneHotTarget::from_labels(&labels(3, 2, &[0, 1, 2, 2, 1, 0]), 3).unwrap();
        assert_eq!(generalized_dice_loss(t.as_array(), &t).unwrap(), 0.0);
    }

    #[test]
    fn complementary_prediction_is_one() {
        let t = OneHotTarget::from_labels(&labels(4, 1, &[0, 0, 0, 1]), 2).unwrap();
        let flipped = t.as_array().mapv(|g| 1.0 - g);
        assert_eq!(generalized_dice_loss(&flipped, &t).unwrap(), 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let t = OneHotTarget::from_labels(&labels(2, 1, &[0, 1]), 2).unwrap();
        let wrong = Array3::from_elem((2, 1, 3), 0.5);
        assert!(matches!(
            generalized_dice_loss(&wrong, &t),
            Err(LossError::ShapeMismatch { .. })
        ));
        let unnormalized = Array3::from_elem((2, 1, 2), 0.6);
        assert!(matches!(
            generalized_dice_loss(&unnormalized, &t),
            Err(LossError::NotNormalized(_))
        ));
        assert!(OneHotTarget::from_array(Array3::from_elem((2, 1, 1), 0.5)).is_err());
        let z = Array3::zeros((2, 1, 2));
        assert_eq!(
            finite_difference_check(&z, &t, 0.0),
            Err(LossError::InvalidEpsilon(0.0))
        );
        let big = Array3::zeros((2, 17, 1));
        let tb = OneHotTarget::from_labels(&LabelMap::filled(1, 17, Class::Background), 2).unwrap();
        assert_eq!(
            finite_difference_check(&big, &tb, 1e-5),
            Err(LossError::TooLarge)
        );
    }

    #[test]
    fn batch_is_mean() {
        let t1 = OneHotTarget::from_labels(&labels(2, 1, &[0, 1]), 2).unwrap();
        let t2 = OneHotTarget::from_labels(&labels(2, 1, &[1, 1]), 2).unwrap();
        let exact = t1.as_array().clone();
        let flipped = t2.as_array().mapv(|g| 1.0 - g);
        let batch = ndarray::stack(Axis(0), &[exact.view(), flipped.view()]).unwrap();
        let loss = batch_generalized_dice_loss(&batch, &[t1, t2]).unwrap();
        assert!((loss - 0.5).abs() < 1e-15);
    }
}
