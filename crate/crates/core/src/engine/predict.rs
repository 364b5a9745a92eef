use image::imageops::{self, FilterType};
use image::RgbImage;
use ndarray::Array3;

use super::{decode_argmax, image_to_tensor, EngineError};
use crate::data::{Class, LabelMap};
use crate::metrics::{compute_cdr, CdrResult, MetricsError};
use crate::nn::Network;

/// Labels at the segmenter's working resolution, with probabilities when the
/// segmenter produces them.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub labels: LabelMap,
    pub probs: Option<Array3<f32>>,
}

pub trait Segmenter {
    fn segment(&self, image: &RgbImage) -> Result<Segmentation, EngineError>;
}

/// Trained network; inputs are resized (bilinear) to the network resolution.
pub struct NetworkSegmenter {
    pub net: Network<f32>,
}

impl Segmenter for NetworkSegmenter {
    fn segment(&self, image: &RgbImage) -> Result<Segmentation, EngineError> {
        let s = self.net.spec().input;
        let (w, h) = (s.width as u32, s.height as u32);
        let probs = if image.dimensions() == (w, h) {
            self.net.forward_sample(&image_to_tensor(image))?
        } else {
            let resized = imageops::resize(image, w, h, FilterType::Triangle);
            self.net.forward_sample(&image_to_tensor(&resized))?
        };
        Ok(Segmentation {
            labels: decode_argmax(&probs)?,
            probs: Some(probs),
        })
    }
}

/// Brightness thresholds on the channel mean: at least `cup_level` is cup, at
/// least `disc_level` is rim. Stands in for a model in tests.
pub struct ThresholdSegmenter {
    pub disc_level: u8,
    pub cup_level: u8,
}

impl Segmenter for ThresholdSegmenter {
    fn segment(&self, image: &RgbImage) -> Result<Segmentation, EngineError> {
        let labels = LabelMap::from_fn(image.width(), image.height(), |x, y| {
            let p = image.get_pixel(x, y).0;
            let mean = (p[0] as u16 + p[1] as u16 + p[2] as u16) / 3;
            if mean >= self.cup_level as u16 {
                Class::Cup
            } else if mean >= self.disc_level as u16 {
                Class::Rim
            } else {
                Class::Background
            }
        });
        Ok(Segmentation {
            labels,
            probs: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub segmentation: Segmentation,
    /// Labels resized (nearest-neighbour) to the source image.
    pub labels: LabelMap,
    pub cdr: Result<CdrResult, MetricsError>,
}

pub(crate) fn resize_labels(
    labels: &LabelMap,
    (w, h): (u32, u32),
) -> Result<LabelMap, EngineError> {
    if labels.dimensions() == (w, h) {
        return Ok(labels.clone());
    }
    let img = imageops::resize(&labels.to_image(), w, h, FilterType::Nearest);
    Ok(LabelMap::from_image(&img)?)
}

pub fn predict(segmenter: &dyn Segmenter, image: &RgbImage) -> Result<Prediction, EngineError> {
    let segmentation = segmenter.segment(image)?;
    let labels = resize_labels(&segmentation.labels, image.dimensions())?;
    let cdr = compute_cdr(&labels);
    Ok(Prediction {
        segmentation,
        labels,
        cdr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{default_network_spec, SkipMode, TensorShape};
    use crate::metrics::{structure_mask, Structure};

    fn concentric(side: u32, disc_r: f64, cup_r: f64) -> RgbImage {
        let c = side as f64 / 2.0;
        RgbImage::from_fn(side, side, |x, y| {
            let d = ((x as f64 + 0.5 - c).powi(2) + (y as f64 + 0.5 - c).powi(2)).sqrt();
            image::Rgb(if d <= cup_r {
                [250, 250, 250]
            } else if d <= disc_r {
                [150, 150, 150]
            } else {
                [20, 20, 20]
            })
        })
    }

    #[test]
    fn stub_recovers_half_ratio() {
        let stub = ThresholdSegmenter {
            disc_level: 100,
            cup_level: 200,
        };
        let p = predict(&stub, &concentric(96, 30.0, 15.0)).unwrap();
        let cdr = p.cdr.unwrap();
        assert!((cdr.cdr - 0.5).abs() <= 0.05);
        assert!(!cdr.screen_positive);
        let blank = predict(&stub, &concentric(32, 0.0, 0.0)).unwrap();
        assert_eq!(blank.cdr, Err(MetricsError::NoDisc));
    }

    #[test]
    fn network_prediction_is_deterministic_and_nested() {
        let spec = default_network_spec(TensorShape::new(32, 32, 3), 3, SkipMode::Add).unwrap();
        let seg = NetworkSegmenter {
            net: Network::new(spec, 3).unwrap(),
        };
        let img = concentric(50, 20.0, 8.0);
        let a = predict(&seg, &img).unwrap();
        let b = predict(&seg, &img).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.labels.dimensions(), (50, 50));
        assert_eq!(a.segmentation.labels.dimensions(), (32, 32));
        assert!(a.labels.as_slice().iter().all(|&v| v < 3));
        assert!(structure_mask(&a.labels, Structure::Cup)
            .is_subset_of(&structure_mask(&a.labels, Structure::Disc)));
    }
}
