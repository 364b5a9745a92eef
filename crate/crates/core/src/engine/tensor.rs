use image::RgbImage;
use ndarray::Array3;

use crate::data::{DataError, LabelMap, NUM_CLASSES};
use crate::loss::{LossError, OneHotTarget};
use crate::nn::Scalar;

/// `(3, H, W)` tensor with channel values scaled to `[0, 1]`.
pub fn image_to_tensor<F: Scalar>(image: &RgbImage) -> Array3<F> {
    let (w, h) = image.dimensions();
    let scale = F::from(1.0 / 255.0).unwrap();
    Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
        F::from(image.get_pixel(x as u32, y as u32)[c]).unwrap() * scale
    })
}

pub fn sample_target(labels: &LabelMap) -> Result<OneHotTarget, LossError> {
    OneHotTarget::from_labels(labels, NUM_CLASSES)
}

/// Per-pixel argmax over `(K, H, W)` probabilities; ties go to the lower class.
pub fn decode_argmax<F: Scalar>(probs: &Array3<F>) -> Result<LabelMap, DataError> {
    let (_, h, w) = probs.dim();
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let lane = probs.slice(ndarray::s![.., y, x]);
            let mut best = 0;
            for k in 1..lane.len() {
                if lane[k] > lane[best] {
                    best = k;
                }
            }
            data.push(best as u8);
        }
    }
    LabelMap::new(w as u32, h as u32, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_low() {
        let mut p = Array3::<f32>::zeros((3, 1, 3));
        p[[0, 0, 0]] = 0.4;
        p[[1, 0, 0]] = 0.4;
        p[[2, 0, 0]] = 0.2;
        p[[2, 0, 1]] = 1.0;
        p[[1, 0, 2]] = 0.5;
        p[[2, 0, 2]] = 0.5;
        assert_eq!(decode_argmax(&p).unwrap().as_slice(), &[0, 2, 1]);
    }

    #[test]
    fn image_scaling() {
        let img = RgbImage::from_fn(2, 1, |x, _| image::Rgb([255 * x as u8, 0, 51]));
        let t = image_to_tensor::<f64>(&img);
        assert_eq!(t.dim(), (3, 1, 2));
        assert_eq!(t[[0, 0, 1]], 1.0);
        assert_eq!(t[[2, 0, 0]], 0.2);
    }
}
