use image::{imageops, Rgb, RgbImage};

use super::EngineError;
use crate::data::LabelMap;
use crate::metrics::{structure_mask, BinaryMask, Structure};

pub const DISC_COLOR: Rgb<u8> = Rgb([40, 230, 60]);
pub const CUP_COLOR: Rgb<u8> = Rgb([40, 120, 255]);

/// Mask pixels within `radius` (Chebyshev) of a pixel outside the mask.
fn contour(mask: &BinaryMask, radius: i64) -> BinaryMask {
    let (w, h) = mask.dimensions();
    BinaryMask::from_fn(w, h, |x, y| {
        if !mask.get(x, y) {
            return false;
        }
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0
                    || ny < 0
                    || nx >= w as i64
                    || ny >= h as i64
                    || !mask.get(nx as u32, ny as u32)
                {
                    return true;
                }
            }
        }
        false
    })
}

fn draw(image: &RgbImage, labels: &LabelMap, radius: i64) -> RgbImage {
    let mut out = image.clone();
    for (structure, color) in [(Structure::Disc, DISC_COLOR), (Structure::Cup, CUP_COLOR)] {
        let edge = contour(&structure_mask(labels, structure), radius);
        for (x, y, px) in out.enumerate_pixels_mut() {
            if edge.get(x, y) {
                *px = color;
            }
        }
    }
    out
}

/// Three panels left to right: photograph, ground-truth contours, predicted contours.
pub fn render_overlay(
    image: &RgbImage,
    gt: &LabelMap,
    pred: &LabelMap,
) -> Result<RgbImage, EngineError> {
    let (w, h) = image.dimensions();
    for labels in [gt, pred] {
        if labels.dimensions() != (w, h) {
            return Err(EngineError::Config(format!(
                "overlay labels {:?} do not match image {:?}",
                labels.dimensions(),
                (w, h)
            )));
        }
    }
    let radius = (w.min(h) / 320).max(1) as i64;
    let mut panel = RgbImage::new(3 * w, h);
    imageops::replace(&mut panel, image, 0, 0);
    imageops::replace(&mut panel, &draw(image, gt, radius), w as i64, 0);
    imageops::replace(&mut panel, &draw(image, pred, radius), 2 * w as i64, 0);
    Ok(panel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::synthetic_sample;
    use crate::data::{Class, LabelMap};

    #[test]
    fn three_panels_with_contours() {
        let s = synthetic_sample(40, 30, 0);
        let empty = LabelMap::filled(40, 30, Class::Background);
        let p = render_overlay(&s.image, &s.labels, &empty).unwrap();
        assert_eq!(p.dimensions(), (120, 30));
        let count = |x0: u32, c: Rgb<u8>| {
            (x0..x0 + 40)
                .flat_map(|x| (0..30).map(move |y| (x, y)))
                .filter(|&(x, y)| *p.get_pixel(x, y) == c)
                .count()
        };
        assert!(count(40, DISC_COLOR) > 0);
        assert!(count(40, CUP_COLOR) > 0);
        assert_eq!(count(80, DISC_COLOR), 0);
        assert_eq!(*p.get_pixel(5, 5), *s.image.get_pixel(5, 5));
        assert!(render_overlay(&s.image, &LabelMap::filled(2, 2, Class::Rim), &empty).is_err());
    }
}
