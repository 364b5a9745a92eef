//! Synthetic fundus-like fixtures: a dark retina disk, a bright optic disc and
//! a brighter cup. Ground truth is the average of four jittered "expert"
//! ellipses, written in the same directory layouts as the real datasets.

use std::fs;
use std::io;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{encode_mask, DatasetKind, Diagnosis, FundusSample, SoftMap, DEFAULT_THRESHOLD};
use super::{DRISHTI_COUNT, RIMONE_GLAUCOMA, RIMONE_HEALTHY};

const EXPERTS: usize = 4;
const DRISHTI_TRAIN: usize = 50;

/// Photograph plus expert-average disc and cup maps.
pub struct SyntheticEye {
    pub image: RgbImage,
    pub disc: SoftMap,
    pub cup: SoftMap,
}

struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

impl Ellipse {
    fn contains(&self, x: u32, y: u32) -> bool {
        let dx = (x as f64 + 0.5 - self.cx) / self.rx;
        let dy = (y as f64 + 0.5 - self.cy) / self.ry;
        dx * dx + dy * dy <= 1.0
    }
}

fn average(width: u32, height: u32, shapes: &[Ellipse]) -> SoftMap {
    SoftMap::from_fn(width, height, |x, y| {
        shapes.iter().filter(|e| e.contains(x, y)).count() as f32 / shapes.len() as f32
    })
}

/// Renders one eye; `cup_ratio` is the vertical cup-to-disc ratio of the
/// underlying ellipses before expert jitter.
pub fn synthetic_eye(width: u32, height: u32, cup_ratio: f64, seed: u64) -> SyntheticEye {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let short = width.min(height) as f64;
    let cx = width as f64 * rng.random_range(0.42..0.58);
    let cy = height as f64 * rng.random_range(0.42..0.58);
    let ry = short * rng.random_range(0.22..0.28);
    let rx = ry * rng.random_range(0.85..1.0);
    let jitter = (short * 0.015).max(0.5);

    let mut discs = Vec::new();
    let mut cups = Vec::new();
    for _ in 0..EXPERTS {
        let (dx, dy) = (
            rng.random_range(-jitter..jitter),
            rng.random_range(-jitter..jitter),
        );
        let s = rng.random_range(0.96..1.04);
        discs.push(Ellipse {
            cx: cx + dx,
            cy: cy + dy,
            rx: rx * s,
            ry: ry * s,
        });
        let s = rng.random_range(0.94..1.06);
        cups.push(Ellipse {
            cx: cx + dx,
            cy: cy + dy,
            rx: rx * cup_ratio * s,
            ry: ry * cup_ratio * s,
        });
    }
    let disc = average(width, height, &discs);
    let cup = average(width, height, &cups);

    let retina = Ellipse {
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        rx: width as f64 * 0.49,
        ry: height as f64 * 0.49,
    };
    let mut image = RgbImage::new(width, height);
    for (x, y, px) in image.enumerate_pixels_mut() {
        let i = (y * width + x) as usize;
        let (d, c) = (disc.values()[i] as f64, cup.values()[i] as f64);
        let base = if retina.contains(x, y) {
            [130.0, 45.0, 20.0]
        } else {
            [4.0, 2.0, 2.0]
        };
        let mut rgb = [0u8; 3];
        for k in 0..3 {
            let v =
                base[k] + d * ([225.0, 165.0, 95.0][k] - base[k]) + c * ([25.0, 70.0, 120.0][k]);
            rgb[k] = (v + rng.random_range(-6.0..6.0)).clamp(0.0, 255.0) as u8;
        }
        *px = Rgb(rgb);
    }
    SyntheticEye { image, disc, cup }
}

/// In-memory labelled sample with cup ratio 0.5.
pub fn synthetic_sample(width: u32, height: u32, seed: u64) -> FundusSample {
    let eye = synthetic_eye(width, height, 0.5, seed);
    let labels = encode_mask(&eye.disc, &eye.cup, DEFAULT_THRESHOLD).expect("matching maps");
    FundusSample::new(
        format!("synthetic_{seed:03}"),
        eye.image,
        labels,
        DatasetKind::Drishti,
        Diagnosis::Unknown,
    )
    .expect("matching dimensions")
}

fn to_gray(map: &SoftMap) -> GrayImage {
    let (w, h) = map.dimensions();
    GrayImage::from_fn(w, h, |x, y| {
        Luma([(map.values()[(y * w + x) as usize] * 255.0).round() as u8])
    })
}

fn save(img: impl FnOnce(&Path) -> image::ImageResult<()>, path: &Path) -> io::Result<()> {
    fs::create_dir_all(path.parent().expect("file inside a directory"))?;
    img(path).map_err(io::Error::other)
}

/// Writes 50 training and 51 test samples in the DRISHTI-GS layout.
pub fn write_drishti_fixture(root: &Path, width: u32, height: u32) -> io::Result<()> {
    for i in 0..DRISHTI_COUNT {
        let id = format!("drishtiGS_{:03}", i + 1);
        let (part, gt) = if i < DRISHTI_TRAIN {
            ("Training", "GT")
        } else {
            ("Test", "Test_GT")
        };
        let eye = synthetic_eye(
            width,
            height,
            0.45 + 0.25 * (i % 5) as f64 / 4.0,
            1000 + i as u64,
        );
        let soft = root.join(part).join(gt).join(&id).join("SoftMap");
        save(
            |p| eye.image.save(p),
            &root.join(part).join("Images").join(format!("{id}.png")),
        )?;
        save(
            |p| to_gray(&eye.disc).save(p),
            &soft.join(format!("{id}_ODsegSoftmap.png")),
        )?;
        save(
            |p| to_gray(&eye.cup).save(p),
            &soft.join(format!("{id}_cupsegSoftmap.png")),
        )?;
    }
    Ok(())
}

/// Writes 74 glaucoma and 85 healthy samples in the RIM-ONE layout.
pub fn write_rimone_fixture(root: &Path, width: u32, height: u32) -> io::Result<()> {
    let groups = [
        ("Glaucoma and suspects", "G", RIMONE_GLAUCOMA, 0.7),
        ("Healthy", "N", RIMONE_HEALTHY, 0.4),
    ];
    for (g, (dir, prefix, count, ratio)) in groups.into_iter().enumerate() {
        let base = root.join(dir);
        for i in 0..count {
            let id = format!("{prefix}-{}-L", i + 1);
            let eye = synthetic_eye(width, height, ratio, 5000 + 1000 * g as u64 + i as u64);
            save(
                |p| eye.image.save(p),
                &base.join("Stereo Images").join(format!("{id}.png")),
            )?;
            let masks = base.join("Average_masks");
            save(
                |p| to_gray(&eye.disc).save(p),
                &masks.join(format!("{id}-Disc-Avg.png")),
            )?;
            save(
                |p| to_gray(&eye.cup).save(p),
                &masks.join(format!("{id}-Cup-Avg.png")),
            )?;
        }
    }
    Ok(())
}
