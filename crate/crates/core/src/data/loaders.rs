//! Directory layouts.
//!
//! DRISHTI-GS (`root` may also be the parent of `Drishti-GS1_files/`):
//!
//! ```text
//! Training/Images/<id>.png
//! Training/GT/<id>/SoftMap/<id>_ODsegSoftmap.png
//! Training/GT/<id>/SoftMap/<id>_cupsegSoftmap.png
//! Test/Images/<id>.png
//! Test/Test_GT/<id>/SoftMap/...        (or Test/GT/<id>/SoftMap/...)
//! ```
//!
//! RIM-ONE (r3 layout):
//!
//! ```text
//! Glaucoma and suspects/Stereo Images/<id>.jpg   (or Images/)
//! Glaucoma and suspects/Average_masks/<id>-Disc-Avg.png
//! Glaucoma and suspects/Average_masks/<id>-Cup-Avg.png
//! Healthy/...                                    (same structure)
//! ```
//!
//! Stereo photographs twice as wide as their masks are cropped to the left view.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops;
use image::ImageReader;

use super::manifest::{DatasetManifest, Rejection, SampleRecord, Split};
use super::{encode_mask, DataError, DatasetKind, Diagnosis, FundusSample, SoftMap};

pub const DRISHTI_COUNT: usize = 101;
pub const RIMONE_COUNT: usize = 159;
pub const RIMONE_GLAUCOMA: usize = 74;
pub const RIMONE_HEALTHY: usize = 85;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

pub fn load_dataset(kind: DatasetKind, root: &Path) -> Result<DatasetManifest, DataError> {
    match kind {
        DatasetKind::Drishti => load_drishti(root),
        DatasetKind::Rimone => load_rimone(root),
    }
}

fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>, DataError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn read_dimensions(path: &Path) -> Result<(u32, u32), String> {
    ImageReader::open(path)
        .map_err(|e| e.to_string())?
        .with_guessed_format()
        .map_err(|e| e.to_string())?
        .into_dimensions()
        .map_err(|e| e.to_string())
}

/// Header-level check of one record; problems become a rejection rather than an error.
fn validate(root: &Path, record: &SampleRecord) -> Result<(), String> {
    let (iw, ih) =
        read_dimensions(&root.join(&record.image)).map_err(|e| format!("unreadable image: {e}"))?;
    let disc = read_dimensions(&root.join(&record.disc))
        .map_err(|e| format!("unreadable disc map: {e}"))?;
    let cup =
        read_dimensions(&root.join(&record.cup)).map_err(|e| format!("unreadable cup map: {e}"))?;
    if disc != cup {
        return Err(format!("disc map {disc:?} and cup map {cup:?} differ"));
    }
    if (iw, ih) != disc && (iw, ih) != (2 * disc.0, disc.1) {
        return Err(format!("image {:?} does not match maps {disc:?}", (iw, ih)));
    }
    Ok(())
}

fn finish(
    kind: DatasetKind,
    root: &Path,
    candidates: Vec<SampleRecord>,
    expected: usize,
) -> Result<DatasetManifest, DataError> {
    if candidates.len() != expected {
        return Err(DataError::CountMismatch {
            expected,
            found: candidates.len(),
        });
    }
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for record in candidates {
        match validate(root, &record) {
            Ok(()) => records.push(record),
            Err(reason) => rejected.push(Rejection {
                id: record.id,
                reason,
            }),
        }
    }
    Ok(DatasetManifest {
        dataset: kind,
        root: root.to_path_buf(),
        seed: None,
        ratios: None,
        records,
        rejected,
    })
}

fn require_file(id: &str, path: PathBuf) -> Result<PathBuf, DataError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(DataError::MissingFile {
            id: id.to_string(),
            path,
        })
    }
}

/// Scans a DRISHTI-GS tree; samples keep the dataset's own Training/Test split.
pub fn load_drishti(root: &Path) -> Result<DatasetManifest, DataError> {
    let nested = root.join("Drishti-GS1_files");
    let root = if nested.is_dir() {
        nested
    } else {
        root.to_path_buf()
    };
    let train_images = root.join("Training").join("Images");
    if !train_images.is_dir() {
        return Err(DataError::NotFound(root));
    }
    let test_gt = ["Test_GT", "GT"]
        .iter()
        .map(|d| root.join("Test").join(d))
        .find(|p| p.is_dir())
        .unwrap_or_else(|| root.join("Test").join("Test_GT"));
    let parts = [
        (train_images, root.join("Training").join("GT"), Split::Train),
        (root.join("Test").join("Images"), test_gt, Split::Test),
    ];

    let mut candidates = Vec::new();
    for (images, gt, split) in parts {
        if !images.is_dir() {
            continue;
        }
        for (id, image) in list_images(&images)? {
            let soft = gt.join(&id).join("SoftMap");
            let disc = require_file(&id, soft.join(format!("{id}_ODsegSoftmap.png")))?;
            let cup = require_file(&id, soft.join(format!("{id}_cupsegSoftmap.png")))?;
            candidates.push(SampleRecord {
                image: relative(&root, &image),
                disc: relative(&root, &disc),
                cup: relative(&root, &cup),
                id,
                diagnosis: Diagnosis::Unknown,
                split: Some(split),
            });
        }
    }
    finish(DatasetKind::Drishti, &root, candidates, DRISHTI_COUNT)
}

/// Scans a RIM-ONE tree; diagnosis comes from the top-level folder.
pub fn load_rimone(root: &Path) -> Result<DatasetManifest, DataError> {
    let groups = [
        ("Glaucoma and suspects", Diagnosis::Glaucoma),
        ("Healthy", Diagnosis::Healthy),
    ];
    if !groups.iter().any(|(d, _)| root.join(d).is_dir()) {
        return Err(DataError::NotFound(root.to_path_buf()));
    }
    let mut candidates = Vec::new();
    for (dir, diagnosis) in groups {
        let base = root.join(dir);
        let Some(images) = ["Stereo Images", "Images"]
            .iter()
            .map(|d| base.join(d))
            .find(|p| p.is_dir())
        else {
            return Err(DataError::NotFound(base));
        };
        let masks = base.join("Average_masks");
        for (id, image) in list_images(&images)? {
            let disc = require_file(&id, masks.join(format!("{id}-Disc-Avg.png")))?;
            let cup = require_file(&id, masks.join(format!("{id}-Cup-Avg.png")))?;
            candidates.push(SampleRecord {
                image: relative(root, &image),
                disc: relative(root, &disc),
                cup: relative(root, &cup),
                id,
                diagnosis,
                split: None,
            });
        }
    }
    finish(DatasetKind::Rimone, root, candidates, RIMONE_COUNT)
}

fn open(id: &str, path: &Path) -> Result<image::DynamicImage, DataError> {
    ImageReader::open(path)
        .map_err(|_| DataError::MissingFile {
            id: id.to_string(),
            path: path.to_path_buf(),
        })?
        .with_guessed_format()?
        .decode()
        .map_err(|source| DataError::Image {
            id: id.to_string(),
            source,
        })
}

/// Decodes one record at source resolution.
pub fn load_sample(
    manifest: &DatasetManifest,
    record: &SampleRecord,
    threshold: f64,
) -> Result<FundusSample, DataError> {
    let id = record.id.as_str();
    let mut image = open(id, &manifest.resolve(&record.image))?.to_rgb8();
    let disc = SoftMap::from_gray(&open(id, &manifest.resolve(&record.disc))?.to_luma8());
    let cup = SoftMap::from_gray(&open(id, &manifest.resolve(&record.cup))?.to_luma8());
    let (mw, mh) = disc.dimensions();
    if image.dimensions() == (2 * mw, mh) {
        image = imageops::crop_imm(&image, 0, 0, mw, mh).to_image();
    }
    let labels = encode_mask(&disc, &cup, threshold)?;
    FundusSample::new(id, image, labels, manifest.dataset, record.diagnosis)
}
