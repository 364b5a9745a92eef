use std::fs;
use std::path::{Path, PathBuf};

use image::ImageReader;

use super::{
    load_sample, resize_sample, DataError, DatasetManifest, FundusSample, LabelMap, SampleRecord,
};

/// On-disk store of resized samples keyed by (id, side, threshold).
#[derive(Debug, Clone)]
pub struct SampleCache {
    dir: PathBuf,
}

impl SampleCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, DataError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn paths(&self, id: &str, side: u32, threshold: f64) -> (PathBuf, PathBuf) {
        let key = format!("{id}_{side}_t{threshold:.4}");
        (
            self.dir.join(format!("{key}.image.png")),
            self.dir.join(format!("{key}.labels.png")),
        )
    }

    /// Returns the cached sample, building and storing it on a miss.
    pub fn get(
        &self,
        manifest: &DatasetManifest,
        record: &SampleRecord,
        side: u32,
        threshold: f64,
    ) -> Result<FundusSample, DataError> {
        let (image_path, labels_path) = self.paths(&record.id, side, threshold);
        if image_path.is_file() && labels_path.is_file() {
            let decode = |p: &Path| -> Result<image::DynamicImage, DataError> {
                ImageReader::open(p)?
                    .decode()
                    .map_err(|source| DataError::Image {
                        id: record.id.clone(),
                        source,
                    })
            };
            let image = decode(&image_path)?.to_rgb8();
            let labels = LabelMap::from_image(&decode(&labels_path)?.to_luma8())?;
            return FundusSample::new(
                &record.id,
                image,
                labels,
                manifest.dataset,
                record.diagnosis,
            );
        }
        let sample = resize_sample(&load_sample(manifest, record, threshold)?, side)?;
        let to_err = |source| DataError::Image {
            id: record.id.clone(),
            source,
        };
        sample.image.save(&image_path).map_err(to_err)?;
        sample
            .labels
            .to_image()
            .save(&labels_path)
            .map_err(to_err)?;
        Ok(sample)
    }
}
