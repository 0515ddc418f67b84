//! Manifests, cropping, augmentation and the synthetic face generator.

mod augment;
mod crop;
mod manifest;
pub mod synthetic;

use image::RgbImage;

use crate::geometry::Affine2;
use crate::metrics::GroundTruth;

pub use augment::{apply_ops, augment, AugmentOps, AugmentPolicy};
pub use crop::{crop_and_resize, crop_window, normalize_pixel, sample_bilinear, DEFAULT_MARGIN};
pub use manifest::{load_rgb, read_dataset, write_manifest, Dataset, ManifestHeader, Record};
pub use synthetic::gen_synthetic;

/// One annotated face in its original image.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: RgbImage,
    /// `[x, y, w, h]` in pixels.
    pub bbox: [f64; 4],
    /// Original-image pixels.
    pub landmarks: Vec<[f64; 2]>,
    pub dataset_id: usize,
    pub face_id: String,
}

/// A face crop ready for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    /// `image_size * image_size * 3`, row-major, channels last, normalized to `[-1, 1]`.
    pub crop: Vec<f32>,
    pub image_size: usize,
    /// Landmarks in the normalized crop frame.
    pub landmarks_norm: Vec<[f64; 2]>,
    /// Crop pixel coordinates to original-image pixels.
    pub crop_transform: Affine2,
}

impl ModelInput {
    /// Normalized crop frame to original-image pixels.
    pub fn to_pixels(&self) -> Affine2 {
        let s = self.image_size as f64;
        self.crop_transform.then_after(&Affine2::scaling(s, s))
    }

    pub fn ground_truth(&self, sample: &Sample) -> GroundTruth {
        GroundTruth {
            landmarks: sample.landmarks.clone(),
            bbox: sample.bbox,
            to_pixels: self.to_pixels(),
        }
    }
}
