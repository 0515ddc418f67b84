//! Batched inference, dataset evaluation and pixel-frame outputs.

use serde::Serialize;

use crate::data::{crop_and_resize, Dataset, ModelInput, Sample};
use crate::error::Result;
use crate::geometry::{transform_covariance, Affine2};
use crate::loss::decode_cholesky;
use crate::metrics::{evaluate, GroundTruth, MetricReport, DEFAULT_THRESHOLD};
use crate::model::{image_to, MdmdModel, PredictionSet};
use crate::tensor::Float;

const EVAL_BATCH: usize = 16;

pub fn predict_inputs<T: Float>(model: &MdmdModel<T>, inputs: &[ModelInput], dataset_id: usize) -> Result<Vec<PredictionSet>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(EVAL_BATCH) {
        let images: Vec<Vec<T>> = chunk.iter().map(|m| image_to(&m.crop)).collect();
        let refs: Vec<&[T]> = images.iter().map(Vec::as_slice).collect();
        out.extend(model.forward_batch(&refs, dataset_id)?);
    }
    Ok(out)
}

/// Crops every face of `dataset`, predicts and scores in original pixels.
pub fn evaluate_dataset<T: Float>(model: &MdmdModel<T>, dataset: &Dataset, margin: f64) -> Result<MetricReport> {
    let size = model.config().image_size;
    let mut inputs = Vec::with_capacity(dataset.len());
    let mut truths = Vec::with_capacity(dataset.len());
    for s in dataset.iter() {
        let s = s?;
        let m = crop_and_resize(&s, margin, size)?;
        truths.push(m.ground_truth(&s));
        inputs.push(m);
    }
    evaluate_inputs(model, &inputs, &truths, dataset.dataset_id)
}

pub fn evaluate_inputs<T: Float>(
    model: &MdmdModel<T>,
    inputs: &[ModelInput],
    truths: &[GroundTruth],
    dataset_id: usize,
) -> Result<MetricReport> {
    let preds = predict_inputs(model, inputs, dataset_id)?;
    let lms: Vec<Vec<[f64; 2]>> = preds.into_iter().map(|p| p.landmarks).collect();
    evaluate(&lms, truths, model.schemas().get(dataset_id)?, DEFAULT_THRESHOLD)
}

/// One landmark in original-image pixels.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PixelLandmark {
    pub x: f64,
    pub y: f64,
    /// `J·Σ·Jᵀ` with `J` the linear part of the crop-to-pixel map.
    pub covariance: [[f64; 2]; 2],
}

pub fn to_pixel_frame(pred: &PredictionSet, to_pixels: &Affine2) -> Vec<PixelLandmark> {
    let j = to_pixels.linear();
    pred.landmarks
        .iter()
        .zip(&pred.cholesky_raw)
        .map(|(&mu, &raw)| {
            let [x, y] = to_pixels.apply(mu);
            let sigma = decode_cholesky(raw).covariance();
            PixelLandmark {
                x,
                y,
                covariance: transform_covariance(j, sigma),
            }
        })
        .collect()
}

/// Crops one face and returns its landmarks with pixel-frame covariances.
pub fn predict_sample<T: Float>(
    model: &MdmdModel<T>,
    sample: &Sample,
    margin: f64,
) -> Result<(Vec<PixelLandmark>, ModelInput)> {
    let input = crop_and_resize(sample, margin, model.config().image_size)?;
    let pred = model.forward(&image_to::<T>(&input.crop), sample.dataset_id)?;
    Ok((to_pixel_frame(&pred, &input.to_pixels()), input))
}
