//! NME, failure rate, AUC and the cumulative error distribution.
//!
//! All errors are percentages of a per-face normalization distance. A face is
//! a failure when its NME is strictly above the threshold, and the CED counts
//! faces at or below a threshold, so `fr == 100 * (1 - ced(threshold))`.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{MdmdError, Result};
use crate::geometry::Affine2;
use crate::schema::{DatasetSchema, Normalization};

pub const DEFAULT_THRESHOLD: f64 = 10.0;

/// Normalized mean error in percent.
pub fn nme(pred: &[[f64; 2]], gt: &[[f64; 2]], d: f64) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(MdmdError::Shape(format!(
            "{} predicted landmarks vs {} ground truth",
            pred.len(),
            gt.len()
        )));
    }
    if gt.is_empty() {
        return Err(MdmdError::Empty("face has no landmarks".into()));
    }
    if !(d > 0.0 && d.is_finite()) {
        return Err(MdmdError::Config(format!("degenerate normalization distance {d}")));
    }
    let total: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (p[0] - g[0]).hypot(p[1] - g[1]))
        .sum();
    Ok(100.0 * total / gt.len() as f64 / d)
}

/// Pixel length a face's errors are divided by: distance between the two
/// reference landmarks, or `sqrt(w * h)` of the ground-truth box.
pub fn normalization_distance(norm: &Normalization, gt: &[[f64; 2]], bbox: [f64; 4]) -> f64 {
    match norm {
        Normalization::Pair([i, j]) => {
            let (a, b) = (gt[*i], gt[*j]);
            (a[0] - b[0]).hypot(a[1] - b[1])
        }
        Normalization::Bbox => (bbox[2] * bbox[3]).sqrt(),
    }
}

/// Percentage of faces whose NME is strictly greater than `threshold`.
pub fn failure_rate(nmes: &[f64], threshold: f64) -> Result<f64> {
    if nmes.is_empty() {
        return Err(MdmdError::Empty("failure rate of zero faces".into()));
    }
    let failed = nmes.iter().filter(|&&e| e > threshold).count();
    Ok(100.0 * failed as f64 / nmes.len() as f64)
}

/// Area under the CED on `[0, threshold]`, divided by `threshold`.
///
/// A face with error `e` contributes `1/n` to the CED from `t = e` on, so the
/// exact integral is a sum of rectangles of width `threshold - e`.
pub fn auc(nmes: &[f64], threshold: f64) -> Result<f64> {
    if nmes.is_empty() {
        return Err(MdmdError::Empty("AUC of zero faces".into()));
    }
    let area: f64 = nmes.iter().map(|&e| (threshold - e.max(0.0)).max(0.0)).sum();
    Ok(area / (nmes.len() as f64 * threshold))
}

/// Fraction of faces with NME at or below `t`.
pub fn ced_at(nmes: &[f64], t: f64) -> f64 {
    nmes.iter().filter(|&&e| e <= t).count() as f64 / nmes.len() as f64
}

/// Step points of the CED up to `threshold`: starts at `t = 0`, has one point
/// per distinct error inside the range and ends at `(threshold, ced(threshold))`.
pub fn ced_points(nmes: &[f64], threshold: f64) -> Vec<(f64, f64)> {
    let mut sorted: Vec<f64> = nmes.iter().copied().filter(|&e| e <= threshold).collect();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut points = vec![(0.0, ced_at(nmes, 0.0))];
    for e in sorted {
        if e > 0.0 && e < threshold {
            points.push((e, ced_at(nmes, e)));
        }
    }
    points.push((threshold, ced_at(nmes, threshold)));
    points
}

/// Ground truth for one face, with the map from the normalized crop frame
/// (where the model predicts) to original-image pixels.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub landmarks: Vec<[f64; 2]>,
    pub bbox: [f64; 4],
    pub to_pixels: Affine2,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub schema: String,
    pub normalization: String,
    pub threshold: f64,
    pub per_face_nme: Vec<f64>,
    pub mean_nme: f64,
    pub fr: f64,
    pub auc: f64,
    pub ced: Vec<(f64, f64)>,
    /// Indices of faces skipped for a degenerate normalization distance.
    pub excluded: Vec<usize>,
}

impl MetricReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text + "\n").map_err(|e| MdmdError::io(path, e))
    }

    /// Writes `threshold,fraction` lines with a header.
    pub fn write_ced_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "threshold,fraction").unwrap();
        for (t, f) in &self.ced {
            writeln!(out, "{t},{f}").unwrap();
        }
        std::fs::write(path, out).map_err(|e| MdmdError::io(path, e))
    }
}

fn normalization_tag(norm: &Normalization) -> String {
    match norm {
        Normalization::Pair([i, j]) => format!("pair({i},{j})"),
        Normalization::Bbox => "bbox".into(),
    }
}

/// Scores faces whose predictions are already in original-image pixels.
pub fn evaluate_pixels(
    predictions: &[Vec<[f64; 2]>],
    truths: &[([f64; 4], Vec<[f64; 2]>)],
    schema: &DatasetSchema,
    threshold: f64,
) -> Result<MetricReport> {
    if predictions.len() != truths.len() {
        return Err(MdmdError::Shape(format!(
            "{} predictions for {} faces",
            predictions.len(),
            truths.len()
        )));
    }
    let mut per_face = Vec::with_capacity(truths.len());
    let mut excluded = Vec::new();
    for (i, (pred, (bbox, gt))) in predictions.iter().zip(truths).enumerate() {
        if gt.len() != schema.landmark_count || pred.len() != schema.landmark_count {
            return Err(MdmdError::LandmarkCount {
                face_id: i.to_string(),
                expected: schema.landmark_count,
                found: if gt.len() != schema.landmark_count { gt.len() } else { pred.len() },
            });
        }
        let d = normalization_distance(&schema.normalization, gt, *bbox);
        if !(d > 0.0 && d.is_finite()) {
            excluded.push(i);
            continue;
        }
        per_face.push(nme(pred, gt, d)?);
    }
    if per_face.is_empty() {
        return Err(MdmdError::Empty("no face with a valid normalization distance".into()));
    }
    let ced = ced_points(&per_face, threshold);
    let ced_end = ced.last().map(|p| p.1).unwrap_or(0.0);
    Ok(MetricReport {
        schema: schema.name.clone(),
        normalization: normalization_tag(&schema.normalization),
        threshold,
        mean_nme: per_face.iter().sum::<f64>() / per_face.len() as f64,
        fr: 100.0 * (1.0 - ced_end),
        auc: auc(&per_face, threshold)?,
        ced,
        per_face_nme: per_face,
        excluded,
    })
}

/// Maps crop-frame predictions back to pixels and scores them.
pub fn evaluate(
    predictions: &[Vec<[f64; 2]>],
    truths: &[GroundTruth],
    schema: &DatasetSchema,
    threshold: f64,
) -> Result<MetricReport> {
    if predictions.len() != truths.len() {
        return Err(MdmdError::Shape(format!(
            "{} predictions for {} faces",
            predictions.len(),
            truths.len()
        )));
    }
    let pixels: Vec<Vec<[f64; 2]>> = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| p.iter().map(|&q| t.to_pixels.apply(q)).collect())
        .collect();
    let gts: Vec<_> = truths.iter().map(|t| (t.bbox, t.landmarks.clone())).collect();
    evaluate_pixels(&pixels, &gts, schema, threshold)
}
