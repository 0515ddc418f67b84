use image::RgbImage;

use crate::error::{MdmdError, Result};
use crate::geometry::Affine2;

use super::{ModelInput, Sample};

pub const DEFAULT_MARGIN: f64 = 0.25;

/// Pixel value to model input: `(v / 255 - 0.5) / 0.5`.
pub fn normalize_pixel(v: f64) -> f32 {
    ((v / 255.0 - 0.5) / 0.5) as f32
}

/// Bilinear sample of channel `ch` at continuous image position `(x, y)`,
/// where pixel `(i, j)` covers `[i, i+1) x [j, j+1)`. Out-of-range reads clamp
/// to the nearest edge pixel.
pub fn sample_bilinear(img: &RgbImage, x: f64, y: f64, ch: usize) -> f64 {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let fx = x - 0.5;
    let fy = y - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = fx - x0;
    let ty = fy - y0;
    let px = |xi: i64, yi: i64| {
        let xi = xi.clamp(0, w - 1) as u32;
        let yi = yi.clamp(0, h - 1) as u32;
        img.get_pixel(xi, yi).0[ch] as f64
    };
    let (x0, y0) = (x0 as i64, y0 as i64);
    let top = px(x0, y0) * (1.0 - tx) + px(x0 + 1, y0) * tx;
    let bottom = px(x0, y0 + 1) * (1.0 - tx) + px(x0 + 1, y0 + 1) * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Square crop window `(x0, y0, side)` around a box, grown by `margin` of
/// its longer side on every edge.
pub fn crop_window(bbox: [f64; 4], margin: f64) -> (f64, f64, f64) {
    let [x, y, w, h] = bbox;
    let side = w.max(h) * (1.0 + 2.0 * margin);
    let (cx, cy) = (x + w / 2.0, y + h / 2.0);
    (cx - side / 2.0, cy - side / 2.0, side)
}

pub fn crop_and_resize(sample: &Sample, margin: f64, image_size: usize) -> Result<ModelInput> {
    let [x, y, w, h] = sample.bbox;
    if !(w > 0.0 && h > 0.0) {
        return Err(MdmdError::Config(format!(
            "face `{}`: bbox must have positive size",
            sample.face_id
        )));
    }
    let (iw, ih) = (sample.image.width() as f64, sample.image.height() as f64);
    if x >= iw || y >= ih || x + w <= 0.0 || y + h <= 0.0 {
        return Err(MdmdError::BboxOutside {
            face_id: sample.face_id.clone(),
        });
    }
    let (x0, y0, side) = crop_window(sample.bbox, margin);
    let scale = side / image_size as f64;
    // crop pixel coordinates -> original pixel coordinates
    let crop_transform = Affine2([[scale, 0.0, x0], [0.0, scale, y0]]);

    let mut crop = vec![0f32; image_size * image_size * 3];
    for v in 0..image_size {
        for u in 0..image_size {
            let src = crop_transform.apply([u as f64 + 0.5, v as f64 + 0.5]);
            let base = (v * image_size + u) * 3;
            for ch in 0..3 {
                crop[base + ch] = normalize_pixel(sample_bilinear(&sample.image, src[0], src[1], ch));
            }
        }
    }
    let inv = crop_transform.inverse();
    let s = image_size as f64;
    let landmarks_norm = sample
        .landmarks
        .iter()
        .map(|&p| {
            let q = inv.apply(p);
            [q[0] / s, q[1] / s]
        })
        .collect();
    Ok(ModelInput {
        crop,
        image_size,
        landmarks_norm,
        crop_transform,
    })
}
