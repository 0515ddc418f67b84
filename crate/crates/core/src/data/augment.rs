use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MdmdError, Result};
use crate::geometry::Affine2;
use crate::schema::DatasetSchema;

use super::ModelInput;

/// Probabilities and ranges of the reduced augmentation policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub rotation_prob: f64,
    pub max_rotation_deg: f64,
    pub scale_prob: f64,
    pub scale_range: [f64; 2],
    pub translate_prob: f64,
    /// Fraction of the crop side.
    pub max_translate: f64,
    pub flip_prob: f64,
    pub photometric_prob: f64,
    /// Additive shift in normalized pixel units.
    pub max_brightness: f64,
    /// Contrast factor is drawn from `1 ± max_contrast`.
    pub max_contrast: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            rotation_prob: 0.5,
            max_rotation_deg: 30.0,
            scale_prob: 0.5,
            scale_range: [0.8, 1.2],
            translate_prob: 0.5,
            max_translate: 0.08,
            flip_prob: 0.5,
            photometric_prob: 0.5,
            max_brightness: 0.2,
            max_contrast: 0.2,
        }
    }
}

impl AugmentPolicy {
    /// Never changes its input.
    pub fn identity() -> Self {
        AugmentPolicy {
            rotation_prob: 0.0,
            scale_prob: 0.0,
            translate_prob: 0.0,
            flip_prob: 0.0,
            photometric_prob: 0.0,
            ..AugmentPolicy::default()
        }
    }

    pub fn is_identity(&self) -> bool {
        self.rotation_prob <= 0.0
            && self.scale_prob <= 0.0
            && self.translate_prob <= 0.0
            && self.flip_prob <= 0.0
            && self.photometric_prob <= 0.0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AugmentOps {
        let mut ops = AugmentOps::default();
        if rng.random::<f64>() < self.rotation_prob {
            ops.rotation_deg = rng.random_range(-1.0..=1.0) * self.max_rotation_deg;
        }
        if rng.random::<f64>() < self.scale_prob {
            ops.scale = rng.random_range(self.scale_range[0]..=self.scale_range[1]);
        }
        if rng.random::<f64>() < self.translate_prob {
            ops.translate = [
                rng.random_range(-1.0..=1.0) * self.max_translate,
                rng.random_range(-1.0..=1.0) * self.max_translate,
            ];
        }
        ops.flip = rng.random::<f64>() < self.flip_prob;
        if rng.random::<f64>() < self.photometric_prob {
            ops.brightness = rng.random_range(-1.0..=1.0) * self.max_brightness;
            ops.contrast = 1.0 + rng.random_range(-1.0..=1.0) * self.max_contrast;
        }
        ops
    }
}

/// One concrete draw from a policy.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentOps {
    pub rotation_deg: f64,
    pub scale: f64,
    pub translate: [f64; 2],
    pub flip: bool,
    pub brightness: f64,
    pub contrast: f64,
}

impl Default for AugmentOps {
    fn default() -> Self {
        AugmentOps {
            rotation_deg: 0.0,
            scale: 1.0,
            translate: [0.0, 0.0],
            flip: false,
            brightness: 0.0,
            contrast: 1.0,
        }
    }
}

impl AugmentOps {
    /// Geometric part as a map on the normalized crop frame: scale and rotate
    /// about the crop center, translate, then mirror `x → 1 − x` if flipping.
    pub fn geometry(&self) -> Affine2 {
        let c = Affine2::translation(0.5, 0.5);
        let a = Affine2::translation(self.translate[0], self.translate[1])
            .then_after(&c)
            .then_after(&Affine2::rotation(self.rotation_deg.to_radians()))
            .then_after(&Affine2::scaling(self.scale, self.scale))
            .then_after(&Affine2::translation(-0.5, -0.5));
        if self.flip {
            Affine2([[-1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]).then_after(&a)
        } else {
            a
        }
    }

    fn is_geometric_identity(&self) -> bool {
        self.geometry() == Affine2::IDENTITY && !self.flip
    }
}

fn sample_crop(crop: &[f32], size: usize, x: f64, y: f64, ch: usize) -> f64 {
    let fx = x - 0.5;
    let fy = y - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let (tx, ty) = (fx - x0, fy - y0);
    let last = size as i64 - 1;
    let px = |xi: i64, yi: i64| {
        let xi = xi.clamp(0, last) as usize;
        let yi = yi.clamp(0, last) as usize;
        crop[(yi * size + xi) * 3 + ch] as f64
    };
    let (x0, y0) = (x0 as i64, y0 as i64);
    let top = px(x0, y0) * (1.0 - tx) + px(x0 + 1, y0) * tx;
    let bottom = px(x0, y0 + 1) * (1.0 - tx) + px(x0 + 1, y0 + 1) * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Applies concrete ops. Pixels and landmarks go through the same map, and a
/// flip also reorders landmarks with `flip_permutation`.
pub fn apply_ops(input: &ModelInput, ops: &AugmentOps, flip_permutation: Option<&[usize]>) -> Result<ModelInput> {
    let mut out = input.clone();
    let s = input.image_size;
    let sf = s as f64;
    if !ops.is_geometric_identity() {
        let a = ops.geometry();
        // in crop pixel units
        let a_px = Affine2::scaling(sf, sf)
            .then_after(&a)
            .then_after(&Affine2::scaling(1.0 / sf, 1.0 / sf));
        let back = a_px.inverse();
        for v in 0..s {
            for u in 0..s {
                let src = back.apply([u as f64 + 0.5, v as f64 + 0.5]);
                for ch in 0..3 {
                    out.crop[(v * s + u) * 3 + ch] = sample_crop(&input.crop, s, src[0], src[1], ch) as f32;
                }
            }
        }
        let moved: Vec<[f64; 2]> = input.landmarks_norm.iter().map(|&p| a.apply(p)).collect();
        out.landmarks_norm = if ops.flip {
            let perm = flip_permutation.ok_or_else(|| MdmdError::MissingFlipPermutation("<unnamed>".into()))?;
            if perm.len() != moved.len() {
                return Err(MdmdError::Shape(format!(
                    "flip permutation has {} entries for {} landmarks",
                    perm.len(),
                    moved.len()
                )));
            }
            perm.iter().map(|&k| moved[k]).collect()
        } else {
            moved
        };
        out.crop_transform = input.crop_transform.then_after(&back);
    }
    if ops.brightness != 0.0 || ops.contrast != 1.0 {
        let n = out.crop.len() as f64;
        let mean = out.crop.iter().map(|&v| v as f64).sum::<f64>() / n;
        for v in out.crop.iter_mut() {
            let x = (*v as f64 - mean) * ops.contrast + mean + ops.brightness;
            *v = x.clamp(-1.0, 1.0) as f32;
        }
    }
    Ok(out)
}

/// Draws ops from `policy` with `rng` and applies them.
pub fn augment<R: Rng + ?Sized>(
    input: &ModelInput,
    policy: &AugmentPolicy,
    schema: &DatasetSchema,
    rng: &mut R,
) -> Result<ModelInput> {
    if policy.flip_prob > 0.0 && schema.flip_permutation.is_none() {
        return Err(MdmdError::MissingFlipPermutation(schema.name.clone()));
    }
    if policy.is_identity() {
        return Ok(input.clone());
    }
    let ops = policy.sample(rng);
    apply_ops(input, &ops, schema.flip_permutation.as_deref())
}
