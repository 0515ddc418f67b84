//! Procedural cartoon faces with analytically exact landmarks.
//!
//! A face is a filled head ellipse with two eye disks, brows, a nose triangle
//! and a mouth bounded by two parabolic lip curves. Landmarks are computed in
//! a face-local frame (origin at the head center, y down) and rotated by the
//! head roll, so they are exact by construction. The 9-point template is a
//! subset of the 68-point one, which keeps the two schemas consistent.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MdmdError, Result};
use crate::schema::SchemaSet;

use super::manifest::{write_manifest, ManifestHeader, Record};

pub const CANVAS: u32 = 128;
const SUPERSAMPLE: u32 = 4;

/// 68-point indices that make up the 9-point template.
pub const NINE_FROM_68: [usize; 9] = [36, 39, 42, 45, 30, 48, 51, 54, 57];

#[derive(Clone, Debug, PartialEq)]
pub struct FaceParams {
    pub center: [f64; 2],
    pub radii: [f64; 2],
    /// Head roll in radians.
    pub roll: f64,
    pub eye_dx: f64,
    pub eye_y: f64,
    pub eye_r: f64,
    pub brow_y: f64,
    pub brow_half: f64,
    pub brow_arch: f64,
    pub nose_top: f64,
    pub nose_base: f64,
    pub nose_half: f64,
    pub mouth_y: f64,
    pub mouth_half: f64,
    pub upper_lip: f64,
    pub lower_lip: f64,
    pub smile: f64,
    pub background: [[f64; 3]; 2],
    pub skin: [f64; 3],
    pub eye_color: [f64; 3],
    pub brow_color: [f64; 3],
    pub lip_color: [f64; 3],
}

fn color<R: Rng>(rng: &mut R, lo: [f64; 3], hi: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|c| rng.random_range(lo[c]..=hi[c]))
}

impl FaceParams {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let c = CANVAS as f64 / 2.0;
        let rx = rng.random_range(28.0..=35.0);
        let ry = rx * rng.random_range(1.12..=1.28);
        let eye_y = -ry * rng.random_range(0.12..=0.24);
        let eye_r = rng.random_range(3.5..=5.5);
        let brow_y = eye_y - eye_r - rng.random_range(4.0..=7.0);
        let nose_base = ry * rng.random_range(0.16..=0.28);
        let mouth_y = ry * rng.random_range(0.46..=0.58);
        FaceParams {
            center: [c + rng.random_range(-6.0..=6.0), c + rng.random_range(-4.0..=6.0)],
            radii: [rx, ry],
            roll: rng.random_range(-12.0f64..=12.0).to_radians(),
            eye_dx: rx * rng.random_range(0.36..=0.46),
            eye_y,
            eye_r,
            brow_y,
            brow_half: eye_r * rng.random_range(1.3..=1.8),
            brow_arch: rng.random_range(1.0..=3.0),
            nose_top: eye_y + rng.random_range(1.0..=4.0),
            nose_base,
            nose_half: rng.random_range(4.0..=7.0),
            mouth_y,
            mouth_half: rx * rng.random_range(0.3..=0.45),
            upper_lip: rng.random_range(2.5..=4.5),
            lower_lip: rng.random_range(3.0..=5.5),
            smile: rng.random_range(-3.0..=3.0),
            background: [
                color(rng, [30.0, 70.0, 110.0], [110.0, 150.0, 200.0]),
                color(rng, [30.0, 70.0, 110.0], [110.0, 150.0, 200.0]),
            ],
            skin: color(rng, [190.0, 145.0, 115.0], [235.0, 195.0, 165.0]),
            eye_color: color(rng, [15.0, 15.0, 15.0], [55.0, 55.0, 70.0]),
            brow_color: color(rng, [50.0, 35.0, 20.0], [95.0, 75.0, 60.0]),
            lip_color: color(rng, [150.0, 35.0, 45.0], [195.0, 75.0, 85.0]),
        }
    }

    /// Face-local point to image pixels.
    pub fn to_image(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.roll.sin_cos();
        [
            self.center[0] + c * p[0] - s * p[1],
            self.center[1] + s * p[0] + c * p[1],
        ]
    }

    fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.roll.sin_cos();
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// Eye disk centers (image-left first) in image pixels.
    pub fn eye_centers(&self) -> [[f64; 2]; 2] {
        [
            self.to_image([-self.eye_dx, self.eye_y]),
            self.to_image([self.eye_dx, self.eye_y]),
        ]
    }

    /// Axis-aligned box of the rotated head ellipse: `[x, y, w, h]`.
    pub fn bbox(&self) -> [f64; 4] {
        let [rx, ry] = self.radii;
        let (s, c) = self.roll.sin_cos();
        let hx = ((rx * c).powi(2) + (ry * s).powi(2)).sqrt();
        let hy = ((rx * s).powi(2) + (ry * c).powi(2)).sqrt();
        [self.center[0] - hx, self.center[1] - hy, 2.0 * hx, 2.0 * hy]
    }

    fn upper_lip_y(&self, t: f64) -> f64 {
        self.mouth_y - self.upper_lip * (1.0 - t * t) + self.smile * t * t
    }

    fn lower_lip_y(&self, t: f64) -> f64 {
        self.mouth_y + self.lower_lip * (1.0 - t * t) + self.smile * t * t
    }

    fn brow_point(&self, side: f64, t: f64) -> [f64; 2] {
        [
            side * self.eye_dx + t * self.brow_half,
            self.brow_y - self.brow_arch * (1.0 - t * t),
        ]
    }

    /// The 68-point template in iBUG order, image pixels.
    pub fn landmarks_68(&self) -> Vec<[f64; 2]> {
        let [rx, ry] = self.radii;
        let mut p = Vec::with_capacity(68);
        // jaw: left temple, through the chin, to the right temple
        for k in 0..17 {
            let phi = PI + 0.15 - k as f64 * (PI + 0.3) / 16.0;
            p.push([rx * phi.cos(), ry * phi.sin()]);
        }
        for k in 0..5 {
            p.push(self.brow_point(-1.0, -1.0 + k as f64 * 0.5));
        }
        for k in 0..5 {
            p.push(self.brow_point(1.0, -1.0 + k as f64 * 0.5));
        }
        let tip = self.nose_base - 1.5;
        for k in 0..4 {
            p.push([0.0, self.nose_top + (tip - self.nose_top) * k as f64 / 3.0]);
        }
        for k in 0..5 {
            p.push([self.nose_half * (k as f64 / 2.0 - 1.0), self.nose_base]);
        }
        let r = self.eye_r;
        let h = r * 3f64.sqrt() / 2.0;
        for side in [-1.0, 1.0] {
            let e = [side * self.eye_dx, self.eye_y];
            for o in [[-r, 0.0], [-r / 2.0, -h], [r / 2.0, -h], [r, 0.0], [r / 2.0, h], [-r / 2.0, h]] {
                p.push([e[0] + o[0], e[1] + o[1]]);
            }
        }
        let mw = self.mouth_half;
        p.push([-mw, self.upper_lip_y(-1.0)]);
        for t in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            let t = t / 3.0;
            p.push([t * mw, self.upper_lip_y(t)]);
        }
        p.push([mw, self.upper_lip_y(1.0)]);
        for t in [2.0, 1.0, 0.0, -1.0, -2.0] {
            let t = t / 3.0;
            p.push([t * mw, self.lower_lip_y(t)]);
        }
        let inner_up = |t: f64| self.mouth_y - 0.35 * self.upper_lip * (1.0 - t * t) + self.smile * t * t;
        let inner_lo = |t: f64| self.mouth_y + 0.35 * self.lower_lip * (1.0 - t * t) + self.smile * t * t;
        let tc = 0.85;
        p.push([-tc * mw, self.mouth_y + self.smile * tc * tc]);
        for t in [-0.4, 0.0, 0.4] {
            p.push([t * mw, inner_up(t)]);
        }
        p.push([tc * mw, self.mouth_y + self.smile * tc * tc]);
        for t in [0.4, 0.0, -0.4] {
            p.push([t * mw, inner_lo(t)]);
        }
        debug_assert_eq!(p.len(), 68);
        p.into_iter().map(|q| self.to_image(q)).collect()
    }

    pub fn landmarks_9(&self) -> Vec<[f64; 2]> {
        let all = self.landmarks_68();
        NINE_FROM_68.iter().map(|&k| all[k]).collect()
    }

    fn shade(&self, x: f64, y: f64) -> [f64; 3] {
        let [lx, ly] = self.to_local([x, y]);
        let [rx, ry] = self.radii;
        let t = x / CANVAS as f64;
        let mut c = [0, 1, 2].map(|i| self.background[0][i] * (1.0 - t) + self.background[1][i] * t);
        if (lx / rx).powi(2) + (ly / ry).powi(2) > 1.0 {
            return c;
        }
        c = self.skin;
        for side in [-1.0, 1.0] {
            let u = (lx - side * self.eye_dx) / self.brow_half;
            if u.abs() <= 1.0 {
                let by = self.brow_point(side, u)[1];
                if (ly - by).abs() <= 1.2 {
                    c = self.brow_color;
                }
            }
            if (lx - side * self.eye_dx).hypot(ly - self.eye_y) <= self.eye_r {
                c = self.eye_color;
            }
        }
        if ly >= self.nose_top && ly <= self.nose_base {
            let half = self.nose_half * (ly - self.nose_top) / (self.nose_base - self.nose_top);
            if lx.abs() <= half {
                c = self.skin.map(|v| v * 0.72);
            }
        }
        let tm = lx / self.mouth_half;
        if tm.abs() <= 1.0 && ly >= self.upper_lip_y(tm) && ly <= self.lower_lip_y(tm) {
            let mid = self.mouth_y + self.smile * tm * tm;
            c = if (ly - mid).abs() <= 0.6 { [60.0, 15.0, 20.0] } else { self.lip_color };
        }
        c
    }

    /// Renders with 4x4 supersampling so edges move smoothly with the geometry.
    pub fn render(&self) -> RgbImage {
        let mut img = RgbImage::new(CANVAS, CANVAS);
        let n = (SUPERSAMPLE * SUPERSAMPLE) as f64;
        for py in 0..CANVAS {
            for px in 0..CANVAS {
                let mut acc = [0.0; 3];
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let x = px as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                        let y = py as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                        let c = self.shade(x, y);
                        for i in 0..3 {
                            acc[i] += c[i];
                        }
                    }
                }
                img.put_pixel(px, py, Rgb(acc.map(|v| (v / n).round().clamp(0.0, 255.0) as u8)));
            }
        }
        img
    }
}

/// Face parameters for `index` under `seed`; independent of the schema, so
/// the 9- and 68-point datasets drawn with one seed show the same faces.
pub fn face_params(seed: u64, index: u64) -> FaceParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    FaceParams::random(&mut rng)
}

/// Landmarks of `face` under the template matching `landmark_count`.
pub fn template_landmarks(face: &FaceParams, landmark_count: usize) -> Option<Vec<[f64; 2]>> {
    match landmark_count {
        9 => Some(face.landmarks_9()),
        68 => Some(face.landmarks_68()),
        _ => None,
    }
}

/// Writes `count` faces and `manifest.jsonl` into `out_dir`; returns the manifest path.
pub fn gen_synthetic(schemas: &SchemaSet, schema: &str, count: usize, seed: u64, out_dir: &Path) -> Result<PathBuf> {
    let id = schemas.id_of(schema)?;
    let n = schemas.get(id)?.landmark_count;
    if template_landmarks(&face_params(seed, 0), n).is_none() {
        return Err(MdmdError::schema(
            schema,
            format!("no synthetic template for {n} landmarks (supported: 9, 68)"),
        ));
    }
    let images = out_dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| MdmdError::io(&images, e))?;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let face = face_params(seed, i as u64);
        let file = format!("images/{schema}_{i:05}.png");
        let path = out_dir.join(&file);
        face.render()
            .save_with_format(&path, image::ImageFormat::Png)
            .map_err(|e| MdmdError::Image {
                path: path.clone(),
                reason: e.to_string(),
            })?;
        records.push(Record {
            image: file,
            bbox: face.bbox(),
            landmarks: template_landmarks(&face, n).expect("template checked above"),
            id: format!("{schema}-{seed}-{i}"),
        });
    }
    let manifest = out_dir.join("manifest.jsonl");
    let header = ManifestHeader {
        schema: schema.to_string(),
        landmark_count: n,
    };
    write_manifest(&manifest, &header, &records)?;
    Ok(manifest)
}
