//! Augments one synthetic face a few times and writes each crop as a PNG
//! with its landmarks drawn in. Flips re-index the landmarks.
//!
//! ```text
//! cargo run --example augmentation -- /tmp/aug
//! ```

use std::path::PathBuf;

use image::{Rgb, RgbImage};
use mdmd::data::{augment, crop_and_resize, gen_synthetic, read_dataset, AugmentPolicy, ModelInput};
use mdmd::schema::SchemaSet;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn to_image(m: &ModelInput) -> RgbImage {
    let s = m.image_size as u32;
    let mut img = RgbImage::from_fn(s, s, |x, y| {
        let i = ((y * s + x) * 3) as usize;
        let px = |c: usize| ((m.crop[i + c] * 0.5 + 0.5) * 255.0).round() as u8;
        Rgb([px(0), px(1), px(2)])
    });
    for (k, p) in m.landmarks_norm.iter().enumerate() {
        // landmark 0 in red: after a flip it must still sit on the same
        // side of the face
        let color = if k == 0 { Rgb([255, 0, 0]) } else { Rgb([0, 255, 0]) };
        let (x, y) = ((p[0] * s as f64) as i64, (p[1] * s as f64) as i64);
        for (dx, dy) in [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (px, py) = (x + dx, y + dy);
            if px >= 0 && py >= 0 && px < s as i64 && py < s as i64 {
                img.put_pixel(px as u32, py as u32, color);
            }
        }
    }
    img
}

fn main() -> mdmd::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "augmented".into()));
    let schemas = SchemaSet::bundled();
    let manifest = gen_synthetic(&schemas, "pare", 1, 5, &out.join("data"))?;
    let ds = read_dataset(&manifest, &schemas)?;
    let schema = schemas.get(ds.dataset_id)?;
    let input = crop_and_resize(&ds.load(0)?, 0.25, 128)?;
    let policy = AugmentPolicy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let save = |img: RgbImage, name: &str| {
        let p = out.join(name);
        img.save(&p).expect("write png");
        println!("wrote {}", p.display());
    };
    save(to_image(&input), "original.png");
    for i in 0..6 {
        let aug = augment(&input, &policy, schema, &mut rng)?;
        save(to_image(&aug), &format!("augmented_{i}.png"));
    }
    Ok(())
}
