//! One forward pass of a small model through every bundled dataset's heads.
//! The trunk output is shared; only the head routing differs per dataset.

use mdmd::loss::decode_cholesky;
use mdmd::model::{MdmdModel, ModelConfig};
use mdmd::schema::SchemaSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> mdmd::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let config = ModelConfig::toy(64, 8, 64, 2, 2);
    let model = MdmdModel::<f32>::new(config, SchemaSet::bundled(), &mut rng)?;
    println!(
        "{} parameter tensors, {} scalars, {} tokens per image",
        model.params().len(),
        model.params().scalar_count(),
        model.config().token_count()
    );

    let image: Vec<f32> = (0..64 * 64 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    for (id, schema) in model.schemas().schemas().iter().enumerate() {
        let pred = model.forward(&image, id)?;
        let [x, y] = pred.landmarks[0];
        let sigma = decode_cholesky(pred.cholesky_raw[0]).covariance();
        println!(
            "{:<10} {:>3} landmarks; #0 at ({x:+.4}, {y:+.4}) with var ({:.4}, {:.4})",
            schema.name,
            pred.landmarks.len(),
            sigma[0][0],
            sigma[1][1]
        );
    }
    Ok(())
}
