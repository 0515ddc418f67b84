//! Trains briefly, saves a checkpoint, reloads it and predicts one face with
//! per-landmark covariances in original-image pixels.

use mdmd::checkpoint::Checkpoint;
use mdmd::data::{gen_synthetic, read_dataset};
use mdmd::infer::predict_sample;
use mdmd::model::ModelConfig;
use mdmd::train::{fit, TrainConfig};

fn main() -> mdmd::Result<()> {
    let dir = std::env::temp_dir().join("mdmd-predict-example");
    let manifest = gen_synthetic(&mdmd::schema::SchemaSet::bundled(), "pare", 8, 7, &dir.join("data"))?;
    let config = TrainConfig {
        datasets: vec![manifest.clone()],
        model: ModelConfig { init_std: 0.1, ..ModelConfig::toy(64, 8, 64, 2, 2) },
        batch_size: 8,
        total_steps: 300,
        base_lr: 2e-3,
        output_dir: dir.join("ckpt"),
        ..TrainConfig::default()
    };
    let outcome = fit::<f32>(config, &mut std::io::sink())?;
    println!("checkpoint {}", outcome.checkpoint.display());

    let ck = Checkpoint::<f32>::load(&outcome.checkpoint)?;
    let model = ck.to_model()?;
    let ds = read_dataset(&manifest, model.schemas())?;
    let sample = ds.load(0)?;
    let (landmarks, _) = predict_sample(&model, &sample, 0.25)?;
    println!("{:>3} {:>16} {:>16} {:>28}", "k", "predicted", "truth", "covariance (px²)");
    for (k, (p, t)) in landmarks.iter().zip(&sample.landmarks).enumerate() {
        let c = p.covariance;
        println!(
            "{k:>3} ({:6.1}, {:6.1}) ({:6.1}, {:6.1})   [{:7.2} {:7.2}; {:7.2} {:7.2}]",
            p.x, p.y, t[0], t[1], c[0][0], c[0][1], c[1][0], c[1][1]
        );
    }
    Ok(())
}
