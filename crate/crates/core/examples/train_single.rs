//! Overfits the toy model on eight synthetic 9-landmark faces and reports
//! train-set NME (bounding-box normalization).
//!
//! ```text
//! cargo run --release --example train_single -- [steps] [lr] [laplacian|euclidean]
//! ```

use mdmd::data::gen_synthetic;
use mdmd::infer::evaluate_dataset;
use mdmd::model::ModelConfig;
use mdmd::schema::SchemaSet;
use mdmd::train::{LossMode, TrainConfig, Trainer};

fn main() -> mdmd::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let lr: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(2e-3);
    let loss_mode = match args.next().as_deref() {
        Some("euclidean") => LossMode::Euclidean,
        _ => LossMode::Laplacian,
    };

    let dir = std::env::temp_dir().join("mdmd-train-single");
    let manifest = gen_synthetic(&SchemaSet::bundled(), "pare", 8, 7, &dir.join("data"))?;
    let config = TrainConfig {
        datasets: vec![manifest],
        model: ModelConfig {
            // the 0.02 default leaves this small model stuck near the mean face
            init_std: 0.1,
            ..ModelConfig::toy(64, 8, 64, 2, 2)
        },
        batch_size: 8,
        total_steps: steps,
        base_lr: lr,
        seed: 1,
        loss_mode,
        output_dir: dir.join("ckpt"),
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::<f32>::new(config)?;
    let started = std::time::Instant::now();
    let mut sink = std::io::sink();
    while trainer.step < steps {
        let next = (trainer.step + 100).min(steps);
        let out = trainer.run(Some(next), &mut sink)?;
        let mean = out.log.iter().map(|l| l.3).sum::<f64>() / out.log.len() as f64;
        let report = evaluate_dataset(&trainer.model, &trainer.data[0].dataset, trainer.config.margin)?;
        println!(
            "step {:5}  loss {mean:8.4}  nme {:6.3}%  ({:.1}s)",
            trainer.step,
            report.mean_nme,
            started.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
