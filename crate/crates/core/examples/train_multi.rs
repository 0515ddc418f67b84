//! Trains one trunk on two synthetic datasets with different landmark
//! definitions (9-point PARE and 68-point 300W) and reports NME on each.
//!
//! ```text
//! cargo run --release --example train_multi -- [steps] [lr]
//! ```

use mdmd::data::gen_synthetic;
use mdmd::infer::evaluate_dataset;
use mdmd::model::ModelConfig;
use mdmd::schema::SchemaSet;
use mdmd::train::{TrainConfig, Trainer};

fn main() -> mdmd::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(4000);
    let lr: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(2e-3);

    let dir = std::env::temp_dir().join("mdmd-train-multi");
    let schemas = SchemaSet::bundled();
    let nine = gen_synthetic(&schemas, "pare", 8, 7, &dir.join("pare"))?;
    let many = gen_synthetic(&schemas, "300w", 8, 8, &dir.join("300w"))?;
    let config = TrainConfig {
        datasets: vec![nine, many],
        model: ModelConfig {
            init_std: 0.1,
            ..ModelConfig::toy(64, 8, 64, 2, 2)
        },
        batch_size: 8,
        total_steps: steps,
        base_lr: lr,
        seed: 1,
        output_dir: dir.join("ckpt"),
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::<f32>::new(config)?;
    let started = std::time::Instant::now();
    let mut sink = std::io::sink();
    while trainer.step < steps {
        let next = (trainer.step + 250).min(steps);
        trainer.run(Some(next), &mut sink)?;
        let mut line = format!("step {:5}", trainer.step);
        for d in &trainer.data {
            let r = evaluate_dataset(&trainer.model, &d.dataset, trainer.config.margin)?;
            line += &format!("  {} nme {:6.3}%", r.schema, r.mean_nme);
        }
        println!("{line}  steps/dataset {:?}  ({:.1}s)", trainer.dataset_steps, started.elapsed().as_secs_f64());
    }
    Ok(())
}
