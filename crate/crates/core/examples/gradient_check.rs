//! Compares reverse-mode gradients of the training loss with central finite
//! differences on a handful of entries of every parameter tensor.

use mdmd::graph::Graph;
use mdmd::model::{MdmdModel, ModelConfig};
use mdmd::schema::SchemaSet;
use mdmd::train::{batch_loss, Batch, LossMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss(model: &MdmdModel<f64>, batch: &Batch<f64>) -> f64 {
    let mut g = Graph::new(model.params());
    let root = batch_loss(model, &mut g, batch, LossMode::Laplacian).unwrap();
    g.value(root).get(0, 0)
}

fn main() -> mdmd::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let config = ModelConfig { init_std: 0.2, ..ModelConfig::toy(32, 8, 32, 1, 1) };
    let schemas = SchemaSet::bundled_subset(&["pare"])?;
    let mut model = MdmdModel::<f64>::new(config, schemas, &mut rng)?;
    let batch = Batch {
        dataset_id: 0,
        face_ids: vec!["random".into()],
        images: vec![(0..32 * 32 * 3).map(|_| rng.random_range(-1.0..1.0)).collect()],
        landmarks: vec![(0..9).map(|_| [rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)]).collect()],
    };
    let grads = {
        let mut g = Graph::new(model.params());
        let root = batch_loss(&model, &mut g, &batch, LossMode::Laplacian)?;
        g.backward(root)
    };

    let h = 1e-5;
    let ids: Vec<_> = model.params().ids().collect();
    let mut worst = 0.0f64;
    for id in ids {
        let analytic = grads.get(id).expect("every parameter gets a gradient").clone();
        let mut tensor_worst = 0.0f64;
        for _ in 0..4 {
            let i = rng.random_range(0..analytic.len());
            let orig = model.params().get(id).data()[i];
            model.params_mut().get_mut(id).data_mut()[i] = orig + h;
            let up = loss(&model, &batch);
            model.params_mut().get_mut(id).data_mut()[i] = orig - h;
            let down = loss(&model, &batch);
            model.params_mut().get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[i];
            tensor_worst = tensor_worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
        println!("{:<32} rel err {tensor_worst:.2e}", model.params().name(id));
        worst = worst.max(tensor_worst);
    }
    println!("max relative error {worst:.2e}");
    Ok(())
}
