use mdmd::data::{crop_and_resize, gen_synthetic, read_dataset};
use mdmd::model::{image_to, MdmdModel, ModelConfig};
use mdmd::optim::{AdamConfig, AdamState};
use mdmd::schema::SchemaSet;
use mdmd::tensor::Tensor;
use mdmd::train::{batch_loss, lr_at, train_step, Batch, LossMode};
use mdmd::graph::Graph;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A batch of synthetic `schema` faces, built with the model's crop size.
fn batch(schemas: &SchemaSet, schema: &str, size: usize, count: usize) -> Batch<f64> {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_synthetic(schemas, schema, count, 21, dir.path()).unwrap();
    let ds = read_dataset(&manifest, schemas).unwrap();
    let mut b = Batch {
        dataset_id: ds.dataset_id,
        face_ids: Vec::new(),
        images: Vec::new(),
        landmarks: Vec::new(),
    };
    for s in ds.iter() {
        let s = s.unwrap();
        let input = crop_and_resize(&s, 0.25, size).unwrap();
        b.face_ids.push(s.face_id.clone());
        b.images.push(image_to(&input.crop));
        b.landmarks.push(input.landmarks_norm);
    }
    b
}

fn model(schemas: SchemaSet) -> MdmdModel<f64> {
    MdmdModel::new(ModelConfig::toy(32, 8, 32, 1, 1), schemas, &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
}

fn snapshot(m: &MdmdModel<f64>) -> Vec<(String, Tensor<f64>)> {
    m.params().iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect()
}

#[test]
fn one_step_moves_trunk_and_selected_heads_only() {
    let schemas = SchemaSet::bundled_subset(&["pare", "300w"]).unwrap();
    let b = batch(&schemas, "pare", 32, 2);
    let mut m = model(schemas);
    let before = snapshot(&m);
    let mut adam = AdamState::new(m.params().len());
    train_step(&mut m, &mut adam, &b, 0, 1e-3, LossMode::Laplacian, &AdamConfig::default(), 1.0).unwrap();
    let after = snapshot(&m);
    let changed = |name: &str| {
        let i = before.iter().position(|(n, _)| n == name).unwrap();
        before[i].1 != after[i].1
    };
    for name in [
        "patch_embed.weight",
        "pos_embed",
        "global_token",
        "encoder.0.attn.q.weight",
        "flsg_embed",
        "decoder.0.cross.v.weight",
        "heads.pare.5.lm.fc2.weight",
        "heads.pare.10.chol.fc1.weight",
    ] {
        assert!(changed(name), "{name} did not move");
    }
    for ((n, t0), (_, t1)) in before.iter().zip(&after) {
        if n.starts_with("heads.300w.") {
            let same = t0.data().iter().zip(t1.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "{n} moved on a pare step");
        }
    }
}

#[test]
fn tiny_step_decreases_the_sample_loss() {
    let schemas = SchemaSet::bundled_subset(&["pare"]).unwrap();
    let b = batch(&schemas, "pare", 32, 1);
    let loss = |m: &MdmdModel<f64>, mode| {
        let mut g = Graph::new(m.params());
        let root = batch_loss(m, &mut g, &b, mode).unwrap();
        g.value(root).get(0, 0)
    };
    for mode in [LossMode::Laplacian, LossMode::Euclidean] {
        let mut m = model(schemas.clone());
        let mut adam = AdamState::new(m.params().len());
        let start = loss(&m, mode);
        let reported = train_step(&mut m, &mut adam, &b, 0, 1e-6, mode, &AdamConfig::default(), 1.0).unwrap();
        assert_eq!(reported, start);
        let end = loss(&m, mode);
        assert!(end < start, "{mode:?}: loss rose from {start} to {end}");
    }
}

#[test]
fn lr_schedule_is_affine_and_non_increasing() {
    let total = 1000;
    let v: Vec<f64> = (0..total).map(|s| lr_at(s, total, 1e-4)).collect();
    assert_eq!(v[0], 1e-4);
    assert!(v.windows(2).all(|w| w[1] <= w[0]));
    let d0 = v[1] - v[0];
    assert!(v.windows(2).all(|w| ((w[1] - w[0]) - d0).abs() < 1e-18));
}
