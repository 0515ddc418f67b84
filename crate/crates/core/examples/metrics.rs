//! NME, FR@10, AUC@10 and the CED curve for simulated predictions whose
//! noise level varies from face to face.

use mdmd::metrics::{evaluate_pixels, DEFAULT_THRESHOLD};
use mdmd::schema::SchemaSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> mdmd::Result<()> {
    let set = SchemaSet::bundled();
    let schema = set.get(set.id_of("300w")?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    for _ in 0..200 {
        let bbox = [20.0, 30.0, 120.0, 120.0];
        let gt: Vec<[f64; 2]> = (0..schema.landmark_count)
            .map(|_| [rng.random_range(20.0..140.0), rng.random_range(30.0..150.0)])
            .collect();
        let noise = Normal::new(0.0, rng.random_range(0.5..8.0)).unwrap();
        let pred = gt
            .iter()
            .map(|p| [p[0] + noise.sample(&mut rng), p[1] + noise.sample(&mut rng)])
            .collect();
        preds.push(pred);
        truths.push((bbox, gt));
    }
    let report = evaluate_pixels(&preds, &truths, schema, DEFAULT_THRESHOLD)?;
    println!("schema {} normalized by {}", report.schema, report.normalization);
    println!("NME {:.3}%  FR@10 {:.2}%  AUC@10 {:.4}", report.mean_nme, report.fr, report.auc);
    for t in [2.0, 4.0, 6.0, 8.0, 10.0] {
        let frac = report.ced.iter().take_while(|p| p.0 <= t).last().map_or(0.0, |p| p.1);
        println!("  CED({t:>4}) = {frac:.3}");
    }
    Ok(())
}
