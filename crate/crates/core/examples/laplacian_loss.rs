//! How the Laplacian NLL trades error against predicted uncertainty: for a
//! fixed residual the loss is minimized when the predicted scale matches it.

use mdmd::loss::{laplacian_nll, mdmd_loss, CholeskyFactor};
use mdmd::model::PredictionSet;
use mdmd::schema::SchemaSet;

fn main() -> mdmd::Result<()> {
    let residual = 0.05;
    println!("residual {residual} along x");
    for scale in [0.005, 0.01, 0.02, 0.03, 0.05, 0.1, 0.2] {
        let f = CholeskyFactor { a: scale, b: 0.0, c: scale };
        let nll = laplacian_nll([residual, 0.0], &f, [0.0, 0.0]);
        println!("  sigma {scale:<5} -> nll {nll:+.4}");
    }
    // with a = c = s the loss is 2 ln s + sqrt(3) r / s
    println!("  best sigma = sqrt(3) * r / 2 = {:.4}", 3f64.sqrt() * residual / 2.0);

    // group balancing: every non-empty group weighs the same, whatever its size
    let set = SchemaSet::bundled();
    let pare = set.get(set.id_of("pare")?)?;
    let gt = vec![[0.5, 0.5]; pare.landmark_count];
    let mut pred = PredictionSet {
        landmarks: gt.clone(),
        cholesky_raw: vec![[0.0, 0.0, 0.0]; pare.landmark_count],
    };
    let base = mdmd_loss(&pred, &gt, pare)?;
    for k in [4, 5] {
        pred.landmarks = gt.clone();
        pred.landmarks[k][0] += 0.1;
        let group = pare.landmark_slots()[k].0;
        println!(
            "moving landmark {k} (group of {}) adds {:.4}",
            pare.flsg_map.group(group).len(),
            mdmd_loss(&pred, &gt, pare)? - base
        );
    }
    Ok(())
}
