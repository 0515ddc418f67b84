//! Acceptance suite. Runs as a plain binary (no libtest harness) so every
//! criterion prints its verdict line even when it passes.
//!
//! ```text
//! cargo test --test acceptance            # all ten
//! cargo test --test acceptance -- 3 7     # a subset, by number
//! ```

use std::path::PathBuf;
use std::time::{Duration, Instant};

use mdmd::data::gen_synthetic;
use mdmd::graph::Graph;
use mdmd::infer::evaluate_dataset;
use mdmd::loss::{decode_cholesky, laplacian_nll, mdmd_loss, CholeskyFactor};
use mdmd::metrics::{auc, ced_at, evaluate_pixels, failure_rate, MetricReport};
use mdmd::model::{MdmdModel, ModelConfig, PredictionSet};
use mdmd::schema::{DatasetSchema, FlsgMap, Normalization, SchemaSet};
use mdmd::tensor::Tensor;
use mdmd::train::{batch_loss, sample_batch, Batch, LossMode, TokenMode, TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use num_rational::BigRational;
use num_traits::ToPrimitive;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

type Criterion = fn() -> Outcome;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let wanted: Vec<u32> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let criteria: [(u32, &str, Duration, Criterion); 10] = [
        (1, "schema fidelity", Duration::from_secs(1), schema_fidelity),
        (2, "gradient correctness", Duration::from_secs(120), gradient_check),
        (3, "loss oracles", Duration::from_secs(10), loss_oracles),
        (4, "routing oracle", Duration::from_secs(60), routing_oracle),
        (5, "metric oracles", Duration::from_secs(10), metric_oracles),
        (6, "sampler uniformity", Duration::from_secs(10), sampler_uniformity),
        (7, "single-dataset overfit", Duration::from_secs(15 * 60), single_overfit),
        (8, "two-dataset overfit", Duration::from_secs(30 * 60), two_dataset_overfit),
        (9, "determinism and resume", Duration::from_secs(5 * 60), determinism_and_resume),
        (10, "ablation variants", Duration::from_secs(30 * 60), ablation_variants),
    ];
    let mut failed = Vec::new();
    for (id, title, budget, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        let elapsed = started.elapsed();
        let in_time = elapsed <= budget;
        let pass = outcome.pass && in_time;
        println!(
            "criterion {id:>2} {:<24} {}  {} [{:.2}s of {}s]",
            title,
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
        if !pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

// ---- 1 -------------------------------------------------------------------

fn r(a: usize, b: usize) -> Vec<usize> {
    (a..=b).collect()
}

fn cat(parts: &[Vec<usize>]) -> Vec<usize> {
    parts.concat()
}

/// Twelve groups for the 68-point layout shared by 300W, ArtFace and CariFace.
fn ibug68() -> Vec<Vec<usize>> {
    vec![
        r(0, 3),
        r(4, 6),
        r(7, 9),
        r(10, 12),
        r(13, 16),
        r(36, 41),
        r(42, 47),
        r(17, 21),
        r(22, 26),
        r(27, 35),
        cat(&[r(48, 54), r(60, 64)]),
        cat(&[r(55, 59), r(65, 67)]),
    ]
}

fn nine_point() -> Vec<Vec<usize>> {
    vec![
        vec![],
        vec![],
        vec![],
        vec![],
        vec![],
        vec![0, 1],
        vec![2, 3],
        vec![],
        vec![],
        vec![4],
        vec![5, 6, 7],
        vec![8],
    ]
}

fn expected_maps() -> Vec<(&'static str, usize, Vec<Vec<usize>>)> {
    vec![
        (
            "wflw",
            98,
            vec![
                r(0, 5),
                r(6, 12),
                r(13, 19),
                r(20, 26),
                r(27, 32),
                cat(&[r(60, 67), vec![96]]),
                cat(&[r(68, 75), vec![97]]),
                r(33, 41),
                r(42, 50),
                r(51, 59),
                cat(&[r(77, 81), r(89, 91)]),
                cat(&[vec![76], r(82, 88), r(92, 95)]),
            ],
        ),
        (
            "lapa",
            106,
            vec![
                r(0, 5),
                r(6, 12),
                r(13, 19),
                r(20, 26),
                r(27, 32),
                cat(&[r(66, 74), vec![104]]),
                cat(&[r(75, 83), vec![105]]),
                r(33, 41),
                r(42, 50),
                r(51, 65),
                cat(&[r(85, 89), r(97, 99)]),
                cat(&[vec![84], r(90, 96), r(100, 103)]),
            ],
        ),
        (
            "cofw",
            29,
            vec![
                vec![],
                vec![],
                vec![28],
                vec![],
                vec![],
                vec![8, 10, 12, 14, 16],
                vec![9, 11, 13, 15, 17],
                vec![0, 2, 4, 6],
                vec![1, 3, 5, 7],
                r(18, 21),
                r(22, 25),
                vec![26, 27],
            ],
        ),
        // group (d) is (10, 11, 12): with any other third index the groups
        // would not cover landmark 12.
        ("300w", 68, ibug68()),
        ("animalweb", 9, nine_point()),
        ("artface", 68, ibug68()),
        ("cariface", 68, ibug68()),
        ("pare", 9, nine_point()),
    ]
}

fn schema_fidelity() -> Outcome {
    let set = SchemaSet::bundled();
    let mut problems = Vec::new();
    let expected = expected_maps();
    if set.len() != expected.len() {
        problems.push(format!("{} schemas bundled", set.len()));
    }
    for (name, n, groups) in &expected {
        let Ok(id) = set.id_of(name) else {
            problems.push(format!("{name} missing"));
            continue;
        };
        let s = set.get(id).unwrap();
        if s.landmark_count != *n {
            problems.push(format!("{name}: N = {}", s.landmark_count));
        }
        if s.flsg_map.groups() != groups.as_slice() {
            problems.push(format!("{name}: group map differs"));
        }
        if let Err(e) = mdmd::schema::validate_schema(s) {
            problems.push(format!("{name}: {e}"));
        }
    }
    let cofw = set.get(set.id_of("cofw").unwrap()).unwrap();
    if cofw.flsg_map.group(2) != [28] {
        problems.push("cofw group (c) is not {28}".into());
    }
    let pare = set.get(set.id_of("pare").unwrap()).unwrap();
    let sizes: Vec<usize> = pare.group_sizes().into_iter().filter(|&n| n > 0).collect();
    if sizes != [2, 2, 1, 3, 1] {
        problems.push(format!("pare non-empty sizes {sizes:?}"));
    }
    let lm = |name: &str| set.get(set.id_of(name).unwrap()).unwrap().landmark_count;
    if lm("wflw") != 98 || lm("lapa") != 106 {
        problems.push("wflw/lapa landmark counts".into());
    }
    if problems.is_empty() {
        Outcome::new(true, "8 schemas, every group map identical; cofw (c)={28}, pare sizes (2,2,1,3,1), wflw N=98, lapa N=106")
    } else {
        Outcome::new(false, problems.join("; "))
    }
}

// ---- 2 -------------------------------------------------------------------

fn loss_value(model: &MdmdModel<f64>, batch: &Batch<f64>) -> f64 {
    let mut g = Graph::new(model.params());
    let root = batch_loss(model, &mut g, batch, LossMode::Laplacian).unwrap();
    g.value(root).get(0, 0)
}

fn gradient_check() -> Outcome {
    let mut groups = vec![Vec::new(); 12];
    groups[5] = vec![0];
    groups[6] = vec![1];
    let schema = DatasetSchema {
        name: "pair".into(),
        landmark_count: 2,
        flsg_map: FlsgMap::new(groups),
        normalization: Normalization::Pair([0, 1]),
        flip_permutation: None,
    };
    let set = SchemaSet::new(vec![schema.clone()], 12, None).unwrap();
    let config = ModelConfig {
        init_std: 0.2,
        ..ModelConfig::toy(32, 8, 32, 1, 1)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut model = MdmdModel::<f64>::new(config, set, &mut rng).unwrap();
    // move off the initialization: non-unit gains, non-zero biases
    let ids: Vec<_> = model.params().ids().collect();
    for &id in &ids {
        for v in model.params_mut().get_mut(id).data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let batch = Batch {
        dataset_id: 0,
        face_ids: vec!["a".into(), "b".into()],
        images: (0..2)
            .map(|_| (0..32 * 32 * 3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect(),
        landmarks: (0..2)
            .map(|_| (0..2).map(|_| [rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)]).collect())
            .collect(),
    };

    let refs: Vec<&[f64]> = batch.images.iter().map(Vec::as_slice).collect();
    let preds = model.forward_batch(&refs, 0).unwrap();
    let min_gap = preds
        .iter()
        .zip(&batch.landmarks)
        .flat_map(|(p, gt)| p.landmarks.iter().zip(gt).map(|(m, t)| (m[0] - t[0]).hypot(m[1] - t[1])))
        .fold(f64::INFINITY, f64::min);
    if min_gap < 1e-3 {
        return Outcome::new(false, format!("a mean sits {min_gap:.1e} from its target; the check would straddle a kink"));
    }
    let per_sample: f64 = preds
        .iter()
        .zip(&batch.landmarks)
        .map(|(p, gt)| mdmd_loss(p, gt, &schema).unwrap())
        .sum::<f64>()
        / 2.0;

    let (graph_loss, grads) = {
        let mut g = Graph::new(model.params());
        let root = batch_loss(&model, &mut g, &batch, LossMode::Laplacian).unwrap();
        (g.value(root).get(0, 0), g.backward(root))
    };
    let consistency = (graph_loss - per_sample).abs();

    // elementwise |a - n| / max(|a|, |n|, 1e-6); the floor keeps round-off on
    // near-zero entries from reading as relative error
    let h = 1e-5;
    let mut worst = (0.0f64, String::new());
    let mut checked = 0usize;
    for &id in &ids {
        let name = model.params().name(id).to_string();
        let Some(analytic) = grads.get(id).cloned() else {
            return Outcome::new(false, format!("no gradient reached `{name}`"));
        };
        for i in 0..analytic.len() {
            let orig = model.params().get(id).data()[i];
            model.params_mut().get_mut(id).data_mut()[i] = orig + h;
            let up = loss_value(&model, &batch);
            model.params_mut().get_mut(id).data_mut()[i] = orig - h;
            let down = loss_value(&model, &batch);
            model.params_mut().get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > worst.0 {
                worst = (rel, format!("{name}[{i}]"));
            }
            checked += 1;
        }
    }
    Outcome::new(
        worst.0 < 1e-3 && consistency < 1e-12,
        format!(
            "{} tensors, {checked} scalars, max rel err {:.2e} at {}; graph vs per-face loss {consistency:.1e}",
            ids.len(),
            worst.0,
            worst.1
        ),
    )
}

// ---- 3 -------------------------------------------------------------------

/// `½ ln det Σ + sqrt(3 dᵀ Σ⁻¹ d)` with `Σ` built and inverted explicitly.
/// The matrix arithmetic is exact (rationals): forming `Σ` and its
/// determinant in floating point cancels badly when `|b| ≫ c`.
fn nll_oracle(mu: [f64; 2], raw: [f64; 3], gt: [f64; 2]) -> f64 {
    let sp = |x: f64| (1.0 + x.exp()).ln();
    let q = |x: f64| BigRational::from_float(x).unwrap();
    let (a, b, c) = (q(sp(raw[0]) + 1e-6), q(raw[1]), q(sp(raw[2]) + 1e-6));
    let s = [[&a * &a, &a * &b], [&a * &b, &b * &b + &c * &c]];
    let det = &s[0][0] * &s[1][1] - &s[0][1] * &s[1][0];
    let inv = [
        [&s[1][1] / &det, -&s[0][1] / &det],
        [-&s[1][0] / &det, &s[0][0] / &det],
    ];
    let d = [q(mu[0]) - q(gt[0]), q(mu[1]) - q(gt[1])];
    let m = &d[0] * (&inv[0][0] * &d[0] + &inv[0][1] * &d[1]) + &d[1] * (&inv[1][0] * &d[0] + &inv[1][1] * &d[1]);
    0.5 * det.to_f64().unwrap().ln() + (3.0 * m.to_f64().unwrap()).sqrt()
}

fn loss_oracles() -> Outcome {
    let sqrt3 = 3f64.sqrt();
    let unit = CholeskyFactor { a: 1.0, b: 0.0, c: 1.0 };
    let at_gt = laplacian_nll([0.3, 0.7], &unit, [0.3, 0.7]);
    let unit_residual = laplacian_nll([1.0, 0.0], &unit, [0.0, 0.0]);
    let diag41 = laplacian_nll([2.0, 0.0], &CholeskyFactor { a: 2.0, b: 0.0, c: 1.0 }, [0.0, 0.0]);
    let closed = [
        (at_gt, 0.0),
        (unit_residual, sqrt3),
        (diag41, std::f64::consts::LN_2 + sqrt3),
    ];
    let closed_err = closed.iter().map(|(v, e)| (v - e).abs()).fold(0.0, f64::max);

    let set = SchemaSet::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let schema = &set.schemas()[rng.random_range(0..set.len())];
        let n = schema.landmark_count;
        let mut pt = || [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let landmarks: Vec<[f64; 2]> = (0..n).map(|_| pt()).collect();
        let gt: Vec<[f64; 2]> = (0..n).map(|_| pt()).collect();
        let cholesky_raw: Vec<[f64; 3]> = (0..n)
            .map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0), rng.random_range(-3.0..3.0)])
            .collect();
        let pred = PredictionSet {
            landmarks,
            cholesky_raw,
        };
        let got = mdmd_loss(&pred, &gt, schema).unwrap();
        let mut groups = 0usize;
        let mut total = 0.0;
        for group in schema.flsg_map.groups() {
            if group.is_empty() {
                continue;
            }
            let mut inner = 0.0;
            for &k in group {
                inner += nll_oracle(pred.landmarks[k], pred.cholesky_raw[k], gt[k]);
            }
            total += inner / group.len() as f64;
            groups += 1;
        }
        let want = total / groups as f64;
        worst = worst.max((got - want).abs());
    }
    // the decoded factor feeds the same formula the oracle expands by hand
    let decoded = decode_cholesky([0.0, 0.0, 0.0]);
    let decode_err = (decoded.a - (2f64.ln() + 1e-6)).abs();
    Outcome::new(
        closed_err <= 1e-9 && worst <= 1e-12 && decode_err <= 1e-15,
        format!("closed forms within {closed_err:.1e}; 100 instances max |diff| {worst:.1e}"),
    )
}

// ---- 4 -------------------------------------------------------------------

fn head_mlp(model: &MdmdModel<f64>, prefix: &str, x: &[f64]) -> Vec<f64> {
    let p = model.params();
    let get = |n: &str| p.get(p.id(&format!("{prefix}.{n}")).unwrap());
    let (w1, b1, w2, b2) = (get("fc1.weight"), get("fc1.bias"), get("fc2.weight"), get("fc2.bias"));
    let hidden: Vec<f64> = (0..w1.cols())
        .map(|j| {
            let mut s = b1.get(0, j);
            for (i, xi) in x.iter().enumerate() {
                s += xi * w1.get(i, j);
            }
            s.max(0.0)
        })
        .collect();
    (0..w2.cols())
        .map(|j| {
            let mut s = b2.get(0, j);
            for (i, hi) in hidden.iter().enumerate() {
                s += hi * w2.get(i, j);
            }
            s
        })
        .collect()
}

fn routing_oracle() -> Outcome {
    let set = SchemaSet::bundled();
    let d = 16;
    let batch = 2;
    let groups = set.group_count();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut model = MdmdModel::<f64>::new(ModelConfig::toy(32, 8, d, 1, 1), set.clone(), &mut rng).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        for ds in 0..set.len() {
            for id in model.head_param_ids(ds) {
                for v in model.params_mut().get_mut(id).data_mut() {
                    *v = rng.random_range(-1.0..1.0);
                }
            }
        }
        for (ds, schema) in set.schemas().iter().enumerate() {
            let f_out = Tensor::from_fn(batch * groups, d, |_, _| rng.random_range(-2.0..2.0));
            let mut g = Graph::new(model.params());
            let fv = g.constant(f_out.clone());
            let hv = model.predict_heads(&mut g, fv, batch, ds).unwrap();
            let (lm, ch) = (g.value(hv.landmarks), g.value(hv.cholesky));
            for b in 0..batch {
                for (k, (grp, o)) in schema.landmark_slots().into_iter().enumerate() {
                    let token = f_out.row(b * groups + grp);
                    let prefix = format!("heads.{}.{grp}", schema.name);
                    let want_lm = head_mlp(&model, &format!("{prefix}.lm"), token);
                    let want_ch = head_mlp(&model, &format!("{prefix}.chol"), token);
                    for c in 0..2 {
                        worst = worst.max((lm.get(b, 2 * k + c) - want_lm[2 * o + c]).abs());
                    }
                    for c in 0..3 {
                        worst = worst.max((ch.get(b, 3 * k + c) - want_ch[3 * o + c]).abs());
                    }
                }
            }
        }
    }

    let image: Vec<f64> = (0..32 * 32 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let all = |m: &MdmdModel<f64>| -> Vec<PredictionSet> { (0..set.len()).map(|ds| m.forward(&image, ds).unwrap()).collect() };
    let mut leaks = Vec::new();
    for j in 0..set.len() {
        let before = all(&model);
        for id in model.head_param_ids(j) {
            for v in model.params_mut().get_mut(id).data_mut() {
                *v += 0.05;
            }
        }
        let after = all(&model);
        for jp in 0..set.len() {
            let same = before[jp] == after[jp];
            if (jp == j) == same {
                leaks.push(format!("{j}->{jp}"));
            }
        }
    }
    Outcome::new(
        worst <= 1e-12 && leaks.is_empty(),
        format!(
            "100 draws x 8 schemas, max |diff| {worst:.1e}; head isolation {}",
            if leaks.is_empty() { "bitwise".to_string() } else { format!("broken at {leaks:?}") }
        ),
    )
}

// ---- 5 -------------------------------------------------------------------

fn metric_oracles() -> Outcome {
    let set = SchemaSet::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let thr = 10.0;
    let mut worst = 0.0f64;
    let mut grid_err = 0.0f64;
    let mut identity_holds = true;
    for name in ["300w", "pare", "cofw"] {
        let schema = set.get(set.id_of(name).unwrap()).unwrap();
        let n = schema.landmark_count;
        let mut preds = Vec::new();
        let mut truths = Vec::new();
        for _ in 0..500 {
            let bbox = [
                rng.random_range(0.0..100.0),
                rng.random_range(0.0..100.0),
                rng.random_range(40.0..160.0),
                rng.random_range(40.0..160.0),
            ];
            let gt: Vec<[f64; 2]> = (0..n)
                .map(|_| [bbox[0] + rng.random_range(0.0..bbox[2]), bbox[1] + rng.random_range(0.0..bbox[3])])
                .collect();
            let spread = rng.random_range(0.0..20.0);
            let pred = gt
                .iter()
                .map(|p| [p[0] + rng.random_range(-spread..spread), p[1] + rng.random_range(-spread..spread)])
                .collect();
            preds.push(pred);
            truths.push((bbox, gt));
        }
        let report = evaluate_pixels(&preds, &truths, schema, thr).unwrap();

        let want: Vec<f64> = preds
            .iter()
            .zip(&truths)
            .map(|(p, (bbox, gt))| {
                let d = match schema.normalization {
                    Normalization::Pair([i, j]) => ((gt[i][0] - gt[j][0]).powi(2) + (gt[i][1] - gt[j][1]).powi(2)).sqrt(),
                    Normalization::Bbox => (bbox[2] * bbox[3]).sqrt(),
                };
                let sum: f64 = p
                    .iter()
                    .zip(gt)
                    .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
                    .sum();
                sum / n as f64 / d * 100.0
            })
            .collect();
        if report.per_face_nme.len() != want.len() {
            return Outcome::new(false, format!("{name}: {} faces scored", report.per_face_nme.len()));
        }
        for (a, b) in report.per_face_nme.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
        let count = want.len() as f64;
        let mean = want.iter().sum::<f64>() / count;
        let fr = want.iter().filter(|&&e| e > thr).count() as f64 / count * 100.0;
        let mut sorted = want.clone();
        sorted.sort_by(f64::total_cmp);
        // integrate the CED step by step between consecutive sorted errors
        let mut area = 0.0;
        for (i, &e) in sorted.iter().enumerate() {
            let next = sorted.get(i + 1).copied().unwrap_or(thr).min(thr);
            if e < thr {
                area += (i + 1) as f64 / count * (next - e);
            }
        }
        let auc_want = area / thr;
        worst = worst
            .max((report.mean_nme - mean).abs())
            .max((report.fr - fr).abs())
            .max((report.auc - auc_want).abs())
            .max((failure_rate(&report.per_face_nme, thr).unwrap() - fr).abs());

        let step = 1e-4;
        let cells = (thr / step).round() as usize;
        let mut riemann = 0.0;
        for c in 0..cells {
            let t = (c as f64 + 0.5) * step;
            riemann += sorted.partition_point(|&e| e <= t) as f64 / count * step;
        }
        grid_err = grid_err.max((auc(&report.per_face_nme, thr).unwrap() - riemann / thr).abs());

        let fr_identity = 100.0 * (1.0 - ced_at(&report.per_face_nme, thr));
        identity_holds &= report.fr.to_bits() == fr_identity.to_bits();
        identity_holds &= report.ced.last().map(|p| p.0) == Some(thr);
    }
    Outcome::new(
        worst <= 1e-10 && grid_err <= 1e-3 && identity_holds,
        format!(
            "3 schemas x 500 faces, max |diff| {worst:.1e}; fine-grid AUC gap {grid_err:.1e}; fr = 100(1-ced(10)) {}",
            if identity_holds { "exact" } else { "violated" }
        ),
    )
}

// ---- 6 -------------------------------------------------------------------

fn sampler_uniformity() -> Outcome {
    let draws = 100_000usize;
    let mut parts = Vec::new();
    let mut pass = true;
    for k in [2usize, 3, 5] {
        // unequal sizes: datasets, not samples, are drawn uniformly
        let sizes: Vec<usize> = (1..=k).map(|i| 3 * i + 1).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(60 + k as u64);
        let mut counts = vec![0usize; k];
        for _ in 0..draws {
            counts[sample_batch(&sizes, &mut rng, 1).unwrap().dataset] += 1;
        }
        let expected = draws as f64 / k as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new((k - 1) as f64).unwrap().cdf(chi2);
        pass &= p > 0.001;
        parts.push(format!("k={k} chi2={chi2:.2} p={p:.3}"));
    }
    Outcome::new(pass, parts.join(", "))
}

// ---- 7, 8, 10 ------------------------------------------------------------

const STEPS: u64 = 2000;
const TWO_DATASET_STEPS: u64 = 10_000;

fn toy_config(datasets: Vec<PathBuf>, steps: u64, out: PathBuf) -> TrainConfig {
    TrainConfig {
        datasets,
        model: ModelConfig {
            init_std: 0.1,
            ..ModelConfig::toy(64, 8, 64, 2, 2)
        },
        batch_size: 8,
        total_steps: steps,
        base_lr: 2e-3,
        seed: 1,
        output_dir: out,
        ..TrainConfig::default()
    }
}

fn synthetic(dir: &std::path::Path, schema: &str, seed: u64) -> PathBuf {
    gen_synthetic(&SchemaSet::bundled(), schema, 8, seed, &dir.join(schema)).unwrap()
}

fn train_and_score(config: TrainConfig) -> (Trainer<f32>, Vec<MetricReport>) {
    let mut trainer = Trainer::<f32>::new(config).unwrap();
    trainer.run(None, &mut std::io::sink()).unwrap();
    let reports = trainer
        .data
        .iter()
        .map(|d| evaluate_dataset(&trainer.model, &d.dataset, trainer.config.margin).unwrap())
        .collect();
    (trainer, reports)
}

fn single_overfit() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic(dir.path(), "pare", 7);
    let (_, reports) = train_and_score(toy_config(vec![data], STEPS, dir.path().join("ckpt")));
    let nme = reports[0].mean_nme;
    Outcome::new(
        nme < 1.0 && reports[0].normalization == "bbox",
        format!("pare x8, {STEPS} steps: train NME {nme:.3}% (bbox), target < 1.0%"),
    )
}

fn two_dataset_overfit() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let nine = synthetic(dir.path(), "pare", 7);
    let many = synthetic(dir.path(), "300w", 8);
    let (trainer, reports) = train_and_score(toy_config(vec![nine, many], TWO_DATASET_STEPS, dir.path().join("ckpt")));
    let parts: Vec<String> = reports
        .iter()
        .map(|r| format!("{} {:.3}% ({})", r.schema, r.mean_nme, r.normalization))
        .collect();
    Outcome::new(
        reports.len() == 2 && reports.iter().all(|r| r.mean_nme < 1.5),
        format!(
            "{TWO_DATASET_STEPS} steps, steps per dataset {:?}: {}; target < 1.5% on both",
            trainer.dataset_steps,
            parts.join(", ")
        ),
    )
}

fn ablation_variants() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic(dir.path(), "pare", 7);
    let euclid = TrainConfig {
        loss_mode: LossMode::Euclidean,
        ..toy_config(vec![data.clone()], STEPS, dir.path().join("euclid"))
    };
    let (_, e) = train_and_score(euclid);
    let tokens = TrainConfig {
        token_mode: TokenMode::PerLandmark,
        ..toy_config(vec![data], STEPS, dir.path().join("tokens"))
    };
    let (t_trainer, t) = train_and_score(tokens);
    let token_count = t_trainer.model.schemas().group_count();
    let (en, tn) = (e[0].mean_nme, t[0].mean_nme);
    Outcome::new(
        en < 2.0 && tn < 2.0 && token_count == 9,
        format!("euclidean {en:.3}%, per-landmark tokens ({token_count} queries) {tn:.3}%; target < 2.0%"),
    )
}

// ---- 9 -------------------------------------------------------------------

fn determinism_and_resume() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let nine = synthetic(dir.path(), "pare", 7);
    let many = synthetic(dir.path(), "300w", 8);
    let total = 40;
    let config = |out: &str| TrainConfig {
        datasets: vec![nine.clone(), many.clone()],
        model: ModelConfig::toy(32, 8, 32, 1, 1),
        augment: Default::default(),
        batch_size: 4,
        total_steps: total,
        base_lr: 1e-3,
        seed: 9,
        output_dir: dir.path().join(out),
        ..TrainConfig::default()
    };
    let bits = |log: &[(u64, usize, f64, f64)]| -> Vec<(u64, usize, u64, u64)> {
        log.iter().map(|&(s, d, lr, l)| (s, d, lr.to_bits(), l.to_bits())).collect()
    };

    let mut a = Trainer::<f32>::new(config("a")).unwrap();
    let run_a = a.run(None, &mut std::io::sink()).unwrap();
    let mut b = Trainer::<f32>::new(config("b")).unwrap();
    let run_b = b.run(None, &mut std::io::sink()).unwrap();
    let same_curve = bits(&run_a.log) == bits(&run_b.log);

    let mut first = Trainer::<f32>::new(config("c")).unwrap();
    let half = first.run(Some(total / 2), &mut std::io::sink()).unwrap();
    let resumed_config = TrainConfig {
        resume: Some(half.checkpoint.clone()),
        ..config("c")
    };
    let mut second = Trainer::<f32>::new(resumed_config).unwrap();
    let rest = second.run(None, &mut std::io::sink()).unwrap();
    let tail_matches = bits(&rest.log) == bits(&run_a.log[(total / 2) as usize..]);
    let params_match = a
        .model
        .params()
        .iter()
        .zip(second.model.params().iter())
        .all(|((_, na, ta), (_, nb, tb))| {
            na == nb && ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        });
    let datasets_used = run_a.dataset_steps.iter().filter(|&&n| n > 0).count();
    Outcome::new(
        same_curve && tail_matches && params_match && datasets_used == 2,
        format!(
            "{total} augmented steps on 2 datasets: repeat curve {}, resumed tail {}, final tensors {}",
            if same_curve { "identical" } else { "differs" },
            if tail_matches { "bitwise equal" } else { "differs" },
            if params_match { "bitwise equal" } else { "differ" }
        ),
    )
}
