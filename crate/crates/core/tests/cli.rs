use std::path::{Path, PathBuf};
use std::process::Command;

use mdmd::checkpoint::Checkpoint;
use mdmd::cli::{run, CommandOutcome};
use mdmd::data::{crop_and_resize, read_dataset};
use mdmd::loss::decode_cholesky;
use mdmd::model::image_to;
use serde_json::Value;

fn mdmd(args: &[&str]) -> (CommandOutcome, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let outcome = run(std::iter::once("mdmd").chain(args.iter().copied()), &mut out, &mut err);
    (outcome, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, schema: &str, seed: u64) -> PathBuf {
    let out = dir.join(format!("{schema}-{seed}"));
    let (oc, stdout, err) = mdmd(&["gen-synthetic", "--schema", schema, "--count", "4", "--seed", &seed.to_string(), "--out", s(&out)]);
    assert_eq!(oc.exit_code, 0, "{err}");
    PathBuf::from(stdout.trim())
}

fn write_config(dir: &Path, manifest: &Path, out: &str) -> PathBuf {
    let path = dir.join(format!("{out}.toml"));
    let text = format!(
        r#"datasets = ["{}"]
total_steps = 6
batch_size = 2
base_lr = 1e-3
seed = 3
output_dir = "{out}"

[model]
image_size = 32
patch_size = 8
embed_dim = 32
encoder_layers = 1
encoder_heads = 2
decoder_blocks = 1
"#,
        manifest.display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn train(dir: &Path, manifest: &Path, out: &str) -> PathBuf {
    let cfg = write_config(dir, manifest, out);
    let (oc, stdout, err) = mdmd(&["train", "--config", s(&cfg)]);
    assert_eq!(oc.exit_code, 0, "{err}");
    let ckpt = PathBuf::from(stdout.trim());
    assert!(ckpt.exists());
    assert_eq!(oc.report_path.as_deref(), Some(ckpt.as_path()));
    // relative output dirs resolve against the config file
    assert!(ckpt.starts_with(dir.join(out)));
    ckpt
}

#[test]
fn generation_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "300w", 11);
    let b_dir = dir.path().join("again");
    let b = gen(&b_dir, "300w", 11);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    for entry in std::fs::read_dir(a.parent().unwrap().join("images")).unwrap() {
        let p = entry.unwrap().path();
        let q = b.parent().unwrap().join("images").join(p.file_name().unwrap());
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    }
}

#[test]
fn train_twice_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen(dir.path(), "pare", 1);
    let a = train(dir.path(), &manifest, "run-a");
    let b = train(dir.path(), &manifest, "run-b");
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn missing_manifest_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere/manifest.jsonl");
    let cfg = write_config(dir.path(), &missing, "out");
    let (oc, _, err) = mdmd(&["train", "--config", s(&cfg)]);
    assert_eq!(oc.exit_code, 2);
    assert!(err.contains(s(&missing)), "{err}");
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error["));
}

#[test]
fn eval_reports_and_rejects_foreign_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen(dir.path(), "pare", 2);
    let ckpt = train(dir.path(), &manifest, "run");
    let report = dir.path().join("report.json");
    let ced = dir.path().join("ced.csv");
    let (oc, stdout, err) = mdmd(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--manifest",
        s(&manifest),
        "--report",
        s(&report),
        "--ced-out",
        s(&ced),
    ]);
    assert_eq!(oc.exit_code, 0, "{err}");
    let printed: Value = serde_json::from_str(&stdout).unwrap();
    let written: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(printed, written);
    assert_eq!(written["per_face_nme"].as_array().unwrap().len(), 4);
    let fr = written["fr"].as_f64().unwrap();
    let ced_end = written["ced"].as_array().unwrap().last().unwrap()[1].as_f64().unwrap();
    assert_eq!(fr, 100.0 * (1.0 - ced_end));
    let csv = std::fs::read_to_string(&ced).unwrap();
    assert!(csv.starts_with("threshold,fraction\n0,"));

    let other = gen(dir.path(), "300w", 2);
    let (oc, _, err) = mdmd(&["eval", "--checkpoint", s(&ckpt), "--manifest", s(&other)]);
    assert_eq!(oc.exit_code, 3, "{err}");
    assert!(err.starts_with("error[fingerprint]"), "{err}");
}

#[test]
fn predict_reports_pixel_frame_covariances() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen(dir.path(), "pare", 4);
    let ckpt = train(dir.path(), &manifest, "run");
    let ck = Checkpoint::<f32>::load(&ckpt).unwrap();
    let ds = read_dataset(&manifest, &ck.schemas).unwrap();
    let sample = ds.load(0).unwrap();
    let bbox = sample.bbox.map(|v| v.to_string()).join(",");
    let overlay = dir.path().join("overlay.png");
    let image = ds.image_path(0);
    let args = [
        "predict",
        "--checkpoint",
        s(&ckpt),
        "--image",
        s(&image),
        "--bbox",
        &bbox,
        "--dataset",
        "pare",
        "--overlay",
        s(&overlay),
    ];
    let (oc, first, err) = mdmd(&args);
    assert_eq!(oc.exit_code, 0, "{err}");
    assert!(overlay.exists());
    let (_, second, _) = mdmd(&args);
    assert_eq!(first, second);

    // recompute J Σ Jᵀ by hand from the crop map and the raw head outputs
    let model = ck.to_model().unwrap();
    let input = crop_and_resize(&sample, 0.25, model.config().image_size).unwrap();
    let pred = model.forward(&image_to::<f32>(&input.crop), sample.dataset_id).unwrap();
    let m = input.to_pixels().0;
    let j = [[m[0][0], m[0][1]], [m[1][0], m[1][1]]];
    let json: Value = serde_json::from_str(&first).unwrap();
    let lms = json["landmarks"].as_array().unwrap();
    assert_eq!(lms.len(), 9);
    for (k, lm) in lms.iter().enumerate() {
        let [x, y] = pred.landmarks[k];
        let px = m[0][0] * x + m[0][1] * y + m[0][2];
        let py = m[1][0] * x + m[1][1] * y + m[1][2];
        assert!((lm["x"].as_f64().unwrap() - px).abs() < 1e-6);
        assert!((lm["y"].as_f64().unwrap() - py).abs() < 1e-6);
        let sigma = decode_cholesky(pred.cholesky_raw[k]).covariance();
        for r in 0..2 {
            for c in 0..2 {
                let mut want = 0.0;
                for p in 0..2 {
                    for q in 0..2 {
                        want += j[r][p] * sigma[p][q] * j[c][q];
                    }
                }
                let got = lm["covariance"][r][c].as_f64().unwrap();
                assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "landmark {k} [{r}][{c}]: {got} vs {want}");
            }
        }
    }
}

#[test]
fn inspect_schema_prints_groups() {
    let (oc, out, _) = mdmd(&["inspect-schema", "cofw"]);
    assert_eq!(oc.exit_code, 0);
    assert!(out.contains("groups: 12\n"), "{out}");
    assert!(out.contains("size_total: 29\n"), "{out}");
    let (oc, _, err) = mdmd(&["inspect-schema", "no-such-schema"]);
    assert_eq!(oc.exit_code, 4);
    assert!(err.starts_with("error[unknown-schema]"));
}

#[test]
fn binary_propagates_exit_codes() {
    let status = Command::new(env!("CARGO_BIN_EXE_mdmd"))
        .args(["inspect-schema", "no-such-schema"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(4));
    let status = Command::new(env!("CARGO_BIN_EXE_mdmd")).args(["inspect-schema", "pare"]).output().unwrap();
    assert!(status.status.success());
}
