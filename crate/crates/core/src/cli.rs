//! The `mdmd` command line. Parsing and dispatch live here so the binary is
//! a one-line shim and every command can be driven in-process by tests.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use image::{Rgb, RgbImage};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::data::{gen_synthetic, load_rgb, read_dataset, Sample, DEFAULT_MARGIN};
use crate::error::{MdmdError, Result};
use crate::infer::{evaluate_dataset, predict_sample, PixelLandmark};
use crate::schema::{describe_schema, SchemaSet};
use crate::tensor::{Float, Precision};
use crate::train::{fit, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "mdmd", version, about = "Multi-definition facial landmark localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train from a TOML config; prints the final checkpoint path.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a checkpoint on a manifest; prints the report as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Also write the report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write CED points as `threshold,fraction` lines.
        #[arg(long)]
        ced_out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MARGIN)]
        margin: f64,
    },
    /// Predict landmarks and pixel-frame covariances for one face.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Face box as `x,y,w,h` in pixels.
        #[arg(long, value_parser = parse_bbox)]
        bbox: [f64; 4],
        /// Schema name selecting the prediction heads.
        #[arg(long)]
        dataset: String,
        /// Write a copy of the image with means and 1-sigma ellipses.
        #[arg(long)]
        overlay: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MARGIN)]
        margin: f64,
    },
    /// Render synthetic faces and their manifest.
    GenSynthetic {
        #[arg(long)]
        schema: String,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a schema's groups, sizes and flattened landmark order.
    InspectSchema {
        name: String,
        /// Read schemas from this document instead of the bundled set.
        #[arg(long)]
        schema_file: Option<PathBuf>,
    },
}

fn parse_bbox(s: &str) -> std::result::Result<[f64; 4], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    <[f64; 4]>::try_from(parts).map_err(|p| format!("expected x,y,w,h, got {} values", p.len()))
}

/// What a finished command reports back.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommandOutcome {
    pub exit_code: i32,
    pub report_path: Option<PathBuf>,
}

/// Exit status for an error: 3 for schema fingerprint mismatches, 4 for
/// unknown schemas, 2 for everything else.
pub fn exit_code(err: &MdmdError) -> i32 {
    match err {
        MdmdError::FingerprintMismatch { .. } => 3,
        MdmdError::UnknownSchema(_) => 4,
        _ => 2,
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Errors are written to `err` as one `error[<kind>]: <message>` line.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> CommandOutcome
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return CommandOutcome {
                exit_code: code,
                report_path: None,
            };
        }
    };
    let result = match Precision::from_env() {
        Err(msg) => Err(MdmdError::Config(msg)),
        Ok(Precision::Single) => dispatch::<f32>(cli.command, out, err),
        Ok(Precision::Double) => dispatch::<f64>(cli.command, out, err),
    };
    match result {
        Ok(report_path) => CommandOutcome {
            exit_code: 0,
            report_path,
        },
        Err(e) => {
            let line = e.to_string().replace('\n', " ");
            let _ = writeln!(err, "error[{}]: {line}", e.kind());
            CommandOutcome {
                exit_code: exit_code(&e),
                report_path: None,
            }
        }
    }
}

fn dispatch<T: Float>(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<Option<PathBuf>> {
    let io = |e| MdmdError::io("<stdout>", e);
    match cmd {
        Command::Train { config } => {
            let cfg = TrainConfig::from_file(&config)?;
            let outcome = fit::<T>(cfg, err)?;
            writeln!(out, "{}", outcome.checkpoint.display()).map_err(io)?;
            Ok(Some(outcome.checkpoint))
        }
        Command::Eval {
            checkpoint,
            manifest,
            report,
            ced_out,
            margin,
        } => {
            let ck = Checkpoint::<T>::load(&checkpoint)?;
            let dataset = match read_dataset(&manifest, &ck.schemas) {
                Err(MdmdError::UnknownSchema(name)) => {
                    return Err(MdmdError::FingerprintMismatch {
                        checkpoint: ck.fingerprint(),
                        data: format!("manifest schema `{name}` is not in the checkpoint"),
                    })
                }
                other => other?,
            };
            let model = ck.to_model()?;
            let rep = evaluate_dataset(&model, &dataset, margin)?;
            let json = serde_json::to_string_pretty(&rep).expect("report serializes");
            writeln!(out, "{json}").map_err(io)?;
            if let Some(p) = &ced_out {
                rep.write_ced_csv(p)?;
            }
            if let Some(p) = &report {
                rep.write_json(p)?;
            }
            Ok(report)
        }
        Command::Predict {
            checkpoint,
            image,
            bbox,
            dataset,
            overlay,
            margin,
        } => {
            let ck = Checkpoint::<T>::load(&checkpoint)?;
            let dataset_id = ck.schemas.id_of(&dataset)?;
            let model = ck.to_model()?;
            let sample = Sample {
                image: load_rgb(&image)?,
                bbox,
                landmarks: Vec::new(),
                dataset_id,
                face_id: image.display().to_string(),
            };
            let (landmarks, _) = predict_sample(&model, &sample, margin)?;
            #[derive(Serialize)]
            struct Prediction<'a> {
                dataset: &'a str,
                image: String,
                bbox: [f64; 4],
                landmarks: &'a [PixelLandmark],
            }
            let json = serde_json::to_string_pretty(&Prediction {
                dataset: &dataset,
                image: image.display().to_string(),
                bbox,
                landmarks: &landmarks,
            })
            .expect("prediction serializes");
            writeln!(out, "{json}").map_err(io)?;
            if let Some(p) = &overlay {
                draw_overlay(sample.image, &landmarks, p)?;
            }
            Ok(overlay)
        }
        Command::GenSynthetic {
            schema,
            count,
            seed,
            out: dir,
        } => {
            let manifest = gen_synthetic(&SchemaSet::bundled(), &schema, count, seed, &dir)?;
            writeln!(out, "{}", manifest.display()).map_err(io)?;
            Ok(Some(manifest))
        }
        Command::InspectSchema { name, schema_file } => {
            let set = match schema_file {
                Some(p) => {
                    if !p.exists() {
                        return Err(MdmdError::MissingFile(p));
                    }
                    let text = std::fs::read_to_string(&p).map_err(|e| MdmdError::io(&p, e))?;
                    crate::schema::load_schemas(&text)?
                }
                None => SchemaSet::bundled(),
            };
            write!(out, "{}", describe_schema(&set, &name)?).map_err(io)?;
            Ok(None)
        }
    }
}

/// Marks each mean with a cross and traces its 1-sigma ellipse.
fn draw_overlay(mut img: RgbImage, landmarks: &[PixelLandmark], path: &Path) -> Result<()> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut put = |x: f64, y: f64, c: Rgb<u8>| {
        let (xi, yi) = (x.floor() as i64, y.floor() as i64);
        if xi >= 0 && yi >= 0 && xi < w && yi < h {
            img.put_pixel(xi as u32, yi as u32, c);
        }
    };
    for lm in landmarks {
        let [[a, b], [_, d]] = lm.covariance;
        // eigen-decomposition of the symmetric 2x2 covariance
        let tr = (a + d) / 2.0;
        let disc = (((a - d) / 2.0).powi(2) + b * b).sqrt();
        let (l1, l2) = ((tr + disc).max(0.0), (tr - disc).max(0.0));
        let theta = 0.5 * (2.0 * b).atan2(a - d);
        let (s, c) = theta.sin_cos();
        for k in 0..96 {
            let t = k as f64 / 96.0 * std::f64::consts::TAU;
            let (u, v) = (l1.sqrt() * t.cos(), l2.sqrt() * t.sin());
            put(lm.x + c * u - s * v, lm.y + s * u + c * v, Rgb([255, 220, 0]));
        }
        for o in -2..=2 {
            put(lm.x + o as f64, lm.y, Rgb([0, 255, 0]));
            put(lm.x, lm.y + o as f64, Rgb([0, 255, 0]));
        }
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| MdmdError::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}
