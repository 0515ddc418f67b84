//! Multi-dataset training: one dataset per batch, drawn uniformly, Adam with
//! linear learning-rate decay, global-norm gradient clipping and resumable
//! checkpoints.
//!
//! Every random draw of step `s` comes from its own stream, so a run resumed
//! from a checkpoint replays exactly the batches an uninterrupted run would.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{augment, crop_and_resize, read_dataset, AugmentPolicy, Dataset, ModelInput, DEFAULT_MARGIN};
use crate::error::{MdmdError, Result};
use crate::graph::Graph;
use crate::model::{image_to, MdmdModel, ModelConfig};
use crate::optim::{AdamConfig, AdamState};
use crate::schema::{bundled_document, load_schema_documents, SchemaSet};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    #[default]
    Laplacian,
    Euclidean,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenMode {
    /// One query token per semantic group.
    #[default]
    Flsg,
    /// One query token per landmark.
    PerLandmark,
}

/// Training run description, read from TOML. Relative paths are resolved
/// against the directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub datasets: Vec<PathBuf>,
    /// Extra schema documents; schemas not found there come from the bundled set.
    pub schema_files: Vec<PathBuf>,
    pub model: ModelConfig,
    pub augment: AugmentPolicy,
    pub margin: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub base_lr: f64,
    pub adam: AdamConfig,
    pub loss_mode: LossMode,
    pub token_mode: TokenMode,
    pub seed: u64,
    /// Save every this many steps; 0 saves only the final checkpoint.
    pub checkpoint_every: u64,
    /// Global gradient-norm limit; 0 disables clipping.
    pub grad_clip: f64,
    pub output_dir: PathBuf,
    pub resume: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            datasets: Vec::new(),
            schema_files: Vec::new(),
            model: ModelConfig::default(),
            augment: AugmentPolicy::identity(),
            margin: DEFAULT_MARGIN,
            batch_size: 16,
            total_steps: 1000,
            base_lr: 1e-4,
            adam: AdamConfig::default(),
            loss_mode: LossMode::Laplacian,
            token_mode: TokenMode::Flsg,
            seed: 0,
            checkpoint_every: 0,
            grad_clip: 1.0,
            output_dir: PathBuf::from("checkpoints"),
            resume: None,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| MdmdError::Config(e.to_string().trim().to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(MdmdError::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| MdmdError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.datasets.iter_mut().for_each(fix);
        cfg.schema_files.iter_mut().for_each(fix);
        fix(&mut cfg.output_dir);
        if let Some(r) = cfg.resume.as_mut() {
            fix(r);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(MdmdError::Config("no datasets listed".into()));
        }
        if self.batch_size == 0 {
            return Err(MdmdError::Config("batch_size must be at least 1".into()));
        }
        if self.total_steps == 0 {
            return Err(MdmdError::Config("total_steps must be at least 1".into()));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(MdmdError::Config("base_lr must be finite and non-negative".into()));
        }
        if self.grad_clip.is_nan() || self.grad_clip < 0.0 {
            return Err(MdmdError::Config("grad_clip must be non-negative".into()));
        }
        self.model.validate()
    }
}

/// `base_lr * (1 - step / total_steps)`.
pub fn lr_at(step: u64, total_steps: u64, base_lr: f64) -> f64 {
    base_lr * (1.0 - step as f64 / total_steps as f64)
}

/// RNG for one named purpose of a run: stream 0 initializes the model and
/// stream `s + 1` drives training step `s`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Which dataset a batch comes from and which of its samples, with replacement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchDraw {
    pub dataset: usize,
    pub indices: Vec<usize>,
}

pub fn sample_batch<R: Rng + ?Sized>(dataset_sizes: &[usize], rng: &mut R, batch_size: usize) -> Result<BatchDraw> {
    if dataset_sizes.is_empty() {
        return Err(MdmdError::Empty("no datasets to sample from".into()));
    }
    if let Some(i) = dataset_sizes.iter().position(|&n| n == 0) {
        return Err(MdmdError::Empty(format!("dataset {i} has no samples")));
    }
    let dataset = rng.random_range(0..dataset_sizes.len());
    let n = dataset_sizes[dataset];
    let indices = (0..batch_size).map(|_| rng.random_range(0..n)).collect();
    Ok(BatchDraw { dataset, indices })
}

/// One homogeneous batch in model precision.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub dataset_id: usize,
    pub face_ids: Vec<String>,
    pub images: Vec<Vec<T>>,
    /// Normalized crop frame.
    pub landmarks: Vec<Vec<[f64; 2]>>,
}

/// Loss of a batch as a graph node: mean over samples of the two-level
/// group average, per `mode`.
pub fn batch_loss<T: Float>(
    model: &MdmdModel<T>,
    g: &mut Graph<'_, T>,
    batch: &Batch<T>,
    mode: LossMode,
) -> Result<crate::graph::Var> {
    let schema = model.schemas().get(batch.dataset_id)?;
    let n = schema.landmark_count;
    let images: Vec<&[T]> = batch.images.iter().map(Vec::as_slice).collect();
    let hv = model.forward_graph(g, &images, batch.dataset_id)?;
    let mut gt = Tensor::zeros(batch.landmarks.len(), 2 * n);
    for (b, lms) in batch.landmarks.iter().enumerate() {
        if lms.len() != n {
            return Err(MdmdError::LandmarkCount {
                face_id: batch.face_ids.get(b).cloned().unwrap_or_default(),
                expected: n,
                found: lms.len(),
            });
        }
        for (k, p) in lms.iter().enumerate() {
            gt.set(b, 2 * k, T::of(p[0]));
            gt.set(b, 2 * k + 1, T::of(p[1]));
        }
    }
    let w = schema.landmark_weights();
    Ok(match mode {
        LossMode::Laplacian => g.laplacian_loss(hv.landmarks, hv.cholesky, gt, w),
        LossMode::Euclidean => g.euclidean_loss(hv.landmarks, gt, w),
    })
}

/// Forward, backward, clip and one Adam update at `lr`. Returns the batch loss.
#[allow(clippy::too_many_arguments)]
pub fn train_step<T: Float>(
    model: &mut MdmdModel<T>,
    adam: &mut AdamState<T>,
    batch: &Batch<T>,
    step: u64,
    lr: f64,
    mode: LossMode,
    adam_cfg: &AdamConfig,
    grad_clip: f64,
) -> Result<f64> {
    let (loss, mut grads) = {
        let mut g = Graph::new(model.params());
        let root = batch_loss(model, &mut g, batch, mode)?;
        let loss = g.value(root).get(0, 0).f64();
        if !loss.is_finite() {
            return Err(non_finite(step, batch));
        }
        (loss, g.backward(root))
    };
    if !grads.all_finite() {
        return Err(non_finite(step, batch));
    }
    if grad_clip > 0.0 {
        let norm = grads.global_norm().f64();
        if norm > grad_clip {
            grads.scale(T::of(grad_clip / norm));
        }
    }
    adam.update(model.params_mut(), &grads, lr, adam_cfg);
    Ok(loss)
}

fn non_finite<T>(step: u64, batch: &Batch<T>) -> MdmdError {
    MdmdError::NonFiniteLoss {
        step,
        dataset_id: batch.dataset_id,
        face_ids: batch.face_ids.clone(),
    }
}

/// Builds the schema set a config trains: the schemas named by the manifest
/// headers, in first-seen order, then rewritten for the token mode.
pub fn schema_set_for(config: &TrainConfig) -> Result<SchemaSet> {
    let mut extra = Vec::new();
    for p in &config.schema_files {
        if !p.exists() {
            return Err(MdmdError::MissingFile(p.clone()));
        }
        extra.push(std::fs::read_to_string(p).map_err(|e| MdmdError::io(p, e))?);
    }
    let extra_set = if extra.is_empty() {
        None
    } else {
        Some(load_schema_documents(&extra.iter().map(String::as_str).collect::<Vec<_>>())?)
    };
    let mut names: Vec<String> = Vec::new();
    for p in &config.datasets {
        let name = manifest_schema_name(p)?;
        if !names.contains(&name) {
            names.push(name);
        }
    }
    let mut schemas = Vec::new();
    let mut group_count = None;
    let mut group_names = None;
    for name in &names {
        if let Some(set) = extra_set.as_ref().filter(|s| s.id_of(name).is_ok()) {
            schemas.push(set.get(set.id_of(name)?)?.clone());
            group_count = Some(set.group_count());
            group_names = Some(set.group_names().to_vec());
        } else {
            let doc = bundled_document(name).ok_or_else(|| MdmdError::UnknownSchema(name.clone()))?;
            let set = load_schema_documents(&[doc])?;
            schemas.push(set.schemas()[0].clone());
        }
    }
    let set = SchemaSet::new(
        schemas,
        group_count.unwrap_or(crate::schema::DEFAULT_GROUP_COUNT),
        group_names,
    )?;
    match config.token_mode {
        TokenMode::Flsg => Ok(set),
        TokenMode::PerLandmark => set.per_landmark_tokens(),
    }
}

fn manifest_schema_name(path: &Path) -> Result<String> {
    use std::io::BufRead;
    if !path.exists() {
        return Err(MdmdError::MissingFile(path.to_path_buf()));
    }
    let f = std::fs::File::open(path).map_err(|e| MdmdError::io(path, e))?;
    for line in std::io::BufReader::new(f).lines() {
        let line = line.map_err(|e| MdmdError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let h: crate::data::ManifestHeader =
            serde_json::from_str(&line).map_err(|e| MdmdError::Parse(format!("{}: {e}", path.display())))?;
        return Ok(h.schema);
    }
    Err(MdmdError::Parse(format!("{}: missing header line", path.display())))
}

/// A dataset decoded and cropped once, ready to be batched.
pub struct PreparedDataset<T> {
    pub dataset: Dataset,
    pub inputs: Vec<ModelInput>,
    pub images: Vec<Vec<T>>,
}

impl<T: Float> PreparedDataset<T> {
    pub fn load(path: &Path, schemas: &SchemaSet, margin: f64, image_size: usize) -> Result<Self> {
        let dataset = read_dataset(path, schemas)?;
        let mut inputs = Vec::with_capacity(dataset.len());
        for s in dataset.iter() {
            inputs.push(crop_and_resize(&s?, margin, image_size)?);
        }
        let images = inputs.iter().map(|m| image_to(&m.crop)).collect();
        Ok(PreparedDataset { dataset, inputs, images })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Result of [`fit`].
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub checkpoint: PathBuf,
    /// `(step, dataset_id, lr, loss)` for every step run by this call.
    pub log: Vec<(u64, usize, f64, f64)>,
    pub dataset_steps: Vec<u64>,
}

/// Model, optimizer and data of a training run.
pub struct Trainer<T: Float> {
    pub config: TrainConfig,
    pub model: MdmdModel<T>,
    pub adam: AdamState<T>,
    pub data: Vec<PreparedDataset<T>>,
    /// Next step to run.
    pub step: u64,
    pub dataset_steps: Vec<u64>,
}

impl<T: Float> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let schemas = schema_set_for(&config)?;
        let data = config
            .datasets
            .iter()
            .map(|p| PreparedDataset::load(p, &schemas, config.margin, config.model.image_size))
            .collect::<Result<Vec<_>>>()?;
        let model = MdmdModel::new(config.model.clone(), schemas, &mut stream_rng(config.seed, 0))?;
        let adam = AdamState::new(model.params().len());
        let dataset_steps = vec![0; model.schemas().len()];
        let mut trainer = Trainer {
            config,
            model,
            adam,
            data,
            step: 0,
            dataset_steps,
        };
        if let Some(path) = trainer.config.resume.clone() {
            trainer.restore(&Checkpoint::load(&path)?)?;
        }
        Ok(trainer)
    }

    /// Continues from a checkpoint of the same run.
    pub fn restore(&mut self, ck: &Checkpoint<T>) -> Result<()> {
        let ours = self.model.schemas().fingerprint();
        if ck.fingerprint() != ours {
            return Err(MdmdError::FingerprintMismatch {
                checkpoint: ck.fingerprint(),
                data: ours,
            });
        }
        if ck.model != *self.model.config() {
            return Err(MdmdError::Checkpoint("model config differs from the training config".into()));
        }
        if ck.step > self.config.total_steps {
            return Err(MdmdError::Checkpoint(format!(
                "checkpoint is at step {}, past total_steps {}",
                ck.step, self.config.total_steps
            )));
        }
        self.model.load_params(&ck.params)?;
        self.adam = ck
            .optimizer
            .clone()
            .ok_or_else(|| MdmdError::Checkpoint("checkpoint has no optimizer state".into()))?;
        self.step = ck.step;
        self.dataset_steps = ck.dataset_steps.clone();
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint::from_model(&self.model, self.step, self.dataset_steps.clone(), Some(self.adam.clone()))
    }

    pub fn checkpoint_path(&self, step: u64) -> PathBuf {
        self.config.output_dir.join(format!("step-{step:06}.ckpt"))
    }

    /// The batch of step `s`; depends only on the seed, the step and the data.
    pub fn batch_for(&self, step: u64) -> Result<Batch<T>> {
        let mut rng = stream_rng(self.config.seed, step + 1);
        let sizes: Vec<usize> = self.data.iter().map(PreparedDataset::len).collect();
        let draw = sample_batch(&sizes, &mut rng, self.config.batch_size)?;
        let ds = &self.data[draw.dataset];
        let schema = self.model.schemas().get(ds.dataset.dataset_id)?;
        let mut batch = Batch {
            dataset_id: ds.dataset.dataset_id,
            face_ids: Vec::with_capacity(draw.indices.len()),
            images: Vec::with_capacity(draw.indices.len()),
            landmarks: Vec::with_capacity(draw.indices.len()),
        };
        for &i in &draw.indices {
            batch.face_ids.push(ds.dataset.records[i].id.clone());
            if self.config.augment.is_identity() {
                batch.images.push(ds.images[i].clone());
                batch.landmarks.push(ds.inputs[i].landmarks_norm.clone());
            } else {
                let mut sample_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
                let aug = augment(&ds.inputs[i], &self.config.augment, schema, &mut sample_rng)?;
                batch.images.push(image_to(&aug.crop));
                batch.landmarks.push(aug.landmarks_norm);
            }
        }
        Ok(batch)
    }

    /// Runs one step and advances the counter. Returns `(dataset_id, lr, loss)`.
    pub fn step_once(&mut self) -> Result<(usize, f64, f64)> {
        let s = self.step;
        let batch = self.batch_for(s)?;
        let lr = lr_at(s, self.config.total_steps, self.config.base_lr);
        let loss = train_step(
            &mut self.model,
            &mut self.adam,
            &batch,
            s,
            lr,
            self.config.loss_mode,
            &self.config.adam,
            self.config.grad_clip,
        )?;
        self.dataset_steps[batch.dataset_id] += 1;
        self.step += 1;
        Ok((batch.dataset_id, lr, loss))
    }

    /// Runs until `total_steps` (or `stop_at`, if earlier), writing one
    /// `step,dataset_id,lr,loss` line per step to `log`.
    pub fn run(&mut self, stop_at: Option<u64>, log: &mut dyn Write) -> Result<FitOutcome> {
        let end = stop_at.unwrap_or(self.config.total_steps).min(self.config.total_steps);
        let mut lines = Vec::new();
        let mut last = None;
        while self.step < end {
            let s = self.step;
            let (ds, lr, loss) = self.step_once()?;
            writeln!(log, "{s},{ds},{lr:e},{loss}").map_err(|e| MdmdError::io("<log>", e))?;
            lines.push((s, ds, lr, loss));
            let every = self.config.checkpoint_every;
            if every > 0 && self.step.is_multiple_of(every) {
                let path = self.checkpoint_path(self.step);
                self.checkpoint().save(&path)?;
                last = Some(path);
            }
        }
        let path = match last {
            Some(p) if self.step == end => p,
            _ => {
                let p = self.checkpoint_path(self.step);
                self.checkpoint().save(&p)?;
                p
            }
        };
        let per_dataset: Vec<String> = self
            .model
            .schemas()
            .schemas()
            .iter()
            .zip(&self.dataset_steps)
            .map(|(s, n)| format!("{}={n}", s.name))
            .collect();
        writeln!(log, "# steps per dataset: {}", per_dataset.join(" ")).map_err(|e| MdmdError::io("<log>", e))?;
        Ok(FitOutcome {
            checkpoint: path,
            log: lines,
            dataset_steps: self.dataset_steps.clone(),
        })
    }
}

/// Trains per `config` and returns the final checkpoint path with the step log.
pub fn fit<T: Float>(config: TrainConfig, log: &mut dyn Write) -> Result<FitOutcome> {
    Trainer::<T>::new(config)?.run(None, log)
}
