//! Self-describing checkpoint files.
//!
//! Layout: the 8-byte magic `MDMDCKPT`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a JSON header, then every tensor's
//! values in little-endian order. The header holds the model config, the
//! schema set with its fingerprint, the step counter and a tensor index.
//! Parameters come first in header order, followed by the Adam moments (first
//! `m`, then `v`) of every parameter that has them.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MdmdError, Result};
use crate::model::{MdmdModel, ModelConfig};
use crate::optim::AdamState;
use crate::params::ParamStore;
use crate::schema::SchemaSet;
use crate::tensor::{Float, Precision, Tensor};

const MAGIC: &[u8; 8] = b"MDMDCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct MomentEntry {
    name: String,
    steps: u64,
    has_moments: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    model: ModelConfig,
    schemas: SchemaSet,
    fingerprint: String,
    step: u64,
    dataset_steps: Vec<u64>,
    tensors: Vec<TensorEntry>,
    optimizer: Option<Vec<MomentEntry>>,
}

/// Everything needed to rebuild a model, and optionally to resume training.
#[derive(Clone, Debug)]
pub struct Checkpoint<T: Float> {
    pub model: ModelConfig,
    pub schemas: SchemaSet,
    /// Number of completed training steps.
    pub step: u64,
    /// Completed steps per dataset id.
    pub dataset_steps: Vec<u64>,
    pub params: ParamStore<T>,
    pub optimizer: Option<AdamState<T>>,
}

fn dtype_tag<T: Float>() -> &'static str {
    match T::PRECISION {
        Precision::Single => "f32",
        Precision::Double => "f64",
    }
}

fn push_values<T: Float>(out: &mut Vec<u8>, t: &Tensor<T>) {
    match T::PRECISION {
        Precision::Single => t.data().iter().for_each(|v| out.extend((v.f64() as f32).to_le_bytes())),
        Precision::Double => t.data().iter().for_each(|v| out.extend(v.f64().to_le_bytes())),
    }
}

impl<T: Float> Checkpoint<T> {
    pub fn from_model(model: &MdmdModel<T>, step: u64, dataset_steps: Vec<u64>, optimizer: Option<AdamState<T>>) -> Self {
        Checkpoint {
            model: model.config().clone(),
            schemas: model.schemas().clone(),
            step,
            dataset_steps,
            params: model.params().clone(),
            optimizer,
        }
    }

    pub fn fingerprint(&self) -> String {
        self.schemas.fingerprint()
    }

    /// Rebuilds the model with the stored parameter values.
    pub fn to_model(&self) -> Result<MdmdModel<T>> {
        // initial values are overwritten right away
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = MdmdModel::new(self.model.clone(), self.schemas.clone(), &mut rng)?;
        model.load_params(&self.params)?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self
            .params
            .iter()
            .map(|(_, name, t)| TensorEntry {
                name: name.to_string(),
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect();
        let optimizer = self.optimizer.as_ref().map(|opt| {
            self.params
                .iter()
                .map(|(id, name, _)| MomentEntry {
                    name: name.to_string(),
                    steps: opt.steps[id.index()],
                    has_moments: opt.m[id.index()].is_some(),
                })
                .collect()
        });
        let header = Header {
            dtype: dtype_tag::<T>().into(),
            model: self.model.clone(),
            schemas: self.schemas.clone(),
            fingerprint: self.fingerprint(),
            step: self.step,
            dataset_steps: self.dataset_steps.clone(),
            tensors,
            optimizer,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(FORMAT_VERSION.to_le_bytes());
        out.extend((json.len() as u64).to_le_bytes());
        out.extend(json);
        for (_, _, t) in self.params.iter() {
            push_values(&mut out, t);
        }
        if let Some(opt) = &self.optimizer {
            for (m, v) in opt.m.iter().zip(&opt.v) {
                if let (Some(m), Some(v)) = (m, v) {
                    push_values(&mut out, m);
                    push_values(&mut out, v);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| MdmdError::Checkpoint(m.to_string());
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated file"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(|_| bad("truncated file"))?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(MdmdError::Checkpoint(format!(
                "format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|_| bad("truncated file"))?;
        let len = u64::from_le_bytes(len) as usize;
        if r.len() < len {
            return Err(bad("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&r[..len]).map_err(|e| MdmdError::Checkpoint(format!("header: {e}")))?;
        r = &r[len..];
        if header.fingerprint != header.schemas.fingerprint() {
            return Err(bad("stored schema fingerprint does not match the stored schema set"));
        }
        let width = match header.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(MdmdError::Checkpoint(format!("unknown dtype `{other}`"))),
        };
        let mut read_tensor = |rows: usize, cols: usize| -> Result<Tensor<T>> {
            let n = rows * cols;
            if r.len() < n * width {
                return Err(bad("truncated tensor data"));
            }
            let (chunk, rest) = r.split_at(n * width);
            r = rest;
            let data = chunk
                .chunks_exact(width)
                .map(|c| {
                    if width == 4 {
                        T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    } else {
                        T::of(f64::from_le_bytes(c.try_into().unwrap()))
                    }
                })
                .collect();
            Ok(Tensor::from_vec(rows, cols, data))
        };
        let mut params = ParamStore::new();
        for e in &header.tensors {
            params.add(e.name.clone(), read_tensor(e.rows, e.cols)?);
        }
        let optimizer = match &header.optimizer {
            None => None,
            Some(entries) => {
                if entries.len() != header.tensors.len() {
                    return Err(bad("optimizer index does not match parameters"));
                }
                let mut st = AdamState::new(entries.len());
                for (i, (e, t)) in entries.iter().zip(&header.tensors).enumerate() {
                    if e.name != t.name {
                        return Err(bad("optimizer index does not match parameters"));
                    }
                    st.steps[i] = e.steps;
                    if e.has_moments {
                        st.m[i] = Some(read_tensor(t.rows, t.cols)?);
                        st.v[i] = Some(read_tensor(t.rows, t.cols)?);
                    }
                }
                Some(st)
            }
        };
        if !r.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Checkpoint {
            model: header.model,
            schemas: header.schemas,
            step: header.step,
            dataset_steps: header.dataset_steps,
            params,
            optimizer,
        })
    }

    /// Writes via a temporary file and a rename, so readers never see a partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| MdmdError::io(dir, e))?;
        }
        let tmp = path.with_extension("ckpt.tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| MdmdError::io(&tmp, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| MdmdError::io(&tmp, e))?;
        f.sync_all().map_err(|e| MdmdError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| MdmdError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(MdmdError::MissingFile(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(|e| MdmdError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
