//! The landmark network: ViT encoder, semantic-group decoder and per-dataset
//! prediction heads.
//!
//! ```text
//! image ─ patchify ─ encoder ─┐
//!                             ├─ decoder (group tokens as queries) ─ heads[dataset] ─ landmarks, cholesky
//! group embedding ────────────┘
//! ```
//!
//! All forward methods build onto a [`Graph`] so the same code path serves
//! inference, training and gradient checks. Inputs are batched row-wise:
//! `B` images give `B * (P² + 1)` encoder tokens and `B * G` decoder tokens.

mod config;

pub use config::ModelConfig;

use rand::Rng;

use crate::error::{MdmdError, Result};
use crate::graph::{AttnDims, Graph, Var};
use crate::params::{trunc_normal, ParamId, ParamStore};
use crate::schema::SchemaSet;
use crate::tensor::{Float, Tensor};

/// Per-landmark outputs for one face, rows in canonical landmark order.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    /// Means in the normalized crop frame.
    pub landmarks: Vec<[f64; 2]>,
    /// Unconstrained Cholesky head outputs `(a_raw, b, c_raw)`.
    pub cholesky_raw: Vec<[f64; 3]>,
}

/// Head output nodes for a batch: `B x 2N` landmarks and `B x 3N` Cholesky parameters.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub landmarks: Var,
    pub cholesky: Var,
}

#[derive(Clone, Copy, Debug)]
struct LinearIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct NormIds {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct AttnIds {
    q: LinearIds,
    k: LinearIds,
    v: LinearIds,
    o: LinearIds,
}

#[derive(Clone, Copy, Debug)]
struct FfnIds {
    fc1: LinearIds,
    fc2: LinearIds,
}

#[derive(Clone, Copy, Debug)]
struct EncoderBlock {
    ln1: NormIds,
    attn: AttnIds,
    ln2: NormIds,
    ffn: FfnIds,
}

#[derive(Clone, Copy, Debug)]
struct DecoderBlock {
    ln_query: NormIds,
    ln_memory: NormIds,
    cross: AttnIds,
    ln_self: NormIds,
    self_attn: AttnIds,
    ln_ffn: NormIds,
    ffn: FfnIds,
}

#[derive(Clone, Copy, Debug)]
struct HeadPair {
    lm: FfnIds,
    chol: FfnIds,
}

struct Builder<'r, T: Float, R: Rng> {
    store: ParamStore<T>,
    rng: &'r mut R,
    std: f64,
}

impl<T: Float, R: Rng> Builder<'_, T, R> {
    fn weight(&mut self, name: String, rows: usize, cols: usize) -> ParamId {
        let t = trunc_normal(self.rng, rows, cols, self.std);
        self.store.add(name, t)
    }

    fn zeros(&mut self, name: String, rows: usize, cols: usize) -> ParamId {
        self.store.add(name, Tensor::zeros(rows, cols))
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> LinearIds {
        LinearIds {
            w: self.weight(format!("{name}.weight"), fan_in, fan_out),
            b: self.zeros(format!("{name}.bias"), 1, fan_out),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> NormIds {
        NormIds {
            gamma: self.store.add(format!("{name}.gamma"), Tensor::full(1, d, T::one())),
            beta: self.zeros(format!("{name}.beta"), 1, d),
        }
    }

    fn attn(&mut self, name: &str, d: usize) -> AttnIds {
        AttnIds {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    fn mlp(&mut self, name: &str, d_in: usize, hidden: usize, d_out: usize) -> FfnIds {
        FfnIds {
            fc1: self.linear(&format!("{name}.fc1"), d_in, hidden),
            fc2: self.linear(&format!("{name}.fc2"), hidden, d_out),
        }
    }
}

pub struct MdmdModel<T: Float> {
    config: ModelConfig,
    schemas: SchemaSet,
    params: ParamStore<T>,
    patch: LinearIds,
    global_token: ParamId,
    pos_embed: ParamId,
    encoder: Vec<EncoderBlock>,
    flsg_embed: ParamId,
    decoder: Vec<DecoderBlock>,
    /// `heads[dataset][group]`, `None` for empty groups.
    heads: Vec<Vec<Option<HeadPair>>>,
}

impl<T: Float> MdmdModel<T> {
    /// Registers and initializes every parameter: truncated normal for weights,
    /// embeddings and positional encodings, zeros for biases, unit LayerNorm gains.
    pub fn new<R: Rng>(config: ModelConfig, schemas: SchemaSet, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let mut b = Builder {
            store: ParamStore::new(),
            rng,
            std: config.init_std,
        };
        let patch = b.linear("patch_embed", config.patch_dim(), d);
        let global_token = b.weight("global_token".into(), 1, d);
        let pos_embed = b.weight("pos_embed".into(), config.token_count(), d);
        let hidden = d * config.ffn_ratio;
        let encoder = (0..config.encoder_layers)
            .map(|l| {
                let p = format!("encoder.{l}");
                EncoderBlock {
                    ln1: b.norm(&format!("{p}.ln1"), d),
                    attn: b.attn(&format!("{p}.attn"), d),
                    ln2: b.norm(&format!("{p}.ln2"), d),
                    ffn: b.mlp(&format!("{p}.ffn"), d, hidden, d),
                }
            })
            .collect();
        let flsg_embed = b.weight("flsg_embed".into(), schemas.group_count(), d);
        let decoder = (0..config.decoder_blocks)
            .map(|l| {
                let p = format!("decoder.{l}");
                DecoderBlock {
                    ln_query: b.norm(&format!("{p}.ln_query"), d),
                    ln_memory: b.norm(&format!("{p}.ln_memory"), d),
                    cross: b.attn(&format!("{p}.cross"), d),
                    ln_self: b.norm(&format!("{p}.ln_self"), d),
                    self_attn: b.attn(&format!("{p}.self"), d),
                    ln_ffn: b.norm(&format!("{p}.ln_ffn"), d),
                    ffn: b.mlp(&format!("{p}.ffn"), d, hidden, d),
                }
            })
            .collect();
        let hh = config.head_hidden();
        let heads = schemas
            .schemas()
            .iter()
            .map(|s| {
                s.flsg_map
                    .groups()
                    .iter()
                    .enumerate()
                    .map(|(i, group)| {
                        (!group.is_empty()).then(|| {
                            let n = group.len();
                            let p = format!("heads.{}.{i}", s.name);
                            HeadPair {
                                lm: b.mlp(&format!("{p}.lm"), d, hh, 2 * n),
                                chol: b.mlp(&format!("{p}.chol"), d, hh, 3 * n),
                            }
                        })
                    })
                    .collect()
            })
            .collect();
        Ok(MdmdModel {
            config,
            schemas,
            params: b.store,
            patch,
            global_token,
            pos_embed,
            encoder,
            flsg_embed,
            decoder,
            heads,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn schemas(&self) -> &SchemaSet {
        &self.schemas
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn flsg_embedding_id(&self) -> ParamId {
        self.flsg_embed
    }

    /// Ids of every parameter belonging to `dataset_id`'s heads.
    pub fn head_param_ids(&self, dataset_id: usize) -> Vec<ParamId> {
        self.heads
            .get(dataset_id)
            .into_iter()
            .flatten()
            .flatten()
            .flat_map(|h| {
                [h.lm.fc1, h.lm.fc2, h.chol.fc1, h.chol.fc2]
                    .into_iter()
                    .flat_map(|l| [l.w, l.b])
            })
            .collect()
    }

    /// Replaces all parameter values, checking names and shapes.
    pub fn load_params(&mut self, values: &ParamStore<T>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(MdmdError::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                self.params.len(),
                values.len()
            )));
        }
        for (id, name, t) in values.iter() {
            let own = self
                .params
                .id(name)
                .ok_or_else(|| MdmdError::Checkpoint(format!("unexpected parameter `{name}`")))?;
            if self.params.get(own).shape() != t.shape() {
                return Err(MdmdError::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    self.params.get(own).shape()
                )));
            }
            let _ = id;
            *self.params.get_mut(own) = t.clone();
        }
        Ok(())
    }

    fn linear(&self, g: &mut Graph<'_, T>, x: Var, ids: LinearIds) -> Var {
        let (w, b) = (g.param(ids.w), g.param(ids.b));
        g.linear(x, w, Some(b))
    }

    fn norm(&self, g: &mut Graph<'_, T>, x: Var, ids: NormIds) -> Var {
        let (gamma, beta) = (g.param(ids.gamma), g.param(ids.beta));
        g.layer_norm(x, gamma, beta)
    }

    fn attention(&self, g: &mut Graph<'_, T>, query: Var, memory: Var, ids: AttnIds, dims: AttnDims) -> Var {
        let q = self.linear(g, query, ids.q);
        let k = self.linear(g, memory, ids.k);
        let v = self.linear(g, memory, ids.v);
        let a = g.attention(q, k, v, dims);
        self.linear(g, a, ids.o)
    }

    fn ffn(&self, g: &mut Graph<'_, T>, x: Var, ids: FfnIds) -> Var {
        let h = self.linear(g, x, ids.fc1);
        let h = g.gelu(h);
        self.linear(g, h, ids.fc2)
    }

    fn head_mlp(&self, g: &mut Graph<'_, T>, x: Var, ids: FfnIds) -> Var {
        let h = self.linear(g, x, ids.fc1);
        let h = g.relu(h);
        self.linear(g, h, ids.fc2)
    }

    /// Splits each image into non-overlapping patches, projects them, appends
    /// the global token and adds positional encodings: `B * (P² + 1)` tokens.
    pub fn patchify(&self, g: &mut Graph<'_, T>, images: &[&[T]]) -> Result<Var> {
        let s = self.config.image_size;
        let p = self.config.patch_size;
        let grid = self.config.grid();
        if images.is_empty() {
            return Err(MdmdError::Empty("no images in batch".into()));
        }
        let mut patches = Tensor::zeros(images.len() * grid * grid, self.config.patch_dim());
        for (bi, img) in images.iter().enumerate() {
            if img.len() != s * s * 3 {
                return Err(MdmdError::Shape(format!(
                    "image has {} values, expected {s}x{s}x3 = {}",
                    img.len(),
                    s * s * 3
                )));
            }
            for pr in 0..grid {
                for pc in 0..grid {
                    let row = patches.row_mut(bi * grid * grid + pr * grid + pc);
                    for dy in 0..p {
                        let src = ((pr * p + dy) * s + pc * p) * 3;
                        row[dy * p * 3..(dy + 1) * p * 3].copy_from_slice(&img[src..src + p * 3]);
                    }
                }
            }
        }
        let x = g.constant(patches);
        let projected = self.linear(g, x, self.patch);
        let (global, pos) = (g.param(self.global_token), g.param(self.pos_embed));
        Ok(g.assemble_tokens(projected, global, pos, images.len()))
    }

    /// Pre-norm transformer encoder; zero layers is the identity.
    pub fn encode(&self, g: &mut Graph<'_, T>, tokens: Var, batch: usize) -> Var {
        let l = self.config.token_count();
        let dims = AttnDims {
            batch,
            heads: self.config.encoder_heads,
            lq: l,
            lk: l,
        };
        let mut x = tokens;
        for blk in &self.encoder {
            let h = self.norm(g, x, blk.ln1);
            let a = self.attention(g, h, h, blk.attn, dims);
            x = g.add(x, a);
            let h = self.norm(g, x, blk.ln2);
            let f = self.ffn(g, h, blk.ffn);
            x = g.add(x, f);
        }
        x
    }

    /// One decoder block:
    /// `F¹ = MHCA(LN(F), LN(X)) + F`, `F² = MHSA(LN(F¹)) + F¹`, `out = FFN(LN(F²))`.
    pub fn decoder_block(&self, g: &mut Graph<'_, T>, index: usize, f: Var, memory: Var, batch: usize) -> Var {
        let blk = self.decoder[index];
        let groups = self.schemas.group_count();
        let heads = self.config.decoder_heads();
        let q = self.norm(g, f, blk.ln_query);
        let m = self.norm(g, memory, blk.ln_memory);
        let cross = self.attention(
            g,
            q,
            m,
            blk.cross,
            AttnDims {
                batch,
                heads,
                lq: groups,
                lk: self.config.token_count(),
            },
        );
        let f1 = g.add(cross, f);
        let h = self.norm(g, f1, blk.ln_self);
        let sa = self.attention(
            g,
            h,
            h,
            blk.self_attn,
            AttnDims {
                batch,
                heads,
                lq: groups,
                lk: groups,
            },
        );
        let f2 = g.add(sa, f1);
        let h = self.norm(g, f2, blk.ln_ffn);
        let out = self.ffn(g, h, blk.ffn);
        if self.config.decoder_ffn_residual {
            g.add(out, f2)
        } else {
            out
        }
    }

    /// Runs all decoder blocks seeded with the learned group embedding.
    pub fn decode(&self, g: &mut Graph<'_, T>, memory: Var, batch: usize) -> Var {
        let emb = g.param(self.flsg_embed);
        let mut f = g.tile_rows(emb, batch);
        for i in 0..self.decoder.len() {
            f = self.decoder_block(g, i, f, memory, batch);
        }
        f
    }

    /// Applies `dataset_id`'s head pair to each non-empty group token and
    /// scatters the results to canonical landmark order.
    pub fn predict_heads(&self, g: &mut Graph<'_, T>, f_out: Var, batch: usize, dataset_id: usize) -> Result<HeadVars> {
        let schema = self.schemas.get(dataset_id)?;
        let groups = self.schemas.group_count();
        let (rows, cols) = g.value(f_out).shape();
        if rows != batch * groups || cols != self.config.embed_dim {
            return Err(MdmdError::Shape(format!(
                "group tokens are {rows}x{cols}, expected {}x{}",
                batch * groups,
                self.config.embed_dim
            )));
        }
        let mut lms = Vec::new();
        let mut chols = Vec::new();
        for (i, head) in self.heads[dataset_id].iter().enumerate() {
            let Some(head) = head else { continue };
            let tokens = g.gather_rows(f_out, (0..batch).map(|b| b * groups + i).collect());
            lms.push(self.head_mlp(g, tokens, head.lm));
            chols.push(self.head_mlp(g, tokens, head.chol));
        }
        let lm = g.concat_cols(lms);
        let chol = g.concat_cols(chols);
        let flat = schema.flatten_ids();
        let mut position = vec![0; flat.len()];
        for (p, &k) in flat.iter().enumerate() {
            position[k] = p;
        }
        let lm_idx = position.iter().flat_map(|&p| [2 * p, 2 * p + 1]).collect();
        let chol_idx = position
            .iter()
            .flat_map(|&p| [3 * p, 3 * p + 1, 3 * p + 2])
            .collect();
        Ok(HeadVars {
            landmarks: g.gather_cols(lm, lm_idx),
            cholesky: g.gather_cols(chol, chol_idx),
        })
    }

    /// patchify → encode → decode → predict_heads for a batch of same-dataset images.
    pub fn forward_graph(&self, g: &mut Graph<'_, T>, images: &[&[T]], dataset_id: usize) -> Result<HeadVars> {
        self.schemas.get(dataset_id)?;
        let batch = images.len();
        let tokens = self.patchify(g, images)?;
        let x = self.encode(g, tokens, batch);
        let f = self.decode(g, x, batch);
        self.predict_heads(g, f, batch, dataset_id)
    }

    pub fn forward_batch(&self, images: &[&[T]], dataset_id: usize) -> Result<Vec<PredictionSet>> {
        let mut g = Graph::new(&self.params);
        let hv = self.forward_graph(&mut g, images, dataset_id)?;
        Ok(predictions_from(&g, hv))
    }

    pub fn forward(&self, image: &[T], dataset_id: usize) -> Result<PredictionSet> {
        Ok(self.forward_batch(&[image], dataset_id)?.remove(0))
    }
}

/// Reads head output nodes into one [`PredictionSet`] per batch row.
pub fn predictions_from<T: Float>(g: &Graph<'_, T>, hv: HeadVars) -> Vec<PredictionSet> {
    let lm = g.value(hv.landmarks);
    let ch = g.value(hv.cholesky);
    (0..lm.rows())
        .map(|b| PredictionSet {
            landmarks: lm.row(b).chunks(2).map(|c| [c[0].f64(), c[1].f64()]).collect(),
            cholesky_raw: ch
                .row(b)
                .chunks(3)
                .map(|c| [c[0].f64(), c[1].f64(), c[2].f64()])
                .collect(),
        })
        .collect()
}

/// Converts a normalized `f32` crop to the model's scalar type.
pub fn image_to<T: Float>(crop: &[f32]) -> Vec<T> {
    crop.iter().map(|&v| T::of(v as f64)).collect()
}
