//! Transformer backbone over multimodal token sequences.
//!
//! One flat sequence: observation cells, optional proprioception token,
//! instruction tokens, then the answer region. The attention mode switches
//! between causal and bidirectional masks over the same parameter set.

use std::cell::Cell;

use chunklab_tensor::graph::{NodeId, Tape, TensorError};
use chunklab_tensor::params::ParamStore;
use chunklab_tensor::rng::seeded_rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{AttentionMode, ModelConfig};
use crate::layout::{AnswerKind, SequenceLayout};

pub const ACTION_DIMS: usize = 7;

/// Output head attached to the backbone. Token logits reuse the tied
/// embedding; the regression head is a 2-layer MLP per query slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    TokenLogits,
    Regression {
        /// Project a continuous per-action input into the query slots
        /// (flow / continuous-diffusion heads feed their state here).
        input_proj: bool,
    },
}

#[derive(Debug)]
pub enum ModelError {
    Tensor(TensorError),
    Config(String),
}

impl std::fmt::Display for ModelError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelError::Tensor(e) => write!(f, "{e}"),
            ModelError::Config(m) => write!(f, "configuration error: {m}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        ModelError::Tensor(e)
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Answer-region content for one forward pass.
pub enum AnswerInput<'a> {
    /// Discrete tokens; may be shorter than the layout's answer capacity
    /// (autoregressive decoding grows the region token by token).
    Tokens(&'a [u32]),
    /// Continuous query slots, one per action, with optional per-action
    /// input values (row-major [k, 7]) and a conditioning time in [0,1].
    Queries { values: Option<&'a [f32]>, time: f32 },
}

/// A completed forward pass: the tape plus handles needed to read heads
/// and to push gradients back into the parameter store.
pub struct ForwardPass {
    pub tape: Tape<f32>,
    pub hidden: NodeId,
    pub seq_len: usize,
    pub ans_start: usize,
    pub ans_len: usize,
    param_nodes: Vec<(usize, NodeId)>,
    token_embed_node: NodeId,
}

pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub head: Head,
    fwd_count: Cell<u64>,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, std: f32) -> Vec<f32> {
    let dist = Normal::new(0.0f32, std).unwrap();
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Sinusoidal coordinate basis plus noise. Position embeddings stay
/// trainable; starting them from a structured code makes positional
/// readout available immediately instead of having to emerge.
fn sinusoidal_init(rng: &mut ChaCha8Rng, rows: usize, d: usize, coords: impl Fn(usize) -> (f32, f32)) -> Vec<f32> {
    let dist = Normal::new(0.0f32, 0.02).unwrap();
    let mut out = vec![0.0f32; rows * d];
    let quarter = (d / 4).max(1);
    for r in 0..rows {
        let (x, y) = coords(r);
        let row = &mut out[r * d..(r + 1) * d];
        for (i, v) in row.iter_mut().enumerate() {
            let band = i / quarter;
            let j = (i % quarter) as f32;
            let freq = (2.0f32).powf(j / 2.0) * std::f32::consts::PI;
            let base = match band {
                0 => (x * freq).sin(),
                1 => (x * freq).cos(),
                2 => (y * freq).sin(),
                _ => (y * freq).cos(),
            };
            *v = 0.1 * base + dist.sample(rng);
        }
    }
    out
}

/// Sinusoidal encoding of a scalar time variable in [0,1].
pub fn time_encoding(t: f32, d: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; d];
    let scaled = t * 1000.0;
    let half = d / 2;
    for i in 0..half {
        let freq = (10000.0f32).powf(-(i as f32) / half.max(1) as f32);
        out[2 * i] = (scaled * freq).sin();
        out[2 * i + 1] = (scaled * freq).cos();
    }
    out
}

impl Model {
    /// Build a model with freshly initialized parameters. The backbone is
    /// created first in a fixed order, so a given seed yields the same
    /// backbone weights under every head.
    pub fn new(config: ModelConfig, head: Head, init_seed: u64) -> Result<Model> {
        config.validate().map_err(|e| ModelError::Config(e.0))?;
        let mut rng = seeded_rng(init_seed, "model-init", 0);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let v = config.vocab_size;
        let std = 0.02f32;

        let add = |store: &mut ParamStore, name: String, shape: Vec<usize>, data: Vec<f32>| {
            store.add(&name, shape, data).map_err(ModelError::Tensor)
        };

        add(&mut store, "embed.token".into(), vec![v, d], normal_vec(&mut rng, v * d, std))?;
        let max_len = config.max_seq_len;
        let pos_init = sinusoidal_init(&mut rng, max_len, d, |r| {
            (r as f32 / max_len as f32, 0.0)
        });
        add(&mut store, "embed.pos".into(), vec![max_len, d], pos_init)?;
        if config.obs_grid > 0 {
            let c = config.obs_channels;
            let g = config.obs_grid;
            let slots = config.obs_slots();
            // occupancy intensities live in [0,1]; a larger projection
            // scale keeps cell content salient against the position code
            add(&mut store, "obs.proj.w".into(), vec![c, d], normal_vec(&mut rng, c * d, 0.25))?;
            add(&mut store, "obs.proj.b".into(), vec![1, d], vec![0.0; d])?;
            let grid_init = sinusoidal_init(&mut rng, slots, d, |cell| {
                let r = cell / g;
                let col = cell % g;
                ((col as f32 + 0.5) / g as f32, (r as f32 + 0.5) / g as f32)
            });
            add(&mut store, "obs.pos2d".into(), vec![slots, d], grid_init)?;
        }
        if config.use_proprio {
            add(&mut store, "proprio.proj.w".into(), vec![ACTION_DIMS, d], normal_vec(&mut rng, ACTION_DIMS * d, std))?;
            add(&mut store, "proprio.proj.b".into(), vec![1, d], vec![0.0; d])?;
        }
        for layer in 0..config.n_layers {
            let p = |s: &str| format!("layer{layer}.{s}");
            add(&mut store, p("ln1.g"), vec![1, d], vec![1.0; d])?;
            add(&mut store, p("ln1.b"), vec![1, d], vec![0.0; d])?;
            for w in ["attn.wq", "attn.wk", "attn.wv", "attn.wo"] {
                add(&mut store, p(w), vec![d, d], normal_vec(&mut rng, d * d, std))?;
            }
            for b in ["attn.bq", "attn.bk", "attn.bv", "attn.bo"] {
                add(&mut store, p(b), vec![1, d], vec![0.0; d])?;
            }
            add(&mut store, p("ln2.g"), vec![1, d], vec![1.0; d])?;
            add(&mut store, p("ln2.b"), vec![1, d], vec![0.0; d])?;
            add(&mut store, p("mlp.w1"), vec![d, 4 * d], normal_vec(&mut rng, d * 4 * d, std))?;
            add(&mut store, p("mlp.b1"), vec![1, 4 * d], vec![0.0; 4 * d])?;
            add(&mut store, p("mlp.w2"), vec![4 * d, d], normal_vec(&mut rng, 4 * d * d, std))?;
            add(&mut store, p("mlp.b2"), vec![1, d], vec![0.0; d])?;
        }
        add(&mut store, "ln_f.g".into(), vec![1, d], vec![1.0; d])?;
        add(&mut store, "ln_f.b".into(), vec![1, d], vec![0.0; d])?;

        if let Head::Regression { input_proj } = head {
            add(&mut store, "head.query.emb".into(), vec![1, d], normal_vec(&mut rng, d, std))?;
            if input_proj {
                add(&mut store, "head.in.w".into(), vec![ACTION_DIMS, d], normal_vec(&mut rng, ACTION_DIMS * d, std))?;
                add(&mut store, "head.in.b".into(), vec![1, d], vec![0.0; d])?;
            }
            add(&mut store, "head.mlp1.w".into(), vec![d, d], normal_vec(&mut rng, d * d, std))?;
            add(&mut store, "head.mlp1.b".into(), vec![1, d], vec![0.0; d])?;
            add(&mut store, "head.mlp2.w".into(), vec![d, ACTION_DIMS], normal_vec(&mut rng, d * ACTION_DIMS, std))?;
            add(&mut store, "head.mlp2.b".into(), vec![1, ACTION_DIMS], vec![0.0; ACTION_DIMS])?;
        }

        Ok(Model { config, store, head, fwd_count: Cell::new(0) })
    }

    pub fn forward_count(&self) -> u64 {
        self.fwd_count.get()
    }

    pub fn reset_forward_count(&self) {
        self.fwd_count.set(0);
    }

    /// Backbone registry: (name, shape) pairs with head entries excluded.
    pub fn backbone_signature(&self) -> Vec<(String, Vec<usize>)> {
        self.store.signature(Some("head."))
    }

    pub fn backbone_param_count(&self) -> usize {
        self.store
            .iter()
            .filter(|p| !p.name.starts_with("head."))
            .map(|p| p.data.len())
            .sum()
    }

    fn node(&self, tape: &mut Tape<f32>, nodes: &mut Vec<(usize, NodeId)>, name: &str) -> Result<NodeId> {
        let idx = self
            .store
            .index_of(name)
            .ok_or_else(|| ModelError::Config(format!("missing parameter {name}")))?;
        let param = self.store.get(chunklab_tensor::params::ParamId(idx));
        let id = tape.leaf(param.data.clone(), param.shape.clone(), true)?;
        nodes.push((idx, id));
        Ok(id)
    }

    /// Embed the observation grid: one linear projection per cell plus a
    /// learned per-cell position embedding. `include_pos` exists so tests
    /// can probe the projection alone.
    pub fn embed_observation(
        &self,
        tape: &mut Tape<f32>,
        nodes: &mut Vec<(usize, NodeId)>,
        obs: &[f32],
        include_pos: bool,
    ) -> Result<NodeId> {
        let slots = self.config.obs_slots();
        let c = self.config.obs_channels;
        if obs.len() != slots * c {
            return Err(ModelError::Tensor(TensorError::Dimension(format!(
                "observation length {} does not match {slots}x{c}",
                obs.len()
            ))));
        }
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Tensor(TensorError::NonFinite(
                "observation contains non-finite values".into(),
            )));
        }
        let obs_leaf = tape.leaf(obs.to_vec(), vec![slots, c], false)?;
        let w = self.node(tape, nodes, "obs.proj.w")?;
        let b = self.node(tape, nodes, "obs.proj.b")?;
        let projected = tape.matmul(obs_leaf, w)?;
        let projected = tape.add_bias(projected, b)?;
        if include_pos {
            let pos2d = self.node(tape, nodes, "obs.pos2d")?;
            Ok(tape.add(projected, pos2d)?)
        } else {
            Ok(projected)
        }
    }

    /// Full backbone pass. Exactly one forward-pass counter increment.
    pub fn forward(
        &self,
        layout: &SequenceLayout,
        obs: Option<&[f32]>,
        proprio: Option<[f32; ACTION_DIMS]>,
        answer: AnswerInput<'_>,
    ) -> Result<ForwardPass> {
        let cfg = &self.config;
        let mut tape: Tape<f32> = Tape::new();
        let mut nodes: Vec<(usize, NodeId)> = Vec::with_capacity(self.store.len());
        let d = cfg.d_model;

        if layout.obs_slots != cfg.obs_slots() {
            return Err(ModelError::Config(format!(
                "layout obs_slots {} does not match config {}",
                layout.obs_slots,
                cfg.obs_slots()
            )));
        }
        if layout.proprio_slots != usize::from(cfg.use_proprio) {
            return Err(ModelError::Config("layout proprio slots do not match config".into()));
        }

        let token_embed = self.node(&mut tape, &mut nodes, "embed.token")?;
        let mut parts: Vec<NodeId> = Vec::new();

        if cfg.obs_grid > 0 {
            let obs = obs.ok_or_else(|| ModelError::Config("observation required by config".into()))?;
            parts.push(self.embed_observation(&mut tape, &mut nodes, obs, true)?);
        } else if obs.is_some() {
            return Err(ModelError::Config("observation provided but obs_grid is 0".into()));
        }

        if cfg.use_proprio {
            let p = proprio.ok_or_else(|| ModelError::Config("proprioception required by config".into()))?;
            if p.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::Tensor(TensorError::NonFinite("proprio non-finite".into())));
            }
            let leaf = tape.leaf(p.to_vec(), vec![1, ACTION_DIMS], false)?;
            let w = self.node(&mut tape, &mut nodes, "proprio.proj.w")?;
            let b = self.node(&mut tape, &mut nodes, "proprio.proj.b")?;
            let proj = tape.matmul(leaf, w)?;
            parts.push(tape.add_bias(proj, b)?);
        }

        let check_tokens = |ids: &[u32]| -> Result<Vec<usize>> {
            ids.iter()
                .map(|&t| {
                    let t = t as usize;
                    if t >= cfg.vocab_size {
                        Err(ModelError::Tensor(TensorError::Index(format!("token {t} out of vocab"))))
                    } else {
                        Ok(t)
                    }
                })
                .collect()
        };

        if !layout.instruction.is_empty() {
            let idx = check_tokens(&layout.instruction)?;
            parts.push(tape.gather_rows(token_embed, &idx)?);
        }

        let ans_len = match &answer {
            AnswerInput::Tokens(toks) => {
                if toks.len() > layout.answer_len {
                    return Err(ModelError::Config(format!(
                        "{} answer tokens exceed layout capacity {}",
                        toks.len(),
                        layout.answer_len
                    )));
                }
                if !toks.is_empty() {
                    let idx = check_tokens(toks)?;
                    parts.push(tape.gather_rows(token_embed, &idx)?);
                }
                toks.len()
            }
            AnswerInput::Queries { values, time } => {
                if layout.answer_kind != AnswerKind::ActionQueries {
                    return Err(ModelError::Config(
                        "query answer input requires an ActionQueries layout".into(),
                    ));
                }
                let k = layout.answer_len;
                let placeholder = self.node(&mut tape, &mut nodes, "head.query.emb")?;
                let mut q = tape.gather_rows(placeholder, &vec![0; k])?;
                let te = time_encoding(*time, d);
                let mut tiled = Vec::with_capacity(k * d);
                for _ in 0..k {
                    tiled.extend_from_slice(&te);
                }
                let te_leaf = tape.leaf(tiled, vec![k, d], false)?;
                q = tape.add(q, te_leaf)?;
                if let Some(vals) = values {
                    if vals.len() != k * ACTION_DIMS {
                        return Err(ModelError::Config(format!(
                            "query values length {} != {k}x{ACTION_DIMS}",
                            vals.len()
                        )));
                    }
                    let leaf = tape.leaf(vals.to_vec(), vec![k, ACTION_DIMS], false)?;
                    let w = self.node(&mut tape, &mut nodes, "head.in.w")?;
                    let b = self.node(&mut tape, &mut nodes, "head.in.b")?;
                    let proj = tape.matmul(leaf, w)?;
                    let proj = tape.add_bias(proj, b)?;
                    q = tape.add(q, proj)?;
                }
                parts.push(q);
                k
            }
        };

        let seq_len = layout.prompt_len() + ans_len;
        if seq_len > cfg.max_seq_len {
            return Err(ModelError::Config(format!(
                "sequence length {seq_len} exceeds max_seq_len {}",
                cfg.max_seq_len
            )));
        }
        if parts.is_empty() {
            return Err(ModelError::Config("empty sequence".into()));
        }

        let mut x = tape.concat_rows(&parts)?;
        let pos_table = self.node(&mut tape, &mut nodes, "embed.pos")?;
        let pos_idx: Vec<usize> = (0..seq_len).collect();
        let pos = tape.gather_rows(pos_table, &pos_idx)?;
        x = tape.add(x, pos)?;

        let causal = cfg.attention_mode == AttentionMode::Causal;
        let heads = cfg.n_heads;
        for layer in 0..cfg.n_layers {
            let p = |s: &str| format!("layer{layer}.{s}");
            let ln1g = self.node(&mut tape, &mut nodes, &p("ln1.g"))?;
            let ln1b = self.node(&mut tape, &mut nodes, &p("ln1.b"))?;
            let h = tape.layer_norm(x, ln1g, ln1b, 1e-5)?;

            let wq = self.node(&mut tape, &mut nodes, &p("attn.wq"))?;
            let wk = self.node(&mut tape, &mut nodes, &p("attn.wk"))?;
            let wv = self.node(&mut tape, &mut nodes, &p("attn.wv"))?;
            let bq = self.node(&mut tape, &mut nodes, &p("attn.bq"))?;
            let bk = self.node(&mut tape, &mut nodes, &p("attn.bk"))?;
            let bv = self.node(&mut tape, &mut nodes, &p("attn.bv"))?;
            let q = tape.matmul(h, wq)?;
            let q = tape.add_bias(q, bq)?;
            let k = tape.matmul(h, wk)?;
            let k = tape.add_bias(k, bk)?;
            let v = tape.matmul(h, wv)?;
            let v = tape.add_bias(v, bv)?;

            let merged = tape.mha(q, k, v, heads, causal)?;
            let wo = self.node(&mut tape, &mut nodes, &p("attn.wo"))?;
            let bo = self.node(&mut tape, &mut nodes, &p("attn.bo"))?;
            let o = tape.matmul(merged, wo)?;
            let o = tape.add_bias(o, bo)?;
            x = tape.add(x, o)?;

            let ln2g = self.node(&mut tape, &mut nodes, &p("ln2.g"))?;
            let ln2b = self.node(&mut tape, &mut nodes, &p("ln2.b"))?;
            let h2 = tape.layer_norm(x, ln2g, ln2b, 1e-5)?;
            let w1 = self.node(&mut tape, &mut nodes, &p("mlp.w1"))?;
            let b1 = self.node(&mut tape, &mut nodes, &p("mlp.b1"))?;
            let w2 = self.node(&mut tape, &mut nodes, &p("mlp.w2"))?;
            let b2 = self.node(&mut tape, &mut nodes, &p("mlp.b2"))?;
            let m1 = tape.matmul(h2, w1)?;
            let m1 = tape.add_bias(m1, b1)?;
            let g = tape.gelu(m1);
            let m2 = tape.matmul(g, w2)?;
            let m2 = tape.add_bias(m2, b2)?;
            x = tape.add(x, m2)?;
        }

        let lnfg = self.node(&mut tape, &mut nodes, "ln_f.g")?;
        let lnfb = self.node(&mut tape, &mut nodes, "ln_f.b")?;
        let hidden = tape.layer_norm(x, lnfg, lnfb, 1e-5)?;

        self.fwd_count.set(self.fwd_count.get() + 1);
        Ok(ForwardPass {
            tape,
            hidden,
            seq_len,
            ans_start: layout.prompt_len(),
            ans_len,
            param_nodes: nodes,
            token_embed_node: token_embed,
        })
    }

    /// Logits over the vocabulary at the given absolute sequence rows,
    /// through the tied output embedding.
    pub fn token_logits(&self, fp: &mut ForwardPass, rows: &[usize]) -> Result<NodeId> {
        for &r in rows {
            if r >= fp.seq_len {
                return Err(ModelError::Tensor(TensorError::Index(format!(
                    "logit row {r} out of sequence length {}",
                    fp.seq_len
                ))));
            }
        }
        let sel = fp.tape.gather_rows(fp.hidden, rows)?;
        Ok(fp.tape.matmul_nt(sel, fp.token_embed_node)?)
    }

    /// Regression head output [k, 7] over the answer-query slots.
    pub fn regression(&self, fp: &mut ForwardPass) -> Result<NodeId> {
        if !matches!(self.head, Head::Regression { .. }) {
            return Err(ModelError::Config("regression head not attached".into()));
        }
        let mut nodes = Vec::new();
        let rows: Vec<usize> = (fp.ans_start..fp.ans_start + fp.ans_len).collect();
        let sel = fp.tape.gather_rows(fp.hidden, &rows)?;
        let w1 = self.node(&mut fp.tape, &mut nodes, "head.mlp1.w")?;
        let b1 = self.node(&mut fp.tape, &mut nodes, "head.mlp1.b")?;
        let w2 = self.node(&mut fp.tape, &mut nodes, "head.mlp2.w")?;
        let b2 = self.node(&mut fp.tape, &mut nodes, "head.mlp2.b")?;
        let h = fp.tape.matmul(sel, w1)?;
        let h = fp.tape.add_bias(h, b1)?;
        let g = fp.tape.gelu(h);
        let out = fp.tape.matmul(g, w2)?;
        let out = fp.tape.add_bias(out, b2)?;
        fp.param_nodes.extend(nodes);
        Ok(out)
    }

    /// Push tape gradients back into the parameter store (accumulating).
    pub fn accumulate_grads(&mut self, fp: &ForwardPass) {
        for &(idx, node) in &fp.param_nodes {
            let g = fp.tape.grad(node);
            if g.is_empty() {
                continue;
            }
            let store_grad = &mut self.store.get_mut(chunklab_tensor::params::ParamId(idx)).grad;
            for (dst, &src) in store_grad.iter_mut().zip(g) {
                *dst += src;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab;

    fn tiny_config(mode: AttentionMode) -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            max_seq_len: 64,
            attention_mode: mode,
            obs_channels: 3,
            obs_grid: 2,
            ..Default::default()
        }
    }

    fn fwd_logits(model: &Model, layout: &SequenceLayout, obs: &[f32], tokens: &[u32]) -> Vec<f32> {
        let mut fp = model
            .forward(layout, Some(obs), None, AnswerInput::Tokens(tokens))
            .unwrap();
        let rows: Vec<usize> = (0..fp.seq_len).collect();
        let logits = model.token_logits(&mut fp, &rows).unwrap();
        fp.tape.data(logits).to_vec()
    }

    #[test]
    fn observation_embedding_shape() {
        let cfg = ModelConfig { d_model: 128, obs_grid: 8, obs_channels: 5, ..Default::default() };
        let model = Model::new(cfg, Head::TokenLogits, 0).unwrap();
        let mut tape = Tape::new();
        let mut nodes = Vec::new();
        let obs = vec![0.1f32; 64 * 5];
        let e = model.embed_observation(&mut tape, &mut nodes, &obs, true).unwrap();
        assert_eq!(tape.shape(e), &[64, 128]);
    }

    #[test]
    fn zero_observation_with_zero_projection_gives_position_embeddings() {
        let cfg = tiny_config(AttentionMode::Bidirectional);
        let mut model = Model::new(cfg, Head::TokenLogits, 0).unwrap();
        for v in model.store.by_name_mut("obs.proj.w").unwrap().data.iter_mut() {
            *v = 0.0;
        }
        let obs = vec![0.0f32; 4 * 3];
        let mut tape = Tape::new();
        let mut nodes = Vec::new();
        let e = model.embed_observation(&mut tape, &mut nodes, &obs, true).unwrap();
        let pos = model.store.by_name("obs.pos2d").unwrap().data.clone();
        assert_eq!(tape.data(e), &pos[..]);
    }

    #[test]
    fn cell_permutation_permutes_rows_without_position_embedding() {
        let cfg = tiny_config(AttentionMode::Bidirectional);
        let model = Model::new(cfg, Head::TokenLogits, 3).unwrap();
        let mut obs = vec![0.0f32; 4 * 3];
        for (i, v) in obs.iter_mut().enumerate() {
            *v = i as f32 * 0.1;
        }
        let mut swapped = obs.clone();
        swapped.copy_within(0..3, 9);
        swapped[0..3].copy_from_slice(&obs[9..12]);
        swapped[9..12].copy_from_slice(&obs[0..3]);

        let mut tape = Tape::new();
        let mut nodes = Vec::new();
        let a = model.embed_observation(&mut tape, &mut nodes, &obs, false).unwrap();
        let b = model.embed_observation(&mut tape, &mut nodes, &swapped, false).unwrap();
        let da = tape.data(a).to_vec();
        let db = tape.data(b).to_vec();
        let d = 16;
        assert_eq!(&da[0..d], &db[3 * d..4 * d]);
        assert_eq!(&da[3 * d..4 * d], &db[0..d]);
        assert_eq!(&da[d..2 * d], &db[d..2 * d]);
    }

    #[test]
    fn causal_logits_invariant_to_future_tokens_bitwise() {
        let cfg = tiny_config(AttentionMode::Causal);
        let model = Model::new(cfg.clone(), Head::TokenLogits, 1).unwrap();
        let layout = SequenceLayout::new(&cfg, vec![vocab::MOVE, vocab::TO], 4, AnswerKind::TextAnswer).unwrap();
        let obs: Vec<f32> = (0..12).map(|i| i as f32 / 12.0).collect();
        let a = fwd_logits(&model, &layout, &obs, &[vocab::YES, vocab::NO, vocab::YES, vocab::NO]);
        let b = fwd_logits(&model, &layout, &obs, &[vocab::YES, vocab::NO, vocab::SEP, vocab::EOS]);
        let v = cfg.vocab_size;
        let prefix_rows = layout.prompt_len() + 2; // rows 0..prompt+2 saw identical inputs
        assert_eq!(
            a[..prefix_rows * v].iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b[..prefix_rows * v].iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert_ne!(a[(prefix_rows + 1) * v..], b[(prefix_rows + 1) * v..]);
    }

    #[test]
    fn bidirectional_perturbation_reaches_every_position() {
        let cfg = tiny_config(AttentionMode::Bidirectional);
        let model = Model::new(cfg.clone(), Head::TokenLogits, 1).unwrap();
        let layout = SequenceLayout::new(&cfg, vec![vocab::MOVE], 4, AnswerKind::TextAnswer).unwrap();
        let obs: Vec<f32> = (0..12).map(|i| i as f32 / 12.0).collect();
        let a = fwd_logits(&model, &layout, &obs, &[vocab::YES, vocab::NO, vocab::YES, vocab::NO]);
        let b = fwd_logits(&model, &layout, &obs, &[vocab::YES, vocab::NO, vocab::YES, vocab::EOS]);
        let v = cfg.vocab_size;
        let rows = layout.prompt_len() + 4;
        for r in 0..rows {
            assert_ne!(
                &a[r * v..(r + 1) * v],
                &b[r * v..(r + 1) * v],
                "row {r} unchanged under perturbation"
            );
        }
    }

    #[test]
    fn forward_is_pure_and_counts_passes() {
        let cfg = tiny_config(AttentionMode::Bidirectional);
        let model = Model::new(cfg.clone(), Head::TokenLogits, 9).unwrap();
        let layout = SequenceLayout::new(&cfg, vec![vocab::MOVE], 2, AnswerKind::TextAnswer).unwrap();
        let obs: Vec<f32> = (0..12).map(|i| (i as f32).sin().abs()).collect();
        assert_eq!(model.forward_count(), 0);
        let a = fwd_logits(&model, &layout, &obs, &[vocab::YES, vocab::NO]);
        let b = fwd_logits(&model, &layout, &obs, &[vocab::YES, vocab::NO]);
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(model.forward_count(), 2);
    }

    #[test]
    fn mode_switch_preserves_registry() {
        let a = Model::new(tiny_config(AttentionMode::Causal), Head::TokenLogits, 5).unwrap();
        let b = Model::new(tiny_config(AttentionMode::Bidirectional), Head::TokenLogits, 5).unwrap();
        assert_eq!(a.store.signature(None), b.store.signature(None));
    }

    #[test]
    fn heads_leave_backbone_registry_unchanged() {
        let cfg = tiny_config(AttentionMode::Bidirectional);
        let a = Model::new(cfg.clone(), Head::TokenLogits, 5).unwrap();
        let b = Model::new(cfg.clone(), Head::Regression { input_proj: true }, 5).unwrap();
        let c = Model::new(cfg, Head::Regression { input_proj: false }, 5).unwrap();
        assert_eq!(a.backbone_signature(), b.backbone_signature());
        assert_eq!(a.backbone_signature(), c.backbone_signature());
        assert_eq!(a.backbone_param_count(), b.backbone_param_count());
    }

    #[test]
    fn regression_head_shape_for_chunk() {
        let cfg = tiny_config(AttentionMode::Bidirectional);
        let model = Model::new(cfg.clone(), Head::Regression { input_proj: false }, 2).unwrap();
        let layout = SequenceLayout::new(&cfg, vec![vocab::MOVE], 8, AnswerKind::ActionQueries).unwrap();
        let obs = vec![0.2f32; 12];
        let mut fp = model
            .forward(&layout, Some(&obs), None, AnswerInput::Queries { values: None, time: 0.0 })
            .unwrap();
        let out = model.regression(&mut fp).unwrap();
        assert_eq!(fp.tape.shape(out), &[8, 7]);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        // The attention weights are the softmax outputs inside the layer;
        // replicate one scores computation and check normalization.
        let cfg = tiny_config(AttentionMode::Causal);
        let model = Model::new(cfg.clone(), Head::TokenLogits, 4).unwrap();
        let layout = SequenceLayout::new(&cfg, vec![vocab::MOVE], 2, AnswerKind::TextAnswer).unwrap();
        let obs = vec![0.3f32; 12];
        let fp = model
            .forward(&layout, Some(&obs), None, AnswerInput::Tokens(&[vocab::YES, vocab::NO]))
            .unwrap();
        // probe: rebuild first-layer attention from stored weights
        let mut tape: Tape<f32> = Tape::new();
        let mut nodes = Vec::new();
        let x = tape
            .leaf(vec![0.1; fp.seq_len * cfg.d_model], vec![fp.seq_len, cfg.d_model], false)
            .unwrap();
        let g = model.node(&mut tape, &mut nodes, "layer0.ln1.g").unwrap();
        let b = model.node(&mut tape, &mut nodes, "layer0.ln1.b").unwrap();
        let h = tape.layer_norm(x, g, b, 1e-5).unwrap();
        let wq = model.node(&mut tape, &mut nodes, "layer0.attn.wq").unwrap();
        let wk = model.node(&mut tape, &mut nodes, "layer0.attn.wk").unwrap();
        let q = tape.matmul(h, wq).unwrap();
        let k = tape.matmul(h, wk).unwrap();
        let qh = tape.slice_cols(q, 0, cfg.head_dim()).unwrap();
        let kh = tape.slice_cols(k, 0, cfg.head_dim()).unwrap();
        let scores = tape.matmul_nt(qh, kh).unwrap();
        let attn = tape.softmax(scores).unwrap();
        for r in 0..fp.seq_len {
            let sum: f32 = tape.data(attn)[r * fp.seq_len..(r + 1) * fp.seq_len].iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }
}
