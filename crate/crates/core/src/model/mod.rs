//! Causal decision Transformer over interleaved observation/action tokens.
//!
//! A trajectory `(o₁,a₁,…,o_T,a_T)` becomes `2T` tokens. The action for step
//! `t` is read from the output at the token of `o_t` (0-based token `2t`),
//! so it can only attend to `o_1..o_t` and `a_1..a_{t-1}`. Layers are
//! post-norm: attention, residual, norm, feedforward, residual, norm.
//!
//! Batches share one tape: row-wise maps run once over all tokens of all
//! sequences, attention runs per sequence.

mod config;
mod embed;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};
use crate::envgym::GridObservation;

pub use config::{EmbedderKind, HeadSelector, LayerSelector, ModelConfig, Placement};
pub use embed::{grid_one_hot, GRID_CHANNELS, GRID_FLAT, PIXEL_FLAT, PIXEL_SIDE};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model configuration: {0}")]
    Config(&'static str),
    #[error("sequence of {steps} steps exceeds the model limit of {max}")]
    TooLong { steps: usize, max: usize },
    #[error("action id {0} out of range")]
    InvalidAction(usize),
    #[error("sequence needs one observation and either as many or one fewer actions")]
    Malformed,
    #[error("this operation needs the {0:?} embedder")]
    Embedder(EmbedderKind),
}

struct LayerIds {
    in_proj_w: ParamId,
    in_proj_b: ParamId,
    out_proj_w: ParamId,
    out_proj_b: ParamId,
    norm1_w: ParamId,
    norm1_b: ParamId,
    ff1_w: ParamId,
    ff1_b: ParamId,
    ff2_w: ParamId,
    ff2_b: ParamId,
    norm2_w: ParamId,
    norm2_b: ParamId,
}

struct Ids {
    /// `(weight, bias, stride, pad)` per convolution.
    convs: Vec<(ParamId, ParamId, usize, usize)>,
    fc_w: ParamId,
    fc_b: ParamId,
    act_w: ParamId,
    act_b: ParamId,
    ln_w: ParamId,
    ln_b: ParamId,
    layers: Vec<LayerIds>,
    out_w: ParamId,
    out_b: ParamId,
}

/// One sequence of a batch: observation-embedding row indices plus actions.
#[derive(Clone, Copy, Debug)]
pub struct SeqRef<'a> {
    /// Row of each observation in the embedding matrix.
    pub obs_rows: &'a [usize],
    pub actions: &'a [usize],
}

/// Per-sequence handles into a batched forward pass.
#[derive(Clone, Debug)]
pub struct SeqOut {
    /// First row of this sequence in [`Forward::logits`].
    pub logit_row0: usize,
    pub steps: usize,
    pub tokens: usize,
    /// Scaled attention logits `QKᵀ/√d_k`, indexed `[layer][head]`.
    pub attn_logits: Vec<Vec<Var>>,
    /// Causal softmax attention, indexed `[layer][head]`.
    pub attn: Vec<Vec<Var>>,
}

#[derive(Clone, Debug)]
pub struct Forward {
    /// `Σ steps × n_actions` action logits, sequences stacked in order.
    pub logits: Var,
    pub seqs: Vec<SeqOut>,
}

/// Plain-value result of a single-sequence forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerOutput {
    /// `T × n_actions`.
    pub logits: Tensor,
    /// `[layer][head]`, each `tokens × tokens`.
    pub attn_logits: Vec<Vec<Tensor>>,
    pub attn: Vec<Vec<Tensor>>,
}

impl TransformerOutput {
    /// Greedy action for step `t`; ties go to the lowest id.
    pub fn predict_action(&self, t: usize) -> usize {
        argmax(self.logits.row(t))
    }
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Fixed sinusoidal encoding, `n × d`.
pub fn positional_encoding(n: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; n * d];
    for pos in 0..n {
        for i in (0..d).step_by(2) {
            let freq = libm::pow(10000.0, -(i as f64) / d as f64);
            let angle = pos as f64 * freq;
            data[pos * d + i] = libm::sin(angle);
            if i + 1 < d {
                data[pos * d + i + 1] = libm::cos(angle);
            }
        }
    }
    Tensor::new(&[n, d], data).expect("positive extents")
}

pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    ids: Ids,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Self::from_params(self.config.clone(), self.params.clone()).expect("clone of a valid model")
    }
}

impl core::fmt::Debug for Model {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("parameters", &self.params.numel())
            .finish()
    }
}

/// `(name, shape, fan_in)` of every parameter, in store order.
fn layout(c: &ModelConfig) -> Vec<(alloc::string::String, Vec<usize>, Option<usize>)> {
    let d = c.d_model;
    let mut out = Vec::new();
    let mut push = |name: alloc::string::String, shape: &[usize], fan_in: Option<usize>| {
        out.push((name, shape.to_vec(), fan_in));
    };
    let (convs, flat): (&[(usize, usize, usize)], usize) = match c.embedder {
        EmbedderKind::Grid20 => (&[(GRID_CHANNELS, 40, 3), (40, 80, 3)], GRID_FLAT),
        EmbedderKind::Pixel3 => (&[(3, 32, 8), (32, 64, 4), (64, 64, 3)], PIXEL_FLAT),
    };
    for (i, &(ci, co, k)) in convs.iter().enumerate() {
        let fan = ci * k * k;
        push(format!("image_embedding.cnn.{}.weight", 2 * i), &[co, ci, k, k], Some(fan));
        push(format!("image_embedding.cnn.{}.bias", 2 * i), &[co], Some(fan));
    }
    push("image_embedding.fc.0.weight".into(), &[d, flat], Some(flat));
    push("image_embedding.fc.0.bias".into(), &[d], Some(flat));
    push("action_embedding.mlp.0.weight".into(), &[d, c.n_actions], Some(c.n_actions));
    push("action_embedding.mlp.0.bias".into(), &[d], Some(c.n_actions));
    push("embedding_LN.weight".into(), &[d], None);
    push("embedding_LN.bias".into(), &[d], None);
    for l in 0..c.n_layers {
        let p = format!("transformer_layers.{l}");
        push(format!("{p}.self_attention.in_proj_weight"), &[3 * d, d], Some(d));
        push(format!("{p}.self_attention.in_proj_bias"), &[3 * d], Some(d));
        push(format!("{p}.self_attention.out_proj.weight"), &[d, d], Some(d));
        push(format!("{p}.self_attention.out_proj.bias"), &[d], Some(d));
        push(format!("{p}.norm1.weight"), &[d], None);
        push(format!("{p}.norm1.bias"), &[d], None);
        push(format!("{p}.feedforward.0.weight"), &[c.ff_width, d], Some(d));
        push(format!("{p}.feedforward.0.bias"), &[c.ff_width], Some(d));
        push(format!("{p}.feedforward.2.weight"), &[d, c.ff_width], Some(c.ff_width));
        push(format!("{p}.feedforward.2.bias"), &[d], Some(c.ff_width));
        push(format!("{p}.norm2.weight"), &[d], None);
        push(format!("{p}.norm2.bias"), &[d], None);
    }
    push("output.weight".into(), &[c.n_actions, d], Some(d));
    push("output.bias".into(), &[c.n_actions], Some(d));
    out
}

impl Model {
    /// Fresh model; weights uniform in `±1/√fan_in`, norms at identity.
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, shape, fan_in) in layout(&config) {
            let n: usize = shape.iter().product();
            let data = match fan_in {
                Some(fan) => {
                    let bound = 1.0 / libm::sqrt(fan as f64);
                    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
                }
                None if name.ends_with("weight") => vec![1.0; n],
                None => vec![0.0; n],
            };
            params.add(name, Tensor::new(&shape, data)?);
        }
        Self::from_params(config, params)
    }

    /// Wraps an existing parameter store, checking every name and shape.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != params.len() {
            return Err(ModelError::Config("parameter count does not match the configuration"));
        }
        for ((name, shape, _), p) in expected.iter().zip(params.iter()) {
            if &p.name != name || p.value.shape() != shape.as_slice() {
                return Err(ModelError::Config("parameter names or shapes do not match the configuration"));
            }
        }
        let find = |n: &str| params.find(n).expect("layout checked");
        let n_convs = match config.embedder {
            EmbedderKind::Grid20 => 2,
            EmbedderKind::Pixel3 => 3,
        };
        let geometry: [(usize, usize); 3] = match config.embedder {
            EmbedderKind::Grid20 => [(1, 1), (1, 1), (0, 0)],
            EmbedderKind::Pixel3 => [(4, 0), (2, 0), (1, 0)],
        };
        let convs = (0..n_convs)
            .map(|i| {
                let (stride, pad) = geometry[i];
                (
                    find(&format!("image_embedding.cnn.{}.weight", 2 * i)),
                    find(&format!("image_embedding.cnn.{}.bias", 2 * i)),
                    stride,
                    pad,
                )
            })
            .collect();
        let layers = (0..config.n_layers)
            .map(|l| {
                let p = |s: &str| find(&format!("transformer_layers.{l}.{s}"));
                LayerIds {
                    in_proj_w: p("self_attention.in_proj_weight"),
                    in_proj_b: p("self_attention.in_proj_bias"),
                    out_proj_w: p("self_attention.out_proj.weight"),
                    out_proj_b: p("self_attention.out_proj.bias"),
                    norm1_w: p("norm1.weight"),
                    norm1_b: p("norm1.bias"),
                    ff1_w: p("feedforward.0.weight"),
                    ff1_b: p("feedforward.0.bias"),
                    ff2_w: p("feedforward.2.weight"),
                    ff2_b: p("feedforward.2.bias"),
                    norm2_w: p("norm2.weight"),
                    norm2_b: p("norm2.bias"),
                }
            })
            .collect();
        let ids = Ids {
            convs,
            fc_w: find("image_embedding.fc.0.weight"),
            fc_b: find("image_embedding.fc.0.bias"),
            act_w: find("action_embedding.mlp.0.weight"),
            act_b: find("action_embedding.mlp.0.bias"),
            ln_w: find("embedding_LN.weight"),
            ln_b: find("embedding_LN.bias"),
            layers,
            out_w: find("output.weight"),
            out_b: find("output.bias"),
        };
        Ok(Self { config, params, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    /// Embeds observations given as a `[N, C, H, W]` image tensor (one-hot
    /// grids or RGB frames, depending on the embedder), giving `N × d_model`.
    pub fn embed_images(&self, tape: &mut Tape, store: &ParamStore, images: Var) -> Result<Var, ModelError> {
        let expected: &[usize] = match self.config.embedder {
            EmbedderKind::Grid20 => &[GRID_CHANNELS, 7, 7],
            EmbedderKind::Pixel3 => &[3, PIXEL_SIDE, PIXEL_SIDE],
        };
        let shape = tape.value(images).shape().to_vec();
        if shape.len() != 4 || shape[1..] != *expected {
            return Err(TensorError::ShapeMismatch { op: "embed_images", left: shape, right: expected.to_vec() }.into());
        }
        let n = shape[0];
        let mut x = images;
        for &(w, b, stride, pad) in &self.ids.convs {
            let (w, b) = (tape.param(store, w), tape.param(store, b));
            let y = tape.conv2d(x, w, b, stride, pad)?;
            x = tape.relu(y)?;
        }
        let flat = tape.value(x).len() / n;
        let x = tape.reshape(x, &[n, flat])?;
        let (w, b) = (tape.param(store, self.ids.fc_w), tape.param(store, self.ids.fc_b));
        let y = tape.linear(x, w, b)?;
        Ok(tape.tanh(y)?)
    }

    /// Embeds symbolic grid observations, `N × d_model`.
    pub fn embed_observations(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        obs: &[&GridObservation],
    ) -> Result<Var, ModelError> {
        if self.config.embedder != EmbedderKind::Grid20 {
            return Err(ModelError::Embedder(EmbedderKind::Grid20));
        }
        let images = tape.constant(grid_one_hot(obs)?);
        self.embed_images(tape, store, images)
    }

    /// Embedding of every action id, `n_actions × d_model`.
    pub fn action_table(&self, tape: &mut Tape, store: &ParamStore) -> Result<Var, ModelError> {
        let k = self.config.n_actions;
        let mut eye = vec![0.0; k * k];
        (0..k).for_each(|i| eye[i * k + i] = 1.0);
        let eye = tape.constant(Tensor::new(&[k, k], eye)?);
        let (w, b) = (tape.param(store, self.ids.act_w), tape.param(store, self.ids.act_b));
        let y = tape.linear(eye, w, b)?;
        Ok(tape.tanh(y)?)
    }

    /// Runs the transformer over `seqs`, whose observations index rows of
    /// `obs_emb` (`U × d_model`). Parameters are read from `store`, which
    /// lets finite-difference checks substitute perturbed copies.
    pub fn forward_embedded<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        obs_emb: Var,
        seqs: &[SeqRef<'_>],
        train: bool,
        rng: &mut R,
    ) -> Result<Forward, ModelError> {
        let c = &self.config;
        let d = c.d_model;
        let (u, _) = tape.value(obs_emb).dims2()?;
        let table = self.action_table(tape, store)?;
        let vocab = tape.concat_rows(&[obs_emb, table])?;

        let mut gather = Vec::new();
        let mut out_rows = Vec::new();
        let mut pe_rows: Vec<f64> = Vec::new();
        let mut spans = Vec::with_capacity(seqs.len());
        let max_tokens = seqs.iter().map(|s| s.obs_rows.len() + s.actions.len()).max().unwrap_or(0);
        let pe = positional_encoding(max_tokens.max(1), d);
        for s in seqs {
            let t = s.obs_rows.len();
            if t == 0 || !(s.actions.len() == t || s.actions.len() + 1 == t) {
                return Err(ModelError::Malformed);
            }
            if t > c.max_steps {
                return Err(ModelError::TooLong { steps: t, max: c.max_steps });
            }
            let row0 = gather.len();
            for step in 0..t {
                let r = s.obs_rows[step];
                if r >= u {
                    return Err(TensorError::OutOfRange { op: "forward_embedded" }.into());
                }
                out_rows.push(gather.len());
                gather.push(r);
                if let Some(&a) = s.actions.get(step) {
                    if a >= c.n_actions {
                        return Err(ModelError::InvalidAction(a));
                    }
                    gather.push(u + a);
                }
            }
            let n = gather.len() - row0;
            pe_rows.extend_from_slice(&pe.data()[..n * d]);
            spans.push((row0, n, t));
        }
        if gather.is_empty() {
            return Err(ModelError::Malformed);
        }
        let x = tape.gather_rows(vocab, &gather)?;
        let pe = tape.constant(Tensor::new(&[gather.len(), d], pe_rows)?);
        let x = tape.add(x, pe)?;
        let (g, b) = (tape.param(store, self.ids.ln_w), tape.param(store, self.ids.ln_b));
        let x = tape.layer_norm(x, g, b, LN_EPS)?;
        let mut x = tape.dropout(x, c.dropout, train, rng)?;

        let mut attn_logits = vec![Vec::with_capacity(c.n_layers); seqs.len()];
        let mut attn = vec![Vec::with_capacity(c.n_layers); seqs.len()];
        let dk = c.head_dim();
        let inv_sqrt = 1.0 / libm::sqrt(dk as f64);
        for ids in &self.ids.layers {
            let (w, b) = (tape.param(store, ids.in_proj_w), tape.param(store, ids.in_proj_b));
            let qkv = tape.linear(x, w, b)?;
            let mut seq_out = Vec::with_capacity(seqs.len());
            for (si, &(row0, n, _)) in spans.iter().enumerate() {
                let mut heads = Vec::with_capacity(c.n_heads);
                let mut layer_logits = Vec::with_capacity(c.n_heads);
                let mut layer_attn = Vec::with_capacity(c.n_heads);
                for h in 0..c.n_heads {
                    let q = tape.slice2d(qkv, row0, n, h * dk, dk)?;
                    let k = tape.slice2d(qkv, row0, n, d + h * dk, dk)?;
                    let v = tape.slice2d(qkv, row0, n, 2 * d + h * dk, dk)?;
                    let s = tape.matmul_nt(q, k)?;
                    let s = tape.scale(s, inv_sqrt)?;
                    let a = tape.causal_softmax_rows(s)?;
                    heads.push(tape.matmul(a, v)?);
                    layer_logits.push(s);
                    layer_attn.push(a);
                }
                attn_logits[si].push(layer_logits);
                attn[si].push(layer_attn);
                seq_out.push(if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? });
            }
            let merged = if seq_out.len() == 1 { seq_out[0] } else { tape.concat_rows(&seq_out)? };
            let (w, b) = (tape.param(store, ids.out_proj_w), tape.param(store, ids.out_proj_b));
            let a = tape.linear(merged, w, b)?;
            let r = tape.add(x, a)?;
            let (g, b) = (tape.param(store, ids.norm1_w), tape.param(store, ids.norm1_b));
            let x1 = tape.layer_norm(r, g, b, LN_EPS)?;
            let (w, b) = (tape.param(store, ids.ff1_w), tape.param(store, ids.ff1_b));
            let f = tape.linear(x1, w, b)?;
            let f = tape.relu(f)?;
            let (w, b) = (tape.param(store, ids.ff2_w), tape.param(store, ids.ff2_b));
            let f = tape.linear(f, w, b)?;
            let f = tape.dropout(f, c.dropout, train, rng)?;
            let r = tape.add(x1, f)?;
            let (g, b) = (tape.param(store, ids.norm2_w), tape.param(store, ids.norm2_b));
            x = tape.layer_norm(r, g, b, LN_EPS)?;
        }
        let h = tape.gather_rows(x, &out_rows)?;
        let (w, b) = (tape.param(store, self.ids.out_w), tape.param(store, self.ids.out_b));
        let logits = tape.linear(h, w, b)?;

        let mut row = 0;
        let seqs = spans
            .iter()
            .zip(attn_logits.into_iter().zip(attn))
            .map(|(&(_, n, t), (al, at))| {
                let out = SeqOut { logit_row0: row, steps: t, tokens: n, attn_logits: al, attn: at };
                row += t;
                out
            })
            .collect();
        Ok(Forward { logits, seqs })
    }

    /// Batched forward over grid trajectories. Identical observations share
    /// one embedding computation.
    pub fn forward_batch<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        batch: &[(&[GridObservation], &[usize])],
        train: bool,
        rng: &mut R,
    ) -> Result<Forward, ModelError> {
        self.forward_batch_with(tape, &self.params, batch, train, rng)
    }

    /// [`Model::forward_batch`] reading parameters from `store`.
    pub fn forward_batch_with<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &[(&[GridObservation], &[usize])],
        train: bool,
        rng: &mut R,
    ) -> Result<Forward, ModelError> {
        let mut unique: BTreeMap<&GridObservation, usize> = BTreeMap::new();
        let mut order: Vec<&GridObservation> = Vec::new();
        let rows: Vec<Vec<usize>> = batch
            .iter()
            .map(|(obs, _)| {
                obs.iter()
                    .map(|o| {
                        *unique.entry(o).or_insert_with(|| {
                            order.push(o);
                            order.len() - 1
                        })
                    })
                    .collect()
            })
            .collect();
        if order.is_empty() {
            return Err(ModelError::Malformed);
        }
        let emb = self.embed_observations(tape, store, &order)?;
        let seqs: Vec<SeqRef<'_>> = rows
            .iter()
            .zip(batch)
            .map(|(r, (_, actions))| SeqRef { obs_rows: r, actions })
            .collect();
        self.forward_embedded(tape, store, emb, &seqs, train, rng)
    }

    /// Evaluation-mode forward of one trajectory, returning plain tensors.
    pub fn infer(&self, obs: &[GridObservation], actions: &[usize]) -> Result<TransformerOutput, ModelError> {
        let mut tape = Tape::new();
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let f = self.forward_batch(&mut tape, &[(obs, actions)], false, &mut rng)?;
        let s = &f.seqs[0];
        let grab = |vs: &Vec<Vec<Var>>| -> Vec<Vec<Tensor>> {
            vs.iter().map(|l| l.iter().map(|&v| tape.value(v).clone()).collect()).collect()
        };
        Ok(TransformerOutput {
            logits: tape.value(f.logits).clone(),
            attn_logits: grab(&s.attn_logits),
            attn: grab(&s.attn),
        })
    }
}

/// Closed-loop greedy policy that caches observation embeddings.
pub struct Policy<'m> {
    model: &'m Model,
    cache: BTreeMap<GridObservation, usize>,
    embeddings: Vec<f64>,
    obs_rows: Vec<usize>,
    actions: Vec<usize>,
}

impl<'m> Policy<'m> {
    pub fn new(model: &'m Model) -> Self {
        Self { model, cache: BTreeMap::new(), embeddings: Vec::new(), obs_rows: Vec::new(), actions: Vec::new() }
    }

    /// Forgets the episode context; cached embeddings are kept.
    pub fn reset(&mut self) {
        self.obs_rows.clear();
        self.actions.clear();
    }

    /// Appends `obs` to the context and returns the greedy action.
    pub fn act(&mut self, obs: &GridObservation) -> Result<usize, ModelError> {
        let d = self.model.config.d_model;
        let row = match self.cache.get(obs) {
            Some(&r) => r,
            None => {
                let mut tape = Tape::new();
                let e = self.model.embed_observations(&mut tape, &self.model.params, &[obs])?;
                self.embeddings.extend_from_slice(tape.value(e).data());
                let r = self.cache.len();
                self.cache.insert(obs.clone(), r);
                r
            }
        };
        self.obs_rows.push(row);
        let mut tape = Tape::new();
        let emb = tape.constant(Tensor::new(&[self.cache.len(), d], self.embeddings.clone())?);
        let seq = SeqRef { obs_rows: &self.obs_rows, actions: &self.actions };
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let f = self.model.forward_embedded(&mut tape, &self.model.params, emb, &[seq], false, &mut rng)?;
        let logits = tape.value(f.logits);
        let a = argmax(logits.row(self.obs_rows.len() - 1));
        self.actions.push(a);
        Ok(a)
    }
}
