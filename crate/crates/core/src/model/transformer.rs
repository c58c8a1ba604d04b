// SPDX-License-Identifier: MIT OR Apache-2.0

//! Decoder-only reference transformer without layer norm.
//!
//! Each block applies `x_mid = x + MHA(x)` followed by
//! `x_next = x_mid + MLP(x_mid)`, with `MLP(x) = Σ_i f(k_i · x) v_i` where
//! `k_i` and `v_i` are the i-th rows of `mlp_k` and `mlp_v`. The absence of
//! normalisation keeps the MLP decomposition and the unembedding linear, so
//! both hold as identities rather than approximations.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::tensor::{dot, matvec_into, Tensor, TensorStore};

/// Weight names of one block, in container naming order.
pub const LAYER_WEIGHTS: [&str; 6] = ["wq", "wk", "wv", "wo", "mlp_k", "mlp_v"];

pub fn layer_weight_name(layer: usize, weight: &str) -> String {
    format!("layer.{layer}.{weight}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    /// `[d_mlp × d]`, rows are key vectors.
    pub mlp_k: Tensor,
    /// `[d_mlp × d]`, rows are value vectors.
    pub mlp_v: Tensor,
}

impl Block {
    fn zeros(cfg: &ModelConfig) -> Self {
        let (d, m) = (cfg.d_model, cfg.d_mlp);
        Self {
            wq: Tensor::zeros(vec![d, d]),
            wk: Tensor::zeros(vec![d, d]),
            wv: Tensor::zeros(vec![d, d]),
            wo: Tensor::zeros(vec![d, d]),
            mlp_k: Tensor::zeros(vec![m, d]),
            mlp_v: Tensor::zeros(vec![m, d]),
        }
    }

    fn weights(&self) -> [&Tensor; 6] {
        [&self.wq, &self.wk, &self.wv, &self.wo, &self.mlp_k, &self.mlp_v]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    /// `[V × d]` input embedding.
    pub embed: Tensor,
    /// Optional learned absolute positions, `[max_seq × d]`.
    pub pos_embed: Option<Tensor>,
    pub blocks: Vec<Block>,
    /// `[V × d]`; row `t` is `e_t`.
    pub unembed: Tensor,
}

/// One MLP sub-update: coefficient `m_i` and the value vector `v_i` it scales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubUpdate<'a> {
    pub index: usize,
    pub coefficient: f32,
    pub value: &'a [f32],
}

/// Residual streams recorded during a forward pass.
///
/// Layers are numbered from 1. `post(l, s)` is the output of block `l` at
/// position `s`; `pre_mlp(l, s)` is the stream entering block `l`'s MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTrace {
    seq_len: usize,
    d_model: usize,
    input: Vec<f32>,
    pre_mlp: Vec<Vec<f32>>,
    post: Vec<Vec<f32>>,
}

impl ResidualTrace {
    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn n_layers(&self) -> usize {
        self.post.len()
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    /// Embedding stream `x^0` at position `s`.
    pub fn input(&self, s: usize) -> &[f32] {
        &self.input[s * self.d_model..(s + 1) * self.d_model]
    }

    pub fn pre_mlp(&self, layer: usize, s: usize) -> &[f32] {
        &self.pre_mlp[layer - 1][s * self.d_model..(s + 1) * self.d_model]
    }

    pub fn post(&self, layer: usize, s: usize) -> &[f32] {
        &self.post[layer - 1][s * self.d_model..(s + 1) * self.d_model]
    }

    /// Mean of the post-block streams over all positions, accumulated in `f64`.
    pub fn mean_post(&self, layer: usize) -> Result<Vec<f32>> {
        if layer == 0 || layer > self.n_layers() {
            return Err(Error::LayerOutOfRange {
                layer,
                n_layers: self.n_layers(),
            });
        }
        let mut acc = vec![0.0f64; self.d_model];
        for row in self.post[layer - 1].chunks_exact(self.d_model) {
            for (a, &x) in acc.iter_mut().zip(row) {
                *a += f64::from(x);
            }
        }
        let n = self.seq_len as f64;
        Ok(acc.into_iter().map(|a| (a / n) as f32).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `[seq × V]`, row-major.
    pub logits: Vec<f32>,
    pub vocab_size: usize,
    pub trace: ResidualTrace,
}

impl ForwardOutput {
    pub fn logits_at(&self, s: usize) -> &[f32] {
        &self.logits[s * self.vocab_size..(s + 1) * self.vocab_size]
    }
}

fn expect_shape(name: &str, t: &Tensor, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::ShapeMismatch {
            op: if name.is_empty() { "weights" } else { "load" },
            left: t.shape().to_vec(),
            right: shape.to_vec(),
        });
    }
    Ok(())
}

impl Model {
    /// Model with every weight zero.
    pub fn zeros(config: ModelConfig) -> Self {
        let (v, d) = (config.vocab_size, config.d_model);
        let blocks = (0..config.n_layers).map(|_| Block::zeros(&config)).collect();
        Self {
            embed: Tensor::zeros(vec![v, d]),
            pos_embed: None,
            blocks,
            unembed: Tensor::zeros(vec![v, d]),
            config,
        }
    }

    /// Assembles a model from parts, validating every shape.
    pub fn from_parts(
        config: ModelConfig,
        embed: Tensor,
        pos_embed: Option<Tensor>,
        blocks: Vec<Block>,
        unembed: Tensor,
    ) -> Result<Self> {
        config.validate(0)?;
        let (v, d, m) = (config.vocab_size, config.d_model, config.d_mlp);
        expect_shape("embed", &embed, &[v, d])?;
        expect_shape("unembed", &unembed, &[v, d])?;
        if let Some(p) = &pos_embed {
            expect_shape("pos_embed", p, &[config.max_seq, d])?;
        }
        if blocks.len() != config.n_layers {
            return Err(Error::InvalidConfig(format!(
                "{} blocks for n_layers = {}",
                blocks.len(),
                config.n_layers
            )));
        }
        for b in &blocks {
            for (i, w) in b.weights().into_iter().enumerate() {
                let shape = if i < 4 { [d, d] } else { [m, d] };
                expect_shape(LAYER_WEIGHTS[i], w, &shape)?;
            }
        }
        Ok(Self {
            config,
            embed,
            pos_embed,
            blocks,
            unembed,
        })
    }

    /// Loads `embed`, `unembed`, optional `pos_embed` and `layer.{l}.*`.
    pub fn from_store(config: ModelConfig, store: &TensorStore) -> Result<Self> {
        let mut blocks = Vec::with_capacity(config.n_layers);
        for l in 1..=config.n_layers {
            let get = |w: &str| store.get(&layer_weight_name(l, w)).cloned();
            blocks.push(Block {
                wq: get("wq")?,
                wk: get("wk")?,
                wv: get("wv")?,
                wo: get("wo")?,
                mlp_k: get("mlp_k")?,
                mlp_v: get("mlp_v")?,
            });
        }
        Self::from_parts(
            config,
            store.get("embed")?.clone(),
            store.try_get("pos_embed").cloned(),
            blocks,
            store.get("unembed")?.clone(),
        )
    }

    pub fn to_store(&self) -> TensorStore {
        let mut store = TensorStore::new();
        let mut put = |name: String, t: &Tensor| {
            store.insert(name, t.clone()).expect("weight names are unique");
        };
        put("embed".into(), &self.embed);
        put("unembed".into(), &self.unembed);
        if let Some(p) = &self.pos_embed {
            put("pos_embed".into(), p);
        }
        for (l, b) in self.blocks.iter().enumerate() {
            for (name, w) in LAYER_WEIGHTS.iter().zip(b.weights()) {
                put(layer_weight_name(l + 1, name), w);
            }
        }
        store
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn block(&self, layer: usize) -> Result<&Block> {
        self.check_layer(layer)?;
        Ok(&self.blocks[layer - 1])
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer == 0 || layer > self.config.n_layers {
            return Err(Error::LayerOutOfRange {
                layer,
                n_layers: self.config.n_layers,
            });
        }
        Ok(())
    }

    fn check_token(&self, t: usize) -> Result<()> {
        if t >= self.config.vocab_size {
            return Err(Error::TokenOutOfVocab {
                token: t,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Value vector `v_i^l` (row `index` of `mlp_v`), 1-based layer.
    pub fn value_vector(&self, layer: usize, index: usize) -> Result<&[f32]> {
        let b = self.block(layer)?;
        Ok(b.mlp_v.row(index))
    }

    /// Activation coefficients `m^l = f(W_K^l x)`.
    pub fn mlp_coefficients(&self, layer: usize, x: &[f32]) -> Result<Vec<f32>> {
        let b = self.block(layer)?;
        self.check_width(x)?;
        let f = self.config.activation;
        Ok(b.mlp_k.rows().map(|k| f.apply(dot(k, x)) as f32).collect())
    }

    fn check_width(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.config.d_model {
            return Err(Error::ShapeMismatch {
                op: "residual width",
                left: vec![x.len()],
                right: vec![self.config.d_model],
            });
        }
        Ok(())
    }

    /// `MLP^l(x)` evaluated as `W_Vᵀ f(W_K x)`.
    pub fn mlp(&self, layer: usize, x: &[f32]) -> Result<Vec<f32>> {
        let coeffs = self.mlp_coefficients(layer, x)?;
        let b = &self.blocks[layer - 1];
        let mut out = vec![0.0; self.config.d_model];
        crate::tensor::matvec_t_into(b.mlp_v.data(), self.config.d_model, &coeffs, &mut out);
        Ok(out)
    }

    /// The MLP output split into `d_mlp` weighted value vectors.
    pub fn mlp_sub_update(&self, layer: usize, x: &[f32]) -> Result<Vec<SubUpdate<'_>>> {
        let coeffs = self.mlp_coefficients(layer, x)?;
        let b = &self.blocks[layer - 1];
        Ok(coeffs
            .into_iter()
            .zip(b.mlp_v.rows())
            .enumerate()
            .map(|(index, (coefficient, value))| SubUpdate {
                index,
                coefficient,
                value,
            })
            .collect())
    }

    /// Change in token `t`'s logit caused by adding `m · v` to the final
    /// residual stream: `e_t · (m v)`.
    pub fn logit_effect(&self, token: usize, m: f32, v: &[f32]) -> Result<f64> {
        self.check_token(token)?;
        self.check_width(v)?;
        Ok(f64::from(m) * dot(self.unembed.row(token), v))
    }

    /// Unembedding of a single residual stream.
    pub fn logits(&self, x: &[f32]) -> Result<Vec<f32>> {
        self.check_width(x)?;
        let mut out = vec![0.0; self.config.vocab_size];
        matvec_into(self.unembed.data(), self.config.d_model, x, &mut out);
        Ok(out)
    }

    /// Full forward pass with residual recording at every layer and position.
    pub fn forward(&self, tokens: &[usize]) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let (d, seq) = (cfg.d_model, tokens.len());
        if seq > cfg.max_seq {
            return Err(Error::SequenceTooLong {
                len: seq,
                max: cfg.max_seq,
            });
        }
        if seq == 0 {
            return Err(Error::EmptyCorpus);
        }
        for &t in tokens {
            self.check_token(t)?;
        }

        let mut x = vec![0.0f32; seq * d];
        for (s, &t) in tokens.iter().enumerate() {
            let row = &mut x[s * d..(s + 1) * d];
            row.copy_from_slice(self.embed.row(t));
            if let Some(p) = &self.pos_embed {
                for (r, &pv) in row.iter_mut().zip(p.row(s)) {
                    *r += pv;
                }
            }
        }
        let input = x.clone();
        let mut pre_mlp = Vec::with_capacity(cfg.n_layers);
        let mut post = Vec::with_capacity(cfg.n_layers);

        for (l, block) in self.blocks.iter().enumerate() {
            let attn = self.attention(block, &x, seq);
            for (xi, a) in x.iter_mut().zip(&attn) {
                *xi += a;
            }
            pre_mlp.push(x.clone());
            for s in 0..seq {
                let upd = self.mlp(l + 1, &x[s * d..(s + 1) * d])?;
                for (xi, u) in x[s * d..(s + 1) * d].iter_mut().zip(upd) {
                    *xi += u;
                }
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("forward"));
            }
            post.push(x.clone());
        }

        let v = cfg.vocab_size;
        let mut logits = vec![0.0; seq * v];
        for s in 0..seq {
            matvec_into(
                self.unembed.data(),
                d,
                &x[s * d..(s + 1) * d],
                &mut logits[s * v..(s + 1) * v],
            );
        }
        Ok(ForwardOutput {
            logits,
            vocab_size: v,
            trace: ResidualTrace {
                seq_len: seq,
                d_model: d,
                input,
                pre_mlp,
                post,
            },
        })
    }

    /// Causal multi-head softmax attention over the whole sequence.
    fn attention(&self, block: &Block, x: &[f32], seq: usize) -> Vec<f32> {
        let d = self.config.d_model;
        let hd = self.config.head_dim();
        let project = |w: &Tensor| {
            let mut out = vec![0.0f32; seq * d];
            for s in 0..seq {
                matvec_into(w.data(), d, &x[s * d..(s + 1) * d], &mut out[s * d..(s + 1) * d]);
            }
            out
        };
        let (q, k, v) = (project(&block.wq), project(&block.wk), project(&block.wv));
        let scale = 1.0 / libm::sqrt(hd as f64);

        let mut mixed = vec![0.0f32; seq * d];
        let mut scores = vec![0.0f64; seq];
        for h in 0..self.config.n_heads {
            let cols = h * hd..(h + 1) * hd;
            for s in 0..seq {
                let qs = &q[s * d..(s + 1) * d][cols.clone()];
                let mut max = f64::NEG_INFINITY;
                for (t, sc) in scores.iter_mut().enumerate().take(s + 1) {
                    *sc = dot(qs, &k[t * d..(t + 1) * d][cols.clone()]) * scale;
                    max = max.max(*sc);
                }
                let mut z = 0.0;
                for sc in scores.iter_mut().take(s + 1) {
                    *sc = libm::exp(*sc - max);
                    z += *sc;
                }
                let mut acc = vec![0.0f64; hd];
                for (t, &w) in scores.iter().enumerate().take(s + 1) {
                    let w = w / z;
                    for (a, &vv) in acc.iter_mut().zip(&v[t * d..(t + 1) * d][cols.clone()]) {
                        *a += w * f64::from(vv);
                    }
                }
                for (o, a) in mixed[s * d..(s + 1) * d][cols.clone()].iter_mut().zip(acc) {
                    *o = a as f32;
                }
            }
        }
        let mut out = vec![0.0f32; seq * d];
        for s in 0..seq {
            matvec_into(
                block.wo.data(),
                d,
                &mixed[s * d..(s + 1) * d],
                &mut out[s * d..(s + 1) * d],
            );
        }
        out
    }
}
