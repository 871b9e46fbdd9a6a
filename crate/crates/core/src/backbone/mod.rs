//! Decoder-only transformer with an SID head and a rank head.
//!
//! The forward pass is written once against [`Backend`]; [`Model`] runs it
//! eagerly for inference and the training code runs it on a recording graph.

mod checkpoint;
mod config;
mod params;

use std::sync::Arc;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
};
pub use config::ModelConfig;
pub use params::{LayerParams, Params, INIT_STD};

use crate::error::{Error, Result};
use crate::numerics::{kernels, ops, Backend, Eager, Tensor};

/// Cached keys and values of one layer, `[positions, d_model]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerKv<V> {
    pub k: V,
    pub v: V,
}

/// Runs `tokens` at absolute positions `start..start + n` on top of `past`
/// (empty, or one entry per layer covering positions `0..start`).
///
/// Returns the final-normed hidden states of the new positions and the
/// per-layer caches covering `0..start + n`.
pub fn forward_segment<B: Backend>(
    b: &mut B,
    cfg: &ModelConfig,
    p: &Params<B::Value>,
    tokens: &[usize],
    start: usize,
    past: &[LayerKv<B::Value>],
) -> Result<(B::Value, Vec<LayerKv<B::Value>>)> {
    let n = tokens.len();
    if n == 0 {
        return Err(Error::invalid("forward on an empty token list"));
    }
    if start + n > cfg.context {
        return Err(Error::ContextOverflow {
            required: start + n,
            available: cfg.context,
        });
    }
    if !(past.is_empty() && start == 0) && past.len() != cfg.layers {
        return Err(Error::invalid(format!(
            "cache holds {} layers, model has {}",
            past.len(),
            cfg.layers
        )));
    }
    let positions: Vec<usize> = (start..start + n).collect();
    let tok = b.embed(&p.tok_emb, tokens)?;
    let pos = b.embed(&p.pos_emb, &positions)?;
    let mut x = b.add(&tok, &pos)?;
    let mut caches = Vec::with_capacity(cfg.layers);
    for (i, l) in p.layers.iter().enumerate() {
        let h = b.layer_norm(&x, &l.ln1_g, &l.ln1_b)?;
        let q = b.linear(&h, &l.wq, &l.bq)?;
        let mut k = b.linear(&h, &l.wk, &l.bk)?;
        let mut v = b.linear(&h, &l.wv, &l.bv)?;
        if let Some(prev) = past.get(i) {
            k = b.concat_rows(&prev.k, &k)?;
            v = b.concat_rows(&prev.v, &v)?;
        }
        let a = b.attention(&q, &k, &v, cfg.heads, start)?;
        let a = b.linear(&a, &l.wo, &l.bo)?;
        let a = b.dropout(&a, cfg.dropout);
        x = b.add(&x, &a)?;
        let h = b.layer_norm(&x, &l.ln2_g, &l.ln2_b)?;
        let f = b.linear(&h, &l.w1, &l.b1)?;
        let f = b.gelu(&f);
        let f = b.linear(&f, &l.w2, &l.b2)?;
        let f = b.dropout(&f, cfg.dropout);
        x = b.add(&x, &f)?;
        caches.push(LayerKv { k, v });
    }
    let out = b.layer_norm(&x, &p.lnf_g, &p.lnf_b)?;
    Ok((out, caches))
}

/// SID-head logits `[n, V]` of hidden rows `[n, d]`.
pub fn sid_logits<B: Backend>(
    b: &mut B,
    p: &Params<B::Value>,
    hidden: &B::Value,
) -> Result<B::Value> {
    b.linear(hidden, &p.sid_w, &p.sid_b)
}

/// Rank probabilities `[n, 1]` of hidden rows `[n, d]`.
pub fn rank_probs<B: Backend>(
    b: &mut B,
    p: &Params<B::Value>,
    hidden: &B::Value,
) -> Result<B::Value> {
    let z = b.linear(hidden, &p.rank_w, &p.rank_b)?;
    Ok(b.sigmoid(&z))
}

/// Per-layer key/value caches of the positions consumed so far.
///
/// States are immutable: extending returns a new state, so a clone is a
/// branch that never affects its parent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecodeState {
    kv: Vec<LayerKv<Arc<Tensor>>>,
    len: usize,
}

impl DecodeState {
    pub fn new() -> Self {
        DecodeState::default()
    }

    /// Builds a state from caches that cover `len` positions.
    pub fn from_caches(kv: Vec<LayerKv<Arc<Tensor>>>) -> Result<Self> {
        let len = kv.first().map_or(0, |c| c.k.rows());
        for c in &kv {
            if c.k.rows() != len || c.v.rows() != len {
                return Err(Error::invalid("layer caches differ in length"));
            }
        }
        Ok(DecodeState { kv, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn caches(&self) -> &[LayerKv<Arc<Tensor>>] {
        &self.kv
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullOutput {
    pub hidden: Tensor,
    pub logits: Tensor,
    /// Log-softmax of `logits` over the whole vocabulary.
    pub log_probs: Tensor,
}

/// Eager inference model.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Params<Arc<Tensor>>,
}

pub fn init_model(config: &ModelConfig) -> Result<Model> {
    Ok(Model {
        config: config.clone(),
        params: Params::init(config)?,
    })
}

impl Model {
    /// Wraps trained parameters, checking every shape against `config`.
    pub fn from_params(config: ModelConfig, params: Params<Arc<Tensor>>) -> Result<Self> {
        config.validate()?;
        let expected = Params::shapes(&config);
        if params.layers.len() != config.layers {
            return Err(Error::DimMismatch {
                expected: config.layers,
                got: params.layers.len(),
            });
        }
        for ((name, want), got) in expected.entries().into_iter().zip(params.values()) {
            if got.shape() != want.as_slice() {
                return Err(Error::invalid(format!(
                    "parameter {name} has shape {:?}, expected {want:?}",
                    got.shape()
                )));
            }
        }
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params<Arc<Tensor>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<Arc<Tensor>> {
        &mut self.params
    }

    fn backend(&self) -> Eager {
        Eager::new(self.config.precision)
    }

    pub fn forward_full(&self, tokens: &[usize]) -> Result<FullOutput> {
        let mut b = self.backend();
        let (hidden, _) = forward_segment(&mut b, &self.config, &self.params, tokens, 0, &[])?;
        let logits = sid_logits(&mut b, &self.params, &hidden)?;
        let log_probs = ops::log_softmax(&logits, self.config.precision)?;
        Ok(FullOutput {
            hidden: Arc::unwrap_or_clone(hidden),
            logits: Arc::unwrap_or_clone(logits),
            log_probs,
        })
    }

    /// Hidden states of `tokens` appended after `state`, and the extended
    /// state. `state` itself is left untouched.
    pub fn forward_incremental(
        &self,
        state: &DecodeState,
        tokens: &[usize],
    ) -> Result<(Tensor, DecodeState)> {
        if tokens.is_empty() {
            return Ok((Tensor::zeros(&[0, self.config.d_model]), state.clone()));
        }
        let mut b = self.backend();
        let (hidden, kv) = forward_segment(
            &mut b,
            &self.config,
            &self.params,
            tokens,
            state.len,
            &state.kv,
        )?;
        let next = DecodeState {
            kv,
            len: state.len + tokens.len(),
        };
        Ok((Arc::unwrap_or_clone(hidden), next))
    }

    /// SID logits `[n, V]` for hidden rows `[n, d]`.
    pub fn sid_logits(&self, hidden: &Tensor) -> Result<Tensor> {
        ops::matmul(hidden, &self.params.sid_w, self.config.precision)
            .and_then(|y| ops::add_bias(&y, &self.params.sid_b, self.config.precision))
    }

    /// Columns `range` of the SID logits of one hidden row. Equal bit for bit
    /// to the same columns of [`Model::sid_logits`].
    pub fn sid_logits_range(
        &self,
        hidden: &[f64],
        range: std::ops::Range<usize>,
    ) -> Result<Vec<f64>> {
        let (d, v) = (self.config.d_model, self.config.vocab);
        if hidden.len() != d {
            return Err(Error::DimMismatch {
                expected: d,
                got: hidden.len(),
            });
        }
        if range.end > v {
            return Err(Error::OutOfRange(format!("logit columns {range:?} of {v}")));
        }
        let p = self.config.precision;
        let w = self.params.sid_w.data();
        let bias = self.params.sid_b.data();
        let mut out = vec![0.0; range.len()];
        for (i, &h) in hidden.iter().enumerate() {
            let row = &w[i * v + range.start..i * v + range.end];
            for (o, &x) in out.iter_mut().zip(row) {
                *o += h * x;
            }
        }
        for (o, &c) in out.iter_mut().zip(&bias[range]) {
            *o = p.round(p.round(*o) + c);
        }
        Ok(out)
    }

    /// Click probability read from one hidden row.
    pub fn rank_probability(&self, hidden: &[f64]) -> Result<f64> {
        let d = self.config.d_model;
        if hidden.len() != d {
            return Err(Error::DimMismatch {
                expected: d,
                got: hidden.len(),
            });
        }
        let p = self.config.precision;
        let z = p.round(
            p.round(kernels::dot(hidden, self.params.rank_w.data())) + self.params.rank_b.data()[0],
        );
        Ok(p.round(kernels::sigmoid(z)))
    }
}
