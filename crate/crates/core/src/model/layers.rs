//! Attention building blocks over token matrices (tokens × width).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Var;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Result, Tensor};

const LN_EPS: f64 = 1e-5;

/// Parameter allocation context for layer constructors.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    pub fn normal(&mut self, name: String, shape: &[usize], std: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..n).map(|_| dist.sample(&mut *self.rng)).collect();
        self.store.add(name, Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn constant(&mut self, name: String, value: Tensor) -> ParamId {
        self.store.add(name, value)
    }

    pub fn uniform_seed(&mut self) -> u64 {
        self.rng.random()
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let weight = init.normal(format!("{name}.weight"), &[in_dim, out_dim], (in_dim as f64).powf(-0.5));
        let bias = init.constant(format!("{name}.bias"), Tensor::zeros(&[1, out_dim]));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(p.get(self.weight))?.add(p.get(self.bias))
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// Layer normalization with learned gain and bias.
#[derive(Clone, Debug)]
pub struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    pub fn new(init: &mut Init, name: &str, width: usize) -> Self {
        Self {
            gain: init.constant(format!("{name}.gain"), Tensor::full(&[1, width], 1.0)),
            bias: init.constant(format!("{name}.bias"), Tensor::zeros(&[1, width])),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.layer_norm(LN_EPS)?.mul(p.get(self.gain))?.add(p.get(self.bias))
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Clone, Debug)]
pub struct Attention {
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(init: &mut Init, name: &str, q_dim: usize, kv_dim: usize, width: usize, heads: usize) -> Self {
        Self {
            query: Linear::new(init, &format!("{name}.q"), q_dim, width),
            key: Linear::new(init, &format!("{name}.k"), kv_dim, width),
            value: Linear::new(init, &format!("{name}.v"), kv_dim, width),
            out: Linear::new(init, &format!("{name}.o"), width, q_dim),
            heads,
        }
    }

    /// `key_mask` holds one additive logit per key row.
    pub fn forward<'t>(&self, p: &Bound<'t>, queries: Var<'t>, keys: Var<'t>, key_mask: Option<&Tensor>) -> Result<Var<'t>> {
        let q = self.query.forward(p, queries)?;
        let k = self.key.forward(p, keys)?;
        let v = self.value.forward(p, keys)?;
        let head_dim = self.query.out_dim / self.heads;
        let scale = (head_dim as f64).powf(-0.5);
        let mut outputs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = q.slice(1, h * head_dim, head_dim)?;
            let kh = k.slice(1, h * head_dim, head_dim)?;
            let vh = v.slice(1, h * head_dim, head_dim)?;
            let logits = qh.matmul(kh.transpose()?)?.scale(scale)?;
            let weights = logits.softmax(key_mask)?;
            outputs.push(weights.matmul(vh)?);
        }
        let merged = if outputs.len() == 1 {
            outputs[0]
        } else {
            q.tape().concat(&outputs, 1)?
        };
        self.out.forward(p, merged)
    }
}

/// GEGLU feed-forward: `out(gelu(x·W) ⊙ (x·V))`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    gate: Linear,
    value: Linear,
    out: Linear,
}

impl FeedForward {
    pub fn new(init: &mut Init, name: &str, width: usize, mult: usize) -> Self {
        let hidden = width * mult;
        Self {
            gate: Linear::new(init, &format!("{name}.gate"), width, hidden),
            value: Linear::new(init, &format!("{name}.value"), width, hidden),
            out: Linear::new(init, &format!("{name}.out"), hidden, width),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let gated = self.gate.forward(p, x)?.gelu()?;
        let value = self.value.forward(p, x)?;
        self.out.forward(p, gated.mul(value)?)
    }
}

/// Pre-norm self-attention block followed by a feed-forward block.
#[derive(Clone, Debug)]
pub struct SelfBlock {
    attn_norm: Norm,
    attn: Attention,
    ff_norm: Norm,
    ff: FeedForward,
}

impl SelfBlock {
    pub fn new(init: &mut Init, name: &str, width: usize, heads: usize, ff_mult: usize) -> Self {
        Self {
            attn_norm: Norm::new(init, &format!("{name}.attn_norm"), width),
            attn: Attention::new(init, &format!("{name}.attn"), width, width, width, heads),
            ff_norm: Norm::new(init, &format!("{name}.ff_norm"), width),
            ff: FeedForward::new(init, &format!("{name}.ff"), width, ff_mult),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>, key_mask: Option<&Tensor>) -> Result<Var<'t>> {
        let normed = self.attn_norm.forward(p, x)?;
        let x = x.add(self.attn.forward(p, normed, normed, key_mask)?)?;
        let normed = self.ff_norm.forward(p, x)?;
        x.add(self.ff.forward(p, normed)?)
    }
}

/// Queries attend into a separate key/value set, then a feed-forward block.
#[derive(Clone, Debug)]
pub struct CrossBlock {
    query_norm: Norm,
    kv_norm: Norm,
    attn: Attention,
    ff_norm: Norm,
    ff: FeedForward,
}

impl CrossBlock {
    pub fn new(init: &mut Init, name: &str, width: usize, kv_dim: usize, heads: usize, ff_mult: usize) -> Self {
        Self {
            query_norm: Norm::new(init, &format!("{name}.query_norm"), width),
            kv_norm: Norm::new(init, &format!("{name}.kv_norm"), kv_dim),
            attn: Attention::new(init, &format!("{name}.attn"), width, kv_dim, width, heads),
            ff_norm: Norm::new(init, &format!("{name}.ff_norm"), width),
            ff: FeedForward::new(init, &format!("{name}.ff"), width, ff_mult),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, queries: Var<'t>, kv: Var<'t>, key_mask: Option<&Tensor>) -> Result<Var<'t>> {
        let q = self.query_norm.forward(p, queries)?;
        let kv = self.kv_norm.forward(p, kv)?;
        let x = queries.add(self.attn.forward(p, q, kv, key_mask)?)?;
        let normed = self.ff_norm.forward(p, x)?;
        x.add(self.ff.forward(p, normed)?)
    }
}

/// Two-layer GELU MLP.
#[derive(Clone, Debug)]
pub struct Mlp {
    hidden: Linear,
    out: Linear,
}

impl Mlp {
    pub fn new(init: &mut Init, name: &str, in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        Self {
            hidden: Linear::new(init, &format!("{name}.hidden"), in_dim, hidden),
            out: Linear::new(init, &format!("{name}.out"), hidden, out_dim),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.hidden.forward(p, x)?.gelu()?;
        self.out.forward(p, h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = self.hidden.params().to_vec();
        v.extend(self.out.params());
        v
    }
}
