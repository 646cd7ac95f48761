//! Parameterized building blocks: dense layers, multi-head attention, a
//! pre-norm transformer block and a GRU cell.

use crate::error::{config_err, shape_err, Result};
use crate::graph::{Graph, Var};
use crate::param::{Initializer, ParamId, ParamStore};
use crate::tensor::Real;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    /// Weights `name.w` (`inputs×outputs`) and bias `name.b`, uniform in
    /// `±1/√inputs`.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        init: &Initializer,
        name: &str,
        inputs: usize,
        outputs: usize,
    ) -> Result<Self> {
        let bound = 1.0 / (inputs as f64).sqrt();
        Ok(Self {
            w: init.uniform(store, &format!("{name}.w"), &[inputs, outputs], bound)?,
            b: init.uniform(store, &format!("{name}.b"), &[outputs], bound)?,
            inputs,
            outputs,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.linear(x, w, Some(b))
    }

    /// Applies the layer to every token of a `[B×T×inputs]` tensor.
    pub fn forward_tokens<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 {
            return shape_err("linear tokens", &s, &[self.inputs, self.outputs]);
        }
        let flat = g.reshape(x, &[s[0] * s[1], s[2]])?;
        let y = self.forward(g, store, flat)?;
        g.reshape(y, &[s[0], s[1], self.outputs])
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, init: &Initializer, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: init.constant(store, &format!("{name}.gamma"), &[dim], 1.0)?,
            beta: init.constant(store, &format!("{name}.beta"), &[dim], 0.0)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gm = g.param(store, self.gamma);
        let bt = g.param(store, self.beta);
        g.layer_norm(x, Some((gm, bt)))
    }
}

/// Scaled dot-product attention over `heads` equal slices of the model
/// dimension, followed by an output projection.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub dim: usize,
}

pub struct AttentionOutput {
    /// `[B×T_q×D]` after the output projection.
    pub output: Var,
    /// `[B·heads×T_q×T_k]` softmax weights.
    pub weights: Var,
}

impl MultiHeadAttention {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        init: &Initializer,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return config_err("multihead_attention", format!("dimension {dim} not divisible by {heads} heads"));
        }
        Ok(Self {
            wq: Linear::new(store, init, &format!("{name}.wq"), dim, dim)?,
            wk: Linear::new(store, init, &format!("{name}.wk"), dim, dim)?,
            wv: Linear::new(store, init, &format!("{name}.wv"), dim, dim)?,
            wo: Linear::new(store, init, &format!("{name}.wo"), dim, dim)?,
            heads,
            dim,
        })
    }

    fn split_heads<T: Real>(&self, g: &mut Graph<T>, x: Var, transpose: bool) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let dh = self.dim / self.heads;
        let r = g.reshape(x, &[s[0], s[1], self.heads, dh])?;
        let perm: &[usize] = if transpose { &[0, 2, 3, 1] } else { &[0, 2, 1, 3] };
        let p = g.permute(r, perm)?;
        let shape = if transpose {
            [s[0] * self.heads, dh, s[1]]
        } else {
            [s[0] * self.heads, s[1], dh]
        };
        g.reshape(p, &shape)
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        q_tokens: Var,
        kv_tokens: Var,
    ) -> Result<AttentionOutput> {
        let (qs, ks) = (g.shape(q_tokens).to_vec(), g.shape(kv_tokens).to_vec());
        if qs.len() != 3 || ks.len() != 3 || qs[0] != ks[0] || qs[2] != self.dim || ks[2] != self.dim {
            return shape_err("multihead_attention", &qs, &ks);
        }
        let (batch, tq) = (qs[0], qs[1]);
        let q = self.wq.forward_tokens(g, store, q_tokens)?;
        let k = self.wk.forward_tokens(g, store, kv_tokens)?;
        let v = self.wv.forward_tokens(g, store, kv_tokens)?;
        let qh = self.split_heads(g, q, false)?;
        let kt = self.split_heads(g, k, true)?;
        let vh = self.split_heads(g, v, false)?;
        let scores = g.batch_matmul(qh, kt)?;
        let dh = (self.dim / self.heads) as f64;
        let scaled = g.scale(scores, T::lit(1.0 / dh.sqrt()));
        let weights = g.softmax(scaled);
        let ctx = g.batch_matmul(weights, vh)?;
        let ctx = g.reshape(ctx, &[batch, self.heads, tq, self.dim / self.heads])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[batch, tq, self.dim])?;
        let output = self.wo.forward_tokens(g, store, ctx)?;
        Ok(AttentionOutput { output, weights })
    }
}

/// Pre-norm transformer block:
/// `x₁ = x + Attn(LN₁(x))`, `x₂ = x₁ + FF(LN₂(x₁))` with a ReLU MLP.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl TransformerBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        init: &Initializer,
        name: &str,
        dim: usize,
        heads: usize,
        ff_mult: usize,
    ) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(store, init, &format!("{name}.ln1"), dim)?,
            attn: MultiHeadAttention::new(store, init, &format!("{name}.attn"), dim, heads)?,
            ln2: LayerNorm::new(store, init, &format!("{name}.ln2"), dim)?,
            ff1: Linear::new(store, init, &format!("{name}.ff1"), dim, dim * ff_mult)?,
            ff2: Linear::new(store, init, &format!("{name}.ff2"), dim * ff_mult, dim)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let n1 = self.ln1.forward(g, store, x)?;
        let a = self.attn.forward(g, store, n1, n1)?.output;
        let x1 = g.add(x, a)?;
        let n2 = self.ln2.forward(g, store, x1)?;
        let h = self.ff1.forward_tokens(g, store, n2)?;
        let h = g.relu(h);
        let f = self.ff2.forward_tokens(g, store, h)?;
        g.add(x1, f)
    }
}

/// Gated recurrent unit with gate order (reset, update, candidate).
#[derive(Clone, Debug)]
pub struct GruCell {
    pub input: Linear,
    pub hidden: Linear,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl GruCell {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        init: &Initializer,
        name: &str,
        input_size: usize,
        hidden_size: usize,
    ) -> Result<Self> {
        Ok(Self {
            input: Linear::new(store, init, &format!("{name}.ih"), input_size, 3 * hidden_size)?,
            hidden: Linear::new(store, init, &format!("{name}.hh"), hidden_size, 3 * hidden_size)?,
            input_size,
            hidden_size,
        })
    }

    /// `h' = (1 − z)⊙n + z⊙h`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, h: Var) -> Result<Var> {
        let (xs, hs) = (g.shape(x).to_vec(), g.shape(h).to_vec());
        if xs.len() != 2 || hs.len() != 2 || xs[0] != hs[0] || xs[1] != self.input_size || hs[1] != self.hidden_size {
            return shape_err("gru_cell", &xs, &hs);
        }
        let hsz = self.hidden_size;
        let gx = self.input.forward(g, store, x)?;
        let gh = self.hidden.forward(g, store, h)?;
        let (xr, xz, xn) = (g.slice(gx, 1, 0, hsz)?, g.slice(gx, 1, hsz, hsz)?, g.slice(gx, 1, 2 * hsz, hsz)?);
        let (hr, hz, hn) = (g.slice(gh, 1, 0, hsz)?, g.slice(gh, 1, hsz, hsz)?, g.slice(gh, 1, 2 * hsz, hsz)?);
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r);
        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z);
        let rn = g.mul(r, hn)?;
        let n = g.add(xn, rn)?;
        let n = g.tanh(n);
        let keep = g.affine(z, -T::one(), T::one());
        let fresh = g.mul(keep, n)?;
        let carried = g.mul(z, h)?;
        g.add(fresh, carried)
    }
}
