use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{Mat, ParamId, ParamSet};

pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(ps: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let w = ps.add_glorot(format!("{name}.w"), fan_in, fan_out, rng);
        let b = bias.then(|| ps.add_const(format!("{name}.b"), 1, fan_out, 0.0));
        Linear { w, b }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let y = g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Per-row normalization with learned scale and shift.
#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new(ps: &mut ParamSet, name: &str, d: usize) -> Self {
        Norm {
            gamma: ps.add_const(format!("{name}.gamma"), 1, d, 1.0),
            beta: ps.add_const(format!("{name}.beta"), 1, d, 0.0),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let n = g.layer_norm(x, NORM_EPS);
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        let y = g.mul_row(n, gamma);
        g.add_row(y, beta)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub d: usize,
}

impl MultiHeadAttention {
    pub fn new(ps: &mut ParamSet, name: &str, d: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(heads > 0 && d.is_multiple_of(heads), "heads must divide d");
        MultiHeadAttention {
            q: Linear::new(ps, &format!("{name}.q"), d, d, true, rng),
            k: Linear::new(ps, &format!("{name}.k"), d, d, true, rng),
            v: Linear::new(ps, &format!("{name}.v"), d, d, true, rng),
            o: Linear::new(ps, &format!("{name}.o"), d, d, true, rng),
            heads,
            d,
        }
    }

    /// Rows of `query` attend over rows of `context`; `key_mask` marks valid context rows.
    /// Returns the output and one attention map per head.
    pub fn forward(&self, g: &mut Graph, query: Var, context: Var, key_mask: Option<&[bool]>) -> (Var, Vec<Mat>) {
        let q = self.q.forward(g, query);
        let k = self.k.forward(g, context);
        let v = self.v.forward(g, context);
        let dh = self.d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut maps = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (g.slice_cols(q, lo, hi), g.slice_cols(k, lo, hi), g.slice_cols(v, lo, hi))
            };
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt);
            let scores = g.scale(scores, scale);
            let a = g.softmax_rows(scores, key_mask);
            maps.push(g.value(a).clone());
            outs.push(g.matmul(a, vh));
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        (self.o.forward(g, cat), maps)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new(ps: &mut ParamSet, name: &str, d: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        FeedForward {
            inner: Linear::new(ps, &format!("{name}.ff1"), d, hidden, true, rng),
            outer: Linear::new(ps, &format!("{name}.ff2"), hidden, d, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.inner.forward(g, x);
        let h = g.gelu(h);
        self.outer.forward(g, h)
    }
}

/// Attention, then feed-forward, each wrapped in residual + normalization.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub attn: MultiHeadAttention,
    pub norm_attn: Norm,
    pub ff: FeedForward,
    pub norm_ff: Norm,
}

impl AttentionBlock {
    pub fn new(ps: &mut ParamSet, name: &str, d: usize, heads: usize, ff_mult: usize, rng: &mut impl Rng) -> Self {
        AttentionBlock {
            attn: MultiHeadAttention::new(ps, &format!("{name}.attn"), d, heads, rng),
            norm_attn: Norm::new(ps, &format!("{name}.norm1"), d),
            ff: FeedForward::new(ps, name, d, ff_mult * d, rng),
            norm_ff: Norm::new(ps, &format!("{name}.norm2"), d),
        }
    }

    pub fn forward(&self, g: &mut Graph, query: Var, context: Var, key_mask: Option<&[bool]>) -> (Var, Vec<Mat>) {
        let (a, maps) = self.attn.forward(g, query, context, key_mask);
        let h = g.add(query, a);
        let h = self.norm_attn.forward(g, h);
        let f = self.ff.forward(g, h);
        let out = g.add(h, f);
        (self.norm_ff.forward(g, out), maps)
    }
}

/// `a = softmax_t(wᵀ tanh(W h_t))`, output `Σ a_t h_t`.
#[derive(Clone, Copy, Debug)]
pub struct AttnPool {
    pub w: ParamId,
    pub v: ParamId,
}

impl AttnPool {
    pub fn new(ps: &mut ParamSet, name: &str, d: usize, rng: &mut impl Rng) -> Self {
        AttnPool {
            w: ps.add_glorot(format!("{name}.W"), d, d, rng),
            v: ps.add_glorot(format!("{name}.w"), d, 1, rng),
        }
    }

    /// Returns the pooled 1×d row and the 1×T weights.
    pub fn forward(&self, g: &mut Graph, h: Var, mask: Option<&[bool]>) -> (Var, Var) {
        let w = g.param(self.w);
        let v = g.param(self.v);
        let proj = g.matmul(h, w);
        let proj = g.tanh(proj);
        let scores = g.matmul(proj, v);
        let scores = g.transpose(scores);
        let a = g.softmax_rows(scores, mask);
        (g.matmul(a, h), a)
    }
}
