use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Ctx, Linear, ParamStore};
use crate::tensor::{ReduceKind, Var};

/// Scaled dot-product self-attention over the rows of a `[tokens, dim]`
/// matrix, with a residual connection.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, dim: usize, heads: usize) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim {dim} not divisible by {heads} heads");
        MultiHeadAttention {
            query: Linear::new(store, rng, &format!("{name}.query"), dim, dim, true),
            key: Linear::new(store, rng, &format!("{name}.key"), dim, dim, true),
            value: Linear::new(store, rng, &format!("{name}.value"), dim, dim, true),
            output: Linear::new(store, rng, &format!("{name}.output"), dim, dim, true),
            heads,
        }
    }

    pub fn forward(&self, ctx: &Ctx<'_>, tokens: Var) -> Result<Var> {
        let t = ctx.tape;
        let dim = t.shape(tokens)[1];
        let head_dim = dim / self.heads;
        let q = self.query.forward(ctx, tokens)?;
        let k = self.key.forward(ctx, tokens)?;
        let v = self.value.forward(ctx, tokens)?;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = t.narrow(q, 1, h * head_dim, head_dim)?;
            let kh = t.narrow(k, 1, h * head_dim, head_dim)?;
            let vh = t.narrow(v, 1, h * head_dim, head_dim)?;
            let scores = t.scale(t.matmul(qh, t.transpose(kh)?)?, scale);
            let weights = t.softmax(scores, 1)?;
            heads.push(t.matmul(weights, vh)?);
        }
        let merged = t.concat(&heads, 1)?;
        let out = self.output.forward(ctx, merged)?;
        t.add(tokens, out)
    }
}

/// Attentive pooling: per-element scores from a shared bias-free linear map,
/// softmax-normalized along the pooled axis, then a weighted sum.
#[derive(Clone, Debug)]
pub struct AttentivePool {
    pub score: Linear,
}

impl AttentivePool {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, dim: usize) -> Self {
        AttentivePool {
            score: Linear::new(store, rng, &format!("{name}.score"), dim, dim, false),
        }
    }

    /// Pools a `[a, b, dim]` tensor along `axis` (0 or 1), returning the
    /// remaining `[b, dim]` or `[a, dim]` token matrix.
    pub fn forward(&self, ctx: &Ctx<'_>, x: Var, axis: usize) -> Result<Var> {
        let t = ctx.tape;
        let shape = t.shape(x);
        let [a, b, dim] = shape[..] else {
            return Err(Error::invalid("attentive_pool", format!("expected rank 3, got {shape:?}")));
        };
        if axis > 1 {
            return Err(Error::invalid("attentive_pool", format!("axis {axis} must be 0 or 1")));
        }
        let flat = t.reshape(x, &[a * b, dim])?;
        let scores = t.reshape(self.score.forward(ctx, flat)?, &[a, b, dim])?;
        let weights = t.softmax(scores, axis)?;
        let pooled = t.reduce(ReduceKind::Sum, t.mul(weights, x)?, &[axis], false)?;
        Ok(pooled)
    }
}
