use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvSpec, Ctx, Init, Mlp, ParamStore};
use crate::tensor::{Activation, ReduceKind, Tape, Var};

const POOL_EPS: f64 = 1e-8;

/// Spatial average of `feature` (`[C,H,W]`) weighted by `weight`
/// (`[1,H,W]`) and normalized by the weight mass; returns `[C,1,1]`.
pub fn weighted_pool(tape: &Tape, feature: Var, weight: Var) -> Result<Var> {
    let weighted = tape.reduce(ReduceKind::Sum, tape.mul(feature, weight)?, &[1, 2], true)?;
    let mass = tape.add_scalar(tape.reduce(ReduceKind::Sum, weight, &[1, 2], true)?, POOL_EPS);
    tape.div(weighted, mass)
}

/// Predicts a single-channel boundary map at stride 4 from the four
/// transformer outputs.
#[derive(Clone, Debug)]
pub struct BoundaryDecoder {
    pub branches: Vec<Conv2d>,
    pub head: Conv2d,
}

impl BoundaryDecoder {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, channels: usize) -> Self {
        let branches = (0..4)
            .map(|i| {
                Conv2d::new(
                    store,
                    rng,
                    &format!("{name}.branch{i}"),
                    ConvSpec::new(channels, channels, 3),
                    Init::KaimingUniform,
                )
            })
            .collect();
        let head = Conv2d::new(
            store,
            rng,
            &format!("{name}.head"),
            ConvSpec::new(4 * channels, 1, 3),
            Init::KaimingUniform,
        );
        BoundaryDecoder { branches, head }
    }

    /// `features[0]` sets the output resolution. Returns `[1, H/4, W/4]` in (0, 1).
    pub fn forward(&self, ctx: &Ctx<'_>, features: &[Var]) -> Result<Var> {
        if features.len() != self.branches.len() {
            return Err(Error::invalid(
                "boundary_decoder",
                format!("expected {} inputs, got {}", self.branches.len(), features.len()),
            ));
        }
        let t = ctx.tape;
        let base = t.shape(features[0]);
        let (h, w) = (base[1], base[2]);
        let mut parts = Vec::with_capacity(features.len());
        for (branch, &f) in self.branches.iter().zip(features) {
            let y = t.relu(branch.forward(ctx, f)?);
            parts.push(t.upsample_bilinear(y, h, w)?);
        }
        let logits = self.head.forward(ctx, t.concat(&parts, 0)?)?;
        Ok(t.sigmoid(logits))
    }
}

/// Boundary fusion: boundary-weighted pooling drives a channel attention
/// vector that re-weights the boundary-masked feature.
#[derive(Clone, Debug)]
pub struct Bfm {
    pub attention: Mlp,
    pub out: Conv2d,
}

impl Bfm {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, channels: usize) -> Self {
        Bfm {
            attention: Mlp::new(
                store,
                rng,
                &format!("{name}.attention"),
                (channels, channels, channels),
                Activation::Relu,
            ),
            out: Conv2d::new(
                store,
                rng,
                &format!("{name}.out"),
                ConvSpec::new(channels, channels, 1),
                Init::KaimingUniform,
            ),
        }
    }

    /// `feature`: `[C, h, w]`; `boundary`: `[1, H', W']`, resized to `h × w`.
    pub fn forward(&self, ctx: &Ctx<'_>, feature: Var, boundary: Var) -> Result<Var> {
        let t = ctx.tape;
        let fs = t.shape(feature);
        let [c, h, w] = fs[..] else {
            return Err(Error::invalid("bfm", format!("expected [C,H,W], got {fs:?}")));
        };
        let e = t.upsample_bilinear(boundary, h, w)?;
        let masked = t.mul(feature, e)?;
        let pooled = weighted_pool(ctx.tape, masked, e)?;
        let vector = self.attention.forward(ctx, t.reshape(pooled, &[1, c])?)?;
        let vector = t.reshape(t.sigmoid(vector), &[c, 1, 1])?;
        let context = t.mul(vector, masked)?;
        self.out.forward(ctx, t.add(context, feature)?)
    }
}
