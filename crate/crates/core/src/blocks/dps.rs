//! The deformable point sampling transformer.
//!
//! Shapes, for an input feature map `X` of shape `[C, H, W]`, `Np` patches
//! per side and `Nr` reference points per patch side:
//!
//! | value                    | shape              |
//! |--------------------------|--------------------|
//! | global templates         | `[C, C]` (row `i` is the template of channel `i`) |
//! | local templates          | `[C, Np², Nr²]`    |
//! | offsets                  | `[Np², 2, Nr, Nr]` (channel 0 = dy, 1 = dx) |
//! | aggregated templates     | `[C, C]`           |
//! | correlation responses    | `[C, H, W]`        |

use rand::Rng;

use super::attention::{AttentivePool, MultiHeadAttention};
use super::NetConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvSpec, Ctx, Init, Mlp, ParamStore};
use crate::tensor::{Activation, ReduceKind, Scalar, Tape, Tensor, Var};

fn feature_dims(tape: &Tape, x: Var, op: &'static str) -> Result<(usize, usize, usize)> {
    match tape.shape(x)[..] {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::invalid(op, format!("expected [C,H,W], got {s:?}"))),
    }
}

/// Global templates: each channel's spatial softmax is a soft region mask,
/// and row `i` is the spatial average of `X` weighted by mask `i`.
/// With `normalized`, the weighted sum is divided by the mask mass instead
/// of the pixel count.
pub fn global_templates(tape: &Tape, x: Var, normalized: bool) -> Result<Var> {
    let (c, h, w) = feature_dims(tape, x, "global_templates")?;
    let flat = tape.reshape(x, &[c, h * w])?;
    let masks = tape.softmax(flat, 1)?;
    let weighted = tape.matmul(masks, tape.transpose(flat)?)?;
    if normalized {
        let mass = tape.reduce(ReduceKind::Sum, masks, &[1], true)?;
        tape.div(weighted, mass)
    } else {
        Ok(tape.scale(weighted, 1.0 / (h * w) as Scalar))
    }
}

/// Undisplaced sampling positions in pixel coordinates, `[Np²·Nr², 2]` as
/// `(y, x)`. Patch `p = py·Np + px` covers a unit square in normalized
/// units; reference point `(a, b)` sits at `((a + ½)/Nr, (b + ½)/Nr)` of it.
pub fn reference_grid(patch_grid: usize, ref_grid: usize, height: usize, width: usize) -> Tensor {
    let (ph, pw) = ((height / patch_grid) as Scalar, (width / patch_grid) as Scalar);
    let nr = ref_grid as Scalar;
    Tensor::from_fn(&[patch_grid * patch_grid * ref_grid * ref_grid, 2], |i| {
        let point = i[0] % (ref_grid * ref_grid);
        let patch = i[0] / (ref_grid * ref_grid);
        let (py, px) = ((patch / patch_grid) as Scalar, (patch % patch_grid) as Scalar);
        let (a, b) = ((point / ref_grid) as Scalar, (point % ref_grid) as Scalar);
        // pixel centers sit on integers, so a patch spans [p·ext − ½, (p+1)·ext − ½]
        if i[1] == 0 {
            py * ph + (a + 0.5) / nr * ph - 0.5
        } else {
            px * pw + (b + 0.5) / nr * pw - 0.5
        }
    })
}

/// Local extractor: per-patch offset encoder plus deformable bilinear sampling.
#[derive(Clone, Debug)]
pub struct LocalExtractor {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub patch_grid: usize,
    pub ref_grid: usize,
    pub offset_scale: Scalar,
}

pub struct LocalOutput {
    pub templates: Var,
    pub offsets: Var,
    pub points: Var,
}

impl LocalExtractor {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, cfg: &NetConfig) -> Self {
        LocalExtractor {
            conv1: Conv2d::new(
                store,
                rng,
                &format!("{name}.offset.conv1"),
                ConvSpec::new(cfg.channels, cfg.offset_hidden, 3),
                Init::KaimingUniform,
            ),
            conv2: Conv2d::new(
                store,
                rng,
                &format!("{name}.offset.conv2"),
                ConvSpec::new(cfg.offset_hidden, 2, 3),
                Init::Zeros,
            ),
            patch_grid: cfg.patch_grid,
            ref_grid: cfg.ref_grid,
            offset_scale: cfg.offset_scale,
        }
    }

    pub fn forward(&self, ctx: &Ctx<'_>, x: Var) -> Result<LocalOutput> {
        let t = ctx.tape;
        let (c, h, w) = feature_dims(t, x, "local_extractor")?;
        let (np, nr) = (self.patch_grid, self.ref_grid);
        if h % np != 0 || w % np != 0 {
            return Err(Error::invalid(
                "local_extractor",
                format!("{h}x{w} feature does not tile into {np}x{np} patches"),
            ));
        }
        let (ph, pw) = (h / np, w / np);
        // [C, H, W] -> [Np², C, ph, pw]
        let patches = t.reshape(x, &[c, np, ph, np, pw])?;
        let patches = t.permute(patches, &[1, 3, 0, 2, 4])?;
        let patches = t.reshape(patches, &[np * np, c, ph, pw])?;

        let hidden = t.gelu(self.conv1.forward(ctx, patches)?);
        let field = self.conv2.forward(ctx, hidden)?;
        let field = t.adaptive_avg_pool2d(field, nr, nr)?;
        // f64 tanh reaches ±1 exactly for large inputs; one ulp of shrink
        // keeps offsets strictly inside (−s, s)
        let offsets = t.scale(t.tanh(field), self.offset_scale * (1.0 - Scalar::EPSILON));

        // [Np², 2, Nr, Nr] -> [Np²·Nr², 2], scaled to pixels and displaced from the grid
        let disp = t.permute(offsets, &[0, 2, 3, 1])?;
        let disp = t.reshape(disp, &[np * np * nr * nr, 2])?;
        let extent = t.constant(Tensor::new(&[1, 2], vec![ph as Scalar, pw as Scalar])?);
        let disp = t.mul(disp, extent)?;
        let grid = t.constant(reference_grid(np, nr, h, w));
        let points = t.add(grid, disp)?;

        let samples = t.bilinear_sample(x, points)?;
        let templates = t.reshape(samples, &[c, np * np, nr * nr])?;
        Ok(LocalOutput {
            templates,
            offsets,
            points,
        })
    }
}

/// Fuses global and local templates into `C` aggregated templates.
#[derive(Clone, Debug)]
pub struct Aggregator {
    pub global_attention: MultiHeadAttention,
    pub local_attention: MultiHeadAttention,
    pub inter_pool: AttentivePool,
    pub intra_pool: AttentivePool,
    pub global_mlp: Mlp,
    pub inter_key: Mlp,
    pub inter_value: Mlp,
    pub intra_key: Mlp,
    pub intra_value: Mlp,
    pub fuse: Mlp,
}

pub struct AggregatorOutput {
    /// `[C, C]`
    pub aggregated: Var,
    /// `[C, Nr²]`, rows sum to one.
    pub inter_scores: Var,
    /// `[C, Np²]`, rows sum to one.
    pub intra_scores: Var,
    /// Templates pooled across patches, `[C, Nr²]`.
    pub inter_templates: Var,
    /// Templates pooled across reference points, `[C, Np²]`.
    pub intra_templates: Var,
}

impl Aggregator {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, cfg: &NetConfig) -> Self {
        let c = cfg.channels;
        let mut mlp = |part: &str, input: usize| {
            Mlp::new(store, rng, &format!("{name}.{part}"), (input, c, c), Activation::Gelu)
        };
        let global_mlp = mlp("global_mlp", c);
        let inter_key = mlp("inter_key", c);
        let inter_value = mlp("inter_value", c);
        let intra_key = mlp("intra_key", c);
        let intra_value = mlp("intra_value", c);
        let fuse = mlp("fuse", 2 * c);
        Aggregator {
            global_attention: MultiHeadAttention::new(store, rng, &format!("{name}.global_attn"), c, cfg.heads),
            local_attention: MultiHeadAttention::new(store, rng, &format!("{name}.local_attn"), c, cfg.heads),
            inter_pool: AttentivePool::new(store, rng, &format!("{name}.inter_pool"), c),
            intra_pool: AttentivePool::new(store, rng, &format!("{name}.intra_pool"), c),
            global_mlp,
            inter_key,
            inter_value,
            intra_key,
            intra_value,
            fuse,
        }
    }

    /// `global`: `[C, C]`; `local`: `[C, Np², Nr²]`.
    pub fn forward(&self, ctx: &Ctx<'_>, global: Var, local: Var) -> Result<AggregatorOutput> {
        let t = ctx.tape;
        let ls = t.shape(local);
        let gs = t.shape(global);
        let [c, patches, points] = ls[..] else {
            return Err(Error::shape("aggregator", &gs, &ls));
        };
        if gs != [c, c] {
            return Err(Error::shape("aggregator", &gs, &ls));
        }
        let global = self.global_attention.forward(ctx, global)?;
        // local templates as tokens: [Np²·Nr², C]
        let tokens = t.transpose(t.reshape(local, &[c, patches * points])?)?;
        let tokens = self.local_attention.forward(ctx, tokens)?;
        let grid = t.reshape(tokens, &[patches, points, c])?;
        let inter = self.inter_pool.forward(ctx, grid, 0)?; // [Nr², C]
        let intra = self.intra_pool.forward(ctx, grid, 1)?; // [Np², C]

        let g = self.global_mlp.forward(ctx, global)?;
        let branch = |key: &Mlp, value: &Mlp, pooled: Var| -> Result<(Var, Var)> {
            let k = key.forward(ctx, pooled)?;
            let v = value.forward(ctx, pooled)?;
            let scores = t.softmax(t.matmul(g, t.transpose(k)?)?, 1)?;
            Ok((scores, t.matmul(scores, v)?))
        };
        let (inter_scores, inter_agg) = branch(&self.inter_key, &self.inter_value, inter)?;
        let (intra_scores, intra_agg) = branch(&self.intra_key, &self.intra_value, intra)?;
        let aggregated = self.fuse.forward(ctx, t.concat(&[inter_agg, intra_agg], 1)?)?;
        Ok(AggregatorOutput {
            aggregated,
            inter_scores,
            intra_scores,
            inter_templates: t.transpose(inter)?,
            intra_templates: t.transpose(intra)?,
        })
    }
}

/// `C_a[i] = Σ_j T_a[i][j] · X[j]`: every aggregated template used as a 1×1
/// kernel over `X`.
pub fn correlation_responses(tape: &Tape, templates: Var, x: Var) -> Result<Var> {
    let (c, h, w) = feature_dims(tape, x, "correlation_map")?;
    let ts = tape.shape(templates);
    if ts.len() != 2 || ts[1] != c {
        return Err(Error::shape("correlation_map", &ts, &[c, h, w]));
    }
    let flat = tape.reshape(x, &[c, h * w])?;
    let responses = tape.matmul(templates, flat)?;
    tape.reshape(responses, &[ts[0], h, w])
}

/// Correlation responses concatenated with the input, reduced back to `C`
/// channels by a 1×1 convolution.
#[derive(Clone, Debug)]
pub struct CorrelationMap {
    pub fuse: Conv2d,
}

impl CorrelationMap {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, channels: usize) -> Self {
        CorrelationMap {
            fuse: Conv2d::new(
                store,
                rng,
                &format!("{name}.fuse"),
                ConvSpec::new(2 * channels, channels, 1),
                Init::KaimingUniform,
            ),
        }
    }

    /// Returns `(output, responses)`.
    pub fn forward(&self, ctx: &Ctx<'_>, templates: Var, x: Var) -> Result<(Var, Var)> {
        let responses = correlation_responses(ctx.tape, templates, x)?;
        let joined = ctx.tape.concat(&[responses, x], 0)?;
        Ok((self.fuse.forward(ctx, joined)?, responses))
    }
}

#[derive(Clone, Debug)]
pub struct DpsTransformer {
    pub local: LocalExtractor,
    pub aggregator: Aggregator,
    pub correlation: CorrelationMap,
    pub normalized_global_pooling: bool,
}

pub struct DpsOutput {
    /// `[C, H, W]`, same shape as the input.
    pub output: Var,
    pub global: Var,
    pub local: LocalOutput,
    pub aggregator: AggregatorOutput,
    pub responses: Var,
}

impl DpsTransformer {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, cfg: &NetConfig) -> Self {
        DpsTransformer {
            local: LocalExtractor::new(store, rng, &format!("{name}.local"), cfg),
            aggregator: Aggregator::new(store, rng, &format!("{name}.aggregator"), cfg),
            correlation: CorrelationMap::new(store, rng, &format!("{name}.correlation"), cfg.channels),
            normalized_global_pooling: cfg.normalized_global_pooling,
        }
    }

    pub fn forward(&self, ctx: &Ctx<'_>, x: Var) -> Result<DpsOutput> {
        let global = global_templates(ctx.tape, x, self.normalized_global_pooling)?;
        let local = self.local.forward(ctx, x)?;
        let aggregator = self.aggregator.forward(ctx, global, local.templates)?;
        let (output, responses) = self.correlation.forward(ctx, aggregator.aggregated, x)?;
        Ok(DpsOutput {
            output,
            global,
            local,
            aggregator,
            responses,
        })
    }

    /// Forward pass, or the identity when `enabled` is false.
    pub fn apply(&self, ctx: &Ctx<'_>, x: Var, enabled: bool) -> Result<Var> {
        if enabled {
            Ok(self.forward(ctx, x)?.output)
        } else {
            Ok(x)
        }
    }
}
