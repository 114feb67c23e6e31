use rand::Rng;

use crate::error::Result;
use crate::nn::{Conv2d, ConvSpec, Ctx, Init, ParamStore};
use crate::tensor::Var;

/// Dilation rates of the fusion branches, applied small to large.
pub const MFFM_RATES: [usize; 3] = [6, 12, 18];

/// Multi-scale feature fusion: project an encoder stage to `C` channels, then
/// fold in 3×3 dilated branches one rate at a time
/// (`x ← conv1x1(x + relu(dilated_conv(x)))`).
#[derive(Clone, Debug)]
pub struct Mffm {
    pub project: Conv2d,
    pub branches: Vec<Conv2d>,
    pub fuse: Vec<Conv2d>,
}

impl Mffm {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, in_channels: usize, channels: usize) -> Self {
        let project = Conv2d::new(
            store,
            rng,
            &format!("{name}.project"),
            ConvSpec::new(in_channels, channels, 1),
            Init::KaimingUniform,
        );
        let mut branches = Vec::new();
        let mut fuse = Vec::new();
        for (i, &rate) in MFFM_RATES.iter().enumerate() {
            branches.push(Conv2d::new(
                store,
                rng,
                &format!("{name}.branch{i}"),
                ConvSpec::new(channels, channels, 3).dilated(rate),
                Init::KaimingUniform,
            ));
            fuse.push(Conv2d::new(
                store,
                rng,
                &format!("{name}.fuse{i}"),
                ConvSpec::new(channels, channels, 1),
                Init::KaimingUniform,
            ));
        }
        Mffm {
            project,
            branches,
            fuse,
        }
    }

    /// With `enabled = false` only the channel projection runs.
    pub fn forward(&self, ctx: &Ctx<'_>, stage: Var, enabled: bool) -> Result<Var> {
        let mut x = self.project.forward(ctx, stage)?;
        if !enabled {
            return Ok(x);
        }
        for (branch, fuse) in self.branches.iter().zip(&self.fuse) {
            let b = ctx.tape.relu(branch.forward(ctx, x)?);
            x = fuse.forward(ctx, ctx.tape.add(x, b)?)?;
        }
        Ok(x)
    }

    /// Extent (in pixels, per axis) of the input window one output pixel sees.
    pub fn receptive_field() -> usize {
        1 + MFFM_RATES.iter().map(|r| 2 * r).sum::<usize>()
    }
}
