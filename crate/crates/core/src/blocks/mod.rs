//! Network blocks: multi-scale fusion, the deformable point sampling
//! transformer, boundary decoding and fusion, and the full network.

mod attention;
mod boundary;
mod dps;
mod mffm;
mod net;

pub use attention::{AttentivePool, MultiHeadAttention};
pub use boundary::{weighted_pool, Bfm, BoundaryDecoder};
pub use dps::{
    correlation_responses, global_templates, reference_grid, Aggregator, AggregatorOutput,
    CorrelationMap, DpsOutput, DpsTransformer, LocalExtractor, LocalOutput,
};
pub use mffm::{Mffm, MFFM_RATES};
pub use net::{Decoder, DpsNet, Encoder, NetOutput};

use crate::error::{Error, Result};

/// Which blocks are active. A disabled block is replaced by the identity
/// (or, for the fusion module, by its channel projection alone).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ablation {
    pub mffm: bool,
    pub dps: bool,
    pub boundary_decoder: bool,
    pub bfm: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            mffm: true,
            dps: true,
            boundary_decoder: true,
            bfm: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    /// Unified channel count after the fusion modules.
    pub channels: usize,
    /// Patches per side in the local extractor.
    pub patch_grid: usize,
    /// Reference points per side within each patch.
    pub ref_grid: usize,
    /// Offset bound in patch-normalized units.
    pub offset_scale: f64,
    pub heads: usize,
    /// Input `(height, width)`.
    pub input_size: (usize, usize),
    /// Raw channels of the four encoder stages.
    pub encoder_channels: [usize; 4],
    /// Hidden width of the offset encoder.
    pub offset_hidden: usize,
    /// Divide global pooling by the mask mass instead of the pixel count.
    pub normalized_global_pooling: bool,
    pub ablation: Ablation,
}

impl Default for NetConfig {
    /// Full-size configuration: 64 channels, 12×12 patches, 3×3 reference
    /// points. The input is 384×384 so the stride-32 map (12×12) tiles into
    /// 12×12 patches.
    fn default() -> Self {
        NetConfig {
            channels: 64,
            patch_grid: 12,
            ref_grid: 3,
            offset_scale: 1.0,
            heads: 4,
            input_size: (384, 384),
            encoder_channels: [32, 64, 96, 128],
            offset_hidden: 32,
            normalized_global_pooling: false,
            ablation: Ablation::default(),
        }
    }
}

impl NetConfig {
    /// Laptop-scale configuration used by the training harness.
    pub fn desk() -> Self {
        NetConfig {
            channels: 32,
            patch_grid: 3,
            ref_grid: 3,
            input_size: (96, 96),
            offset_hidden: 16,
            ..Self::default()
        }
    }

    /// Spatial size of encoder stage `i` (0-based; strides 4, 8, 16, 32).
    pub fn stage_size(&self, i: usize) -> (usize, usize) {
        let stride = 4usize << i;
        (self.input_size.0 / stride, self.input_size.1 / stride)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Config(format!(
                "input size {h}x{w} must be a positive multiple of 32"
            )));
        }
        let (h4, w4) = self.stage_size(3);
        if self.patch_grid == 0 || h4 % self.patch_grid != 0 || w4 % self.patch_grid != 0 {
            return Err(Error::Config(format!(
                "stride-32 map {h4}x{w4} does not tile into {0}x{0} patches",
                self.patch_grid
            )));
        }
        if self.ref_grid == 0 {
            return Err(Error::Config("reference grid must be at least 1x1".into()));
        }
        if self.heads == 0 || self.channels % self.heads != 0 {
            return Err(Error::Config(format!(
                "channels {} not divisible by {} heads",
                self.channels, self.heads
            )));
        }
        if !(self.offset_scale >= 0.0 && self.offset_scale.is_finite()) {
            return Err(Error::Config(format!("offset scale {} must be finite and >= 0", self.offset_scale)));
        }
        if self.offset_hidden == 0 || self.encoder_channels.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }
}
