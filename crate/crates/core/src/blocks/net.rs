use rand::Rng;

use super::{Bfm, BoundaryDecoder, DpsTransformer, Mffm, NetConfig};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvSpec, Ctx, Init, ParamStore};
use crate::rng;
use crate::tensor::{Tensor, Var};

/// Plain strided CNN producing features at strides 4, 8, 16 and 32 from a
/// `[0, 1]` image.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub stem: Conv2d,
    pub stages: Vec<Conv2d>,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, channels: [usize; 4]) -> Self {
        let stem_width = (channels[0] / 2).max(8);
        let stem = Conv2d::new(
            store,
            rng,
            &format!("{name}.stem"),
            ConvSpec::new(3, stem_width, 3).stride(2),
            Init::KaimingUniform,
        );
        let mut stages = Vec::with_capacity(4);
        let mut prev = stem_width;
        for (i, &c) in channels.iter().enumerate() {
            stages.push(Conv2d::new(
                store,
                rng,
                &format!("{name}.stage{}", i + 1),
                ConvSpec::new(prev, c, 3).stride(2),
                Init::KaimingUniform,
            ));
            prev = c;
        }
        Encoder { stem, stages }
    }

    pub fn forward(&self, ctx: &Ctx<'_>, image: Var) -> Result<Vec<Var>> {
        let t = ctx.tape;
        // [0, 1] pixels to [-1, 1]
        let centered = t.scale(t.add_scalar(image, -0.5), 2.0);
        let mut x = t.relu(self.stem.forward(ctx, centered)?);
        let mut out = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            x = t.relu(stage.forward(ctx, x)?);
            out.push(x);
        }
        Ok(out)
    }
}

/// Top-down pyramid decoder with lateral 1×1 connections and a 1×1 head.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub laterals: Vec<Conv2d>,
    pub smooth: Vec<Conv2d>,
    pub head: Conv2d,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, channels: usize) -> Self {
        let mut laterals = Vec::new();
        let mut smooth = Vec::new();
        for i in 0..3 {
            laterals.push(Conv2d::new(
                store,
                rng,
                &format!("{name}.lateral{}", i + 1),
                ConvSpec::new(channels, channels, 1),
                Init::KaimingUniform,
            ));
            smooth.push(Conv2d::new(
                store,
                rng,
                &format!("{name}.smooth{}", i + 1),
                ConvSpec::new(channels, channels, 3),
                Init::KaimingUniform,
            ));
        }
        let head = Conv2d::new(
            store,
            rng,
            &format!("{name}.head"),
            ConvSpec::new(channels, 1, 1),
            Init::KaimingUniform,
        );
        Decoder {
            laterals,
            smooth,
            head,
        }
    }

    /// `features` are the four fused maps from fine to coarse. Returns the
    /// mask `[1, H, W]` in (0, 1).
    pub fn forward(&self, ctx: &Ctx<'_>, features: &[Var], out_size: (usize, usize)) -> Result<Var> {
        if features.len() != 4 {
            return Err(Error::invalid("decoder", format!("expected 4 inputs, got {}", features.len())));
        }
        let t = ctx.tape;
        let mut p = features[3];
        for i in (0..3).rev() {
            let s = t.shape(features[i]);
            let up = t.upsample_bilinear(p, s[1], s[2])?;
            let lateral = self.laterals[i].forward(ctx, features[i])?;
            p = t.relu(self.smooth[i].forward(ctx, t.add(up, lateral)?)?);
        }
        let logits = self.head.forward(ctx, p)?;
        let logits = t.upsample_bilinear(logits, out_size.0, out_size.1)?;
        Ok(t.sigmoid(logits))
    }
}

#[derive(Clone, Debug)]
pub struct DpsNet {
    pub config: NetConfig,
    pub encoder: Encoder,
    pub mffm: Vec<Mffm>,
    pub dps: Vec<DpsTransformer>,
    pub boundary: BoundaryDecoder,
    pub bfm: Vec<Bfm>,
    pub decoder: Decoder,
}

pub struct NetOutput {
    /// `[1, H, W]`
    pub mask: Var,
    /// `[1, H/4, W/4]`, absent when the boundary decoder is bypassed.
    pub boundary: Option<Var>,
    /// Transformer outputs per stage.
    pub aggregated: Vec<Var>,
    /// Fused features per stage.
    pub fused: Vec<Var>,
}

impl DpsNet {
    /// Builds the network and its freshly initialized parameters.
    pub fn new(config: NetConfig, seed: u64) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut r = rng::substream(seed, 1);
        let c = config.channels;
        let encoder = Encoder::new(&mut store, &mut r, "encoder", config.encoder_channels);
        let mffm = (0..4)
            .map(|i| Mffm::new(&mut store, &mut r, &format!("mffm{}", i + 1), config.encoder_channels[i], c))
            .collect();
        let dps = (0..4)
            .map(|i| DpsTransformer::new(&mut store, &mut r, &format!("dps{}", i + 1), &config))
            .collect();
        let boundary = BoundaryDecoder::new(&mut store, &mut r, "boundary", c);
        let bfm = (0..4)
            .map(|i| Bfm::new(&mut store, &mut r, &format!("bfm{}", i + 1), c))
            .collect();
        let decoder = Decoder::new(&mut store, &mut r, "decoder", c);
        let net = DpsNet {
            config,
            encoder,
            mffm,
            dps,
            boundary,
            bfm,
            decoder,
        };
        Ok((net, store))
    }

    /// Full forward pass on a `[3, H, W]` image with values in `[0, 1]`.
    pub fn forward(&self, ctx: &Ctx<'_>, image: Var) -> Result<NetOutput> {
        let t = ctx.tape;
        let shape = t.shape(image);
        let (h, w) = self.config.input_size;
        if shape != [3, h, w] {
            return Err(Error::shape("dpsnet", &shape, &[3, h, w]));
        }
        let ab = self.config.ablation;
        let stages = self.encoder.forward(ctx, image)?;
        let mut aggregated = Vec::with_capacity(4);
        for (i, &s) in stages.iter().enumerate() {
            let x = self.mffm[i].forward(ctx, s, ab.mffm)?;
            aggregated.push(self.dps[i].apply(ctx, x, ab.dps)?);
        }
        let boundary = if ab.boundary_decoder {
            Some(self.boundary.forward(ctx, &aggregated)?)
        } else {
            None
        };
        let fused = if ab.bfm {
            // without a predicted boundary the fusion pools uniformly
            let e = match boundary {
                Some(e) => e,
                None => t.constant(Tensor::ones(&[1, h / 4, w / 4])),
            };
            aggregated
                .iter()
                .zip(&self.bfm)
                .map(|(&x, bfm)| bfm.forward(ctx, x, e))
                .collect::<Result<Vec<_>>>()?
        } else {
            aggregated.clone()
        };
        let mask = self.decoder.forward(ctx, &fused, (h, w))?;
        Ok(NetOutput {
            mask,
            boundary,
            aggregated,
            fused,
        })
    }

    /// Inference helper: mask and boundary values for one image.
    pub fn predict(&self, params: &ParamStore, image: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        let tape = crate::tensor::Tape::new();
        let ctx = Ctx::eval(&tape, params);
        let x = tape.constant(image.clone());
        let out = self.forward(&ctx, x)?;
        Ok((tape.to_tensor(out.mask), out.boundary.map(|b| tape.to_tensor(b))))
    }
}
