//! The standard gradient suite: every differentiable tape operation and every
//! network block, on toy shapes.

use rand::Rng;
use rand_xoshiro::SplitMix64;

use super::{random_input, GradCheck, GradCheckReport};
use crate::blocks::{
    correlation_responses, global_templates, Aggregator, Bfm, BoundaryDecoder, CorrelationMap, Decoder,
    DpsTransformer, Encoder, LocalExtractor, Mffm, NetConfig,
};
use crate::error::Result;
use crate::nn::{Conv2d, Ctx, ParamStore};
use crate::rng;
use crate::tensor::{ReduceKind, Tape, Tensor, Var};

/// Entries sampled per input tensor (and per parameter store) for block checks.
const BLOCK_ENTRIES: usize = 40;

/// Toy block configuration: C = 4, 12×12 maps, 3×3 patches of 2×2 points.
pub fn toy_config() -> NetConfig {
    NetConfig {
        channels: 4,
        patch_grid: 3,
        ref_grid: 2,
        offset_scale: 1.0,
        heads: 2,
        input_size: (64, 64),
        encoder_channels: [4, 6, 8, 8],
        offset_hidden: 4,
        ..NetConfig::desk()
    }
}

fn positive(shape: &[usize], rng: &mut SplitMix64) -> Tensor {
    rng::uniform(shape, 0.5, 1.5, rng)
}

/// Gives a zero-initialized conv layer random weights, so paths behind it
/// carry gradient.
fn randomize(store: &mut ParamStore, conv: &Conv2d, rng: &mut SplitMix64) {
    let w = store.get_mut(conv.weight);
    let shape = w.shape().to_vec();
    *w = rng::uniform(&shape, -0.5, 0.5, rng);
}

type OpFn = fn(&Tape, &[Var]) -> Result<Var>;

fn op_cases(rng: &mut SplitMix64) -> Vec<(&'static str, Vec<Tensor>, OpFn)> {
    let r = |s: &[usize], rng: &mut SplitMix64| random_input(s, rng);
    vec![
        ("add_broadcast", vec![r(&[3, 4], rng), r(&[1, 4], rng)], |t, v| t.add(v[0], v[1])),
        ("sub_broadcast", vec![r(&[2, 3, 4], rng), r(&[3, 1], rng)], |t, v| t.sub(v[0], v[1])),
        ("mul_broadcast", vec![r(&[2, 3, 4], rng), r(&[4], rng)], |t, v| t.mul(v[0], v[1])),
        ("div", vec![r(&[3, 4], rng), positive(&[3, 4], rng)], |t, v| t.div(v[0], v[1])),
        ("matmul", vec![r(&[3, 5], rng), r(&[5, 4], rng)], |t, v| t.matmul(v[0], v[1])),
        ("conv2d", vec![r(&[3, 7, 7], rng), r(&[4, 3, 3, 3], rng), r(&[4], rng)], |t, v| {
            t.conv2d(v[0], v[1], Some(v[2]), 1, 1, 1)
        }),
        ("conv2d_strided_dilated", vec![r(&[2, 3, 9, 9], rng), r(&[2, 3, 3, 3], rng)], |t, v| {
            t.conv2d(v[0], v[1], None, 2, 2, 2)
        }),
        ("softmax_axis0", vec![r(&[4, 5], rng)], |t, v| t.softmax(v[0], 0)),
        ("softmax_axis1", vec![r(&[4, 5], rng)], |t, v| t.softmax(v[0], 1)),
        ("sigmoid", vec![r(&[3, 4], rng)], |t, v| Ok(t.sigmoid(v[0]))),
        ("tanh", vec![r(&[3, 4], rng)], |t, v| Ok(t.tanh(v[0]))),
        ("gelu", vec![r(&[3, 4], rng)], |t, v| Ok(t.gelu(v[0]))),
        ("relu", vec![r(&[3, 4], rng)], |t, v| Ok(t.relu(v[0]))),
        ("ln", vec![positive(&[3, 4], rng)], |t, v| Ok(t.ln(v[0]))),
        ("clamp", vec![r(&[3, 4], rng)], |t, v| Ok(t.clamp(v[0], -2.0, 2.0))),
        ("scale_and_shift", vec![r(&[3, 4], rng)], |t, v| {
            Ok(t.rsub_scalar(0.5, t.add_scalar(t.scale(v[0], 1.7), -0.3)))
        }),
        ("reduce_sum", vec![r(&[3, 4, 5], rng)], |t, v| t.reduce(ReduceKind::Sum, v[0], &[0, 2], false)),
        ("reduce_mean", vec![r(&[3, 4, 5], rng)], |t, v| t.reduce(ReduceKind::Mean, v[0], &[1], true)),
        ("reduce_max", vec![r(&[3, 4, 5], rng)], |t, v| t.reduce(ReduceKind::Max, v[0], &[2], false)),
        ("reshape_permute", vec![r(&[2, 3, 4], rng)], |t, v| {
            t.permute(t.reshape(v[0], &[6, 2, 2])?, &[2, 0, 1])
        }),
        ("transpose", vec![r(&[3, 5], rng)], |t, v| t.transpose(v[0])),
        ("concat", vec![r(&[2, 3], rng), r(&[2, 4], rng)], |t, v| t.concat(&[v[0], v[1]], 1)),
        ("narrow", vec![r(&[4, 6], rng)], |t, v| t.narrow(v[0], 1, 2, 3)),
        ("split", vec![r(&[5, 3], rng)], |t, v| {
            let parts = t.split(v[0], 0, &[2, 3])?;
            t.mul(t.sum_all(parts[0]), t.sum_all(t.tanh(parts[1])))
        }),
        ("upsample_bilinear", vec![r(&[2, 3, 5], rng)], |t, v| t.upsample_bilinear(v[0], 7, 8)),
        ("upsample_downscale", vec![r(&[2, 8, 8], rng)], |t, v| t.upsample_bilinear(v[0], 3, 5)),
        ("adaptive_avg_pool2d", vec![r(&[2, 7, 9], rng), ], |t, v| t.adaptive_avg_pool2d(v[0], 3, 4)),
        (
            "bilinear_sample",
            // points kept inside the map so clamping never engages
            vec![r(&[3, 6, 7], rng), rng::uniform(&[5, 2], 0.3, 4.7, rng)],
            |t, v| t.bilinear_sample(v[0], v[1]),
        ),
        ("mean_all", vec![r(&[3, 4], rng)], |t, v| Ok(t.mean_all(t.mul(v[0], v[0])?))),
    ]
}

/// Runs every case for one seed.
pub fn run(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = rng::substream(seed, 0x6763);
    let check = GradCheck {
        seed,
        ..GradCheck::default()
    };
    let sampled = GradCheck {
        max_entries: Some(BLOCK_ENTRIES),
        ..check.clone()
    };
    let mut reports = Vec::new();
    for (name, inputs, f) in op_cases(&mut rng) {
        reports.push(check.run(name, &inputs, f)?);
    }
    block_cases(seed, &sampled, &mut rng, &mut reports)?;
    Ok(reports)
}

fn block_cases(seed: u64, check: &GradCheck, rng: &mut SplitMix64, out: &mut Vec<GradCheckReport>) -> Result<()> {
    let cfg = toy_config();
    let c = cfg.channels;
    let (h, w) = (12, 12);
    let x = random_input(&[c, h, w], rng);

    for normalized in [false, true] {
        let name = if normalized { "global_extractor_normalized" } else { "global_extractor" };
        out.push(check.run(name, &[x.clone()], move |t, v| global_templates(t, v[0], normalized))?);
    }
    out.push(check.run("correlation_responses", &[random_input(&[c, c], rng), x.clone()], |t, v| {
        correlation_responses(t, v[0], v[1])
    })?);

    // parameterized blocks, each with its own store: input gradient plus
    // sampled parameter gradients
    let mut init = rng::substream(seed, 0x626c);
    let mut local_store = ParamStore::new();
    let local = LocalExtractor::new(&mut local_store, &mut init, "local", &cfg);
    randomize(&mut local_store, &local.conv2, rng);
    let mut aggregator_store = ParamStore::new();
    let aggregator = Aggregator::new(&mut aggregator_store, &mut init, "aggregator", &cfg);
    let mut correlation_store = ParamStore::new();
    let correlation = CorrelationMap::new(&mut correlation_store, &mut init, "correlation", c);
    let mut dps_store = ParamStore::new();
    let dps_cfg = NetConfig {
        offset_scale: 0.5,
        ..cfg.clone()
    };
    let dps = DpsTransformer::new(&mut dps_store, &mut init, "dps", &dps_cfg);
    randomize(&mut dps_store, &dps.local.conv2, rng);
    let mut mffm_store = ParamStore::new();
    let mffm = Mffm::new(&mut mffm_store, &mut init, "mffm", 6, c);
    let mut boundary_store = ParamStore::new();
    let boundary = BoundaryDecoder::new(&mut boundary_store, &mut init, "boundary", c);
    let mut bfm_store = ParamStore::new();
    let bfm = Bfm::new(&mut bfm_store, &mut init, "bfm", c);
    let mut encoder_store = ParamStore::new();
    let encoder = Encoder::new(&mut encoder_store, &mut init, "encoder", [4, 4, 6, 6]);
    let mut decoder_store = ParamStore::new();
    let decoder = Decoder::new(&mut decoder_store, &mut init, "decoder", c);

    let pyramid: Vec<Tensor> = [16, 8, 4, 2].iter().map(|&s| random_input(&[c, s, s], rng)).collect();
    let boundary_map = rng::uniform(&[1, 16, 16], 0.05, 0.95, rng);
    let stage = random_input(&[6, 12, 12], rng);
    let image = rng::uniform(&[3, 32, 32], 0.0, 1.0, rng);
    let global_in = random_input(&[c, c], rng);
    let local_in = random_input(&[c, 9, 4], rng);

    macro_rules! block {
        ($name:expr, $store:expr, $inputs:expr, |$ctx:ident, $v:ident| $body:expr) => {{
            let store: &ParamStore = &$store;
            let inputs: Vec<Tensor> = $inputs;
            out.push(check.run(concat!($name, "_input"), &inputs, |tape, $v| {
                let $ctx = Ctx::eval(tape, store);
                $body
            })?);
            out.push(check.run_params(concat!($name, "_params"), store, |$ctx| {
                let $v: Vec<Var> = inputs.iter().map(|t| $ctx.tape.constant(t.clone())).collect();
                let $v = &$v[..];
                $body
            })?);
        }};
    }

    block!("local_extractor", local_store, vec![x.clone()], |ctx, v| local.forward(&ctx, v[0]).map(|o| o.templates));
    block!("local_offsets", local_store, vec![x.clone()], |ctx, v| local.forward(&ctx, v[0]).map(|o| o.offsets));
    block!("aggregator", aggregator_store, vec![global_in.clone(), local_in.clone()], |ctx, v| aggregator
        .forward(&ctx, v[0], v[1])
        .map(|o| o.aggregated));
    block!("correlation_map", correlation_store, vec![global_in.clone(), x.clone()], |ctx, v| correlation
        .forward(&ctx, v[0], v[1])
        .map(|o| o.0));
    block!("dps_transformer", dps_store, vec![x.clone()], |ctx, v| dps.forward(&ctx, v[0]).map(|o| o.output));
    block!("mffm", mffm_store, vec![stage.clone()], |ctx, v| mffm.forward(&ctx, v[0], true));
    block!("boundary_decoder", boundary_store, pyramid.clone(), |ctx, v| boundary.forward(&ctx, v));
    block!("bfm", bfm_store, vec![pyramid[1].clone(), boundary_map.clone()], |ctx, v| bfm.forward(&ctx, v[0], v[1]));
    block!("encoder", encoder_store, vec![image.clone()], |ctx, v| {
        let stages = encoder.forward(&ctx, v[0])?;
        let t = ctx.tape;
        let sums: Vec<Var> = stages.iter().map(|&s| t.reshape(t.sum_all(t.tanh(s)), &[1])).collect::<Result<_>>()?;
        t.concat(&sums, 0)
    });
    block!("decoder", decoder_store, pyramid.clone(), |ctx, v| decoder.forward(&ctx, v, (32, 32)));
    Ok(())
}

/// Full-network parameter check on the 64×64 toy configuration.
pub fn full_network(seed: u64, entries: usize, tolerance: f64) -> Result<GradCheckReport> {
    use crate::blocks::DpsNet;
    // the 2×2 stride-32 map of a 64×64 input tiles into 2×2 patches
    let cfg = NetConfig {
        patch_grid: 2,
        ..toy_config()
    };
    let (net, mut store) = DpsNet::new(cfg.clone(), seed)?;
    let mut rng = rng::substream(seed, 0x6e65);
    for dps in &net.dps {
        randomize(&mut store, &dps.local.conv2, &mut rng);
    }
    let (h, w) = cfg.input_size;
    let image = rng::uniform(&[3, h, w], 0.0, 1.0, &mut rng);
    let gt = Tensor::from_fn(&[1, h, w], |_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 });
    let check = GradCheck {
        max_entries: Some(entries),
        tolerance,
        seed,
        ..GradCheck::default()
    };
    check.run_params("full_network", &store, |ctx| {
        let out = net.forward(ctx, ctx.tape.constant(image.clone()))?;
        let t = ctx.tape;
        let mask_term = t.mean_all(t.mul(out.mask, t.constant(gt.clone()))?);
        let boundary = out.boundary.expect("boundary decoder enabled");
        t.add(mask_term, t.mean_all(t.mul(boundary, boundary)?))
    })
}
