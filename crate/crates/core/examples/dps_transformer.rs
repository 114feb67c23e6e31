//! One deformable point sampling transformer on a random feature map: template
//! shapes, aggregation scores and the shape-preserving output.

use dpsnet::blocks::{DpsTransformer, NetConfig};
use dpsnet::nn::{Ctx, ParamStore};
use dpsnet::{rng, Tape};

fn main() -> dpsnet::Result<()> {
    let cfg = NetConfig::desk();
    let c = cfg.channels;
    let mut store = ParamStore::new();
    let dps = DpsTransformer::new(&mut store, &mut rng::seeded(0), "dps", &cfg);
    println!("{} parameter tensors, {} scalars", store.len(), store.num_scalars());

    let (h, w) = cfg.stage_size(0);
    let x = rng::uniform(&[c, h, w], 0.0, 1.0, &mut rng::seeded(1));
    let tape = Tape::new();
    let ctx = Ctx::eval(&tape, &store);
    let out = dps.forward(&ctx, tape.constant(x.clone()))?;

    println!("input            {:?}", x.shape());
    println!("global templates {:?}", tape.shape(out.global));
    println!("local templates  {:?}", tape.shape(out.local.templates));
    println!("aggregated       {:?}", tape.shape(out.aggregator.aggregated));
    println!("responses        {:?}", tape.shape(out.responses));
    println!("output           {:?}", tape.shape(out.output));

    let inter = tape.to_tensor(out.aggregator.inter_scores);
    let row: Vec<String> = inter.data()[..inter.shape()[1]].iter().map(|v| format!("{v:.3}")).collect();
    println!("point scores of channel 0: [{}]", row.join(", "));
    let y = tape.to_tensor(out.output);
    println!("mean |output - input| = {:.4}", y.data().iter().zip(x.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.numel() as f64);
    Ok(())
}
