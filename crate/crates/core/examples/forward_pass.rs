//! Runs one forward/backward pass of the desk-scale network on a random image.

use std::time::Instant;

use dpsnet::blocks::{DpsNet, NetConfig};
use dpsnet::nn::Ctx;
use dpsnet::{rng, Tape};

fn main() -> dpsnet::Result<()> {
    let config = NetConfig::desk();
    let (net, params) = DpsNet::new(config.clone(), 0)?;
    println!("parameters: {} tensors, {} scalars", params.len(), params.num_scalars());
    let (h, w) = config.input_size;
    let image = rng::uniform(&[3, h, w], 0.0, 1.0, &mut rng::seeded(1));

    let start = Instant::now();
    let tape = Tape::new();
    let ctx = Ctx::train(&tape, &params);
    let out = net.forward(&ctx, tape.constant(image))?;
    let forward = start.elapsed();
    let loss = tape.mean_all(out.mask);
    let grads = ctx.param_grads(&tape.backward(loss)?);
    println!(
        "forward {:.1} ms, forward+backward {:.1} ms, {} tape nodes, |grad| = {:.3e}",
        forward.as_secs_f64() * 1e3,
        start.elapsed().as_secs_f64() * 1e3,
        tape.len(),
        grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt()
    );
    Ok(())
}
