//! Deformable point sampling on one feature map: the uniform reference grid,
//! the bounded offsets the encoder predicts, and the sampled local templates.

use dpsnet::blocks::{reference_grid, LocalExtractor, NetConfig};
use dpsnet::nn::{Ctx, ParamStore};
use dpsnet::{rng, Tape};

fn main() -> dpsnet::Result<()> {
    let cfg = NetConfig {
        channels: 8,
        patch_grid: 2,
        ref_grid: 3,
        offset_scale: 0.5,
        heads: 2,
        offset_hidden: 8,
        ..NetConfig::desk()
    };
    let mut store = ParamStore::new();
    let local = LocalExtractor::new(&mut store, &mut rng::seeded(0), "local", &cfg);
    // the output layer starts at zero; perturb it so offsets are visible
    let w = store.get_mut(local.conv2.weight);
    *w = rng::uniform(&w.shape().to_vec(), -0.3, 0.3, &mut rng::seeded(1));

    let x = rng::uniform(&[8, 12, 12], -1.0, 1.0, &mut rng::seeded(2));
    let tape = Tape::new();
    let out = local.forward(&Ctx::eval(&tape, &store), tape.constant(x))?;

    let grid = reference_grid(cfg.patch_grid, cfg.ref_grid, 12, 12);
    let points = tape.to_tensor(out.points);
    let offsets = tape.to_tensor(out.offsets);
    println!("offsets {:?} (patch, dy/dx, a, b), bounded by ±{}", offsets.shape(), cfg.offset_scale);
    println!("max |offset| = {:.4}", offsets.data().iter().fold(0.0f64, |m, v| m.max(v.abs())));
    println!("patch 0 sample points (reference -> deformed, pixel coordinates):");
    for k in 0..cfg.ref_grid * cfg.ref_grid {
        println!(
            "  ({:5.2}, {:5.2}) -> ({:5.2}, {:5.2})",
            grid.get(&[k, 0]),
            grid.get(&[k, 1]),
            points.get(&[k, 0]),
            points.get(&[k, 1])
        );
    }
    println!("local templates {:?} (C, patches, points)", tape.shape(out.templates));
    Ok(())
}
