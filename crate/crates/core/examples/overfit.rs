//! Overfits the desk-scale network on 16 generated scenes and reports
//! training-set metrics. The full run (375 epochs, 1500 steps) takes several
//! minutes on one core.
//!
//! cargo run --release --example overfit -- [epochs] [lr_start] [difficulty]

use std::time::Instant;

use dpsnet::data::generate_dataset;
use dpsnet::metrics::MetricsReport;
use dpsnet::train::{evaluate, TrainConfig, Trainer};

fn main() -> dpsnet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: f64| args.get(i).and_then(|a| a.parse().ok()).unwrap_or(default);

    let config = TrainConfig {
        epochs: arg(0, 375.0) as usize,
        lr_start: arg(1, 2e-4),
        difficulty: arg(2, 0.6),
        ..TrainConfig::default()
    };
    let data = generate_dataset(config.data_seed, 16, config.net.input_size, config.difficulty)?;
    let mut trainer = Trainer::new(config.clone(), data.len())?;

    let start = Instant::now();
    for epoch in 0..config.epochs {
        let summary = trainer.epoch(epoch, &data, |_| Ok(()))?;
        if epoch < 10 || epoch % 25 == 24 || epoch + 1 == config.epochs {
            println!("epoch {epoch:3}  loss {:.5}  ({:.0}s)", summary.mean.total, start.elapsed().as_secs_f64());
        }
    }
    let reports = evaluate(&trainer.net, &trainer.params, &data)?;
    println!("{} steps", trainer.adam.step);
    println!("{}", MetricsReport::mean(&reports).expect("non-empty"));
    Ok(())
}
