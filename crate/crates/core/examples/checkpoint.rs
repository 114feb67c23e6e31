//! Trains for two epochs, saves a checkpoint, reloads it and checks that the
//! predictions and the file bytes survive the round trip.

use dpsnet::data::generate_dataset;
use dpsnet::train::{train, Checkpoint, TrainConfig, CHECKPOINT_FILE};

fn main() -> dpsnet::Result<()> {
    let config = TrainConfig { epochs: 2, ..TrainConfig::default() };
    let data = generate_dataset(3, 8, config.net.input_size, config.difficulty)?;
    let dir = std::env::temp_dir().join("dpsnet-checkpoint-example");
    let outcome = train(&config, &data, Some(&dir))?;

    let path = dir.join(CHECKPOINT_FILE);
    let ck = Checkpoint::load(&path)?;
    println!("{}: step {}, {} tensors, {} bytes", path.display(), ck.step, ck.params.len(), std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0));
    let (net, params) = ck.network()?;
    let before = outcome.trainer.net.predict(&outcome.trainer.params, &data[0].image)?.0;
    let after = net.predict(&params, &data[0].image)?.0;
    println!("prediction identical after reload: {}", before == after);
    println!("bytes identical after re-save: {}", ck.to_bytes() == std::fs::read(&path).unwrap_or_default());
    println!("embedded config:\n{}", ck.config.to_text());
    Ok(())
}
