//! Generates camouflage scenes at several difficulties and writes one set to disk.
//!
//! cargo run --example synth_dataset -- [out_dir]

use dpsnet::data::{generate_dataset, generate_sample, load_dataset, write_dataset};

fn main() -> dpsnet::Result<()> {
    for difficulty in [0.0, 0.5, 1.0] {
        let s = generate_sample(7, (96, 96), difficulty)?;
        let hw = s.mask.numel();
        let mean = |c: usize, fg: bool| {
            let px: Vec<f64> = (0..hw)
                .filter(|&p| (s.mask.data()[p] > 0.5) == fg)
                .map(|p| s.image.data()[c * hw + p])
                .collect();
            px.iter().sum::<f64>() / px.len() as f64
        };
        let dist = (0..3).map(|c| (mean(c, true) - mean(c, false)).powi(2)).sum::<f64>().sqrt();
        println!(
            "difficulty {difficulty:.1}: foreground {:.1}%, {} contour pixels, fg/bg color distance {dist:.3}",
            100.0 * s.foreground_fraction(),
            s.boundary.sum()
        );
    }

    let out = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("dpsnet-synth"));
    let samples = generate_dataset(1, 8, (96, 96), 0.6)?;
    write_dataset(&out, &samples)?;
    let loaded = load_dataset(&out)?;
    println!("wrote {} scenes to {}; reload identical: {}", loaded.len(), out.display(), loaded.iter().zip(&samples).all(|(a, b)| a.image == b.image && a.mask == b.mask));
    Ok(())
}
