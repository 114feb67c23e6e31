//! MAE, S-measure, E-measure and weighted F-measure for a few predictions of
//! the same ground truth.

use dpsnet::metrics;
use dpsnet::Tensor;

fn main() -> dpsnet::Result<()> {
    let gt = Tensor::from_fn(&[32, 32], |i| {
        let (y, x) = (i[0] as f64 - 15.5, i[1] as f64 - 13.0);
        if y * y / 100.0 + x * x / 64.0 <= 1.0 { 1.0 } else { 0.0 }
    });
    let shifted = Tensor::from_fn(&[32, 32], |i| if i[1] >= 3 { gt.get(&[i[0], i[1] - 3]) } else { 0.0 });
    let blurred = Tensor::from_fn(&[32, 32], |i| 0.2 + 0.6 * gt.get(i));
    let cases = [
        ("perfect", gt.clone()),
        ("shifted 3px", shifted),
        ("low contrast", blurred),
        ("all 0.5", Tensor::full(&[32, 32], 0.5)),
        ("inverted", gt.map(|v| 1.0 - v)),
    ];
    for (name, pred) in &cases {
        println!("{name:>13}: {}", metrics::evaluate(pred, &gt)?);
    }
    Ok(())
}
