//! Builds a small expression on the tape, runs reverse mode and compares the
//! gradients with hand-derived ones.
//!
//! f(A, x) = sum(tanh(A·x)²), so ∂f/∂x = Aᵀ (2·tanh(u)·(1 − tanh(u)²)) with u = A·x.

use dpsnet::{Tape, Tensor};

fn main() -> dpsnet::Result<()> {
    let a = Tensor::new(&[2, 3], vec![0.5, -1.0, 0.25, 2.0, 0.1, -0.3])?;
    let x = Tensor::new(&[3, 1], vec![0.2, 0.4, -0.6])?;

    let tape = Tape::new();
    let av = tape.leaf(a.clone());
    let xv = tape.leaf(x.clone());
    let u = tape.matmul(av, xv)?;
    let th = tape.tanh(u);
    let f = tape.sum_all(tape.mul(th, th)?);
    let grads = tape.backward(f)?;
    let gx = grads.wrt(xv, &[3, 1]);
    let ga = grads.wrt(av, &[2, 3]);

    let uvals = tape.to_tensor(u);
    let dz: Vec<f64> = uvals.data().iter().map(|&u| 2.0 * u.tanh() * (1.0 - u.tanh().powi(2))).collect();
    println!("f = {:.6}", tape.value(f).item());
    for j in 0..3 {
        let by_hand: f64 = (0..2).map(|i| a.get(&[i, j]) * dz[i]).sum();
        println!("df/dx[{j}]  tape {:+.12}  hand {:+.12}", gx.get(&[j, 0]), by_hand);
    }
    for i in 0..2 {
        for j in 0..3 {
            println!("df/dA[{i},{j}] tape {:+.12}  hand {:+.12}", ga.get(&[i, j]), dz[i] * x.get(&[j, 0]));
        }
    }
    Ok(())
}
