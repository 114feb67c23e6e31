use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `lr_end + ½(lr_start − lr_end)(1 + cos(π·step/total))`; steps past `total`
/// (and an empty schedule) give `lr_end`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_start: Scalar, lr_end: Scalar) -> Scalar {
    if total_steps == 0 || step >= total_steps {
        return lr_end;
    }
    let progress = step as Scalar / total_steps as Scalar;
    lr_end + 0.5 * (lr_start - lr_end) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: Scalar,
    pub beta2: Scalar,
    pub eps: Scalar,
    /// Number of updates applied so far.
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &[Tensor], beta1: Scalar, beta2: Scalar, eps: Scalar) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: Scalar) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::invalid(
                "adam",
                format!("{} params, {} grads, {} moment buffers", params.len(), grads.len(), self.m.len()),
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::shape("adam", p.shape(), g.shape()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(cosine_lr(0, 100, 1e-4, 1e-5), 1e-4);
        assert_eq!(cosine_lr(100, 100, 1e-4, 1e-5), 1e-5);
        assert_eq!(cosine_lr(250, 100, 1e-4, 1e-5), 1e-5);
        assert!((cosine_lr(50, 100, 1e-4, 1e-5) - 5.5e-5).abs() < 1e-18);
        assert_eq!(cosine_lr(0, 0, 1e-4, 1e-5), 1e-5);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::new(&[2], vec![1.0, -2.0]).unwrap()];
        let mut adam = Adam::new(&p, 0.9, 0.999, 1e-8);
        adam.m[0] = Tensor::full(&[2], 0.5);
        adam.update(&mut p, &[Tensor::zeros(&[2])], 0.0).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
        assert_eq!(adam.m[0].data(), &[0.45, 0.45]);
        // with zero moments a zero gradient is a no-op at any rate
        let mut fresh = Adam::new(&p, 0.9, 0.999, 1e-8);
        fresh.update(&mut p, &[Tensor::zeros(&[2])], 1.0).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn two_step_scalar_trace() {
        // hand trace, lr 0.1, g1 = 2, g2 = -1
        // m1 = 0.2, v1 = 0.004, m̂ = 2, v̂ = 4, Δ = 0.1·2/(2+1e-8)
        // m2 = 0.08, v2 = 0.004996, m̂ = 0.08/0.19, v̂ = 0.004996/0.001999
        let mut p = vec![Tensor::scalar(1.0)];
        let mut adam = Adam::new(&p, 0.9, 0.999, 1e-8);
        adam.update(&mut p, &[Tensor::scalar(2.0)], 0.1).unwrap();
        let p1 = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((p[0].item() - p1).abs() < 1e-15);
        adam.update(&mut p, &[Tensor::scalar(-1.0)], 0.1).unwrap();
        let p2 = p1 - 0.1 * (0.08 / 0.19) / ((0.004996f64 / 0.001999).sqrt() + 1e-8);
        assert!((p[0].item() - p2).abs() < 1e-14, "{} vs {p2}", p[0].item());
    }

    #[test]
    fn rejects_mismatch() {
        let mut p = vec![Tensor::zeros(&[2])];
        let mut adam = Adam::new(&p, 0.9, 0.999, 1e-8);
        assert!(adam.update(&mut p, &[Tensor::zeros(&[3])], 0.1).is_err());
        assert!(adam.update(&mut p, &[], 0.1).is_err());
    }
}
