use std::cell::{Ref, RefCell};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &BackwardCtx<'_>, &mut GradSink)>;

struct Node {
    value: Tensor,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

/// Read access to recorded values while running backward rules.
pub(crate) struct BackwardCtx<'a> {
    nodes: &'a [Node],
}

impl BackwardCtx<'_> {
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }
}

/// Gradient accumulators, allocated lazily for nodes that require a gradient.
pub(crate) struct GradSink {
    grads: Vec<Option<Vec<Scalar>>>,
    sizes: Vec<Option<usize>>,
}

impl GradSink {
    /// Mutable accumulator for `v`, or `None` when `v` is constant.
    pub fn buffer(&mut self, v: Var) -> Option<&mut [Scalar]> {
        let size = self.sizes[v.0]?;
        Some(
            self.grads[v.0]
                .get_or_insert_with(|| vec![0.0; size])
                .as_mut_slice(),
        )
    }

    pub fn accumulate(&mut self, v: Var, g: &[Scalar]) {
        if let Some(buf) = self.buffer(v) {
            for (b, x) in buf.iter_mut().zip(g) {
                *b += x;
            }
        }
    }
}

/// Reverse-mode tape. Confined to one thread; build a fresh tape per step.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push_node(value, true, None)
    }

    /// Registers an input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push_node(value, false, None)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Detached copy of the value of `v`.
    pub fn to_tensor(&self, v: Var) -> Tensor {
        self.value(v).clone()
    }

    fn push_node(&self, value: Tensor, requires_grad: bool, backward: Option<BackwardFn>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            backward,
        });
        Var(nodes.len() - 1)
    }

    /// Records an operation output. The backward rule is kept only when some
    /// input requires a gradient.
    pub(crate) fn push(
        &self,
        value: Tensor,
        inputs: &[Var],
        backward: impl Fn(&Tensor, &BackwardCtx<'_>, &mut GradSink) + 'static,
    ) -> Var {
        let rg = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.0].requires_grad)
        };
        if rg {
            self.push_node(value, true, Some(Box::new(backward)))
        } else {
            self.push_node(value, false, None)
        }
    }

    /// Runs reverse accumulation from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let loss_shape = nodes[loss.0].value.shape();
        if nodes[loss.0].value.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_shape.to_vec()));
        }
        let mut sink = GradSink {
            grads: vec![None; nodes.len()],
            sizes: nodes
                .iter()
                .map(|n| n.requires_grad.then(|| n.value.numel()))
                .collect(),
        };
        if nodes[loss.0].requires_grad {
            sink.grads[loss.0] = Some(vec![1.0]);
        }
        let ctx = BackwardCtx { nodes: &nodes };
        for i in (0..=loss.0).rev() {
            let Some(backward) = nodes[i].backward.as_ref() else {
                continue;
            };
            let Some(g) = sink.grads[i].take() else {
                continue;
            };
            let g = Tensor::from_parts(nodes[i].value.shape().to_vec(), g);
            backward(&g, &ctx, &mut sink);
            sink.grads[i] = Some(g.into_data());
        }
        let grads = sink
            .grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, n)| g.map(|g| Tensor::from_parts(n.value.shape().to_vec(), g)))
            .collect();
        Ok(Gradients { grads })
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of `v`, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v` with unreachable inputs reported as zeros of `shape`.
    pub fn wrt(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 3], |i| (i[0] + i[1]) as f64));
        let loss = tape.sum_all(x);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::ones(&[2, 3]));
    }

    #[test]
    fn square_gradient_is_twice_input() {
        let tape = Tape::new();
        let xv = Tensor::from_fn(&[4], |i| i[0] as f64 - 1.5);
        let x = tape.leaf(xv.clone());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap(), &xv.map(|v| 2.0 * v));
    }

    #[test]
    fn rejects_non_scalar_loss() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::ones(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn constants_and_unreachable_leaves_get_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::ones(&[3]));
        let x = tape.leaf(Tensor::ones(&[3]));
        let unused = tape.leaf(Tensor::ones(&[2]));
        let y = tape.mul(c, x).unwrap();
        let loss = tape.sum_all(y);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(c).is_none());
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(unused, &[2]), Tensor::zeros(&[2]));
        assert!(!tape.requires_grad(c));
    }
}
