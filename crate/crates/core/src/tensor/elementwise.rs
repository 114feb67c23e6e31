use super::tape::{Tape, Var};
use super::{numel, strides, Scalar, Tensor};
use crate::error::{Error, Result};

/// Pointwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    /// Exact (erf-based) GELU.
    Gelu,
    Relu,
}

const FRAC_1_SQRT_2PI: Scalar = 0.398_942_280_401_432_7;

impl Activation {
    pub fn apply(self, x: Scalar) -> Scalar {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Gelu => 0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2)),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: Scalar, y: Scalar) -> Scalar {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
                cdf + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: Scalar) -> Scalar {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

/// Output shape and per-element input offsets for numpy-style broadcasting.
struct Broadcast {
    shape: Vec<usize>,
    // None when the input already has the output shape.
    a_index: Option<Vec<usize>>,
    b_index: Option<Vec<usize>>,
}

fn broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a == b {
        return Ok(Broadcast {
            shape: a.to_vec(),
            a_index: None,
            b_index: None,
        });
    }
    let rank = a.len().max(b.len());
    let pad = |s: &[usize]| {
        let mut p = vec![1; rank - s.len()];
        p.extend_from_slice(s);
        p
    };
    let (pa, pb) = (pad(a), pad(b));
    let mut shape = Vec::with_capacity(rank);
    for (&x, &y) in pa.iter().zip(&pb) {
        if x == y || y == 1 {
            shape.push(x);
        } else if x == 1 {
            shape.push(y);
        } else {
            return Err(Error::shape(op, a, b));
        }
    }
    let index_map = |p: &[usize]| -> Option<Vec<usize>> {
        if p == shape.as_slice() {
            return None;
        }
        let st = strides(p);
        let n = numel(&shape);
        let mut out = Vec::with_capacity(n);
        let mut idx = vec![0usize; rank];
        for _ in 0..n {
            let off: usize = (0..rank)
                .map(|k| if p[k] == 1 { 0 } else { idx[k] * st[k] })
                .sum();
            out.push(off);
            for k in (0..rank).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Some(out)
    };
    Ok(Broadcast {
        a_index: index_map(&pa),
        b_index: index_map(&pb),
        shape,
    })
}

#[inline]
fn at(index: &Option<Vec<usize>>, k: usize) -> usize {
    match index {
        Some(map) => map[k],
        None => k,
    }
}

impl Tape {
    fn binary(&self, kind: Binary, name: &'static str, a: Var, b: Var) -> Result<Var> {
        let (value, plan) = {
            let (av, bv) = (self.value(a), self.value(b));
            let plan = broadcast(name, av.shape(), bv.shape())?;
            let (ad, bd) = (av.data(), bv.data());
            let n = numel(&plan.shape);
            let mut out = Vec::with_capacity(n);
            for k in 0..n {
                let x = ad[at(&plan.a_index, k)];
                let y = bd[at(&plan.b_index, k)];
                out.push(match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                    Binary::Div => x / y,
                });
            }
            (Tensor::from_parts(plan.shape.clone(), out), plan)
        };
        Ok(self.push(value, &[a, b], move |g, ctx, sink| {
            let gd = g.data();
            let ad = ctx.value(a).data();
            let bd = ctx.value(b).data();
            if let Some(ga) = sink.buffer(a) {
                for (k, &gk) in gd.iter().enumerate() {
                    let d = match kind {
                        Binary::Add | Binary::Sub => gk,
                        Binary::Mul => gk * bd[at(&plan.b_index, k)],
                        Binary::Div => gk / bd[at(&plan.b_index, k)],
                    };
                    ga[at(&plan.a_index, k)] += d;
                }
            }
            if let Some(gb) = sink.buffer(b) {
                for (k, &gk) in gd.iter().enumerate() {
                    let bi = at(&plan.b_index, k);
                    let d = match kind {
                        Binary::Add => gk,
                        Binary::Sub => -gk,
                        Binary::Mul => gk * ad[at(&plan.a_index, k)],
                        Binary::Div => {
                            let y = bd[bi];
                            -gk * ad[at(&plan.a_index, k)] / (y * y)
                        }
                    };
                    gb[bi] += d;
                }
            }
        }))
    }

    /// Elementwise sum with broadcasting of singleton axes.
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, "add", a, b)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, "sub", a, b)
    }

    /// Elementwise product with broadcasting of singleton axes.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, "mul", a, b)
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, "div", a, b)
    }

    /// Applies `f` pointwise; `df(x, y)` is the derivative given input and output.
    fn unary(
        &self,
        x: Var,
        f: impl Fn(Scalar) -> Scalar,
        df: impl Fn(Scalar, Scalar) -> Scalar + 'static,
    ) -> Var {
        let value = self.value(x).map(f);
        let out_data = value.data().to_vec();
        self.push(value, &[x], move |g, ctx, sink| {
            let xd = ctx.value(x).data();
            if let Some(gx) = sink.buffer(x) {
                for (k, gk) in g.data().iter().enumerate() {
                    gx[k] += gk * df(xd[k], out_data[k]);
                }
            }
        })
    }

    pub fn activation(&self, kind: Activation, x: Var) -> Var {
        self.unary(x, move |v| kind.apply(v), move |v, y| kind.derivative(v, y))
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.activation(Activation::Sigmoid, x)
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.activation(Activation::Tanh, x)
    }

    pub fn gelu(&self, x: Var) -> Var {
        self.activation(Activation::Gelu, x)
    }

    pub fn relu(&self, x: Var) -> Var {
        self.activation(Activation::Relu, x)
    }

    /// Natural logarithm.
    pub fn ln(&self, x: Var) -> Var {
        self.unary(x, Scalar::ln, |v, _| 1.0 / v)
    }

    pub fn scale(&self, x: Var, factor: Scalar) -> Var {
        self.unary(x, move |v| v * factor, move |_, _| factor)
    }

    pub fn add_scalar(&self, x: Var, c: Scalar) -> Var {
        self.unary(x, move |v| v + c, |_, _| 1.0)
    }

    /// `c - x`.
    pub fn rsub_scalar(&self, c: Scalar, x: Var) -> Var {
        self.unary(x, move |v| c - v, |_, _| -1.0)
    }

    /// Clamps to `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, x: Var, lo: Scalar, hi: Scalar) -> Var {
        self.unary(
            x,
            move |v| v.clamp(lo, hi),
            move |v, _| if v >= lo && v <= hi { 1.0 } else { 0.0 },
        )
    }
}
