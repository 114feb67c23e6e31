use super::tape::{Tape, Var};
use super::{numel, strides, Scalar, Tensor};
use crate::error::{Error, Result};

/// `c (+)= op(a) · op(b)` for row-major buffers, where `op` optionally
/// transposes. `a` is `m×k` after `op`, `b` is `k×n`, `c` is `m×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[Scalar],
    a_trans: bool,
    b: &[Scalar],
    b_trans: bool,
    c: &mut [Scalar],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    // (row stride, col stride) of the logical operands
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index the kernel touches given
    // these strides, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

impl Tape {
    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (value, m, k, n) = {
            let (av, bv) = (self.value(a), self.value(b));
            let (sa, sb) = (av.shape(), bv.shape());
            if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                return Err(Error::shape("matmul", sa, sb));
            }
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, false);
            (Tensor::from_parts(vec![m, n], out), m, k, n)
        };
        Ok(self.push(value, &[a, b], move |g, ctx, sink| {
            if let Some(ga) = sink.buffer(a) {
                // dA = G · Bᵀ
                gemm(m, n, k, g.data(), false, ctx.value(b).data(), true, ga, true);
            }
            if let Some(gb) = sink.buffer(b) {
                // dB = Aᵀ · G
                gemm(k, m, n, ctx.value(a).data(), true, g.data(), false, gb, true);
            }
        }))
    }

    /// Softmax along `axis`, computed with max-subtraction.
    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let (value, outer, len, inner) = {
            let xv = self.value(x);
            let shape = xv.shape();
            if axis >= shape.len() {
                return Err(Error::invalid(
                    "softmax",
                    format!("axis {axis} out of range for shape {shape:?}"),
                ));
            }
            let outer: usize = shape[..axis].iter().product();
            let len = shape[axis];
            let inner: usize = shape[axis + 1..].iter().product();
            let xd = xv.data();
            let mut out = vec![0.0; xd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut mx = Scalar::NEG_INFINITY;
                    for l in 0..len {
                        mx = mx.max(xd[base + l * inner]);
                    }
                    let mut total = 0.0;
                    for l in 0..len {
                        let e = (xd[base + l * inner] - mx).exp();
                        out[base + l * inner] = e;
                        total += e;
                    }
                    for l in 0..len {
                        out[base + l * inner] /= total;
                    }
                }
            }
            (Tensor::from_parts(shape.to_vec(), out), outer, len, inner)
        };
        let y = value.data().to_vec();
        Ok(self.push(value, &[x], move |g, _ctx, sink| {
            let Some(gx) = sink.buffer(x) else { return };
            let gd = g.data();
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let dot: Scalar = (0..len)
                        .map(|l| gd[base + l * inner] * y[base + l * inner])
                        .sum();
                    for l in 0..len {
                        let p = base + l * inner;
                        gx[p] += y[p] * (gd[p] - dot);
                    }
                }
            }
        }))
    }

    /// Reduces over `axes`; reduced axes are kept with extent 1 when
    /// `keep_dims`, removed otherwise (a full reduction yields shape `[1]`).
    pub fn reduce(&self, kind: ReduceKind, x: Var, axes: &[usize], keep_dims: bool) -> Result<Var> {
        let (value, out_index, count) = {
            let xv = self.value(x);
            let shape = xv.shape();
            if let Some(&bad) = axes.iter().find(|&&a| a >= shape.len()) {
                return Err(Error::invalid(
                    "reduce",
                    format!("axis {bad} out of range for shape {shape:?}"),
                ));
            }
            let kept: Vec<usize> = shape
                .iter()
                .enumerate()
                .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
                .collect();
            let kst = strides(&kept);
            let n_out = numel(&kept);
            let count = xv.numel() / n_out;
            let mut out_index = Vec::with_capacity(xv.numel());
            let mut idx = vec![0usize; shape.len()];
            for _ in 0..xv.numel() {
                let off: usize = (0..shape.len())
                    .map(|k| if kept[k] == 1 { 0 } else { idx[k] * kst[k] })
                    .sum();
                out_index.push(off);
                for k in (0..shape.len()).rev() {
                    idx[k] += 1;
                    if idx[k] < shape[k] {
                        break;
                    }
                    idx[k] = 0;
                }
            }
            let xd = xv.data();
            let mut out = match kind {
                ReduceKind::Max => vec![Scalar::NEG_INFINITY; n_out],
                _ => vec![0.0; n_out],
            };
            for (p, &o) in out_index.iter().enumerate() {
                match kind {
                    ReduceKind::Sum | ReduceKind::Mean => out[o] += xd[p],
                    ReduceKind::Max => out[o] = out[o].max(xd[p]),
                }
            }
            if kind == ReduceKind::Mean {
                for v in &mut out {
                    *v /= count as Scalar;
                }
            }
            let out_shape = if keep_dims {
                kept
            } else {
                let s: Vec<usize> = shape
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !axes.contains(i))
                    .map(|(_, &d)| d)
                    .collect();
                if s.is_empty() {
                    vec![1]
                } else {
                    s
                }
            };
            (Tensor::from_parts(out_shape, out), out_index, count)
        };
        let out_vals = value.data().to_vec();
        Ok(self.push(value, &[x], move |g, ctx, sink| {
            let gd = g.data();
            let xd = ctx.value(x).data();
            let Some(gx) = sink.buffer(x) else { return };
            match kind {
                ReduceKind::Sum => {
                    for (p, &o) in out_index.iter().enumerate() {
                        gx[p] += gd[o];
                    }
                }
                ReduceKind::Mean => {
                    let inv = 1.0 / count as Scalar;
                    for (p, &o) in out_index.iter().enumerate() {
                        gx[p] += gd[o] * inv;
                    }
                }
                ReduceKind::Max => {
                    // first maximal element receives the gradient
                    let mut taken = vec![false; gd.len()];
                    for (p, &o) in out_index.iter().enumerate() {
                        if !taken[o] && xd[p] == out_vals[o] {
                            taken[o] = true;
                            gx[p] += gd[o];
                        }
                    }
                }
            }
        }))
    }

    pub fn sum_all(&self, x: Var) -> Var {
        let rank = self.value(x).rank();
        let axes: Vec<usize> = (0..rank).collect();
        self.reduce(ReduceKind::Sum, x, &axes, false)
            .expect("full reduction is always valid")
    }

    pub fn mean_all(&self, x: Var) -> Var {
        let rank = self.value(x).rank();
        let axes: Vec<usize> = (0..rank).collect();
        self.reduce(ReduceKind::Mean, x, &axes, false)
            .expect("full reduction is always valid")
    }
}
