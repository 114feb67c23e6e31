use super::tape::{Tape, Var};
use super::{numel, strides, Tensor};
use crate::error::{Error, Result};

impl Tape {
    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, &[x], move |g, _ctx, sink| {
            sink.accumulate(x, g.data());
        }))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, x: Var, perm: &[usize]) -> Result<Var> {
        let (value, src_index) = {
            let xv = self.value(x);
            let shape = xv.shape();
            let mut seen = vec![false; shape.len()];
            if perm.len() != shape.len()
                || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
            {
                return Err(Error::invalid(
                    "permute",
                    format!("{perm:?} is not a permutation of the axes of {shape:?}"),
                ));
            }
            let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
            let in_st = strides(shape);
            let n = xv.numel();
            let mut src_index = Vec::with_capacity(n);
            let mut idx = vec![0usize; shape.len()];
            for _ in 0..n {
                src_index.push((0..perm.len()).map(|k| idx[k] * in_st[perm[k]]).sum::<usize>());
                for k in (0..perm.len()).rev() {
                    idx[k] += 1;
                    if idx[k] < out_shape[k] {
                        break;
                    }
                    idx[k] = 0;
                }
            }
            let xd = xv.data();
            let data = src_index.iter().map(|&s| xd[s]).collect();
            (Tensor::from_parts(out_shape, data), src_index)
        };
        Ok(self.push(value, &[x], move |g, _ctx, sink| {
            if let Some(gx) = sink.buffer(x) {
                for (k, &s) in src_index.iter().enumerate() {
                    gx[s] += g.data()[k];
                }
            }
        }))
    }

    /// Swaps the two axes of a matrix.
    pub fn transpose(&self, x: Var) -> Result<Var> {
        self.permute(x, &[1, 0])
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let (value, extents, outer, inner) = {
            let base = self.shape(*first);
            if axis >= base.len() {
                return Err(Error::invalid(
                    "concat",
                    format!("axis {axis} out of range for shape {base:?}"),
                ));
            }
            let mut extents = Vec::with_capacity(parts.len());
            for &p in parts {
                let s = self.shape(p);
                let compatible = s.len() == base.len()
                    && s.iter()
                        .zip(&base)
                        .enumerate()
                        .all(|(i, (a, b))| i == axis || a == b);
                if !compatible {
                    return Err(Error::shape("concat", &base, &s));
                }
                extents.push(s[axis]);
            }
            let outer: usize = base[..axis].iter().product();
            let inner: usize = base[axis + 1..].iter().product();
            let total: usize = extents.iter().sum();
            let mut out_shape = base.clone();
            out_shape[axis] = total;
            let mut data = Vec::with_capacity(numel(&out_shape));
            for o in 0..outer {
                for (&p, &e) in parts.iter().zip(&extents) {
                    let v = self.value(p);
                    data.extend_from_slice(&v.data()[o * e * inner..(o + 1) * e * inner]);
                }
            }
            (Tensor::from_parts(out_shape, data), extents, outer, inner)
        };
        let parts_owned = parts.to_vec();
        Ok(self.push(value, parts, move |g, _ctx, sink| {
            let total: usize = extents.iter().sum();
            let mut offset = 0;
            for (&p, &e) in parts_owned.iter().zip(&extents) {
                if let Some(gp) = sink.buffer(p) {
                    for o in 0..outer {
                        let src = &g.data()[(o * total + offset) * inner..(o * total + offset + e) * inner];
                        for (d, s) in gp[o * e * inner..(o + 1) * e * inner].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                offset += e;
            }
        }))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (value, outer, inner, extent) = {
            let xv = self.value(x);
            let shape = xv.shape();
            if axis >= shape.len() || len == 0 || start + len > shape[axis] {
                return Err(Error::invalid(
                    "narrow",
                    format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
                ));
            }
            let outer: usize = shape[..axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let extent = shape[axis];
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let from = (o * extent + start) * inner;
                data.extend_from_slice(&xv.data()[from..from + len * inner]);
            }
            let mut out_shape = shape.to_vec();
            out_shape[axis] = len;
            (Tensor::from_parts(out_shape, data), outer, inner, extent)
        };
        Ok(self.push(value, &[x], move |g, _ctx, sink| {
            if let Some(gx) = sink.buffer(x) {
                for o in 0..outer {
                    let from = (o * extent + start) * inner;
                    let src = &g.data()[o * len * inner..(o + 1) * len * inner];
                    for (d, s) in gx[from..from + len * inner].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }))
    }

    /// Splits `x` along `axis` into pieces of the given extents.
    pub fn split(&self, x: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &s in sizes {
            out.push(self.narrow(x, axis, start, s)?);
            start += s;
        }
        let extent = self.shape(x).get(axis).copied().unwrap_or(0);
        if start != extent {
            return Err(Error::invalid(
                "split",
                format!("sizes {sizes:?} do not cover extent {extent}"),
            ));
        }
        Ok(out)
    }
}
