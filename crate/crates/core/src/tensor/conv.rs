use super::linalg::gemm;
use super::tape::{Tape, Var};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Output extent of a convolution along one axis, or `None` if it would be empty.
pub(crate) fn conv2d_output_size(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> Option<usize> {
    let span = dilation * (kernel - 1) + 1;
    let padded = input + 2 * padding;
    (padded >= span).then(|| (padded - span) / stride + 1)
}

#[derive(Clone, Copy)]
struct ConvGeom {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
    padding: usize,
    dilation: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input offset read by (row, col) of the unfolded matrix, if inside the image.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let (h, w) = (self.height as isize, self.width as isize);
        for c in 0..self.channels {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ki * self.dilation) as isize - self.padding as isize;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kj * self.dilation) as isize
                                - self.padding as isize;
                            if ix < 0 || ix >= w {
                                continue;
                            }
                            let src = (c * self.height + iy as usize) * self.width + ix as usize;
                            f(row * self.cols() + oy * self.out_w + ox, src);
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, image: &[Scalar], cols: &mut [Scalar]) {
        cols.fill(0.0);
        self.for_each_tap(|dst, src| cols[dst] = image[src]);
    }

    fn col2im(&self, cols: &[Scalar], image: &mut [Scalar]) {
        self.for_each_tap(|dst, src| image[src] += cols[dst]);
    }
}

/// Splits a rank-3 `[C,H,W]` or rank-4 `[N,C,H,W]` shape into `(N, C, H, W)`.
fn batch_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((1, c, h, w)),
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::invalid(
            op,
            format!("expected [C,H,W] or [N,C,H,W], got {shape:?}"),
        )),
    }
}

fn with_spatial(shape: &[usize], c: usize, h: usize, w: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    let r = s.len();
    s[r - 3] = c;
    s[r - 2] = h;
    s[r - 1] = w;
    s
}

struct Axis {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<Scalar>,
}

/// Half-pixel source coordinates for resizing `input` samples to `output`.
fn resize_axis(input: usize, output: usize) -> Axis {
    let scale = input as Scalar / output as Scalar;
    let mut axis = Axis {
        lo: Vec::with_capacity(output),
        hi: Vec::with_capacity(output),
        frac: Vec::with_capacity(output),
    };
    for o in 0..output {
        let src = ((o as Scalar + 0.5) * scale - 0.5).max(0.0);
        let lo = (src.floor() as usize).min(input - 1);
        let hi = (lo + 1).min(input - 1);
        axis.lo.push(lo);
        axis.hi.push(hi);
        axis.frac.push(src - lo as Scalar);
    }
    axis
}

/// Bilinear resize of a `[C,H,W]` or `[N,C,H,W]` value (half-pixel centers).
pub(crate) fn upsample_bilinear_value(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (n, c, h, w) = batch_dims("upsample_bilinear", x.shape())?;
    let (ay, ax) = (resize_axis(h, out_h), resize_axis(w, out_w));
    let mut out = vec![0.0; n * c * out_h * out_w];
    let xd = x.data();
    for plane in 0..n * c {
        let src = &xd[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        for oy in 0..out_h {
            let (y0, y1, fy) = (ay.lo[oy], ay.hi[oy], ay.frac[oy]);
            for ox in 0..out_w {
                let (x0, x1, fx) = (ax.lo[ox], ax.hi[ox], ax.frac[ox]);
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[oy * out_w + ox] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Ok(Tensor::from_parts(with_spatial(x.shape(), c, out_h, out_w), out))
}

impl Tape {
    /// 2-D cross-correlation. `x` is `[C,H,W]` or `[N,C,H,W]`, `kernel` is
    /// `[outC, inC, kh, kw]`, `bias` (optional) is `[outC]`.
    pub fn conv2d(
        &self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Var> {
        if stride == 0 || dilation == 0 {
            return Err(Error::invalid("conv2d", "stride and dilation must be >= 1"));
        }
        let (value, geom, batch, out_c) = {
            let xv = self.value(x);
            let kv = self.value(kernel);
            let (batch, c, h, w) = batch_dims("conv2d", xv.shape())?;
            let ks = kv.shape();
            if ks.len() != 4 || ks[1] != c {
                return Err(Error::shape("conv2d", xv.shape(), ks));
            }
            let out_c = ks[0];
            if let Some(b) = bias {
                let bs = self.shape(b);
                if bs != [out_c] {
                    return Err(Error::shape("conv2d bias", ks, &bs));
                }
            }
            let (kh, kw) = (ks[2], ks[3]);
            let (Some(out_h), Some(out_w)) = (
                conv2d_output_size(h, kh, stride, padding, dilation),
                conv2d_output_size(w, kw, stride, padding, dilation),
            ) else {
                return Err(Error::shape("conv2d", xv.shape(), ks));
            };
            let geom = ConvGeom {
                channels: c,
                height: h,
                width: w,
                kh,
                kw,
                out_h,
                out_w,
                stride,
                padding,
                dilation,
            };
            let mut cols = vec![0.0; geom.rows() * geom.cols()];
            let mut out = vec![0.0; batch * out_c * geom.cols()];
            let bias_v = bias.map(|b| self.to_tensor(b));
            for n in 0..batch {
                let image = &xv.data()[n * c * h * w..(n + 1) * c * h * w];
                geom.im2col(image, &mut cols);
                let dst = &mut out[n * out_c * geom.cols()..(n + 1) * out_c * geom.cols()];
                gemm(out_c, geom.rows(), geom.cols(), kv.data(), false, &cols, false, dst, false);
                if let Some(b) = &bias_v {
                    for (o, &bo) in b.data().iter().enumerate() {
                        for v in &mut dst[o * geom.cols()..(o + 1) * geom.cols()] {
                            *v += bo;
                        }
                    }
                }
            }
            let shape = with_spatial(xv.shape(), out_c, out_h, out_w);
            (Tensor::from_parts(shape, out), geom, batch, out_c)
        };
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        Ok(self.push(value, &inputs, move |g, ctx, sink| {
            let (rows, cols_n) = (geom.rows(), geom.cols());
            let in_size = geom.channels * geom.height * geom.width;
            let xd = ctx.value(x).data();
            let kd = ctx.value(kernel).data();
            let need_x = ctx.requires_grad(x);
            let need_k = ctx.requires_grad(kernel);
            let mut cols = vec![0.0; rows * cols_n];
            let mut dcols = vec![0.0; rows * cols_n];
            for n in 0..batch {
                let gn = &g.data()[n * out_c * cols_n..(n + 1) * out_c * cols_n];
                if need_k {
                    geom.im2col(&xd[n * in_size..(n + 1) * in_size], &mut cols);
                    let gk = sink.buffer(kernel).expect("kernel requires grad");
                    gemm(out_c, cols_n, rows, gn, false, &cols, true, gk, true);
                }
                if need_x {
                    gemm(rows, out_c, cols_n, kd, true, gn, false, &mut dcols, false);
                    let gx = sink.buffer(x).expect("input requires grad");
                    geom.col2im(&dcols, &mut gx[n * in_size..(n + 1) * in_size]);
                }
                if let Some(b) = bias {
                    if let Some(gb) = sink.buffer(b) {
                        for (o, acc) in gb.iter_mut().enumerate() {
                            *acc += gn[o * cols_n..(o + 1) * cols_n].iter().sum::<Scalar>();
                        }
                    }
                }
            }
        }))
    }

    /// Bilinear resize with half-pixel centers; resizing to the input size is
    /// the identity.
    pub fn upsample_bilinear(&self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::invalid("upsample_bilinear", "output extent must be positive"));
        }
        let value = upsample_bilinear_value(&self.value(x), out_h, out_w)?;
        let (n, c, h, w) = batch_dims("upsample_bilinear", &self.shape(x))?;
        let (ay, ax) = (resize_axis(h, out_h), resize_axis(w, out_w));
        Ok(self.push(value, &[x], move |g, _ctx, sink| {
            let Some(gx) = sink.buffer(x) else { return };
            for plane in 0..n * c {
                let gsrc = &g.data()[plane * out_h * out_w..(plane + 1) * out_h * out_w];
                let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
                for oy in 0..out_h {
                    let (y0, y1, fy) = (ay.lo[oy], ay.hi[oy], ay.frac[oy]);
                    for ox in 0..out_w {
                        let (x0, x1, fx) = (ax.lo[ox], ax.hi[ox], ax.frac[ox]);
                        let gv = gsrc[oy * out_w + ox];
                        dst[y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                        dst[y0 * w + x1] += gv * (1.0 - fy) * fx;
                        dst[y1 * w + x0] += gv * fy * (1.0 - fx);
                        dst[y1 * w + x1] += gv * fy * fx;
                    }
                }
            }
        }))
    }

    /// Average pooling onto a fixed `out_h × out_w` grid; bin `i` covers
    /// `[floor(i·H/out_h), ceil((i+1)·H/out_h))`.
    pub fn adaptive_avg_pool2d(&self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::invalid("adaptive_avg_pool2d", "output extent must be positive"));
        }
        let shape = self.shape(x);
        let (n, c, h, w) = batch_dims("adaptive_avg_pool2d", &shape)?;
        let bins = |input: usize, output: usize| -> Vec<(usize, usize)> {
            (0..output)
                .map(|i| (i * input / output, ((i + 1) * input).div_ceil(output)))
                .collect()
        };
        let (by, bx) = (bins(h, out_h), bins(w, out_w));
        let value = {
            let xv = self.value(x);
            let mut out = vec![0.0; n * c * out_h * out_w];
            for plane in 0..n * c {
                let src = &xv.data()[plane * h * w..(plane + 1) * h * w];
                for (oy, &(y0, y1)) in by.iter().enumerate() {
                    for (ox, &(x0, x1)) in bx.iter().enumerate() {
                        let mut s = 0.0;
                        for yy in y0..y1 {
                            for xx in x0..x1 {
                                s += src[yy * w + xx];
                            }
                        }
                        out[(plane * out_h + oy) * out_w + ox] = s / ((y1 - y0) * (x1 - x0)) as Scalar;
                    }
                }
            }
            Tensor::from_parts(with_spatial(&shape, c, out_h, out_w), out)
        };
        Ok(self.push(value, &[x], move |g, _ctx, sink| {
            let Some(gx) = sink.buffer(x) else { return };
            for plane in 0..n * c {
                for (oy, &(y0, y1)) in by.iter().enumerate() {
                    for (ox, &(x0, x1)) in bx.iter().enumerate() {
                        let gv = g.data()[(plane * out_h + oy) * out_w + ox]
                            / ((y1 - y0) * (x1 - x0)) as Scalar;
                        for yy in y0..y1 {
                            for xx in x0..x1 {
                                gx[plane * h * w + yy * w + xx] += gv;
                            }
                        }
                    }
                }
            }
        }))
    }
}
