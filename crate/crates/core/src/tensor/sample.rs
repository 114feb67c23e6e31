use super::tape::{Tape, Var};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Interpolation stencil along one axis for a (clamped) coordinate.
#[derive(Clone, Copy)]
struct Stencil {
    lo: usize,
    hi: usize,
    frac: Scalar,
    // false when the raw coordinate was clamped, zeroing its gradient
    inside: bool,
}

fn stencil(coord: Scalar, extent: usize) -> Stencil {
    let max = (extent - 1) as Scalar;
    let inside = (0.0..=max).contains(&coord);
    let c = coord.clamp(0.0, max);
    if extent == 1 {
        return Stencil {
            lo: 0,
            hi: 0,
            frac: 0.0,
            inside,
        };
    }
    let lo = (c.floor() as usize).min(extent - 2);
    Stencil {
        lo,
        hi: lo + 1,
        frac: c - lo as Scalar,
        inside,
    }
}

impl Tape {
    /// Samples `feature` (`[C,H,W]`) at continuous `(y, x)` pixel coordinates
    /// given as a `[P, 2]` matrix; pixel centers sit on integers. Returns
    /// `[C, P]`. Coordinates outside the image are clamped to its rectangle.
    /// Differentiable in both the feature values and the coordinates.
    pub fn bilinear_sample(&self, feature: Var, points: Var) -> Result<Var> {
        let fshape = self.shape(feature);
        let pshape = self.shape(points);
        let [c, h, w] = fshape[..] else {
            return Err(Error::shape("bilinear_sample", &fshape, &pshape));
        };
        if pshape.len() != 2 || pshape[1] != 2 {
            return Err(Error::shape("bilinear_sample", &fshape, &pshape));
        }
        let p = pshape[0];
        let (stencils, value) = {
            let pd = self.value(points);
            let stencils: Vec<(Stencil, Stencil)> = pd
                .data()
                .chunks_exact(2)
                .map(|yx| (stencil(yx[0], h), stencil(yx[1], w)))
                .collect();
            let fv = self.value(feature);
            let fd = fv.data();
            let mut out = vec![0.0; c * p];
            for ch in 0..c {
                let plane = &fd[ch * h * w..(ch + 1) * h * w];
                for (k, (sy, sx)) in stencils.iter().enumerate() {
                    let top = plane[sy.lo * w + sx.lo] * (1.0 - sx.frac) + plane[sy.lo * w + sx.hi] * sx.frac;
                    let bottom = plane[sy.hi * w + sx.lo] * (1.0 - sx.frac) + plane[sy.hi * w + sx.hi] * sx.frac;
                    out[ch * p + k] = top * (1.0 - sy.frac) + bottom * sy.frac;
                }
            }
            (stencils, Tensor::from_parts(vec![c, p], out))
        };
        Ok(self.push(value, &[feature, points], move |g, ctx, sink| {
            let gd = g.data();
            if let Some(gf) = sink.buffer(feature) {
                for ch in 0..c {
                    let plane = &mut gf[ch * h * w..(ch + 1) * h * w];
                    for (k, (sy, sx)) in stencils.iter().enumerate() {
                        let gv = gd[ch * p + k];
                        plane[sy.lo * w + sx.lo] += gv * (1.0 - sy.frac) * (1.0 - sx.frac);
                        plane[sy.lo * w + sx.hi] += gv * (1.0 - sy.frac) * sx.frac;
                        plane[sy.hi * w + sx.lo] += gv * sy.frac * (1.0 - sx.frac);
                        plane[sy.hi * w + sx.hi] += gv * sy.frac * sx.frac;
                    }
                }
            }
            if let Some(gp) = sink.buffer(points) {
                let fd = ctx.value(feature).data();
                for (k, (sy, sx)) in stencils.iter().enumerate() {
                    let (mut dy, mut dx) = (0.0, 0.0);
                    for ch in 0..c {
                        let plane = &fd[ch * h * w..(ch + 1) * h * w];
                        let (a, b) = (plane[sy.lo * w + sx.lo], plane[sy.lo * w + sx.hi]);
                        let (cc, d) = (plane[sy.hi * w + sx.lo], plane[sy.hi * w + sx.hi]);
                        let gv = gd[ch * p + k];
                        dy += gv * ((cc - a) * (1.0 - sx.frac) + (d - b) * sx.frac);
                        dx += gv * ((b - a) * (1.0 - sy.frac) + (d - cc) * sy.frac);
                    }
                    if sy.inside && sy.hi != sy.lo {
                        gp[2 * k] += dy;
                    }
                    if sx.inside && sx.hi != sx.lo {
                        gp[2 * k + 1] += dx;
                    }
                }
            }
        }))
    }
}
