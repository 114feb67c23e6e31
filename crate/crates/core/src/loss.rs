//! Training objective: hard-pixel weighted BCE + IoU on the mask, plain BCE
//! on a dilated boundary map.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: Scalar = 1e-7;
/// Side of the box filter used for hard-pixel weights.
pub const HARD_PIXEL_WINDOW: usize = 31;
pub const HARD_PIXEL_GAIN: Scalar = 5.0;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub total: Scalar,
    pub mask_wbce: Scalar,
    pub mask_wiou: Scalar,
    pub boundary_bce: Scalar,
}

impl LossReport {
    pub fn accumulate(&mut self, other: &LossReport) {
        self.total += other.total;
        self.mask_wbce += other.mask_wbce;
        self.mask_wiou += other.mask_wiou;
        self.boundary_bce += other.boundary_bce;
    }

    pub fn scaled(&self, factor: Scalar) -> LossReport {
        LossReport {
            total: self.total * factor,
            mask_wbce: self.mask_wbce * factor,
            mask_wiou: self.mask_wiou * factor,
            boundary_bce: self.boundary_bce * factor,
        }
    }
}

/// Splits a `[H,W]` or `[1,H,W]` shape into `(H, W)`.
fn plane_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [h, w] | [1, h, w] => Ok((h, w)),
        _ => Err(Error::invalid(op, format!("expected a single-channel map, got {shape:?}"))),
    }
}

/// Mean over a `window × window` box centered on each pixel, zero padded,
/// always divided by the full window area.
pub fn box_mean(map: &Tensor, window: usize) -> Result<Tensor> {
    let (h, w) = plane_dims("box_mean", map.shape())?;
    let r = (window / 2) as isize;
    // summed-area table with a zero border
    let mut sat = vec![0.0; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += map.data()[y * w + x];
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize) as usize;
    let area = (window * window) as Scalar;
    let data = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            let (y0, y1) = (clamp(y - r, h), clamp(y + r + 1, h));
            let (x0, x1) = (clamp(x - r, w), clamp(x + r + 1, w));
            let s = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0]
                + sat[y0 * (w + 1) + x0];
            s / area
        })
        .collect();
    Ok(Tensor::from_parts(map.shape().to_vec(), data))
}

/// `1 + 5·|box_mean31(gt) − gt|`: pixels near the mask edge weigh more.
pub fn hard_pixel_weights(gt: &Tensor) -> Result<Tensor> {
    let pooled = box_mean(gt, HARD_PIXEL_WINDOW)?;
    let data = pooled
        .data()
        .iter()
        .zip(gt.data())
        .map(|(p, g)| 1.0 + HARD_PIXEL_GAIN * (p - g).abs())
        .collect();
    Ok(Tensor::from_parts(gt.shape().to_vec(), data))
}

/// Pixelwise binary cross-entropy on clamped probabilities.
fn bce_map(tape: &Tape, pred: Var, gt: &Tensor) -> Result<Var> {
    let p = tape.clamp(pred, PROB_EPS, 1.0 - PROB_EPS);
    let g = tape.constant(gt.clone());
    let not_g = tape.constant(gt.map(|v| 1.0 - v));
    let pos = tape.mul(g, tape.ln(p))?;
    let neg = tape.mul(not_g, tape.ln(tape.rsub_scalar(1.0, p)))?;
    Ok(tape.scale(tape.add(pos, neg)?, -1.0))
}

fn check_same(op: &'static str, tape: &Tape, pred: Var, gt: &Tensor) -> Result<()> {
    let ps = tape.shape(pred);
    if ps != gt.shape() {
        return Err(Error::shape(op, &ps, gt.shape()));
    }
    plane_dims(op, &ps).map(|_| ())
}

/// Returns `(weighted BCE, weighted IoU)` for a predicted mask in (0, 1).
pub fn mask_loss(tape: &Tape, pred: Var, gt: &Tensor) -> Result<(Var, Var)> {
    check_same("mask_loss", tape, pred, gt)?;
    let weights = hard_pixel_weights(gt)?;
    let weight_sum = weights.sum();
    let wv = tape.constant(weights.clone());

    let bce = bce_map(tape, pred, gt)?;
    let wbce = tape.scale(tape.sum_all(tape.mul(bce, wv)?), 1.0 / weight_sum);

    let wg = tape.constant(Tensor::from_parts(
        gt.shape().to_vec(),
        weights.data().iter().zip(gt.data()).map(|(w, g)| w * g).collect(),
    ));
    let inter = tape.sum_all(tape.mul(pred, wg)?);
    let union = tape.add_scalar(tape.sum_all(tape.mul(pred, wv)?), dot(&weights, gt));
    // 1 − (inter + 1) / (union − inter + 1)
    let num = tape.add_scalar(inter, 1.0);
    let den = tape.add_scalar(tape.sub(union, inter)?, 1.0);
    let wiou = tape.rsub_scalar(1.0, tape.div(num, den)?);
    Ok((wbce, wiou))
}

fn dot(a: &Tensor, b: &Tensor) -> Scalar {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Mean binary cross-entropy against a (dilated) boundary map.
pub fn boundary_loss(tape: &Tape, pred: Var, gt: &Tensor) -> Result<Var> {
    check_same("boundary_loss", tape, pred, gt)?;
    Ok(tape.mean_all(bce_map(tape, pred, gt)?))
}

/// Binary dilation with a `(2·radius + 1)²` square element; radius 0 is the identity.
pub fn dilate_boundary(map: &Tensor, radius: usize) -> Tensor {
    if radius == 0 {
        return map.clone();
    }
    let (h, w) = plane_dims("dilate_boundary", map.shape()).expect("single-channel map");
    let d = map.data();
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(radius), (x + radius).min(w - 1));
            rows[y * w + x] = if (x0..=x1).any(|xx| d[y * w + xx] > 0.5) { 1.0 } else { 0.0 };
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(radius), (y + radius).min(h - 1));
        for x in 0..w {
            out[y * w + x] = if (y0..=y1).any(|yy| rows[yy * w + x] > 0.5) { 1.0 } else { 0.0 };
        }
    }
    Tensor::from_parts(map.shape().to_vec(), out)
}

/// Sum of the mask terms and, when a boundary prediction exists, the
/// boundary term. `boundary_pred` must already be at `boundary_gt`'s resolution.
pub fn total_loss(
    tape: &Tape,
    mask_pred: Var,
    mask_gt: &Tensor,
    boundary_pred: Option<Var>,
    boundary_gt: &Tensor,
) -> Result<(Var, LossReport)> {
    let (wbce, wiou) = mask_loss(tape, mask_pred, mask_gt)?;
    let mut total = tape.add(wbce, wiou)?;
    let mut bbce_value = 0.0;
    if let Some(bp) = boundary_pred {
        let bbce = boundary_loss(tape, bp, boundary_gt)?;
        bbce_value = tape.value(bbce).item();
        total = tape.add(total, bbce)?;
    }
    let report = LossReport {
        total: tape.value(total).item(),
        mask_wbce: tape.value(wbce).item(),
        mask_wiou: tape.value(wiou).item(),
        boundary_bce: bbce_value,
    };
    Ok((total, report))
}
