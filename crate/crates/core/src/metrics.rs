//! Saliency-style evaluation metrics on single-channel maps.
//!
//! Predictions are probabilities in `[0, 1]`; ground truth is binarized at 0.5.
//! All metrics accept `[H,W]` or `[1,H,W]` tensors.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Machine epsilon, used as the denominator guard throughout.
pub const EPS: Scalar = f64::EPSILON;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub mae: Scalar,
    pub s_measure: Scalar,
    pub e_measure: Scalar,
    pub weighted_f: Scalar,
}

impl MetricsReport {
    /// Element-wise mean of several reports; `None` when empty.
    pub fn mean(reports: &[MetricsReport]) -> Option<MetricsReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as Scalar;
        let sum = |f: fn(&MetricsReport) -> Scalar| reports.iter().map(f).sum::<Scalar>() / n;
        Some(MetricsReport {
            mae: sum(|r| r.mae),
            s_measure: sum(|r| r.s_measure),
            e_measure: sum(|r| r.e_measure),
            weighted_f: sum(|r| r.weighted_f),
        })
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "MAE {:.4}  S {:.4}  E {:.4}  Fw {:.4}",
            self.mae, self.s_measure, self.e_measure, self.weighted_f
        )
    }
}

/// Computes all four metrics for one prediction.
pub fn evaluate(pred: &Tensor, gt: &Tensor) -> Result<MetricsReport> {
    Ok(MetricsReport {
        mae: mae(pred, gt)?,
        s_measure: s_measure(pred, gt)?,
        e_measure: e_measure(pred, gt)?,
        weighted_f: weighted_f(pred, gt)?,
    })
}

struct Pair<'a> {
    h: usize,
    w: usize,
    pred: &'a [Scalar],
    gt: Vec<bool>,
}

fn pair<'a>(op: &'static str, pred: &'a Tensor, gt: &Tensor) -> Result<Pair<'a>> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape(op, pred.shape(), gt.shape()));
    }
    let (h, w) = match *pred.shape() {
        [h, w] | [1, h, w] => (h, w),
        ref s => return Err(Error::invalid(op, format!("expected a single-channel map, got {s:?}"))),
    };
    Ok(Pair {
        h,
        w,
        pred: pred.data(),
        gt: gt.data().iter().map(|&g| g > 0.5).collect(),
    })
}

pub fn mae(pred: &Tensor, gt: &Tensor) -> Result<Scalar> {
    let p = pair("mae", pred, gt)?;
    let total: Scalar = p
        .pred
        .iter()
        .zip(&p.gt)
        .map(|(&v, &g)| (v - if g { 1.0 } else { 0.0 }).abs())
        .sum();
    Ok(total / p.pred.len() as Scalar)
}

// ---- structure measure ----

const S_ALPHA: Scalar = 0.5;

fn mean(xs: &[Scalar]) -> Scalar {
    xs.iter().sum::<Scalar>() / xs.len() as Scalar
}

fn s_object(xs: &[Scalar]) -> Scalar {
    let m = mean(xs);
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - m).powi(2)).sum::<Scalar>() / (xs.len() - 1) as Scalar).sqrt()
    } else {
        0.0
    };
    2.0 * m / (m * m + 1.0 + std + EPS)
}

fn s_ssim(p: &Pair<'_>, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Scalar {
    let n = rows.len() * cols.len();
    if n == 0 {
        return 0.0;
    }
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for y in rows {
        for x in cols.clone() {
            xs.push(p.pred[y * p.w + x]);
            ys.push(if p.gt[y * p.w + x] { 1.0 } else { 0.0 });
        }
    }
    let (mx, my) = (mean(&xs), mean(&ys));
    let denom = n as Scalar - 1.0 + EPS;
    let sx = xs.iter().map(|v| (v - mx).powi(2)).sum::<Scalar>() / denom;
    let sy = ys.iter().map(|v| (v - my).powi(2)).sum::<Scalar>() / denom;
    let sxy = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum::<Scalar>() / denom;
    let alpha = 4.0 * mx * my * sxy;
    let beta = (mx * mx + my * my) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn s_region(p: &Pair<'_>) -> Scalar {
    let (h, w) = (p.h, p.w);
    let area = (h * w) as Scalar;
    let (mut sy, mut sx, mut n) = (0.0, 0.0, 0usize);
    for (i, _) in p.gt.iter().enumerate().filter(|(_, &g)| g) {
        sy += (i / w) as Scalar;
        sx += (i % w) as Scalar;
        n += 1;
    }
    let (cy, cx) = if n == 0 {
        ((h as Scalar / 2.0).round_ties_even(), (w as Scalar / 2.0).round_ties_even())
    } else {
        ((sy / n as Scalar).round_ties_even(), (sx / n as Scalar).round_ties_even())
    };
    let (cy, cx) = ((cy as usize + 1).min(h), (cx as usize + 1).min(w));
    let w_lt = (cx * cy) as Scalar / area;
    let w_rt = (cy * (w - cx)) as Scalar / area;
    let w_lb = ((h - cy) * cx) as Scalar / area;
    let w_rb = 1.0 - w_lt - w_rt - w_lb;
    s_ssim(p, 0..cy, 0..cx) * w_lt
        + s_ssim(p, 0..cy, cx..w) * w_rt
        + s_ssim(p, cy..h, 0..cx) * w_lb
        + s_ssim(p, cy..h, cx..w) * w_rb
}

/// Structure measure: an even blend of object-aware and region-aware similarity.
pub fn s_measure(pred: &Tensor, gt: &Tensor) -> Result<Scalar> {
    let p = pair("s_measure", pred, gt)?;
    let fg = p.gt.iter().filter(|&&g| g).count();
    let total = p.gt.len();
    if fg == 0 {
        return Ok(1.0 - mean(p.pred));
    }
    if fg == total {
        return Ok(mean(p.pred));
    }
    let u = fg as Scalar / total as Scalar;
    let (mut inside, mut outside) = (Vec::with_capacity(fg), Vec::with_capacity(total - fg));
    for (&v, &g) in p.pred.iter().zip(&p.gt) {
        if g {
            inside.push(v);
        } else {
            outside.push(1.0 - v);
        }
    }
    let object = s_object(&inside) * u + s_object(&outside) * (1.0 - u);
    let score = S_ALPHA * object + (1.0 - S_ALPHA) * s_region(&p);
    Ok(score.max(0.0))
}

// ---- enhanced alignment measure ----

/// Enhanced alignment measure with the adaptive threshold `min(2·mean, 1)`.
pub fn e_measure(pred: &Tensor, gt: &Tensor) -> Result<Scalar> {
    let p = pair("e_measure", pred, gt)?;
    let n = p.gt.len();
    let threshold = (2.0 * mean(p.pred)).min(1.0);
    let (mut ff, mut fb, mut gt_fg) = (0usize, 0usize, 0usize);
    for (&v, &g) in p.pred.iter().zip(&p.gt) {
        let on = v >= threshold;
        ff += (on && g) as usize;
        fb += (on && !g) as usize;
        gt_fg += g as usize;
    }
    let pred_fg = ff + fb;
    let sum = if gt_fg == 0 {
        (n - pred_fg) as Scalar
    } else if gt_fg == n {
        pred_fg as Scalar
    } else {
        let bf = gt_fg - ff;
        let bb = (n - gt_fg) - fb;
        let mp = pred_fg as Scalar / n as Scalar;
        let mg = gt_fg as Scalar / n as Scalar;
        let parts = [
            (ff, 1.0 - mp, 1.0 - mg),
            (fb, 1.0 - mp, -mg),
            (bf, -mp, 1.0 - mg),
            (bb, -mp, -mg),
        ];
        parts
            .iter()
            .map(|&(count, a, b)| {
                let align = 2.0 * a * b / (a * a + b * b + EPS);
                (align + 1.0).powi(2) / 4.0 * count as Scalar
            })
            .sum()
    };
    Ok(sum / n as Scalar)
}

// ---- weighted F-measure ----

/// Exact Euclidean distance from every pixel to the nearest `true` pixel of
/// `sites`, with the flat index of that pixel. `None` when there are no sites.
pub fn distance_transform(sites: &[bool], h: usize, w: usize) -> Option<(Vec<Scalar>, Vec<usize>)> {
    assert_eq!(sites.len(), h * w);
    if !sites.contains(&true) {
        return None;
    }
    const INF: Scalar = Scalar::INFINITY;
    // column pass: nearest site row along each column
    let mut col_d2 = vec![INF; h * w];
    let mut col_row = vec![0usize; h * w];
    for x in 0..w {
        let mut last: Option<usize> = None;
        for y in 0..h {
            if sites[y * w + x] {
                last = Some(y);
            }
            if let Some(r) = last {
                col_d2[y * w + x] = ((y - r) as Scalar).powi(2);
                col_row[y * w + x] = r;
            }
        }
        last = None;
        for y in (0..h).rev() {
            if sites[y * w + x] {
                last = Some(y);
            }
            if let Some(r) = last {
                let d = ((r - y) as Scalar).powi(2);
                if d < col_d2[y * w + x] {
                    col_d2[y * w + x] = d;
                    col_row[y * w + x] = r;
                }
            }
        }
    }
    // row pass: lower envelope of parabolas (Felzenszwalb & Huttenlocher)
    let mut dist = vec![0.0; h * w];
    let mut index = vec![0usize; h * w];
    let mut v = vec![0usize; w];
    let mut z = vec![0.0; w + 1];
    for y in 0..h {
        let f = &col_d2[y * w..(y + 1) * w];
        let finite: Vec<usize> = (0..w).filter(|&q| f[q].is_finite()).collect();
        let mut k = 0usize;
        v[0] = finite[0];
        z[0] = -INF;
        z[1] = INF;
        for &q in &finite[1..] {
            loop {
                let r = v[k];
                let s = ((f[q] + (q * q) as Scalar) - (f[r] + (r * r) as Scalar)) / (2.0 * (q as Scalar - r as Scalar));
                if s <= z[k] && k > 0 {
                    k -= 1;
                    continue;
                }
                if s <= z[k] {
                    // k == 0 and the new parabola dominates everywhere
                    v[0] = q;
                    z[1] = INF;
                } else {
                    k += 1;
                    v[k] = q;
                    z[k] = s;
                    z[k + 1] = INF;
                }
                break;
            }
        }
        let mut k = 0usize;
        for x in 0..w {
            while z[k + 1] < x as Scalar {
                k += 1;
            }
            let q = v[k];
            let dx = x as Scalar - q as Scalar;
            dist[y * w + x] = (dx * dx + f[q]).sqrt();
            index[y * w + x] = col_row[y * w + q] * w + q;
        }
    }
    Some((dist, index))
}

/// 7×7 Gaussian with sigma 5, tiny taps zeroed, normalized to sum 1.
fn gaussian_kernel() -> [[Scalar; 7]; 7] {
    let sigma: Scalar = 5.0;
    let mut k = [[0.0; 7]; 7];
    let mut max: Scalar = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (y, x) = (i as Scalar - 3.0, j as Scalar - 3.0);
            *v = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
            max = max.max(*v);
        }
    }
    let mut total = 0.0;
    for v in k.iter_mut().flatten() {
        if *v < EPS * max {
            *v = 0.0;
        }
        total += *v;
    }
    for v in k.iter_mut().flatten() {
        *v /= total;
    }
    k
}

/// Weighted F-measure. An empty ground truth scores 1 when the prediction is
/// also empty (no pixel at or above 0.5) and 0 otherwise.
pub fn weighted_f(pred: &Tensor, gt: &Tensor) -> Result<Scalar> {
    let p = pair("weighted_f", pred, gt)?;
    let (h, w) = (p.h, p.w);
    let Some((dst, idx)) = distance_transform(&p.gt, h, w) else {
        return Ok(if p.pred.iter().any(|&v| v >= 0.5) { 0.0 } else { 1.0 });
    };
    let e: Vec<Scalar> = p
        .pred
        .iter()
        .zip(&p.gt)
        .map(|(&v, &g)| (v - if g { 1.0 } else { 0.0 }).abs())
        .collect();
    // background pixels inherit the error of their nearest foreground pixel
    let et: Vec<Scalar> = (0..h * w).map(|i| if p.gt[i] { e[i] } else { e[idx[i]] }).collect();
    let k = gaussian_kernel();
    let mut ea = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, row) in k.iter().enumerate() {
                let yy = y as isize + i as isize - 3;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for (j, &kv) in row.iter().enumerate() {
                    let xx = x as isize + j as isize - 3;
                    if xx >= 0 && xx < w as isize {
                        acc += kv * et[yy as usize * w + xx as usize];
                    }
                }
            }
            ea[y * w + x] = acc;
        }
    }
    let ln_half_over_5 = 0.5f64.ln() / 5.0;
    let (mut fg, mut ew_fg, mut ew_bg) = (0usize, 0.0, 0.0);
    for i in 0..h * w {
        if p.gt[i] {
            let m = if ea[i] < e[i] { ea[i] } else { e[i] };
            fg += 1;
            ew_fg += m;
        } else {
            ew_bg += e[i] * (2.0 - (ln_half_over_5 * dst[i]).exp());
        }
    }
    let tp = fg as Scalar - ew_fg;
    let recall = 1.0 - ew_fg / fg as Scalar;
    let precision = tp / (tp + ew_bg + EPS);
    Ok(2.0 * recall * precision / (recall + precision + EPS))
}
