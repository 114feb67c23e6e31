//! Central finite-difference gradient checks.
//!
//! A check projects the output of a function onto a fixed random direction,
//! differentiates the resulting scalar with the tape, and compares each
//! gradient entry against `(f(x + h) − f(x − h)) / 2h`.

pub mod suite;

use std::fmt;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;
use crate::nn::{Ctx, ParamStore};
use crate::rng;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Denominator floor of the relative error, per unit of output magnitude
/// (`Σ|wᵢ·yᵢ|` over the projected output), so that entries whose true
/// gradient is ~0 are compared absolutely. Roundoff in `f(x ± h)` grows with
/// that magnitude, not with the possibly cancelling sum.
pub const REL_ERROR_FLOOR: Scalar = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub step: Scalar,
    pub tolerance: Scalar,
    /// Upper bound on checked entries per input (all entries when `None`).
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            tolerance: 1e-4,
            max_entries: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: Scalar,
    pub tolerance: Scalar,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<40} entries={:<5} max_rel_err={:.3e} (tol {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.checked,
            self.max_rel_error,
            self.tolerance
        )
    }
}

pub fn relative_error(analytic: Scalar, numeric: Scalar, scale: Scalar) -> Scalar {
    let floor = REL_ERROR_FLOOR * scale.max(1.0);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

impl GradCheck {
    pub fn with_tolerance(tolerance: Scalar) -> Self {
        GradCheck {
            tolerance,
            ..Self::default()
        }
    }

    /// Checks `f` with respect to every tensor in `inputs`.
    pub fn run<F>(&self, name: &str, inputs: &[Tensor], f: F) -> Result<GradCheckReport>
    where
        F: Fn(&Tape, &[Var]) -> Result<Var>,
    {
        let mut rng = rng::seeded(self.seed ^ 0x6772_6164);
        let projection = {
            let tape = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
            let out = f(&tape, &vars)?;
            rng::uniform(&tape.shape(out), 0.5, 1.5, &mut rng)
        };
        let eval = |xs: &[Tensor], want_grad: bool| -> Result<(Projected, Vec<Tensor>)> {
            let tape = Tape::new();
            let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
            let out = f(&tape, &vars)?;
            let (loss, p) = project(&tape, out, &projection)?;
            if !want_grad {
                return Ok((p, Vec::new()));
            }
            let grads = tape.backward(loss)?;
            let gs = vars.iter().zip(xs).map(|(&v, t)| grads.wrt(v, t.shape())).collect();
            Ok((p, gs))
        };
        let (base, analytic) = eval(inputs, true)?;
        let mut worst: Scalar = 0.0;
        let mut checked = 0;
        let mut xs = inputs.to_vec();
        for (i, input) in inputs.iter().enumerate() {
            let n = input.numel();
            let entries: Vec<usize> = match self.max_entries {
                Some(m) if m < n => sample(&mut rng, n, m).into_vec(),
                _ => (0..n).collect(),
            };
            for e in entries {
                let orig = input.data()[e];
                xs[i].data_mut()[e] = orig + self.step;
                let plus = eval(&xs, false)?.0.value;
                xs[i].data_mut()[e] = orig - self.step;
                let minus = eval(&xs, false)?.0.value;
                xs[i].data_mut()[e] = orig;
                let numeric = (plus - minus) / (2.0 * self.step);
                worst = worst.max(relative_error(analytic[i].data()[e], numeric, base.magnitude));
                checked += 1;
            }
        }
        Ok(GradCheckReport {
            name: name.to_string(),
            checked,
            max_rel_error: worst,
            tolerance: self.tolerance,
        })
    }

    /// Checks the parameter gradients of `f` over `store`, sampling
    /// `max_entries` scalars across all tensors. The output of `f` is
    /// projected onto a fixed random direction as in [`GradCheck::run`].
    pub fn run_params<F>(&self, name: &str, store: &ParamStore, f: F) -> Result<GradCheckReport>
    where
        F: Fn(&Ctx<'_>) -> Result<Var>,
    {
        let mut rng = rng::seeded(self.seed ^ 0x7061_7261);
        let tape = Tape::new();
        let ctx = Ctx::train(&tape, store);
        let out = f(&ctx)?;
        let projection = rng::uniform(&tape.shape(out), 0.5, 1.5, &mut rng);
        let (loss, base) = project(&tape, out, &projection)?;
        let analytic = ctx.param_grads(&tape.backward(loss)?);
        drop(ctx);
        drop(tape);

        let eval = |s: &ParamStore| -> Result<Scalar> {
            let tape = Tape::new();
            let out = f(&Ctx::eval(&tape, s))?;
            Ok(project(&tape, out, &projection)?.1.value)
        };
        // flat (tensor, entry) addresses over the whole store
        let sizes: Vec<usize> = store.tensors().iter().map(Tensor::numel).collect();
        let total: usize = sizes.iter().sum();
        let picks: Vec<usize> = match self.max_entries {
            Some(m) if m < total => {
                let mut v = sample(&mut rng, total, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..total).collect(),
        };
        let mut work = store.clone();
        let mut worst: Scalar = 0.0;
        for flat in &picks {
            let (mut t, mut e) = (0, *flat);
            while e >= sizes[t] {
                e -= sizes[t];
                t += 1;
            }
            let orig = store.tensors()[t].data()[e];
            work.tensors_mut()[t].data_mut()[e] = orig + self.step;
            let plus = eval(&work)?;
            work.tensors_mut()[t].data_mut()[e] = orig - self.step;
            let minus = eval(&work)?;
            work.tensors_mut()[t].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * self.step);
            worst = worst.max(relative_error(analytic[t].data()[e], numeric, base.magnitude));
        }
        Ok(GradCheckReport {
            name: name.to_string(),
            checked: picks.len(),
            max_rel_error: worst,
            tolerance: self.tolerance,
        })
    }
}

struct Projected {
    value: Scalar,
    /// `Σ|wᵢ·yᵢ|`
    magnitude: Scalar,
}

fn project(tape: &Tape, out: Var, projection: &Tensor) -> Result<(Var, Projected)> {
    let w = tape.constant(projection.clone());
    let terms = tape.mul(out, w)?;
    let loss = tape.sum_all(terms);
    let magnitude = tape.value(terms).data().iter().map(|v| v.abs()).sum();
    let value = tape.value(loss).item();
    Ok((loss, Projected { value, magnitude }))
}

/// Random tensor in `[-1, 1)` for checks.
pub fn random_input(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    rng::uniform(shape, -1.0, 1.0, rng)
}
