//! Central finite-difference comparison against the tape gradients (f64 only).

use crate::error::Result;
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Denominator floor of the relative error, so entries whose true gradient is
/// essentially zero are judged on absolute error instead.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Worst {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst: Option<Worst>,
}

impl GradReport {
    fn empty() -> Self {
        Self {
            max_rel_err: 0.0,
            checked: 0,
            worst: None,
        }
    }

    fn observe(&mut self, input: usize, index: usize, analytic: f64, numeric: f64) {
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        self.checked += 1;
        if err > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(err);
            self.worst = Some(Worst {
                input,
                index,
                analytic,
                numeric,
            });
        }
    }

    pub fn merge(self, other: GradReport) -> GradReport {
        let worst = if other.max_rel_err > self.max_rel_err { other.worst } else { self.worst };
        GradReport {
            max_rel_err: self.max_rel_err.max(other.max_rel_err),
            checked: self.checked + other.checked,
            worst,
        }
    }
}

/// Fourth-order central difference of `g` at offset 0.
fn derivative(mut g: impl FnMut(f64) -> Result<f64>, step: f64) -> Result<f64> {
    let near = g(step)? - g(-step)?;
    let far = g(2.0 * step)? - g(-2.0 * step)?;
    Ok((8.0 * near - far) / (12.0 * step))
}

/// Checks `∂f/∂inputs` for a scalar-valued `f`.
pub fn check_inputs<F>(f: F, inputs: &[Tensor<f64>], step: f64) -> Result<GradReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_, f64>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let grads = f(&tape, &vars)?.backward()?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::inference();
        let vars: Vec<Var<'_, f64>> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.value().item())
    };

    let mut report = GradReport::empty();
    let mut xs = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let orig = input.data()[j];
            let numeric = derivative(
                |d| {
                    xs[i].data_mut()[j] = orig + d;
                    eval(&xs)
                },
                step,
            )?;
            xs[i].data_mut()[j] = orig;
            report.observe(i, j, analytic[i].data()[j], numeric);
        }
    }
    Ok(report)
}

/// Checks `∂f/∂params` for the listed parameters of a store.
pub fn check_params<F>(f: F, store: &ParamStore<f64>, ids: &[ParamId], step: f64) -> Result<GradReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &'t ParamStore<f64>) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let grads = f(&tape, store)?.backward()?;
    let mut work = store.clone();
    let mut report = GradReport::empty();
    for (slot, &id) in ids.iter().enumerate() {
        let base = store.value(id).clone();
        let analytic = grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(base.shape()));
        for j in 0..base.numel() {
            let numeric = derivative(
                |d| {
                    let mut probe = base.clone();
                    probe.data_mut()[j] += d;
                    work.set_value(id, probe);
                    Ok(f(&Tape::inference(), &work)?.value().item())
                },
                step,
            )?;
            report.observe(slot, j, analytic.data()[j], numeric);
        }
        work.set_value(id, base);
    }
    Ok(report)
}
