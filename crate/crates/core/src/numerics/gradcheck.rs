use super::graph::{Graph, ParamId, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Default central-difference step for float64.
pub const DEFAULT_STEP: f64 = 1e-4;

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// max over checked coordinates of |analytic − numeric| / max(|numeric|, 1e-8)
    pub max_relative: f64,
    pub worst_param: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

fn evaluate<F>(params: &[Tensor], loss_fn: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params
        .iter()
        .enumerate()
        .map(|(i, p)| g.param(ParamId(i), p, false))
        .collect();
    let loss = loss_fn(&mut g, &vars)?;
    Ok(g.value(loss).item())
}

/// Compares reverse-mode gradients with central finite differences.
///
/// `loss_fn` receives one graph variable per entry of `params` (registered as
/// `ParamId(i)`) and must return a scalar node.
pub fn check_gradients<F>(params: &[Tensor], step: f64, loss_fn: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    check_gradients_strided(params, step, 1, loss_fn)
}

/// Like [`check_gradients`] but only probes every `stride`-th coordinate of
/// each parameter (always including coordinate 0).
pub fn check_gradients_strided<F>(
    params: &[Tensor],
    step: f64,
    stride: usize,
    loss_fn: F,
) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::input(format!("finite-difference step must be > 0, got {step}")));
    }
    let stride = stride.max(1);

    let first = evaluate(params, &loss_fn)?;
    let second = evaluate(params, &loss_fn)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Determinism { first, second });
    }

    let mut g = Graph::new();
    let vars: Vec<Var> = params
        .iter()
        .enumerate()
        .map(|(i, p)| g.param(ParamId(i), p, true))
        .collect();
    let loss = loss_fn(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut report = GradCheck {
        max_relative: 0.0,
        worst_param: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let analytic = grads.param(ParamId(pi));
        for idx in (0..p.len()).step_by(stride) {
            let original = p.data()[idx];
            probe[pi].data_mut()[idx] = original + step;
            let plus = evaluate(&probe, &loss_fn)?;
            probe[pi].data_mut()[idx] = original - step;
            let minus = evaluate(&probe, &loss_fn)?;
            probe[pi].data_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.map_or(0.0, |t| t.data()[idx]);
            let rel = (a - numeric).abs() / numeric.abs().max(1e-8);
            report.checked += 1;
            if rel > report.max_relative {
                report.max_relative = rel;
                report.worst_param = pi;
                report.worst_index = idx;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
