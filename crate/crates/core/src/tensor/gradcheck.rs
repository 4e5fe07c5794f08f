//! Central finite differences against recorded gradients.

use super::{Tape, Tensor, TensorError, Var};

/// Step used by every gradient check in this crate.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so that two gradients that are
/// both numerically zero do not register as a mismatch. Central
/// differences of an O(10) loss carry round-off near 1e-10.
pub const REL_FLOOR: f64 = 1e-5;

/// `‖a − n‖ / max(‖a‖, ‖n‖, REL_FLOOR)`, computed over a whole tensor.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let sq = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = sq(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = sq(&mut analytic.iter().copied())
        .max(sq(&mut numeric.iter().copied()))
        .max(REL_FLOOR);
    diff / scale
}

/// Pins a closure to the higher-ranked signature the checks expect.
pub fn objective<E, F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, E>,
{
    f
}

/// Central-difference gradient of a scalar function of `inputs[which]`.
pub fn numerical_grad<E, F>(
    inputs: &[Tensor],
    which: usize,
    step: f64,
    f: &F,
) -> Result<Vec<f64>, E>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, E>,
{
    let eval = |perturbed: &Tensor| -> Result<f64, E> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                tape.leaf(if i == which {
                    perturbed.clone()
                } else {
                    t.clone()
                })
            })
            .collect();
        Ok(f(&tape, &vars)?.item())
    };
    let mut probe = inputs[which].clone();
    let mut out = Vec::with_capacity(probe.numel());
    for k in 0..probe.numel() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + step;
        let plus = eval(&probe)?;
        probe.data_mut()[k] = orig - step;
        let minus = eval(&probe)?;
        probe.data_mut()[k] = orig;
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// Recorded gradients of `f` with respect to every input.
pub fn analytic_grads<E, F>(inputs: &[Tensor], f: &F) -> Result<Vec<Vec<f64>>, E>
where
    E: From<TensorError>,
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, E>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    tape.backward(loss)?;
    Ok(vars.iter().map(|v| v.grad().into_data()).collect())
}

/// Per-input relative errors between recorded and finite-difference gradients.
///
/// `bias` is added to every recorded gradient entry before comparison; it is
/// zero except when deliberately injecting a fault.
pub fn check<E, F>(inputs: &[Tensor], step: f64, bias: f64, f: &F) -> Result<Vec<f64>, E>
where
    E: From<TensorError>,
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, E>,
{
    let analytic = analytic_grads(inputs, f)?;
    let mut errors = Vec::with_capacity(inputs.len());
    for (i, a) in analytic.iter().enumerate() {
        let a: Vec<f64> = a.iter().map(|v| v + bias).collect();
        let n = numerical_grad(inputs, i, step, f)?;
        errors.push(relative_error(&a, &n));
    }
    Ok(errors)
}

/// Largest per-input relative error.
pub fn max_error<E, F>(inputs: &[Tensor], f: &F) -> Result<f64, E>
where
    E: From<TensorError>,
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, E>,
{
    Ok(check(inputs, DEFAULT_STEP, 0.0, f)?
        .into_iter()
        .fold(0.0, f64::max))
}
