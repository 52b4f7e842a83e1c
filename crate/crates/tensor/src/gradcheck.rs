//! Central finite-difference verification of tape gradients.

use crate::error::{Result, TensorError};
use crate::params::ParamSet;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Floor on the denominator of the relative error, so that coordinates
/// whose true gradient is ~0 are compared absolutely.
pub const REL_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(TensorError::Param(format!("grad_check eps {eps} outside [1e-7, 1e-3]")));
    }
    Ok(())
}

fn scalar_output(tape: &Tape<f64>, out: Var) -> Result<f64> {
    let v = tape.value(out);
    if !v.is_scalar() {
        return Err(TensorError::Contract(format!("function returned shape {:?}, expected scalar", v.shape())));
    }
    Ok(v.data()[0])
}

/// Compares backward gradients of `f` with respect to every input against
/// central differences and returns the worst relative error.
pub fn grad_check<Fun>(f: Fun, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    Fun: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    check_eps(eps)?;
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let out = f(&mut tape, &vars)?;
        scalar_output(&tape, out)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    scalar_output(&tape, out)?;
    tape.backward(out)?;
    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + eps;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = orig - eps;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            worst = worst.max(relative_error(analytic[j], (plus - minus) / (2.0 * eps)));
        }
    }
    Ok(worst)
}

/// Per-parameter worst relative error for a loss built from a parameter set.
/// Only trainable parameters are checked.
pub fn grad_check_params<Fun>(f: Fun, params: &ParamSet<f64>, eps: f64) -> Result<Vec<(String, f64)>>
where
    Fun: Fn(&mut Tape<f64>, &ParamSet<f64>) -> Result<Var>,
{
    check_eps(eps)?;
    let mut work = params.clone();
    work.zero_grad();
    let mut tape = Tape::new();
    let out = f(&mut tape, &work)?;
    scalar_output(&tape, out)?;
    tape.backward(out)?;
    tape.accumulate_param_grads(&mut work);
    let analytic: Vec<Vec<f64>> = work.iter().map(|(_, p)| p.grad.clone()).collect();
    let eval = |ps: &ParamSet<f64>| -> Result<f64> {
        let mut tape = Tape::inference();
        let out = f(&mut tape, ps)?;
        scalar_output(&tape, out)
    };
    let ids: Vec<_> = work.iter().filter(|(_, p)| !p.frozen).map(|(id, _)| id).collect();
    let mut report = Vec::new();
    for id in ids {
        let mut worst = 0.0f64;
        for j in 0..work.get(id).value.numel() {
            let orig = work.get(id).value.data()[j];
            work.get_mut(id).value.data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work.get_mut(id).value.data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work.get_mut(id).value.data_mut()[j] = orig;
            worst = worst.max(relative_error(analytic[id.0][j], (plus - minus) / (2.0 * eps)));
        }
        report.push((work.get(id).name.clone(), worst));
    }
    Ok(report)
}
