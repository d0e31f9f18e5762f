use crate::error::{DapError, Result};
use crate::numcore::tape::{DiffContext, Var};
use crate::numcore::tensor::Tensor;

/// A scalar function expressed in tape primitives: given a context and the
/// leaf Vars for `params` (in order), build and return the scalar output.
pub type ScalarFn<'a> = dyn Fn(&mut DiffContext, &[Var]) -> Result<Var> + 'a;

fn eval(f: &ScalarFn, params: &[Tensor]) -> Result<f64> {
    let mut ctx = DiffContext::new();
    let vars: Vec<Var> = params.iter().map(|p| ctx.leaf(p.clone())).collect();
    let out = f(&mut ctx, &vars)?;
    ctx.value(out).item()
}

/// Compare reverse-mode gradients of `f` against central finite differences,
/// coordinate by coordinate. Returns the worst relative error, with the
/// denominator floored at 1e-8 to avoid blowups where both gradients vanish.
pub fn grad_check(f: &ScalarFn, params: &[Tensor], eps: f64) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(DapError::Contract(format!(
            "grad_check: eps {eps} outside [1e-7, 1e-3]"
        )));
    }
    let mut ctx = DiffContext::new();
    let vars: Vec<Var> = params.iter().map(|p| ctx.leaf(p.clone())).collect();
    let out = f(&mut ctx, &vars)?;
    if !ctx.value(out).is_scalar() {
        return Err(DapError::Contract(format!(
            "grad_check: function output must be scalar, got shape {:?}",
            ctx.value(out).shape()
        )));
    }
    let grads = ctx.backward(out)?;

    let mut worst = 0.0f64;
    for (pi, p) in params.iter().enumerate() {
        let analytic = grads.get(vars[pi]);
        for ci in 0..p.len() {
            let a = analytic.map(|t| t.data()[ci]).unwrap_or(0.0);
            let mut lo = p.data().to_vec();
            let mut hi = lo.clone();
            lo[ci] -= eps;
            hi[ci] += eps;
            let mut perturbed = params.to_vec();
            perturbed[pi] = Tensor::new(p.shape().to_vec(), hi)?;
            let f_hi = eval(f, &perturbed)?;
            perturbed[pi] = Tensor::new(p.shape().to_vec(), lo)?;
            let f_lo = eval(f, &perturbed)?;
            let numeric = (f_hi - f_lo) / (2.0 * eps);
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
