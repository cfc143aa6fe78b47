//! Central finite-difference gradient checking.

use super::{Result, Tape, Tensor, Var};
use crate::scalar::Real;

const EPS: f64 = 1e-5;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-8)
}

/// Largest relative error between the analytic gradient of the scalar `f`
/// and central differences of step 1e-5, over every coordinate of `x`.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    grad_check_vars(|tape, vs| f(tape, vs[0]), std::slice::from_ref(x))
}

/// As [`grad_check`] for a function of several inputs.
pub fn grad_check_vars<T, F>(f: F, xs: &[Tensor<T>]) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor<T>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item().to_f64_lossy())
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut worst = 0.0f64;
    let mut inputs = xs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(&tape, v);
        for i in 0..xs[k].len() {
            let orig = inputs[k].data()[i];
            inputs[k].data_mut()[i] = orig + T::lit(EPS);
            let up = eval(&inputs)?;
            inputs[k].data_mut()[i] = orig - T::lit(EPS);
            let down = eval(&inputs)?;
            inputs[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * EPS);
            worst = worst.max(rel_err(analytic.data()[i].to_f64_lossy(), numeric));
        }
    }
    Ok(worst)
}
