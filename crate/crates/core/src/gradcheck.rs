//! Central-difference verification of tape gradients.

use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Largest coordinate-wise relative error between the backprop gradient of
/// `f` at `x0` and central differences `(f(x+h) - f(x-h)) / 2h`.
///
/// The relative error divides by `max(1, |analytic|)`.
pub fn grad_check<F>(f: F, x0: &Tensor, h: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, TensorError>,
{
    let eval = |x: &Tensor| -> Result<(Tape, Var), TensorError> {
        let mut tape = Tape::new();
        let p = tape.param_leaf("x", x.clone(), true);
        let loss = f(&mut tape, p)?;
        Ok((tape, loss))
    };
    let (tape, loss) = eval(x0)?;
    let analytic = tape
        .backprop(loss)?
        .get("x")
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x0.shape()));

    let mut worst = 0.0_f64;
    let mut x = x0.clone();
    for i in 0..x0.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let up = scalar_value(eval(&x)?)?;
        x.data_mut()[i] = orig - h;
        let down = scalar_value(eval(&x)?)?;
        x.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

/// [`grad_check`] over every trainable parameter of a store at once.
///
/// `f` builds the loss from the store; each coordinate is perturbed in a
/// private copy of the store.
pub fn grad_check_store<F>(store: &ParamStore, f: F, h: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let grads = tape.backprop(loss)?;
    drop(tape);

    let mut worst = 0.0_f64;
    let mut probe = store.clone();
    let ids: Vec<String> = store
        .iter()
        .filter(|p| p.trainable)
        .map(|p| p.id.clone())
        .collect();
    for id in ids {
        let base = store.tensor(&id)?.clone();
        let analytic = grads
            .get(&id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(base.shape()));
        for i in 0..base.len() {
            let mut shifted = base.clone();
            shifted.data_mut()[i] += h;
            probe.set(&id, shifted.clone())?;
            let up = eval_store(&probe, &f)?;
            shifted.data_mut()[i] = base.data()[i] - h;
            probe.set(&id, shifted)?;
            let down = eval_store(&probe, &f)?;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
        probe.set(&id, base)?;
    }
    Ok(worst)
}

fn eval_store<F>(store: &ParamStore, f: &F) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    scalar_value((tape, loss))
}

fn scalar_value((tape, loss): (Tape, Var)) -> Result<f64, TensorError> {
    let v = tape.value(loss).scalar().ok_or_else(|| {
        TensorError::Contract("grad_check: objective is not a scalar".to_string())
    })?;
    if !v.is_finite() {
        return Err(TensorError::NonFinite { op: "grad_check" });
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_has_exact_derivative() {
        let x0 = Tensor::vector(vec![3.0]).unwrap();
        let err = grad_check(
            |t, x| {
                let sq = t.mul(x, x)?;
                t.sum_last(sq)
            },
            &x0,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err <= 1e-9, "err = {err}");
    }

    #[test]
    fn constant_objective_has_zero_error() {
        let x0 = Tensor::vector(vec![1.0, -2.0]).unwrap();
        let err = grad_check(
            |t, _x| Ok(t.constant(Tensor::vector(vec![4.0]).unwrap())),
            &x0,
            DEFAULT_STEP,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let x0 = Tensor::vector(vec![1e-6]).unwrap();
        let r = grad_check(
            |t, x| {
                let shifted = t.scale(x, 1.0)?;
                let l = t.ln(shifted)?;
                t.sum_last(l)
            },
            &x0,
            1e-5,
        );
        assert!(matches!(r, Err(TensorError::NonFinite { .. })));
    }
}
