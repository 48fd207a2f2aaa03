//! Optimizer heads: predictions plus the task loss.

use super::{affine, BlockError, ParamSpec};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Probabilities are clipped to `[CLIP, 1 - CLIP]` inside the log loss.
pub const CLIP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatingHeadType {
    /// Prediction is the row sum of the input.
    Sum,
    /// Prediction is `x · w + b`.
    Linear,
}

impl RatingHeadType {
    pub fn from_name(s: &str) -> Result<Self, BlockError> {
        match s {
            "sum" => Ok(Self::Sum),
            "linear" => Ok(Self::Linear),
            other => Err(BlockError::Config(format!(
                "unknown rating head type `{other}`"
            ))),
        }
    }
}

pub(crate) fn linear_params(width: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::weight("kernel", &[width, 1]),
        ParamSpec::bias("bias", 1),
    ]
}

fn column(targets: &[f64]) -> Result<Tensor, BlockError> {
    Ok(Tensor::matrix(targets.len(), 1, targets.to_vec())?)
}

fn check_batch(tape: &Tape, x: Var, n: usize) -> Result<(), BlockError> {
    let rows = tape.value(x).rows();
    if rows != n {
        return Err(BlockError::Data(format!(
            "{n} targets for a batch of {rows} rows"
        )));
    }
    Ok(())
}

/// Mean over the batch of a `batch × 1` column, as a `1 × 1` tensor.
fn batch_mean(tape: &mut Tape, col: Var) -> Result<Var, BlockError> {
    let rows = tape.value(col).rows();
    let flat = tape.reshape(col, &[1, rows])?;
    Ok(tape.mean_last(flat)?)
}

/// `mean((pred - target)²)` for a `batch × 1` prediction column.
pub fn mse_loss(tape: &mut Tape, pred: Var, targets: &[f64]) -> Result<Var, BlockError> {
    check_batch(tape, pred, targets.len())?;
    let t = tape.constant(column(targets)?);
    let diff = tape.sub(pred, t)?;
    let sq = tape.mul(diff, diff)?;
    batch_mean(tape, sq)
}

/// Binary cross-entropy of probabilities `p` against 0/1 labels, with `p`
/// clipped to `[1e-7, 1 - 1e-7]`.
pub fn logloss(tape: &mut Tape, p: Var, labels: &[f64]) -> Result<Var, BlockError> {
    check_batch(tape, p, labels.len())?;
    if let Some((row, y)) = labels
        .iter()
        .enumerate()
        .find(|(_, &y)| y != 0.0 && y != 1.0)
    {
        return Err(BlockError::Data(format!(
            "label {y} at row {row} is not 0 or 1"
        )));
    }
    let n = labels.len();
    let lo = tape.constant(Tensor::filled(&[n, 1], CLIP));
    let hi = tape.constant(Tensor::filled(&[n, 1], 1.0 - CLIP));
    let ones = tape.constant(Tensor::filled(&[n, 1], 1.0));
    let clipped = tape.max(p, lo)?;
    let clipped = tape.min(clipped, hi)?;
    let complement = tape.sub(ones, clipped)?;
    let log_p = tape.ln(clipped)?;
    let log_q = tape.ln(complement)?;
    let y = tape.constant(column(labels)?);
    let not_y = tape.constant(column(&labels.iter().map(|y| 1.0 - y).collect::<Vec<_>>())?);
    let pos = tape.mul(y, log_p)?;
    let neg = tape.mul(not_y, log_q)?;
    let ll = tape.add(pos, neg)?;
    let mean = batch_mean(tape, ll)?;
    Ok(tape.scale(mean, -1.0)?)
}

/// Linear weights of a head, when it has any.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub kernel: Var,
    pub bias: Var,
}

/// Rating prediction head: returns `(predictions, mse)` with predictions as
/// a `batch × 1` column.
pub fn rating_head(
    tape: &mut Tape,
    x: Var,
    linear: Option<Linear>,
    targets: &[f64],
) -> Result<(Var, Var), BlockError> {
    let pred = match linear {
        None => tape.sum_last(x)?,
        Some(l) => affine(tape, x, l.kernel, l.bias)?,
    };
    let loss = mse_loss(tape, pred, targets)?;
    Ok((pred, loss))
}

/// Click-through head: returns `(probabilities, logloss)`.
pub fn ctr_head(
    tape: &mut Tape,
    x: Var,
    linear: Linear,
    labels: &[f64],
) -> Result<(Var, Var), BlockError> {
    let z = affine(tape, x, linear.kernel, linear.bias)?;
    let p = tape.sigmoid(z)?;
    let loss = logloss(tape, p, labels)?;
    Ok((p, loss))
}
