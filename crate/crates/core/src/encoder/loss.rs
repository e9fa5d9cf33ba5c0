use ndarray::Array2;

use crate::error::{Error, Result};

/// Target sentinel for positions that do not contribute to the loss.
pub const IGNORE: u32 = u32::MAX;

/// Mean negative log-likelihood over the rows whose target is not
/// `ignore_index`.
pub fn cross_entropy(logits: &Array2<f64>, targets: &[u32], ignore_index: u32) -> Result<f64> {
    cross_entropy_with_grad(logits, targets, ignore_index, false).map(|(l, _)| l)
}

/// Sum (not mean) of per-row losses and, optionally, d(sum)/d(logits).
pub(crate) fn cross_entropy_sum(
    logits: &Array2<f64>,
    targets: &[u32],
    ignore_index: u32,
    want_grad: bool,
) -> Result<(f64, usize, Option<Array2<f64>>)> {
    if logits.nrows() != targets.len() {
        return Err(Error::Shape(format!(
            "{} logit rows but {} targets",
            logits.nrows(),
            targets.len()
        )));
    }
    let classes = logits.ncols();
    let mut total = 0.0;
    let mut count = 0;
    let mut grad = want_grad.then(|| Array2::zeros(logits.dim()));
    for (i, (row, &t)) in logits.rows().into_iter().zip(targets).enumerate() {
        if t == ignore_index {
            continue;
        }
        let t = t as usize;
        if t >= classes {
            return Err(Error::Shape(format!("target {t} outside {classes} classes")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        total += log_z - row[t];
        count += 1;
        if let Some(g) = grad.as_mut() {
            for (j, &v) in row.iter().enumerate() {
                g[[i, j]] = (v - log_z).exp();
            }
            g[[i, t]] -= 1.0;
        }
    }
    if !total.is_finite() {
        return Err(Error::Numeric(format!("loss is {total}")));
    }
    Ok((total, count, grad))
}

fn cross_entropy_with_grad(
    logits: &Array2<f64>,
    targets: &[u32],
    ignore_index: u32,
    want_grad: bool,
) -> Result<(f64, Option<Array2<f64>>)> {
    let (sum, count, grad) = cross_entropy_sum(logits, targets, ignore_index, want_grad)?;
    if count == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok((sum / count as f64, grad.map(|g| g / count as f64)))
}
