//! Evaluation metrics.

use crate::error::{Error, Result};

fn check_lengths(a: usize, b: usize, c: Option<usize>) -> Result<()> {
    if a == 0 {
        return Err(Error::config("metric needs at least one point"));
    }
    if a != b || c.is_some_and(|c| c != a) {
        return Err(Error::config(format!("metric inputs have mismatched lengths ({a}, {b}{})",
            c.map(|c| format!(", {c}")).unwrap_or_default())));
    }
    Ok(())
}

/// Fraction of points with `exact` inside `mean +- 2 std` (closed interval).
pub fn picp(exact: &[f64], mean: &[f64], std: &[f64]) -> Result<f64> {
    check_lengths(exact.len(), mean.len(), Some(std.len()))?;
    let covered = exact
        .iter()
        .zip(mean)
        .zip(std)
        .filter(|((&e, &m), &s)| (e - m).abs() <= 2.0 * s)
        .count();
    Ok(covered as f64 / exact.len() as f64)
}

/// `(1/N) sqrt(sum r^2)` — note this is RMSE divided by `sqrt(N)`.
pub fn error_e(exact: &[f64], pred: &[f64]) -> Result<f64> {
    check_lengths(exact.len(), pred.len(), None)?;
    let ss: f64 = exact.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(ss.sqrt() / exact.len() as f64)
}

pub fn rmse(exact: &[f64], pred: &[f64]) -> Result<f64> {
    check_lengths(exact.len(), pred.len(), None)?;
    let ss: f64 = exact.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / exact.len() as f64).sqrt())
}
