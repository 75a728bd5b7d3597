//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};

/// Default finite-difference step for 64-bit evaluation with the
/// fourth-order stencil.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Denominator floor for the relative error.
const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Index of the worst entry, if any were checked.
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares the analytic gradient reported by `f` against the five-point
/// central difference `(f(-2h) - 8f(-h) + 8f(h) - f(2h)) / 12h`.
///
/// `f` maps a parameter vector to `(value, gradient)`. It is evaluated once at
/// `params` for the analytic gradient and four times per entry for the
/// numeric one.
pub fn grad_check<F>(params: &[f64], h: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::Invalid(format!("step must be positive, got {h}")));
    }
    let (value, analytic) = f(params)?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("f(θ) = {value}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::shape(
            "grad_check",
            format!("{} gradient entries for {} params", analytic.len(), params.len()),
        ));
    }
    let mut theta = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    let mut worst = (0.0f64, None);
    for i in 0..theta.len() {
        let orig = theta[i];
        let mut at = |offset: f64| -> Result<f64> {
            theta[i] = orig + offset;
            let (v, _) = f(&theta)?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("f = {v} at entry {i}, offset {offset}")));
            }
            Ok(v)
        };
        let (m2, m1, p1, p2) = (at(-2.0 * h)?, at(-h)?, at(h)?, at(2.0 * h)?);
        theta[i] = orig;
        let num = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h);
        let err = relative_error(analytic[i], num);
        if worst.1.is_none() || err > worst.0 {
            worst = (err, Some(i));
        }
        numeric.push(num);
    }
    Ok(GradCheckReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        checked: params.len(),
        analytic,
        numeric,
    })
}
