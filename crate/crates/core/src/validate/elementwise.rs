use super::{Tolerance, ValidateError, ValidationVerdict};
use crate::tensor::Tensor;

const REL_FLOOR: f64 = 1e-12;

/// Relative error used for reporting only; pass/fail never depends on it.
pub fn relative_error(sol: f64, reference: f64) -> f64 {
    (sol - reference).abs() / reference.abs().max(REL_FLOOR)
}

struct Scan {
    within: usize,
    unmatched_non_finite: usize,
    first_bad: Option<usize>,
    max_abs: f64,
    max_rel: f64,
}

fn scan(sol: &Tensor, reference: &Tensor, tol: &Tolerance) -> Result<Scan, ValidateError> {
    if sol.shape() != reference.shape() {
        return Err(ValidateError::ShapeMismatch {
            expected: reference.shape().to_vec(),
            actual: sol.shape().to_vec(),
        });
    }
    if sol.dtype() != reference.dtype() {
        return Err(ValidateError::DTypeMismatch {
            expected: reference.dtype(),
            actual: sol.dtype(),
        });
    }
    let mut s = Scan {
        within: 0,
        unmatched_non_finite: 0,
        first_bad: None,
        max_abs: 0.0,
        max_rel: 0.0,
    };
    for i in 0..sol.numel() {
        let (y, r) = (sol.get_f64(i), reference.get_f64(i));
        let ok = if y.is_finite() && r.is_finite() {
            let err = (y - r).abs();
            s.max_abs = s.max_abs.max(err);
            s.max_rel = s.max_rel.max(relative_error(y, r));
            err <= tol.bound(r)
        } else if !r.is_finite() && y == r {
            // The reference itself is infinite here (e.g. lse of an empty row).
            true
        } else {
            s.unmatched_non_finite += 1;
            false
        };
        if ok {
            s.within += 1;
        } else if s.first_bad.is_none() {
            s.first_bad = Some(i);
        }
    }
    Ok(s)
}

fn verdict(s: Scan, n: usize, passed: bool, sol: &Tensor, reference: &Tensor) -> ValidationVerdict {
    let failing = n - s.within;
    let mut detail = String::new();
    if s.unmatched_non_finite > 0 {
        detail = format!("{} non-finite output element(s)", s.unmatched_non_finite);
    } else if failing > 0 {
        let i = s.first_bad.unwrap_or(0);
        detail = format!(
            "{failing}/{n} element(s) out of tolerance; first at flat index {i}: {} vs {}",
            sol.get_f64(i),
            reference.get_f64(i)
        );
    }
    ValidationVerdict {
        passed,
        max_absolute_error: s.max_abs,
        max_relative_error: s.max_rel,
        failing_fraction: if n == 0 { 0.0 } else { failing as f64 / n as f64 },
        detail,
        extra: Default::default(),
    }
}

/// Every element within tolerance and no non-finite solution values
/// (except where the reference holds the same infinity).
pub fn check_deterministic(sol: &Tensor, reference: &Tensor, tol: Tolerance) -> Result<ValidationVerdict, ValidateError> {
    let s = scan(sol, reference, &tol)?;
    let n = sol.numel();
    let passed = s.within == n;
    Ok(verdict(s, n, passed, sol, reference))
}

/// At least a fraction `rho` of elements within tolerance, and no non-finite values.
pub fn check_matched_ratio(
    sol: &Tensor,
    reference: &Tensor,
    tol: Tolerance,
    rho: f64,
) -> Result<ValidationVerdict, ValidateError> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(ValidateError::InvalidConfig(format!("rho must be in (0, 1], got {rho}")));
    }
    let s = scan(sol, reference, &tol)?;
    let n = sol.numel();
    let ratio = if n == 0 { 1.0 } else { s.within as f64 / n as f64 };
    let passed = s.unmatched_non_finite == 0 && ratio >= rho;
    let mut v = verdict(s, n, passed, sol, reference);
    v.extra.insert("matched_ratio".into(), ratio.into());
    Ok(v)
}
