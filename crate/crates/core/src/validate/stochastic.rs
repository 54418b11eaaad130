use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{StochasticConfig, ValidateError, ValidationVerdict};

/// `(1/2) Σ |q_i - f_i|`.
pub fn tvd(q: &[f64], f_hat: &[f64]) -> Result<f64, ValidateError> {
    if q.len() != f_hat.len() {
        return Err(ValidateError::LengthMismatch(q.len(), f_hat.len()));
    }
    Ok(0.5 * q.iter().zip(f_hat).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Per-trial sampler seeds; a pure function of `cfg.seed`.
pub fn trial_seeds(seed: u64) -> impl Iterator<Item = u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::iter::repeat_with(move || rng.random())
}

/// Mask and target distribution for one sampled row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowTarget {
    pub mask: Vec<bool>,
    pub q: Vec<f64>,
}

/// Stochastic check for a kernel that samples one token per row per call.
///
/// `sampler(trial_seed)` returns one index per row. Any index outside its
/// row's mask fails immediately; otherwise the verdict passes iff every
/// row's TVD against its target is at most `cfg.tau_tvd`.
pub fn check_stochastic_rows(
    mut sampler: impl FnMut(u64) -> Result<Vec<usize>, String>,
    targets: &[RowTarget],
    cfg: &StochasticConfig,
) -> Result<ValidationVerdict, ValidateError> {
    cfg.validate()?;
    let mut counts: Vec<Vec<u64>> = targets.iter().map(|t| vec![0; t.q.len()]).collect();
    for (trial, seed) in trial_seeds(cfg.seed).take(cfg.trials).enumerate() {
        let draws = sampler(seed).map_err(ValidateError::SamplerCrashed)?;
        if draws.len() != targets.len() {
            return Err(ValidateError::LengthMismatch(draws.len(), targets.len()));
        }
        for (row, (&tok, t)) in draws.iter().zip(targets).enumerate() {
            if !t.mask.get(tok).copied().unwrap_or(false) {
                let mut v = ValidationVerdict::pass();
                v.passed = false;
                v.failing_fraction = 1.0;
                v.detail = format!("mask violation at trial {trial}: row {row} sampled token {tok}");
                v.extra.insert("mask_violation".into(), true.into());
                v.extra.insert("trials_run".into(), (trial + 1).into());
                return Ok(v);
            }
            counts[row][tok] += 1;
        }
    }

    let n = cfg.trials as f64;
    let mut v = ValidationVerdict::pass();
    let mut worst = 0.0f64;
    let mut failing_rows = 0;
    for (t, c) in targets.iter().zip(&counts) {
        let f: Vec<f64> = c.iter().map(|&k| k as f64 / n).collect();
        let d = tvd(&t.q, &f)?;
        worst = worst.max(d);
        if d > cfg.tau_tvd {
            failing_rows += 1;
        }
        for (qi, fi) in t.q.iter().zip(&f) {
            let err = (qi - fi).abs();
            v.max_absolute_error = v.max_absolute_error.max(err);
            if *qi > 0.0 {
                v.max_relative_error = v.max_relative_error.max(err / qi);
            }
        }
    }
    v.passed = failing_rows == 0;
    v.failing_fraction = if targets.is_empty() { 0.0 } else { failing_rows as f64 / targets.len() as f64 };
    if !v.passed {
        v.detail = format!("tvd {worst} exceeds tau {}", cfg.tau_tvd);
    }
    v.extra.insert("tvd".into(), worst.into());
    v.extra.insert("trials".into(), cfg.trials.into());
    Ok(v)
}

/// Single-distribution form of [`check_stochastic_rows`].
pub fn check_stochastic(
    mut sampler: impl FnMut(u64) -> Result<usize, String>,
    target: &RowTarget,
    cfg: &StochasticConfig,
) -> Result<ValidationVerdict, ValidateError> {
    check_stochastic_rows(|s| sampler(s).map(|i| vec![i]), std::slice::from_ref(target), cfg)
}
