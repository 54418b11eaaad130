//! Correctness regimes: elementwise tolerance, matched ratio for low-precision
//! outputs, and total-variation testing for samplers.

mod elementwise;
mod stochastic;

use serde_json::{Map, Value};
use thiserror::Error;

use crate::tensor::DType;

pub use elementwise::{check_deterministic, check_matched_ratio, relative_error};
pub use stochastic::{check_stochastic, check_stochastic_rows, trial_seeds, tvd, RowTarget};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidateError {
    #[error("shape mismatch: solution {actual:?}, reference {expected:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },
    #[error("dtype mismatch: solution {actual}, reference {expected}")]
    DTypeMismatch { expected: DType, actual: DType },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("sampler failed: {0}")]
    SamplerCrashed(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Elementwise bound `|y_sol - y_ref| <= eps_abs + eps_rel * |y_ref|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub eps_abs: f64,
    pub eps_rel: f64,
}

impl Tolerance {
    pub const EXACT: Tolerance = Tolerance {
        eps_abs: 0.0,
        eps_rel: 0.0,
    };

    pub fn new(eps_abs: f64, eps_rel: f64) -> Result<Self, ValidateError> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if ok(eps_abs) && ok(eps_rel) {
            Ok(Tolerance { eps_abs, eps_rel })
        } else {
            Err(ValidateError::InvalidConfig(format!(
                "tolerances must be finite and non-negative, got ({eps_abs}, {eps_rel})"
            )))
        }
    }

    /// Per-dtype defaults; integer outputs compare exactly.
    pub fn default_for(dtype: DType) -> Self {
        match dtype {
            DType::F32 => Tolerance { eps_abs: 1e-5, eps_rel: 1e-5 },
            DType::F16 | DType::F8E4M3 => Tolerance { eps_abs: 1e-3, eps_rel: 1e-3 },
            DType::BF16 => Tolerance { eps_abs: 1e-2, eps_rel: 1e-2 },
            DType::I32 | DType::I64 => Tolerance::EXACT,
        }
    }

    #[inline]
    pub fn bound(&self, reference: f64) -> f64 {
        self.eps_abs + self.eps_rel * reference.abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StochasticConfig {
    pub trials: usize,
    pub tau_tvd: f64,
    pub seed: u64,
}

impl Default for StochasticConfig {
    fn default() -> Self {
        StochasticConfig {
            trials: 20_000,
            tau_tvd: 0.02,
            seed: 0,
        }
    }
}

impl StochasticConfig {
    pub fn validate(&self) -> Result<(), ValidateError> {
        if self.trials == 0 || !(self.tau_tvd > 0.0 && self.tau_tvd <= 1.0) {
            return Err(ValidateError::InvalidConfig(format!(
                "trials >= 1 and tau in (0, 1] required, got {} and {}",
                self.trials, self.tau_tvd
            )));
        }
        Ok(())
    }
}

pub const DEFAULT_RHO: f64 = 0.95;

/// Which check applies to an output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime {
    Deterministic(Tolerance),
    MatchedRatio { tol: Tolerance, rho: f64 },
    Stochastic(StochasticConfig),
}

impl Regime {
    /// Default regime for a deterministic output of `dtype`.
    pub fn default_for(dtype: DType) -> Self {
        match dtype {
            DType::F8E4M3 => Regime::MatchedRatio {
                tol: Tolerance::default_for(dtype),
                rho: DEFAULT_RHO,
            },
            _ => Regime::Deterministic(Tolerance::default_for(dtype)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationVerdict {
    pub passed: bool,
    pub max_absolute_error: f64,
    pub max_relative_error: f64,
    pub failing_fraction: f64,
    pub detail: String,
    pub extra: Map<String, Value>,
}

impl ValidationVerdict {
    pub fn pass() -> Self {
        ValidationVerdict {
            passed: true,
            max_absolute_error: 0.0,
            max_relative_error: 0.0,
            failing_fraction: 0.0,
            detail: String::new(),
            extra: Map::new(),
        }
    }

    /// Combines verdicts of several outputs: fails if any fails, maxima over all.
    pub fn merge(mut self, name: &str, other: ValidationVerdict) -> Self {
        self.passed &= other.passed;
        self.max_absolute_error = self.max_absolute_error.max(other.max_absolute_error);
        self.max_relative_error = self.max_relative_error.max(other.max_relative_error);
        self.failing_fraction = self.failing_fraction.max(other.failing_fraction);
        if !other.detail.is_empty() {
            if !self.detail.is_empty() {
                self.detail.push_str("; ");
            }
            self.detail.push_str(&format!("{name}: {}", other.detail));
        }
        for (k, v) in other.extra {
            self.extra.insert(format!("{name}.{k}"), v);
        }
        self
    }
}
