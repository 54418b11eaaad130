//! Shape-keyed routing of operator calls to the fastest validated solution.

mod apply;
mod index;

pub use apply::{DispatchStats, Dispatcher, ImplFn, Registry};
pub use index::{
    bucket, build_index, samples_from_dataset, Bootstrap, DispatchIndex, DispatchKey, IndexEntry, IndexMeta, IndexSample,
    INDEX_VERSION,
};

use std::collections::BTreeMap;

use thiserror::Error;

/// Environment variable that turns routing on when set to `1`.
pub const ENABLE_ENV: &str = "FIB_ENABLE_APPLY";

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("the index has no entries; every call falls back")]
    EmptyDataset,
    #[error("invalid apply configuration: {0}")]
    InvalidConfig(String),
    #[error("index document: {0}")]
    Document(String),
    #[error("index file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApplyConfig {
    /// Largest accepted `max_relative_error`; `None` keeps every passing evaluation.
    pub error_threshold: Option<f64>,
    /// Fraction of distinct selected solutions bootstrapped eagerly.
    pub aot_ratio: f64,
    pub enabled: bool,
    /// Per-definition feature axes; absent definitions use all var axes.
    pub feature_axes: BTreeMap<String, Vec<String>>,
}

impl Default for ApplyConfig {
    fn default() -> Self {
        ApplyConfig {
            error_threshold: None,
            aot_ratio: 0.5,
            enabled: false,
            feature_axes: BTreeMap::new(),
        }
    }
}

impl ApplyConfig {
    /// Defaults with `enabled` read from the environment.
    pub fn from_env() -> Self {
        ApplyConfig {
            enabled: enabled_from_env(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), DispatchError> {
        if !(0.0..=1.0).contains(&self.aot_ratio) {
            return Err(DispatchError::InvalidConfig(format!("aot ratio {} outside [0, 1]", self.aot_ratio)));
        }
        if let Some(t) = self.error_threshold {
            if t.is_nan() || t < 0.0 {
                return Err(DispatchError::InvalidConfig(format!("error threshold {t} must be non-negative")));
            }
        }
        Ok(())
    }
}

pub fn enabled_from_env() -> bool {
    std::env::var(ENABLE_ENV).is_ok_and(|v| v.trim() == "1")
}
