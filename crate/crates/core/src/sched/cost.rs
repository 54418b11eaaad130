use std::collections::{BTreeMap, BTreeSet};

use super::{Job, SchedError};

/// Per-(solution, worker) latency estimates in milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    costs: BTreeMap<(String, String), f64>,
    default_cost: f64,
    alpha: f64,
}

pub const DEFAULT_ALPHA: f64 = 0.3;
pub const DEFAULT_COST_MS: f64 = 100.0;

impl Default for CostModel {
    fn default() -> Self {
        CostModel::new(DEFAULT_COST_MS, DEFAULT_ALPHA).expect("defaults are valid")
    }
}

fn positive_finite(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

impl CostModel {
    pub fn new(default_cost: f64, alpha: f64) -> Result<Self, SchedError> {
        if !positive_finite(default_cost) {
            return Err(SchedError::InvalidConfig(format!("default cost {default_cost} must be positive and finite")));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(SchedError::InvalidConfig(format!("alpha {alpha} must lie in (0, 1]")));
        }
        Ok(CostModel {
            costs: BTreeMap::new(),
            default_cost,
            alpha,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn default_cost(&self) -> f64 {
        self.default_cost
    }

    pub fn get(&self, solution: &str, worker: &str) -> Option<f64> {
        self.costs.get(&(solution.to_string(), worker.to_string())).copied()
    }

    pub fn estimate(&self, solution: &str, worker: &str) -> f64 {
        self.get(solution, worker).unwrap_or(self.default_cost)
    }

    /// `cost' = alpha * observed + (1 - alpha) * cost`; an unseen pair starts at `observed`.
    pub fn update(&mut self, solution: &str, worker: &str, observed_ms: f64) -> Result<f64, SchedError> {
        if !positive_finite(observed_ms) {
            return Err(SchedError::InvalidObservation(observed_ms));
        }
        let alpha = self.alpha;
        let entry = self
            .costs
            .entry((solution.to_string(), worker.to_string()))
            .and_modify(|c| *c = alpha * observed_ms + (1.0 - alpha) * *c)
            .or_insert(observed_ms);
        // Rounding can push a tiny blend to zero only if both terms underflow.
        if !positive_finite(*entry) {
            *entry = observed_ms;
        }
        Ok(*entry)
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }
}

/// Cache state of one worker as seen by the cost matrix.
#[derive(Debug, Clone, Default)]
pub struct WorkerView {
    pub id: String,
    /// Content hashes of solutions with a live bootstrapped process.
    pub warm: BTreeSet<String>,
    /// Definitions whose reference data the worker already holds.
    pub resident: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discounts {
    pub cache: f64,
    pub resident: f64,
}

impl Default for Discounts {
    fn default() -> Self {
        Discounts {
            cache: 0.5,
            resident: 0.8,
        }
    }
}

/// Square cost matrix; rows past `jobs` and columns past `workers` are padding.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub cells: Vec<Vec<f64>>,
    pub jobs: usize,
    pub workers: usize,
    pub sentinel: f64,
}

impl CostMatrix {
    pub fn size(&self) -> usize {
        self.cells.len()
    }

    pub fn is_real(&self, row: usize, col: usize) -> bool {
        row < self.jobs && col < self.workers
    }
}

pub fn build_cost_matrix(jobs: &[&Job], workers: &[WorkerView], cm: &CostModel, discounts: Discounts) -> CostMatrix {
    let n = jobs.len().max(workers.len());
    let mut cells = vec![vec![0.0; n]; n];
    let mut max_real: f64 = 0.0;
    for (r, job) in jobs.iter().enumerate() {
        for (c, w) in workers.iter().enumerate() {
            let mut cost = cm.estimate(&job.solution, &w.id);
            if w.warm.contains(&job.cache_key) {
                cost *= discounts.cache;
            }
            if w.resident.contains(&job.definition) {
                cost *= discounts.resident;
            }
            cells[r][c] = cost;
            max_real = max_real.max(cost);
        }
    }
    // Every perfect matching uses the same number of padded cells, so any
    // constant works; a large one keeps padding visibly apart in dumps.
    let sentinel = (max_real + 1.0) * (n as f64 + 1.0);
    for (r, row) in cells.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            if r >= jobs.len() || c >= workers.len() {
                *cell = sentinel;
            }
        }
    }
    CostMatrix {
        cells,
        jobs: jobs.len(),
        workers: workers.len(),
        sentinel,
    }
}
