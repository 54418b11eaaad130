//! Generators for inputs whose values carry structure (page tables,
//! probability rows, scales). Used when a workload asks for `random` values
//! for such inputs.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{ReferenceError, TensorMap};
use crate::tensor::{input_rng, DType, Tensor};
use crate::trace::{BoundShapes, DefinitionRecord, InputSpec, OpType, WorkloadRecord};

pub const DEFAULT_RMSNORM_EPS: f32 = 1e-6;
pub const DEFAULT_TOP_K: i64 = 50;
pub const DEFAULT_TOP_P: f32 = 0.9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageTable {
    pub indptr: Vec<i64>,
    pub indices: Vec<i64>,
}

/// Splits `total` tokens over `batch` rows (rows may be empty) and draws page
/// ids uniformly from `[0, num_pages)`.
pub fn page_table(batch: usize, total: usize, num_pages: usize, rng: &mut impl Rng) -> Result<PageTable, ReferenceError> {
    if total > 0 && num_pages == 0 {
        return Err(ReferenceError::ConstraintViolated("num_pages > 0 when pages are referenced".into()));
    }
    if batch == 0 && total > 0 {
        return Err(ReferenceError::ConstraintViolated("num_kv_indices == 0 when batch_size == 0".into()));
    }
    let mut cuts: Vec<i64> = (0..batch.saturating_sub(1))
        .map(|_| rng.random_range(0..=total as i64))
        .collect();
    cuts.sort_unstable();
    let mut indptr = Vec::with_capacity(batch + 1);
    indptr.push(0);
    indptr.extend(cuts);
    if batch > 0 {
        indptr.push(total as i64);
    }
    let indices = (0..total).map(|_| rng.random_range(0..num_pages as i64)).collect();
    Ok(PageTable { indptr, indices })
}

/// `batch` rows of softmax(standard normal logits).
pub fn softmax_probs(batch: usize, vocab: usize, rng: &mut impl Rng) -> Vec<f32> {
    let mut out = Vec::with_capacity(batch * vocab);
    for _ in 0..batch {
        let logits: Vec<f64> = (0..vocab).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|x| (x / s) as f32));
    }
    out
}

fn is_random(w: &WorkloadRecord, name: &str) -> bool {
    matches!(w.inputs.get(name), Some(InputSpec::Random { .. }))
}

fn scalar_of(dtype: DType, v: f64) -> Tensor {
    if dtype.is_float() {
        Tensor::from_f32(dtype, vec![], vec![v as f32]).expect("scalar")
    } else {
        Tensor::from_i64(dtype, vec![], vec![v as i64]).expect("scalar")
    }
}

/// Values for structured inputs that the workload marks `random`, keyed by
/// input name. Inputs are identified by position in the definition. Anything
/// not returned here is materialized generically.
pub fn generate_structured(
    d: &DefinitionRecord,
    shapes: &BoundShapes,
    w: &WorkloadRecord,
    seed_base: u64,
) -> Result<TensorMap, ReferenceError> {
    let names: Vec<&String> = d.inputs.keys().collect();
    let dtype = |i: usize| d.inputs[i].dtype;
    let shape = |i: usize| shapes.inputs[i].clone();
    let mut out = TensorMap::new();
    match d.op_type {
        OpType::GqaPagedDecode if names.len() == 6 => {
            let (indptr_n, indices_n) = (names[3], names[4]);
            if is_random(w, indptr_n) && is_random(w, indices_n) {
                let batch = shape(0).first().copied().unwrap_or(0);
                let total = shape(4).first().copied().unwrap_or(0);
                let pages = shape(1).first().copied().unwrap_or(0);
                let pt = page_table(batch, total, pages, &mut input_rng(seed_base, indptr_n))?;
                if pt.indptr.len() != shape(3).first().copied().unwrap_or(0) {
                    return Err(ReferenceError::ConstraintViolated("len_indptr == batch_size + 1".into()));
                }
                let indptr = Tensor::from_i64(dtype(3), shape(3), pt.indptr)
                    .map_err(|e| ReferenceError::InvalidParameter(e.to_string()))?;
                let indices = Tensor::from_i64(dtype(4), shape(4), pt.indices)
                    .map_err(|e| ReferenceError::InvalidParameter(e.to_string()))?;
                out.insert(indptr_n.clone(), indptr);
                out.insert(indices_n.clone(), indices);
            }
            if is_random(w, names[5]) {
                let head_dim = shape(0).last().copied().unwrap_or(1).max(1);
                out.insert(names[5].clone(), scalar_of(dtype(5), 1.0 / (head_dim as f64).sqrt()));
            }
        }
        OpType::FusedAddRmsnorm if names.len() == 4 => {
            if is_random(w, names[3]) {
                out.insert(names[3].clone(), scalar_of(dtype(3), DEFAULT_RMSNORM_EPS as f64));
            }
        }
        OpType::SamplingTopKTopP if names.len() == 3 => {
            if is_random(w, names[0]) {
                if let &[batch, vocab] = shape(0).as_slice() {
                    let p = softmax_probs(batch, vocab, &mut input_rng(seed_base, names[0]));
                    let t = Tensor::from_f32(dtype(0), vec![batch, vocab], p)
                        .map_err(|e| ReferenceError::InvalidParameter(e.to_string()))?;
                    out.insert(names[0].clone(), t);
                }
            }
            if is_random(w, names[1]) {
                out.insert(names[1].clone(), scalar_of(dtype(1), DEFAULT_TOP_K as f64));
            }
            if is_random(w, names[2]) {
                out.insert(names[2].clone(), scalar_of(dtype(2), DEFAULT_TOP_P as f64));
            }
        }
        _ => {}
    }
    Ok(out)
}
