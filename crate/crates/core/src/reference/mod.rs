//! Built-in reference evaluators and structured workload generators.
//!
//! Every evaluator widens inputs to `f32`, accumulates in `f32` and rounds
//! outputs onto the declared output dtype at the end.

mod gemm;
mod generators;
mod gqa;
mod rmsnorm;
mod sampling;

use indexmap::IndexMap;
use thiserror::Error;

use crate::tensor::{DType, Tensor};
use crate::trace::{DefinitionRecord, OpType};

pub use gemm::ref_gemm;
pub use generators::{generate_structured, page_table, softmax_probs, PageTable};
pub use gqa::{gqa_paged_decode_f32, ref_gqa_paged_decode};
pub use rmsnorm::ref_fused_add_rmsnorm;
pub use sampling::{derive_sampling_target, ref_sampling_top_k_top_p, sample_index, SamplingParams};

/// Named tensors in argument order.
pub type TensorMap = IndexMap<String, Tensor>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KernelIO {
    pub inputs: TensorMap,
    pub outputs: TensorMap,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReferenceError {
    #[error("no built-in reference for op_type `{0}`")]
    UnsupportedOpType(String),
    #[error("`{name}`: expected shape {expected}, found {actual:?}")]
    ShapeMismatch {
        name: String,
        expected: String,
        actual: Vec<usize>,
    },
    #[error("`{name}` must be {expected}, found {actual}")]
    DTypeMismatch { name: String, expected: String, actual: DType },
    #[error("missing input `{0}`")]
    MissingInput(String),
    #[error("constraint violated: {0}")]
    ConstraintViolated(String),
    #[error("probability row {row} has no positive mass")]
    DegenerateDistribution { row: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub(crate) fn shape_err(name: &str, expected: &str, t: &Tensor) -> ReferenceError {
    ReferenceError::ShapeMismatch {
        name: name.to_string(),
        expected: expected.to_string(),
        actual: t.shape().to_vec(),
    }
}

pub(crate) fn float_data<'a>(name: &str, t: &'a Tensor) -> Result<&'a [f32], ReferenceError> {
    t.floats().ok_or_else(|| ReferenceError::DTypeMismatch {
        name: name.to_string(),
        expected: "a float dtype".into(),
        actual: t.dtype(),
    })
}

pub(crate) fn int_data<'a>(name: &str, t: &'a Tensor) -> Result<&'a [i64], ReferenceError> {
    t.ints().ok_or_else(|| ReferenceError::DTypeMismatch {
        name: name.to_string(),
        expected: "an integer dtype".into(),
        actual: t.dtype(),
    })
}

pub(crate) fn scalar(name: &str, t: &Tensor) -> Result<f64, ReferenceError> {
    t.item().ok_or_else(|| shape_err(name, "a scalar", t))
}

/// Runs the evaluator selected by `d.op_type` on inputs given in declaration
/// order. Stochastic evaluators draw from `seed`.
pub fn run_reference_seeded(d: &DefinitionRecord, inputs: &TensorMap, seed: u64) -> Result<TensorMap, ReferenceError> {
    let args = d
        .inputs
        .keys()
        .map(|k| inputs.get(k).ok_or_else(|| ReferenceError::MissingInput(k.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let want = |n: usize| -> Result<(), ReferenceError> {
        if args.len() == n && !d.outputs.is_empty() {
            Ok(())
        } else {
            Err(ReferenceError::InvalidParameter(format!(
                "`{}` expects {n} inputs, definition declares {}",
                d.op_type,
                args.len()
            )))
        }
    };
    let raw: Vec<Tensor> = match &d.op_type {
        OpType::Gemm => {
            want(2)?;
            vec![ref_gemm(args[0], args[1])?]
        }
        OpType::FusedAddRmsnorm => {
            want(4)?;
            let (y, r) = ref_fused_add_rmsnorm(args[0], args[1], args[2], scalar("eps", args[3])? as f32)?;
            vec![y, r]
        }
        OpType::GqaPagedDecode => {
            want(6)?;
            let (o, lse) = ref_gqa_paged_decode(
                args[0],
                args[1],
                args[2],
                args[3],
                args[4],
                scalar("sm_scale", args[5])? as f32,
            )?;
            vec![o, lse]
        }
        OpType::SamplingTopKTopP => {
            want(3)?;
            let params = SamplingParams::from_scalars(scalar("top_k", args[1])?, scalar("top_p", args[2])?)?;
            let mut rng = crate::tensor::input_rng(seed, "samples");
            vec![ref_sampling_top_k_top_p(args[0], params, &mut rng)?]
        }
        OpType::Other(s) => return Err(ReferenceError::UnsupportedOpType(s.clone())),
    };
    if raw.len() != d.outputs.len() {
        return Err(ReferenceError::InvalidParameter(format!(
            "`{}` produces {} outputs, definition declares {}",
            d.op_type,
            raw.len(),
            d.outputs.len()
        )));
    }
    Ok(d
        .outputs
        .iter()
        .zip(raw)
        .map(|((name, spec), t)| {
            let t = if t.dtype() == spec.dtype { t } else { t.quantize(spec.dtype) };
            (name.clone(), t)
        })
        .collect())
}

pub fn run_reference(d: &DefinitionRecord, inputs: &TensorMap) -> Result<TensorMap, ReferenceError> {
    run_reference_seeded(d, inputs, 0)
}
