//! Resolving a workload's axes into concrete tensor shapes.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use thiserror::Error;

use super::constraint::{ConstraintEvalError, ConstraintExpr, TensorLookup};
use super::types::{AxisKind, DefinitionRecord, WorkloadRecord};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BindError {
    #[error("var axis `{0}` is not assigned by the workload")]
    MissingAxis(String),
    #[error("const axis `{0}` must not be assigned by the workload")]
    ConstAxisOverridden(String),
    #[error("workload assigns unknown axis `{0}`")]
    UnknownAxis(String),
    #[error("axis `{axis}` has negative value {value}")]
    NegativeAxis { axis: String, value: i64 },
    #[error("constraint violated: {0}")]
    ConstraintViolated(String),
    #[error("constraint `{expr}`: {source}")]
    ConstraintEval {
        expr: String,
        #[source]
        source: ConstraintEvalError,
    },
}

/// Where an axis value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisSource {
    Definition,
    Workload,
}

/// Concrete shapes for one definition × workload pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundShapes {
    pub axes: BTreeMap<String, i64>,
    /// One entry per axis, in resolution order.
    pub resolution: Vec<(String, AxisSource)>,
    pub inputs: IndexMap<String, Vec<usize>>,
    pub outputs: IndexMap<String, Vec<usize>>,
    /// Constraints that index tensors; checked once inputs exist.
    pub deferred: Vec<ConstraintExpr>,
}

impl BoundShapes {
    pub fn shape(&self, name: &str) -> Option<&[usize]> {
        self.inputs
            .get(name)
            .or_else(|| self.outputs.get(name))
            .map(Vec::as_slice)
    }

    /// Checks the deferred constraints against materialized inputs.
    pub fn check_deferred(&self, tensors: &dyn TensorLookup) -> Result<(), BindError> {
        check_all(&self.deferred, &self.axes, tensors)
    }
}

fn check_all(
    constraints: &[ConstraintExpr],
    axes: &BTreeMap<String, i64>,
    tensors: &dyn TensorLookup,
) -> Result<(), BindError> {
    for c in constraints {
        match c.eval(axes, tensors) {
            Ok(true) => {}
            Ok(false) => return Err(BindError::ConstraintViolated(c.as_str().to_string())),
            Err(source) => {
                return Err(BindError::ConstraintEval {
                    expr: c.as_str().to_string(),
                    source,
                })
            }
        }
    }
    Ok(())
}

pub fn bind_workload(d: &DefinitionRecord, w: &WorkloadRecord) -> Result<BoundShapes, BindError> {
    if let Some(extra) = w.axes.keys().find(|k| !d.axes.contains_key(*k)) {
        return Err(BindError::UnknownAxis(extra.clone()));
    }
    let mut axes = BTreeMap::new();
    let mut resolution = Vec::with_capacity(d.axes.len());
    for (name, spec) in &d.axes {
        let (value, source) = match spec.kind {
            AxisKind::Const => {
                if w.axes.contains_key(name) {
                    return Err(BindError::ConstAxisOverridden(name.clone()));
                }
                let v = spec.value.ok_or_else(|| BindError::MissingAxis(name.clone()))?;
                (v as i64, AxisSource::Definition)
            }
            AxisKind::Var => {
                let v = *w.axes.get(name).ok_or_else(|| BindError::MissingAxis(name.clone()))?;
                (v, AxisSource::Workload)
            }
        };
        if value < 0 {
            return Err(BindError::NegativeAxis {
                axis: name.clone(),
                value,
            });
        }
        axes.insert(name.clone(), value);
        resolution.push((name.clone(), source));
    }

    let (now, deferred): (Vec<_>, Vec<_>) = d.constraints.iter().cloned().partition(|c| c.is_axis_only());
    check_all(&now, &axes, &())?;

    let resolve = |specs: &IndexMap<String, super::types::TensorSpec>| {
        specs
            .iter()
            .map(|(n, s)| (n.clone(), s.shape.iter().map(|a| axes[a] as usize).collect()))
            .collect::<IndexMap<_, _>>()
    };
    Ok(BoundShapes {
        inputs: resolve(&d.inputs),
        outputs: resolve(&d.outputs),
        axes,
        resolution,
        deferred,
    })
}
