use rand::Rng;

use super::{float_data, shape_err, ReferenceError};
use crate::tensor::{DType, Tensor};

/// Filtering applied before sampling. Top-k runs first; top-p then acts on
/// the renormalized survivors.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SamplingParams {
    pub top_k: Option<usize>,
    pub top_p: Option<f64>,
}

impl SamplingParams {
    /// Kernel-argument convention: `top_k <= 0` and `top_p >= 1` disable the filter.
    pub fn from_scalars(top_k: f64, top_p: f64) -> Result<Self, ReferenceError> {
        if !(top_p > 0.0) {
            return Err(ReferenceError::InvalidParameter(format!("top_p must be in (0, 1], got {top_p}")));
        }
        Ok(SamplingParams {
            top_k: (top_k >= 1.0).then_some(top_k as usize),
            top_p: (top_p < 1.0).then_some(top_p),
        })
    }
}

/// Slack for the cumulative-mass comparison so `0.5 + 0.3 >= 0.8` holds.
const TOP_P_SLACK: f64 = 1e-12;

/// The allowed token set and the renormalized target distribution for one row.
///
/// Tokens are ranked by probability with ties going to the lower index.
pub fn derive_sampling_target(p: &[f64], params: SamplingParams) -> Result<(Vec<bool>, Vec<f64>), ReferenceError> {
    if p.iter().any(|&x| !x.is_finite() || x < 0.0) || p.iter().sum::<f64>() <= 0.0 {
        return Err(ReferenceError::DegenerateDistribution { row: 0 });
    }
    if params.top_k == Some(0) {
        return Err(ReferenceError::InvalidParameter("top_k must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
    if let Some(k) = params.top_k {
        order.truncate(k);
    }
    if let Some(top_p) = params.top_p {
        let total: f64 = order.iter().map(|&i| p[i]).sum();
        let mut cum = 0.0;
        let mut keep = order.len();
        for (n, &i) in order.iter().enumerate() {
            cum += p[i] / total;
            if cum >= top_p - TOP_P_SLACK {
                keep = n + 1;
                break;
            }
        }
        order.truncate(keep);
    }
    let mut mask = vec![false; p.len()];
    for &i in &order {
        mask[i] = true;
    }
    let total: f64 = order.iter().map(|&i| p[i]).sum();
    let q = p
        .iter()
        .zip(&mask)
        .map(|(&x, &m)| if m { x / total } else { 0.0 })
        .collect();
    Ok((mask, q))
}

/// Inverse-CDF draw from `q` for `u` in `[0, 1)`; never returns a zero-mass index.
pub fn sample_index(q: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &x) in q.iter().enumerate() {
        if x <= 0.0 {
            continue;
        }
        cum += x;
        last = i;
        if u < cum {
            return i;
        }
    }
    last
}

/// One sampled token index per row of `probs: [batch, vocab]`.
pub fn ref_sampling_top_k_top_p(
    probs: &Tensor,
    params: SamplingParams,
    rng: &mut impl Rng,
) -> Result<Tensor, ReferenceError> {
    let &[batch, vocab] = probs.shape() else {
        return Err(shape_err("probs", "[batch, vocab]", probs));
    };
    let pv = float_data("probs", probs)?;
    let mut out = Vec::with_capacity(batch);
    for b in 0..batch {
        let row: Vec<f64> = pv[b * vocab..(b + 1) * vocab].iter().map(|&x| x as f64).collect();
        let (_, q) = derive_sampling_target(&row, params).map_err(|e| match e {
            ReferenceError::DegenerateDistribution { .. } => ReferenceError::DegenerateDistribution { row: b },
            e => e,
        })?;
        out.push(sample_index(&q, rng.random::<f64>()) as i64);
    }
    Ok(Tensor::from_i64(DType::I64, vec![batch], out).expect("length matches shape"))
}
