use super::{float_data, shape_err, ReferenceError};
use crate::tensor::Tensor;

/// `h = x + residual`; returns `(h / sqrt(mean(h²) + eps) · weight, h)`.
///
/// The normalized output uses the `f32` sum; the returned residual is that
/// sum rounded onto `x`'s dtype.
pub fn ref_fused_add_rmsnorm(
    x: &Tensor,
    residual: &Tensor,
    weight: &Tensor,
    eps: f32,
) -> Result<(Tensor, Tensor), ReferenceError> {
    let &[rows, hidden] = x.shape() else {
        return Err(shape_err("x", "[B, H]", x));
    };
    if residual.shape() != x.shape() {
        return Err(shape_err("residual", &format!("[{rows}, {hidden}]"), residual));
    }
    if weight.shape() != [hidden] {
        return Err(shape_err("weight", &format!("[{hidden}]"), weight));
    }
    let (xv, rv, wv) = (
        float_data("x", x)?,
        float_data("residual", residual)?,
        float_data("weight", weight)?,
    );
    let mut h = vec![0f32; rows * hidden];
    let mut y = vec![0f32; rows * hidden];
    for b in 0..rows {
        let span = b * hidden..(b + 1) * hidden;
        let hr = &mut h[span.clone()];
        for (i, v) in hr.iter_mut().enumerate() {
            *v = xv[b * hidden + i] + rv[b * hidden + i];
        }
        let mut sq = 0f32;
        for v in hr.iter() {
            sq += v * v;
        }
        let rms = (sq / hidden as f32 + eps).sqrt();
        for (i, out) in y[span].iter_mut().enumerate() {
            *out = hr[i] / rms * wv[i];
        }
    }
    let shape = vec![rows, hidden];
    Ok((
        Tensor::from_f32(x.dtype(), shape.clone(), y).expect("length matches shape"),
        Tensor::from_f32(x.dtype(), shape, h).expect("length matches shape"),
    ))
}
