use super::{float_data, int_data, shape_err, ReferenceError};
use crate::tensor::{DType, Tensor};

/// Unrounded attention output `[B, Hq, D]` and base-2 lse `[B, Hq]`.
///
/// Rows whose page range is empty get a zero output and `lse = -inf`.
pub fn gqa_paged_decode_f32(
    q: &Tensor,
    k_cache: &Tensor,
    v_cache: &Tensor,
    kv_indptr: &Tensor,
    kv_indices: &Tensor,
    sm_scale: f32,
) -> Result<(Vec<f32>, Vec<f32>), ReferenceError> {
    let &[batch, hq, d] = q.shape() else {
        return Err(shape_err("q", "[batch_size, num_qo_heads, head_dim]", q));
    };
    let &[pages, page_size, hkv, dk] = k_cache.shape() else {
        return Err(shape_err("k_cache", "[num_pages, page_size, num_kv_heads, head_dim]", k_cache));
    };
    if dk != d {
        return Err(shape_err("k_cache", &format!("[num_pages, page_size, num_kv_heads, {d}]"), k_cache));
    }
    if v_cache.shape() != k_cache.shape() {
        return Err(shape_err("v_cache", &format!("{:?}", k_cache.shape()), v_cache));
    }
    if page_size != 1 {
        return Err(ReferenceError::ConstraintViolated(format!("page_size == 1 (got {page_size})")));
    }
    if hkv == 0 || hq % hkv != 0 {
        return Err(ReferenceError::ConstraintViolated(format!(
            "num_qo_heads ({hq}) divisible by num_kv_heads ({hkv})"
        )));
    }
    if kv_indptr.shape() != [batch + 1] {
        return Err(ReferenceError::ConstraintViolated("len_indptr == batch_size + 1".into()));
    }
    let indptr = int_data("kv_indptr", kv_indptr)?;
    let indices = int_data("kv_indices", kv_indices)?;
    if kv_indices.shape().len() != 1 {
        return Err(shape_err("kv_indices", "[num_kv_indices]", kv_indices));
    }
    if indptr[batch] != indices.len() as i64 {
        return Err(ReferenceError::ConstraintViolated("num_kv_indices == kv_indptr[-1]".into()));
    }
    if indptr.windows(2).any(|w| w[0] > w[1]) || indptr[0] < 0 {
        return Err(ReferenceError::ConstraintViolated("kv_indptr non-decreasing from 0".into()));
    }
    if let Some(bad) = indices.iter().find(|&&p| p < 0 || p as usize >= pages) {
        return Err(ReferenceError::ConstraintViolated(format!("page index {bad} < num_pages ({pages})")));
    }
    let (qv, kv, vv) = (
        float_data("q", q)?,
        float_data("k_cache", k_cache)?,
        float_data("v_cache", v_cache)?,
    );

    let ratio = hq / hkv;
    let mut out = vec![0f32; batch * hq * d];
    let mut lse = vec![f32::NEG_INFINITY; batch * hq];
    let mut logits = Vec::new();
    for b in 0..batch {
        let (start, end) = (indptr[b] as usize, indptr[b + 1] as usize);
        if start >= end {
            continue;
        }
        let tokens = &indices[start..end];
        for h in 0..hq {
            let kvh = h / ratio;
            let qh = &qv[(b * hq + h) * d..(b * hq + h + 1) * d];
            logits.clear();
            for &p in tokens {
                let base = (p as usize * hkv + kvh) * d;
                let kr = &kv[base..base + d];
                let mut dot = 0f32;
                for i in 0..d {
                    dot += qh[i] * kr[i];
                }
                logits.push(dot * sm_scale);
            }
            let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut denom = 0f32;
            for l in logits.iter_mut() {
                *l = (*l - max).exp();
                denom += *l;
            }
            lse[b * hq + h] = (max + denom.ln()) / std::f32::consts::LN_2;
            let oh = &mut out[(b * hq + h) * d..(b * hq + h + 1) * d];
            for (t, &p) in tokens.iter().enumerate() {
                let w = logits[t] / denom;
                let base = (p as usize * hkv + kvh) * d;
                for (o, &v) in oh.iter_mut().zip(&vv[base..base + d]) {
                    *o += w * v;
                }
            }
        }
    }
    Ok((out, lse))
}

/// Paged grouped-query attention decode with `page_size = 1`. The output
/// takes `q`'s dtype; `lse` is `f32`.
pub fn ref_gqa_paged_decode(
    q: &Tensor,
    k_cache: &Tensor,
    v_cache: &Tensor,
    kv_indptr: &Tensor,
    kv_indices: &Tensor,
    sm_scale: f32,
) -> Result<(Tensor, Tensor), ReferenceError> {
    let (out, lse) = gqa_paged_decode_f32(q, k_cache, v_cache, kv_indptr, kv_indices, sm_scale)?;
    let s = q.shape();
    Ok((
        Tensor::from_f32(q.dtype(), s.to_vec(), out).expect("length matches shape"),
        Tensor::from_f32(DType::F32, vec![s[0], s[1]], lse).expect("length matches shape"),
    ))
}
