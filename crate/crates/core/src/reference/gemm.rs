use super::{float_data, shape_err, ReferenceError};
use crate::tensor::Tensor;

/// `C = A · Bᵀ` for `A: [M, K]`, `B: [N, K]`; `f32` accumulation with `k`
/// ascending, result in `A`'s dtype.
pub fn ref_gemm(a: &Tensor, b: &Tensor) -> Result<Tensor, ReferenceError> {
    let (&[m, k], &[n, kb]) = (a.shape(), b.shape()) else {
        return Err(if a.shape().len() != 2 {
            shape_err("A", "[M, K]", a)
        } else {
            shape_err("B", "[N, K]", b)
        });
    };
    if k != kb {
        return Err(shape_err("B", &format!("[N, {k}]"), b));
    }
    let (av, bv) = (float_data("A", a)?, float_data("B", b)?);
    let mut c = vec![0f32; m * n];
    for i in 0..m {
        let row = &av[i * k..(i + 1) * k];
        for j in 0..n {
            let col = &bv[j * k..(j + 1) * k];
            let mut acc = 0f32;
            for kk in 0..k {
                acc += row[kk] * col[kk];
            }
            c[i * n + j] = acc;
        }
    }
    Ok(Tensor::from_f32(a.dtype(), vec![m, n], c).expect("length matches shape"))
}
