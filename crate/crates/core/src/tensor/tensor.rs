use super::quant::{f8e4m3_from_bits, f8e4m3_to_bits, quantize_value};
use super::{DType, TensorError};
use half::{bf16, f16};

/// Flat row-major storage. Float dtypes are widened to `f32`, integer dtypes to `i64`.
#[derive(Debug, Clone, PartialEq)]
pub enum Buffer {
    Float(Vec<f32>),
    Int(Vec<i64>),
}

impl Buffer {
    pub fn len(&self) -> usize {
        match self {
            Buffer::Float(v) => v.len(),
            Buffer::Int(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A dtype-tagged dense tensor. Scalars have an empty shape and one element.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dtype: DType,
    shape: Vec<usize>,
    data: Buffer,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Builds a float tensor, snapping every value to the dtype grid.
    pub fn from_f32(dtype: DType, shape: Vec<usize>, mut data: Vec<f32>) -> Result<Self, TensorError> {
        if !dtype.is_float() {
            return Err(TensorError::DTypeMismatch {
                expected: DType::F32,
                actual: dtype,
            });
        }
        check_len(&shape, data.len())?;
        if dtype.is_low_precision() {
            for v in &mut data {
                *v = quantize_value(*v, dtype);
            }
        }
        Ok(Tensor {
            dtype,
            shape,
            data: Buffer::Float(data),
        })
    }

    pub fn from_i64(dtype: DType, shape: Vec<usize>, data: Vec<i64>) -> Result<Self, TensorError> {
        if !dtype.is_int() {
            return Err(TensorError::DTypeMismatch {
                expected: DType::I64,
                actual: dtype,
            });
        }
        check_len(&shape, data.len())?;
        if dtype == DType::I32 {
            if let Some(&bad) = data.iter().find(|v| i32::try_from(**v).is_err()) {
                return Err(TensorError::OutOfRange {
                    value: bad as f64,
                    dtype,
                });
            }
        }
        Ok(Tensor {
            dtype,
            shape,
            data: Buffer::Int(data),
        })
    }

    pub fn scalar_f32(value: f32) -> Self {
        Tensor {
            dtype: DType::F32,
            shape: Vec::new(),
            data: Buffer::Float(vec![value]),
        }
    }

    pub fn zeros(dtype: DType, shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        let data = if dtype.is_float() {
            Buffer::Float(vec![0.0; n])
        } else {
            Buffer::Int(vec![0; n])
        };
        Tensor { dtype, shape, data }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn buffer(&self) -> &Buffer {
        &self.data
    }

    pub fn floats(&self) -> Option<&[f32]> {
        match &self.data {
            Buffer::Float(v) => Some(v),
            Buffer::Int(_) => None,
        }
    }

    pub fn ints(&self) -> Option<&[i64]> {
        match &self.data {
            Buffer::Int(v) => Some(v),
            Buffer::Float(_) => None,
        }
    }

    pub fn get_f64(&self, i: usize) -> f64 {
        match &self.data {
            Buffer::Float(v) => v[i] as f64,
            Buffer::Int(v) => v[i] as f64,
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            Buffer::Float(v) => v.iter().map(|&x| x as f64).collect(),
            Buffer::Int(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.numel() == 1).then(|| self.get_f64(0))
    }

    /// Same data, different shape with the same element count.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, TensorError> {
        check_len(&shape, self.numel())?;
        self.shape = shape;
        Ok(self)
    }

    /// Converts to `target`: floats are rounded onto the target grid (ties to even,
    /// saturating), integers are rounded toward nearest.
    pub fn quantize(&self, target: DType) -> Tensor {
        let data = match (&self.data, target.is_float()) {
            (Buffer::Float(v), true) => {
                Buffer::Float(v.iter().map(|&x| quantize_value(x, target)).collect())
            }
            (Buffer::Int(v), true) => {
                Buffer::Float(v.iter().map(|&x| quantize_value(x as f32, target)).collect())
            }
            (Buffer::Float(v), false) => Buffer::Int(v.iter().map(|&x| x.round() as i64).collect()),
            (Buffer::Int(v), false) => Buffer::Int(v.clone()),
        };
        Tensor {
            dtype: target,
            shape: self.shape.clone(),
            data,
        }
    }

    /// Bitwise comparison of dtype, shape and stored bits (NaN-aware).
    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.dtype == other.dtype && self.shape == other.shape && self.to_le_bytes() == other.to_le_bytes()
    }

    pub fn byte_len(&self) -> usize {
        self.numel() * self.dtype.size_bytes()
    }

    /// Little-endian encoding in the dtype's native width.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        match (&self.data, self.dtype) {
            (Buffer::Float(v), DType::F32) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            (Buffer::Float(v), DType::F16) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&f16::from_f32(*x).to_le_bytes())),
            (Buffer::Float(v), DType::BF16) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&bf16::from_f32(*x).to_le_bytes())),
            (Buffer::Float(v), DType::F8E4M3) => out.extend(v.iter().map(|x| f8e4m3_to_bits(*x))),
            (Buffer::Int(v), DType::I32) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&(*x as i32).to_le_bytes())),
            (Buffer::Int(v), DType::I64) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            _ => unreachable!("buffer kind always matches dtype"),
        }
        out
    }

    pub fn from_le_bytes(dtype: DType, shape: Vec<usize>, bytes: &[u8]) -> Result<Self, TensorError> {
        let n = numel(&shape);
        if bytes.len() != n * dtype.size_bytes() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected: n,
                actual: bytes.len() / dtype.size_bytes().max(1),
            });
        }
        let data = match dtype {
            DType::F32 => Buffer::Float(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            DType::F16 => Buffer::Float(
                bytes
                    .chunks_exact(2)
                    .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f32())
                    .collect(),
            ),
            DType::BF16 => Buffer::Float(
                bytes
                    .chunks_exact(2)
                    .map(|c| bf16::from_le_bytes([c[0], c[1]]).to_f32())
                    .collect(),
            ),
            DType::F8E4M3 => Buffer::Float(bytes.iter().map(|b| f8e4m3_from_bits(*b)).collect()),
            DType::I32 => Buffer::Int(
                bytes
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]) as i64)
                    .collect(),
            ),
            DType::I64 => Buffer::Int(
                bytes
                    .chunks_exact(8)
                    .map(|c| i64::from_le_bytes(c.try_into().expect("chunk of 8")))
                    .collect(),
            ),
        };
        Ok(Tensor { dtype, shape, data })
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<(), TensorError> {
    let n = numel(shape);
    if n != len {
        return Err(TensorError::LengthMismatch {
            shape: shape.to_vec(),
            expected: n,
            actual: len,
        });
    }
    Ok(())
}
