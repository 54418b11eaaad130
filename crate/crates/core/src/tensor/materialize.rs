//! Deterministic construction of workload inputs.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::{read_archive, DType, Tensor, TensorArchive, TensorError};
use crate::trace::InputSpec;

/// Integer random inputs are drawn uniformly from `[0, INT_RANDOM_UPPER)`.
pub const INT_RANDOM_UPPER: i64 = 8;

/// Seed base for a workload: a stable hash of its uuid and the session seed.
pub fn seed_base_for(workload_uuid: &str, seed: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(workload_uuid.as_bytes());
    h.update(seed.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// A generator keyed by `(seed_base, input_name)`; identical on every platform.
pub fn input_rng(seed_base: u64, input_name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed_base.to_le_bytes());
    h.update(input_name.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Standard normal floats (snapped to the dtype grid) or uniform ints in `[0, 8)`.
pub fn random_tensor(shape: &[usize], dtype: DType, seed_base: u64, input_name: &str) -> Tensor {
    let mut rng = input_rng(seed_base, input_name);
    let n = shape.iter().product();
    if dtype.is_float() {
        let data: Vec<f32> = (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        Tensor::from_f32(dtype, shape.to_vec(), data).expect("length matches shape")
    } else {
        let data: Vec<i64> = (0..n).map(|_| rng.random_range(0..INT_RANDOM_UPPER)).collect();
        Tensor::from_i64(dtype, shape.to_vec(), data).expect("values fit every int dtype")
    }
}

/// Loads archive files relative to a dataset root, caching each file once.
#[derive(Debug, Default)]
pub struct ArchiveStore {
    root: PathBuf,
    cache: Mutex<HashMap<PathBuf, Arc<TensorArchive>>>,
}

impl ArchiveStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ArchiveStore {
            root: root.into(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn load(&self, path: &str) -> Result<Arc<TensorArchive>, TensorError> {
        let full = self.root.join(path);
        if let Some(hit) = self.cache.lock().expect("archive cache").get(&full) {
            return Ok(Arc::clone(hit));
        }
        let bytes = std::fs::read(&full).map_err(|e| TensorError::Io {
            path: full.display().to_string(),
            msg: e.to_string(),
        })?;
        let archive = Arc::new(read_archive(&bytes)?);
        self.cache
            .lock()
            .expect("archive cache")
            .insert(full, Arc::clone(&archive));
        Ok(archive)
    }
}

/// Materializes one input. Pure in `(spec, shape, dtype, seed_base, input_name)` plus archive contents.
pub fn materialize_input(
    spec: &InputSpec,
    shape: &[usize],
    dtype: DType,
    seed_base: u64,
    input_name: &str,
    archives: &ArchiveStore,
) -> Result<Tensor, TensorError> {
    match spec {
        InputSpec::Random { seed } => Ok(random_tensor(shape, dtype, seed.unwrap_or(seed_base), input_name)),
        InputSpec::Scalar { value } => {
            if !shape.is_empty() {
                return Err(TensorError::ShapeMismatch {
                    expected: shape.to_vec(),
                    actual: Vec::new(),
                });
            }
            if dtype.is_float() {
                Ok(Tensor::from_f32(dtype, Vec::new(), vec![*value as f32])?)
            } else if value.fract() == 0.0 {
                Tensor::from_i64(dtype, Vec::new(), vec![*value as i64])
            } else {
                Err(TensorError::OutOfRange { value: *value, dtype })
            }
        }
        InputSpec::Archive { path, tensor_key } => {
            let archive = archives.load(path)?;
            let t = archive
                .get(tensor_key)
                .ok_or_else(|| TensorError::ArchiveMissingKey(tensor_key.clone()))?;
            if t.dtype() != dtype {
                return Err(TensorError::DTypeMismatch {
                    expected: dtype,
                    actual: t.dtype(),
                });
            }
            if t.shape() != shape {
                return Err(TensorError::ShapeMismatch {
                    expected: shape.to_vec(),
                    actual: t.shape().to_vec(),
                });
            }
            Ok(t.clone())
        }
    }
}
