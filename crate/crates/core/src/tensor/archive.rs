//! Tensor archive container.
//!
//! Layout (safetensors-compatible): an 8-byte little-endian header length `N`,
//! `N` bytes of UTF-8 JSON mapping each tensor name to
//! `{"dtype", "shape", "data_offsets": [begin, end)}`, then the concatenated
//! little-endian buffers. Offsets are relative to the end of the header.

use indexmap::IndexMap;
use serde_json::{json, Map, Value};

use super::{DType, Tensor, TensorError};

/// Ordered name → tensor map. Order is preserved on disk and on the wire.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    tensors: IndexMap<String, Tensor>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), tensor)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn into_map(self) -> IndexMap<String, Tensor> {
        self.tensors
    }

    /// Byte range of each tensor within the data section.
    pub fn byte_ranges(&self) -> Vec<(&str, (usize, usize))> {
        let mut offset = 0;
        self.tensors
            .iter()
            .map(|(name, t)| {
                let begin = offset;
                offset += t.byte_len();
                (name.as_str(), (begin, offset))
            })
            .collect()
    }

    /// Bitwise equality of every tensor, in order.
    pub fn bitwise_eq(&self, other: &TensorArchive) -> bool {
        self.len() == other.len()
            && self
                .iter()
                .zip(other.iter())
                .all(|((na, a), (nb, b))| na == nb && a.bitwise_eq(b))
    }
}

impl From<IndexMap<String, Tensor>> for TensorArchive {
    fn from(tensors: IndexMap<String, Tensor>) -> Self {
        TensorArchive { tensors }
    }
}

impl FromIterator<(String, Tensor)> for TensorArchive {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        TensorArchive {
            tensors: iter.into_iter().collect(),
        }
    }
}

pub fn write_archive(archive: &TensorArchive) -> Vec<u8> {
    let mut header = Map::new();
    for (name, (begin, end)) in archive.byte_ranges() {
        let t = &archive.tensors[name];
        header.insert(
            name.to_string(),
            json!({
                "dtype": t.dtype().archive_tag(),
                "shape": t.shape(),
                "data_offsets": [begin, end],
            }),
        );
    }
    let mut header_bytes = serde_json::to_vec(&Value::Object(header)).expect("header serializes");
    while !(8 + header_bytes.len()).is_multiple_of(8) {
        header_bytes.push(b' ');
    }
    let data_len: usize = archive.tensors.values().map(Tensor::byte_len).sum();
    let mut out = Vec::with_capacity(8 + header_bytes.len() + data_len);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for t in archive.tensors.values() {
        out.extend_from_slice(&t.to_le_bytes());
    }
    out
}

pub fn read_archive(bytes: &[u8]) -> Result<TensorArchive, TensorError> {
    let (archive, used) = read_archive_prefix(bytes)?;
    if used != bytes.len() {
        return Err(TensorError::CorruptHeader(format!(
            "{} trailing bytes after data section",
            bytes.len() - used
        )));
    }
    Ok(archive)
}

/// Reads an archive from the start of `bytes`, returning it with the number of bytes consumed.
pub fn read_archive_prefix(bytes: &[u8]) -> Result<(TensorArchive, usize), TensorError> {
    if bytes.len() < 8 {
        return Err(TensorError::TruncatedPayload {
            needed: 8,
            available: bytes.len(),
        });
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|n| n.checked_add(8))
        .ok_or_else(|| TensorError::CorruptHeader(format!("header length {header_len} too large")))?;
    if header_end > bytes.len() {
        return Err(TensorError::TruncatedPayload {
            needed: header_end,
            available: bytes.len(),
        });
    }
    let header: IndexMap<String, Value> = serde_json::from_slice(&bytes[8..header_end])
        .map_err(|e| TensorError::CorruptHeader(e.to_string()))?;

    let data = &bytes[header_end..];
    let mut entries = Vec::with_capacity(header.len());
    for (name, meta) in header {
        if name == "__metadata__" {
            continue;
        }
        let corrupt = |why: &str| TensorError::CorruptHeader(format!("tensor `{name}`: {why}"));
        let tag = meta.get("dtype").and_then(Value::as_str).ok_or_else(|| corrupt("missing dtype"))?;
        let dtype = DType::from_archive_tag(tag).ok_or_else(|| corrupt(&format!("unsupported dtype {tag}")))?;
        let shape: Vec<usize> = meta
            .get("shape")
            .and_then(|s| serde_json::from_value(s.clone()).ok())
            .ok_or_else(|| corrupt("bad shape"))?;
        let offsets: [usize; 2] = meta
            .get("data_offsets")
            .and_then(|s| serde_json::from_value(s.clone()).ok())
            .ok_or_else(|| corrupt("bad data_offsets"))?;
        let [begin, end] = offsets;
        if begin > end {
            return Err(corrupt("data_offsets reversed"));
        }
        let expected = shape.iter().product::<usize>() * dtype.size_bytes();
        if end - begin != expected {
            return Err(corrupt(&format!("byte range holds {} bytes, shape needs {expected}", end - begin)));
        }
        entries.push((name, dtype, shape, begin, end));
    }

    let mut ranges: Vec<(usize, usize)> = entries.iter().map(|e| (e.3, e.4)).collect();
    ranges.sort_unstable();
    let mut cursor = 0;
    for (begin, end) in &ranges {
        if *begin != cursor {
            return Err(TensorError::CorruptHeader(format!(
                "byte ranges not contiguous at offset {cursor}"
            )));
        }
        cursor = *end;
    }
    if cursor > data.len() {
        return Err(TensorError::TruncatedPayload {
            needed: header_end + cursor,
            available: bytes.len(),
        });
    }

    let mut archive = TensorArchive::new();
    for (name, dtype, shape, begin, end) in entries {
        let tensor = Tensor::from_le_bytes(dtype, shape, &data[begin..end])?;
        if archive.insert(name.clone(), tensor).is_some() {
            return Err(TensorError::CorruptHeader(format!("duplicate tensor `{name}`")));
        }
    }
    Ok((archive, header_end + cursor))
}
