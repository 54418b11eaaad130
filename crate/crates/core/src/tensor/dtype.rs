use std::fmt;

use serde::{Deserialize, Serialize};

/// Element type of a tensor. Serialized with the long names used in trace documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DType {
    #[serde(rename = "float32", alias = "f32")]
    F32,
    #[serde(rename = "float16", alias = "f16")]
    F16,
    #[serde(rename = "bfloat16", alias = "bf16")]
    BF16,
    #[serde(rename = "float8_e4m3fn", alias = "f8e4m3", alias = "float8_e4m3")]
    F8E4M3,
    #[serde(rename = "int32", alias = "i32")]
    I32,
    #[serde(rename = "int64", alias = "i64")]
    I64,
}

impl DType {
    pub const ALL: [DType; 6] = [
        DType::F32,
        DType::F16,
        DType::BF16,
        DType::F8E4M3,
        DType::I32,
        DType::I64,
    ];

    pub fn is_float(self) -> bool {
        matches!(self, DType::F32 | DType::F16 | DType::BF16 | DType::F8E4M3)
    }

    pub fn is_int(self) -> bool {
        !self.is_float()
    }

    /// Floats narrower than f32; stored widened but snapped to their grid.
    pub fn is_low_precision(self) -> bool {
        matches!(self, DType::F16 | DType::BF16 | DType::F8E4M3)
    }

    pub fn size_bytes(self) -> usize {
        match self {
            DType::F8E4M3 => 1,
            DType::F16 | DType::BF16 => 2,
            DType::F32 | DType::I32 => 4,
            DType::I64 => 8,
        }
    }

    /// Tag used in the archive header (safetensors naming).
    pub fn archive_tag(self) -> &'static str {
        match self {
            DType::F32 => "F32",
            DType::F16 => "F16",
            DType::BF16 => "BF16",
            DType::F8E4M3 => "F8_E4M3",
            DType::I32 => "I32",
            DType::I64 => "I64",
        }
    }

    pub fn from_archive_tag(tag: &str) -> Option<DType> {
        Some(match tag {
            "F32" => DType::F32,
            "F16" => DType::F16,
            "BF16" => DType::BF16,
            "F8_E4M3" => DType::F8E4M3,
            "I32" => DType::I32,
            "I64" => DType::I64,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "float32",
            DType::F16 => "float16",
            DType::BF16 => "bfloat16",
            DType::F8E4M3 => "float8_e4m3fn",
            DType::I32 => "int32",
            DType::I64 => "int64",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
