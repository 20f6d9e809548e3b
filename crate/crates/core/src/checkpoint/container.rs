//! Single-file named-tensor container (safetensors layout).
//!
//! Layout: an 8-byte little-endian header length `N`, `N` bytes of JSON
//! mapping tensor names to `{"dtype", "shape", "data_offsets": [begin, end]}`,
//! then the data region. Offsets are relative to the start of the data region.
//! Only the header is parsed here; tensor bytes are streamed by the differ.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ContainerErrorKind, Error, Result};

/// Headers beyond this size are rejected before allocation.
const MAX_HEADER_LEN: u64 = 100 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "BOOL")]
    Bool,
    U8,
    I8,
    I16,
    U16,
    F16,
    BF16,
    I32,
    U32,
    F32,
    F64,
    I64,
    U64,
    #[serde(rename = "F8_E4M3")]
    F8E4M3,
    #[serde(rename = "F8_E5M2")]
    F8E5M2,
}

impl Dtype {
    pub fn size(self) -> u64 {
        match self {
            Dtype::Bool | Dtype::U8 | Dtype::I8 | Dtype::F8E4M3 | Dtype::F8E5M2 => 1,
            Dtype::I16 | Dtype::U16 | Dtype::F16 | Dtype::BF16 => 2,
            Dtype::I32 | Dtype::U32 | Dtype::F32 => 4,
            Dtype::F64 | Dtype::I64 | Dtype::U64 => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::Bool => "BOOL",
            Dtype::U8 => "U8",
            Dtype::I8 => "I8",
            Dtype::I16 => "I16",
            Dtype::U16 => "U16",
            Dtype::F16 => "F16",
            Dtype::BF16 => "BF16",
            Dtype::I32 => "I32",
            Dtype::U32 => "U32",
            Dtype::F32 => "F32",
            Dtype::F64 => "F64",
            Dtype::I64 => "I64",
            Dtype::U64 => "U64",
            Dtype::F8E4M3 => "F8_E4M3",
            Dtype::F8E5M2 => "F8_E5M2",
        }
    }
}

impl FromStr for Dtype {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        Ok(match s {
            "BOOL" => Dtype::Bool,
            "U8" => Dtype::U8,
            "I8" => Dtype::I8,
            "I16" => Dtype::I16,
            "U16" => Dtype::U16,
            "F16" => Dtype::F16,
            "BF16" => Dtype::BF16,
            "I32" => Dtype::I32,
            "U32" => Dtype::U32,
            "F32" => Dtype::F32,
            "F64" => Dtype::F64,
            "I64" => Dtype::I64,
            "U64" => Dtype::U64,
            "F8_E4M3" => Dtype::F8E4M3,
            "F8_E5M2" => Dtype::F8E5M2,
            _ => return Err(()),
        })
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<u64>,
    /// Offset within the data region.
    pub byte_offset: u64,
    pub byte_length: u64,
}

impl TensorMeta {
    pub fn element_count(&self) -> u64 {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub path: PathBuf,
    /// Absolute file offset of the data region.
    pub data_start: u64,
    /// Sorted by name.
    pub tensors: Vec<TensorMeta>,
    pub metadata: BTreeMap<String, String>,
}

impl Manifest {
    pub fn get(&self, name: &str) -> Option<&TensorMeta> {
        self.tensors
            .binary_search_by(|t| t.name.as_str().cmp(name))
            .ok()
            .map(|i| &self.tensors[i])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|t| t.name.as_str())
    }
}

/// Parses only the header of a container file.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let err = |kind| Error::Container {
        path: path.to_path_buf(),
        kind,
    };
    let mut file =
        File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let file_len = file
        .metadata()
        .map_err(|e| Error::io(format!("stat {}", path.display()), e))?
        .len();
    if file_len < 8 {
        return Err(err(ContainerErrorKind::Truncated { file_len }));
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let header_len = u64::from_le_bytes(len_bytes);
    let available = file_len - 8;
    if header_len > available || header_len > MAX_HEADER_LEN {
        return Err(err(ContainerErrorKind::HeaderLength {
            declared: header_len,
            available,
        }));
    }
    let mut header = vec![0u8; header_len as usize];
    file.read_exact(&mut header)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let data_start = 8 + header_len;
    let (tensors, metadata) =
        parse_header(&header, file_len - data_start).map_err(err)?;
    Ok(Manifest {
        path: path.to_path_buf(),
        data_start,
        tensors,
        metadata,
    })
}

fn parse_header(
    header: &[u8],
    data_len: u64,
) -> std::result::Result<(Vec<TensorMeta>, BTreeMap<String, String>), ContainerErrorKind> {
    let json_err = |m: String| ContainerErrorKind::HeaderJson(m);
    let text = std::str::from_utf8(header).map_err(|e| json_err(e.to_string()))?;
    let value: Value = serde_json::from_str(text).map_err(|e| json_err(e.to_string()))?;
    let table = value
        .as_object()
        .ok_or_else(|| json_err("top level is not an object".into()))?;

    let mut metadata = BTreeMap::new();
    let mut tensors = Vec::with_capacity(table.len());
    for (name, entry) in table {
        if name == "__metadata__" {
            let obj = entry
                .as_object()
                .ok_or_else(|| json_err("__metadata__ is not an object".into()))?;
            for (k, v) in obj {
                let v = v
                    .as_str()
                    .ok_or_else(|| json_err(format!("__metadata__.{k} is not a string")))?;
                metadata.insert(k.clone(), v.to_string());
            }
            continue;
        }
        let field = |key: &str| {
            entry
                .get(key)
                .ok_or_else(|| json_err(format!("tensor {name:?} lacks {key:?}")))
        };
        let dtype_str = field("dtype")?
            .as_str()
            .ok_or_else(|| json_err(format!("tensor {name:?} dtype is not a string")))?;
        let dtype: Dtype = dtype_str.parse().map_err(|_| ContainerErrorKind::UnknownDtype {
            tensor: name.clone(),
            dtype: dtype_str.to_string(),
        })?;
        let shape = field("shape")?
            .as_array()
            .and_then(|dims| dims.iter().map(Value::as_u64).collect::<Option<Vec<u64>>>())
            .ok_or_else(|| json_err(format!("tensor {name:?} shape is not a list of integers")))?;
        let offsets = field("data_offsets")?
            .as_array()
            .and_then(|o| o.iter().map(Value::as_u64).collect::<Option<Vec<u64>>>())
            .filter(|o| o.len() == 2)
            .ok_or_else(|| json_err(format!("tensor {name:?} data_offsets is not [begin, end]")))?;
        let (begin, end) = (offsets[0], offsets[1]);
        if begin > end || end > data_len {
            return Err(ContainerErrorKind::OutOfBounds {
                tensor: name.clone(),
                begin,
                end,
                data_len,
            });
        }
        let expected = shape
            .iter()
            .try_fold(dtype.size(), |acc, d| acc.checked_mul(*d))
            .ok_or_else(|| json_err(format!("tensor {name:?} shape overflows")))?;
        if end - begin != expected {
            return Err(ContainerErrorKind::ByteLength {
                tensor: name.clone(),
                expected,
                actual: end - begin,
            });
        }
        tensors.push(TensorMeta {
            name: name.clone(),
            dtype,
            shape,
            byte_offset: begin,
            byte_length: expected,
        });
    }

    let mut by_offset: Vec<&TensorMeta> = tensors.iter().filter(|t| t.byte_length > 0).collect();
    by_offset.sort_by_key(|t| (t.byte_offset, t.byte_length));
    for pair in by_offset.windows(2) {
        if pair[1].byte_offset < pair[0].byte_offset + pair[0].byte_length {
            return Err(ContainerErrorKind::Overlap {
                first: pair[0].name.clone(),
                second: pair[1].name.clone(),
            });
        }
    }
    tensors.sort_by(|a, b| a.name.cmp(&b.name));
    Ok((tensors, metadata))
}

/// A tensor to be written by [`write_container`]; `data` is little-endian.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<u64>,
    pub data: Vec<u8>,
}

impl TensorData {
    pub fn f32(name: &str, shape: &[u64], values: &[f32]) -> Self {
        TensorData {
            name: name.to_string(),
            dtype: Dtype::F32,
            shape: shape.to_vec(),
            data: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn f64(name: &str, shape: &[u64], values: &[f64]) -> Self {
        TensorData {
            name: name.to_string(),
            dtype: Dtype::F64,
            shape: shape.to_vec(),
            data: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }
}

/// Writes tensors in name order with the header padded to 8 bytes.
/// Identical input yields identical bytes.
pub fn write_container(path: &Path, tensors: &[TensorData]) -> Result<()> {
    let mut sorted: Vec<&TensorData> = tensors.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    let mut header = serde_json::Map::new();
    let mut offset = 0u64;
    for t in &sorted {
        let expected = t.dtype.size() * t.shape.iter().product::<u64>();
        if expected != t.data.len() as u64 {
            return Err(Error::Tensor {
                name: t.name.clone(),
                message: format!("{} data bytes for a tensor needing {expected}", t.data.len()),
            });
        }
        let end = offset + expected;
        header.insert(
            t.name.clone(),
            serde_json::json!({"dtype": t.dtype.as_str(), "shape": t.shape, "data_offsets": [offset, end]}),
        );
        offset = end;
    }
    let mut header_bytes = serde_json::to_vec(&Value::Object(header))
        .map_err(|e| Error::json("serializing container header", e))?;
    while header_bytes.len() % 8 != 0 {
        header_bytes.push(b' ');
    }
    let file =
        File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut out = BufWriter::new(file);
    let write_err = |e| Error::io(format!("writing {}", path.display()), e);
    out.write_all(&(header_bytes.len() as u64).to_le_bytes())
        .map_err(write_err)?;
    out.write_all(&header_bytes).map_err(write_err)?;
    for t in &sorted {
        out.write_all(&t.data).map_err(write_err)?;
    }
    out.flush().map_err(write_err)
}
