//! Mean absolute parameter deltas between two checkpoints, streamed per
//! tensor and aggregated into a (module kind x layer) matrix.

use std::fs::File;
use std::io::{BufReader, Read, Seek, SeekFrom};
use std::path::Path;

use half::{bf16, f16};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::container::{read_manifest, Dtype, Manifest, TensorMeta};
use super::scheme::{ModuleKind, NamingScheme};
use crate::error::{Error, Result};

/// Bytes read per side per step; a multiple of every element size.
pub const CHUNK_BYTES: usize = 1 << 16;

/// Sum and count of |base - tuned| for one tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorDelta {
    pub sum_abs: f64,
    pub n: u64,
}

impl TensorDelta {
    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum_abs / self.n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffEntry {
    pub name: String,
    pub layer: Option<usize>,
    pub module_kind: ModuleKind,
    pub mean_abs_delta: f64,
    pub n: u64,
}

/// Widens little-endian elements of `dtype` to f64, appending to `out`.
pub fn decode_into(dtype: Dtype, bytes: &[u8], out: &mut Vec<f64>) -> Result<()> {
    macro_rules! widen {
        ($t:ty, $n:expr, $conv:expr) => {
            out.extend(
                bytes
                    .chunks_exact($n)
                    .map(|c| $conv(<$t>::from_le_bytes(c.try_into().expect("chunk size")))),
            )
        };
    }
    match dtype {
        Dtype::F64 => widen!(f64, 8, |v: f64| v),
        Dtype::F32 => widen!(f32, 4, f64::from),
        Dtype::F16 => widen!(u16, 2, |b| f16::from_bits(b).to_f64()),
        Dtype::BF16 => widen!(u16, 2, |b| bf16::from_bits(b).to_f64()),
        Dtype::I64 => widen!(i64, 8, |v: i64| v as f64),
        Dtype::U64 => widen!(u64, 8, |v: u64| v as f64),
        Dtype::I32 => widen!(i32, 4, f64::from),
        Dtype::U32 => widen!(u32, 4, f64::from),
        Dtype::I16 => widen!(i16, 2, f64::from),
        Dtype::U16 => widen!(u16, 2, f64::from),
        Dtype::I8 => out.extend(bytes.iter().map(|b| f64::from(*b as i8))),
        Dtype::U8 | Dtype::Bool => out.extend(bytes.iter().map(|b| f64::from(*b))),
        Dtype::F8E4M3 | Dtype::F8E5M2 => {
            return Err(Error::Tensor {
                name: String::new(),
                message: format!("dtype {dtype} is not supported for diffing"),
            })
        }
    }
    Ok(())
}

/// Streams both tensors in fixed-size chunks and accumulates |base - tuned|
/// in f64. Readers must be positioned at the start of each tensor's bytes.
pub fn diff_tensor<A: Read, B: Read>(
    base_meta: &TensorMeta,
    tuned_meta: &TensorMeta,
    mut base: A,
    mut tuned: B,
) -> Result<TensorDelta> {
    let name = &base_meta.name;
    if base_meta.shape != tuned_meta.shape {
        return Err(Error::Tensor {
            name: name.clone(),
            message: format!(
                "shape mismatch: base {:?}, tuned {:?}",
                base_meta.shape, tuned_meta.shape
            ),
        });
    }
    if base_meta.dtype != tuned_meta.dtype {
        return Err(Error::Tensor {
            name: name.clone(),
            message: format!(
                "dtype mismatch: base {}, tuned {}",
                base_meta.dtype, tuned_meta.dtype
            ),
        });
    }
    let dtype = base_meta.dtype;
    let io_err = |e| Error::io(format!("reading tensor {name:?}"), e);
    let tag = |e: Error| match e {
        Error::Tensor { message, .. } => Error::Tensor {
            name: name.clone(),
            message,
        },
        other => other,
    };

    let mut remaining = base_meta.byte_length as usize;
    let mut buf_a = vec![0u8; CHUNK_BYTES.min(remaining.max(1))];
    let mut buf_b = vec![0u8; buf_a.len()];
    let mut vals_a = Vec::with_capacity(buf_a.len());
    let mut vals_b = Vec::with_capacity(buf_a.len());
    let mut sum_abs = 0.0f64;
    while remaining > 0 {
        let step = remaining.min(CHUNK_BYTES);
        base.read_exact(&mut buf_a[..step]).map_err(io_err)?;
        tuned.read_exact(&mut buf_b[..step]).map_err(io_err)?;
        vals_a.clear();
        vals_b.clear();
        decode_into(dtype, &buf_a[..step], &mut vals_a).map_err(tag)?;
        decode_into(dtype, &buf_b[..step], &mut vals_b).map_err(tag)?;
        sum_abs += vals_a
            .iter()
            .zip(&vals_b)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
        remaining -= step;
    }
    Ok(TensorDelta {
        sum_abs,
        n: base_meta.element_count(),
    })
}

fn open_at(manifest: &Manifest, meta: &TensorMeta) -> Result<impl Read> {
    let path = &manifest.path;
    let mut file =
        File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    file.seek(SeekFrom::Start(manifest.data_start + meta.byte_offset))
        .map_err(|e| Error::io(format!("seeking in {}", path.display()), e))?;
    Ok(BufReader::with_capacity(CHUNK_BYTES, file).take(meta.byte_length))
}

/// Diffs every tensor of two single-file checkpoints. Tensor sets must match.
/// `workers` bounds the thread pool (0 = rayon default). Output is name-sorted.
pub fn diff_checkpoints(
    base_path: &Path,
    tuned_path: &Path,
    scheme: &NamingScheme,
    workers: usize,
) -> Result<Vec<DiffEntry>> {
    let base = read_manifest(base_path)?;
    let tuned = read_manifest(tuned_path)?;
    diff_manifests(&base, &tuned, scheme, workers)
}

pub fn diff_manifests(
    base: &Manifest,
    tuned: &Manifest,
    scheme: &NamingScheme,
    workers: usize,
) -> Result<Vec<DiffEntry>> {
    for t in &base.tensors {
        if tuned.get(&t.name).is_none() {
            return Err(Error::Tensor {
                name: t.name.clone(),
                message: format!("missing from {}", tuned.path.display()),
            });
        }
    }
    for t in &tuned.tensors {
        if base.get(&t.name).is_none() {
            return Err(Error::Tensor {
                name: t.name.clone(),
                message: format!("missing from {}", base.path.display()),
            });
        }
    }
    let classes = scheme.classify_all(base.names())?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Tensor {
            name: String::new(),
            message: format!("building worker pool: {e}"),
        })?;
    pool.install(|| {
        base.tensors
            .par_iter()
            .zip(classes.par_iter())
            .map(|(meta_b, &(layer, module_kind))| {
                let meta_t = tuned.get(&meta_b.name).expect("checked above");
                let delta = diff_tensor(
                    meta_b,
                    meta_t,
                    open_at(base, meta_b)?,
                    open_at(tuned, meta_t)?,
                )?;
                Ok(DiffEntry {
                    name: meta_b.name.clone(),
                    layer,
                    module_kind,
                    mean_abs_delta: delta.mean(),
                    n: delta.n,
                })
            })
            .collect()
    })
}

/// Element-weighted mean delta per (module kind, layer) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffMatrix {
    pub layer_count: usize,
    pub rows: Vec<ModuleKind>,
    /// `values[row][layer]`; `None` where no tensor falls in the cell.
    pub values: Vec<Vec<Option<f64>>>,
    pub element_counts: Vec<Vec<u64>>,
}

pub fn build_matrix(entries: &[DiffEntry]) -> DiffMatrix {
    let layered: Vec<&DiffEntry> = entries.iter().filter(|e| e.layer.is_some()).collect();
    let layer_count = layered
        .iter()
        .filter_map(|e| e.layer)
        .max()
        .map_or(0, |m| m + 1);
    let rows: Vec<ModuleKind> = ModuleKind::ALL
        .into_iter()
        .filter(|k| layered.iter().any(|e| e.module_kind == *k))
        .collect();
    let mut weighted = vec![vec![0.0f64; layer_count]; rows.len()];
    let mut counts = vec![vec![0u64; layer_count]; rows.len()];
    for e in layered {
        let r = rows.iter().position(|k| *k == e.module_kind).expect("row exists");
        let l = e.layer.expect("layered");
        weighted[r][l] += e.mean_abs_delta * e.n as f64;
        counts[r][l] += e.n;
    }
    let values = weighted
        .iter()
        .zip(&counts)
        .map(|(w, c)| {
            w.iter()
                .zip(c)
                .map(|(w, &c)| (c > 0).then(|| w / c as f64))
                .collect()
        })
        .collect();
    DiffMatrix {
        layer_count,
        rows,
        values,
        element_counts: counts,
    }
}

impl DiffMatrix {
    pub fn row(&self, kind: ModuleKind) -> Option<&[Option<f64>]> {
        self.rows
            .iter()
            .position(|k| *k == kind)
            .map(|i| self.values[i].as_slice())
    }

    pub fn get(&self, kind: ModuleKind, layer: usize) -> Option<f64> {
        self.row(kind).and_then(|r| r.get(layer).copied().flatten())
    }

    pub fn min_max(&self) -> Option<(f64, f64)> {
        self.values.iter().flatten().flatten().fold(None, |acc, &v| {
            Some(match acc {
                None => (v, v),
                Some((lo, hi)) => (lo.min(v), hi.max(v)),
            })
        })
    }

    /// Rows are module kinds, columns 1-indexed layers. Values use the
    /// shortest representation that round-trips; empty cells are blank.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("module");
        for l in 1..=self.layer_count {
            out.push_str(&format!(",layer_{l}"));
        }
        out.push('\n');
        for (kind, row) in self.rows.iter().zip(&self.values) {
            out.push_str(kind.as_str());
            for v in row {
                out.push(',');
                if let Some(v) = v {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<DiffMatrix> {
        let bad = |m: String| Error::Report(format!("diff matrix csv: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"module") {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        for (i, c) in cols[1..].iter().enumerate() {
            if *c != format!("layer_{}", i + 1) {
                return Err(bad(format!("column {} is {c:?}, expected layer_{}", i + 2, i + 1)));
            }
        }
        let layer_count = cols.len() - 1;
        let mut rows = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != cols.len() {
                return Err(bad(format!("row {} has {} cells", lineno + 2, cells.len())));
            }
            rows.push(cells[0].parse::<ModuleKind>()?);
            values.push(
                cells[1..]
                    .iter()
                    .map(|c| {
                        if c.is_empty() {
                            Ok(None)
                        } else {
                            c.parse::<f64>()
                                .map(Some)
                                .map_err(|e| bad(format!("row {}: {c:?}: {e}", lineno + 2)))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let element_counts = vec![vec![0; layer_count]; rows.len()];
        Ok(DiffMatrix {
            layer_count,
            rows,
            values,
            element_counts,
        })
    }
}
