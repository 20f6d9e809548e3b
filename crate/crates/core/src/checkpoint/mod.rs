//! Checkpoint manifests, parameter classification and per-layer deltas.

pub mod container;
pub mod diff;
pub mod scheme;

pub use container::{read_manifest, write_container, Dtype, Manifest, TensorData, TensorMeta};
pub use diff::{build_matrix, diff_checkpoints, diff_tensor, DiffEntry, DiffMatrix, TensorDelta};
pub use scheme::{classify_parameter, ModuleKind, NamingScheme};
