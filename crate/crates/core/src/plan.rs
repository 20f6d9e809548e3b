//! Freeze plans for partial fine-tuning: which parameters stay trainable when
//! only a range of transformer blocks is unfrozen.
//!
//! Layer indices are 0-based internally. Everything a person reads (labels,
//! reports) is 1-based and says so.
//!
//! Parameters outside the transformer blocks (embeddings, final norm, LM
//! head) are frozen in every plan; `include_head` unfreezes the head only.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::container::{read_manifest, Dtype, TensorMeta};
use crate::checkpoint::diff::DiffMatrix;
use crate::checkpoint::scheme::{ModuleKind, NamingScheme};
use crate::error::{Error, Result};

/// Inclusive, 0-based block range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRange {
    pub start: usize,
    pub end: usize,
}

impl LayerRange {
    pub fn new(start: usize, end: usize, layer_count: usize) -> Result<Self> {
        if start > end || end >= layer_count {
            return Err(Error::Plan(format!(
                "layer range {start}..={end} (0-indexed) does not fit {layer_count} layers"
            )));
        }
        Ok(LayerRange { start, end })
    }

    /// Parses a human label such as `"11-16"` (1-indexed, inclusive).
    pub fn parse_one_indexed(label: &str, layer_count: usize) -> Result<Self> {
        let bad = || Error::Plan(format!("layer range {label:?} is not of the form START-END"));
        let (a, b) = label
            .split_once(['-', '–', ':'])
            .ok_or_else(bad)?;
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        if a == 0 {
            return Err(Error::Plan(format!(
                "layer range {label:?} is 1-indexed; layer 0 does not exist"
            )));
        }
        LayerRange::new(a - 1, b - 1, layer_count)
    }

    pub fn contains(&self, layer: usize) -> bool {
        (self.start..=self.end).contains(&layer)
    }
}

impl fmt::Display for LayerRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start + 1, self.end + 1)
    }
}

/// Renders sorted 0-based layers as 1-based runs, e.g. `[0,1,2,5]` -> `"1-3, 6"`.
pub fn one_indexed_label(layers: &[usize]) -> String {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for &l in layers {
        match runs.last_mut() {
            Some((_, end)) if *end + 1 == l => *end = l,
            _ => runs.push((l, l)),
        }
    }
    runs.iter()
        .map(|&(a, b)| {
            if a == b {
                format!("{}", a + 1)
            } else {
                format!("{}-{}", a + 1, b + 1)
            }
        })
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rationale {
    FinalK { k: usize },
    MatchedPrefix { target: u64, overshoot: u64 },
    Explicit { range: LayerRange },
    TopDelta { fraction: f64, selected: usize },
}

impl Rationale {
    pub fn name(&self) -> &'static str {
        match self {
            Rationale::FinalK { .. } => "final_k",
            Rationale::MatchedPrefix { .. } => "matched_prefix",
            Rationale::Explicit { .. } => "explicit",
            Rationale::TopDelta { .. } => "top_delta",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanCounts {
    pub trainable: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreezePlan {
    pub scheme: String,
    pub layer_count: usize,
    pub rationale: Rationale,
    pub include_head: bool,
    /// 0-indexed.
    pub trainable_layers: Vec<usize>,
    /// Same layers, 1-indexed, for people.
    pub trainable_layers_label: String,
    pub trainable: BTreeMap<String, bool>,
    pub counts: PlanCounts,
}

impl FreezePlan {
    pub fn is_trainable(&self, name: &str) -> Option<bool> {
        self.trainable.get(name).copied()
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.trainable
            .iter()
            .filter(|(_, t)| **t)
            .map(|(n, _)| n.as_str())
    }
}

/// A manifest classified by a naming scheme, ready for planning.
#[derive(Debug, Clone)]
pub struct PlanManifest {
    scheme: String,
    params: Vec<PlanParam>,
    layer_count: usize,
}

#[derive(Debug, Clone)]
struct PlanParam {
    name: String,
    n: u64,
    layer: Option<usize>,
    kind: ModuleKind,
}

impl PlanManifest {
    pub fn new(tensors: &[TensorMeta], scheme: &NamingScheme) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        let mut params = Vec::with_capacity(tensors.len());
        for t in tensors {
            if !seen.insert(t.name.as_str()) {
                return Err(Error::Plan(format!("parameter {:?} listed twice", t.name)));
            }
            let (layer, kind) = scheme.classify(&t.name)?;
            params.push(PlanParam {
                name: t.name.clone(),
                n: t.element_count(),
                layer,
                kind,
            });
        }
        let layer_count = params
            .iter()
            .filter_map(|p| p.layer)
            .max()
            .map(|m| m + 1)
            .ok_or_else(|| {
                Error::Plan(format!(
                    "scheme {:?} finds no layer-indexed parameters in the manifest",
                    scheme.name()
                ))
            })?;
        Ok(PlanManifest {
            scheme: scheme.name().to_string(),
            params,
            layer_count,
        })
    }

    pub fn layer_count(&self) -> usize {
        self.layer_count
    }

    pub fn total(&self) -> u64 {
        self.params.iter().map(|p| p.n).sum()
    }

    /// Parameter count per block, index = layer.
    pub fn per_layer_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.layer_count];
        for p in &self.params {
            if let Some(l) = p.layer {
                counts[l] += p.n;
            }
        }
        counts
    }

    fn head_count(&self) -> u64 {
        self.params
            .iter()
            .filter(|p| p.layer.is_none() && p.kind == ModuleKind::Head)
            .map(|p| p.n)
            .sum()
    }

    fn build(&self, layers: Vec<usize>, include_head: bool, rationale: Rationale) -> FreezePlan {
        let mut trainable = BTreeMap::new();
        let mut count = 0u64;
        for p in &self.params {
            let on = match p.layer {
                Some(l) => layers.contains(&l),
                None => include_head && p.kind == ModuleKind::Head,
            };
            if on {
                count += p.n;
            }
            trainable.insert(p.name.clone(), on);
        }
        FreezePlan {
            scheme: self.scheme.clone(),
            layer_count: self.layer_count,
            rationale,
            include_head,
            trainable_layers_label: format!("{} (1-indexed)", one_indexed_label(&layers)),
            trainable_layers: layers,
            trainable,
            counts: PlanCounts {
                trainable: count,
                total: self.total(),
            },
        }
    }
}

/// Unfreezes the last `k` blocks.
pub fn plan_final_layers(manifest: &PlanManifest, k: usize, include_head: bool) -> Result<FreezePlan> {
    let n = manifest.layer_count;
    if k == 0 || k > n {
        return Err(Error::Plan(format!("k = {k} is outside 1..={n}")));
    }
    Ok(manifest.build((n - k..n).collect(), include_head, Rationale::FinalK { k }))
}

pub fn plan_explicit(manifest: &PlanManifest, range: LayerRange, include_head: bool) -> Result<FreezePlan> {
    let range = LayerRange::new(range.start, range.end, manifest.layer_count)?;
    Ok(manifest.build(
        (range.start..=range.end).collect(),
        include_head,
        Rationale::Explicit { range },
    ))
}

/// Unfreezes blocks 0, 1, 2, ... until the trainable block-parameter count
/// reaches that of `reference` (a final-k plan).
pub fn plan_matched_prefix(manifest: &PlanManifest, reference: &FreezePlan) -> Result<FreezePlan> {
    if !matches!(reference.rationale, Rationale::FinalK { .. }) {
        return Err(Error::Plan(format!(
            "matched-prefix needs a final_k reference, got {}",
            reference.rationale.name()
        )));
    }
    if reference.layer_count != manifest.layer_count {
        return Err(Error::Plan(format!(
            "reference plan has {} layers, manifest has {}",
            reference.layer_count, manifest.layer_count
        )));
    }
    let head = if reference.include_head { manifest.head_count() } else { 0 };
    let target = reference.counts.trainable - head;
    let per_layer = manifest.per_layer_counts();
    let available: u64 = per_layer.iter().sum();
    if target > available {
        return Err(Error::Plan(format!(
            "reference trains {target} block parameters but the model only has {available}"
        )));
    }
    let mut layers = Vec::new();
    let mut reached = 0u64;
    for (layer, count) in per_layer.iter().enumerate() {
        if reached >= target && !layers.is_empty() {
            break;
        }
        layers.push(layer);
        reached += count;
    }
    Ok(manifest.build(
        layers,
        reference.include_head,
        Rationale::MatchedPrefix {
            target,
            overshoot: reached - target,
        },
    ))
}

/// Unfreezes the ⌈fraction × layers⌉ blocks whose MLP delta is largest;
/// ties go to the higher layer.
pub fn plan_from_delta(
    matrix: &DiffMatrix,
    manifest: &PlanManifest,
    fraction: f64,
    include_head: bool,
) -> Result<FreezePlan> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Plan(format!("fraction {fraction} is outside (0, 1]")));
    }
    let n = manifest.layer_count;
    if matrix.layer_count != n {
        return Err(Error::Plan(format!(
            "diff matrix has {} layers but the {} manifest has {n}",
            matrix.layer_count, manifest.scheme
        )));
    }
    let mlp = matrix
        .row(ModuleKind::Mlp)
        .ok_or_else(|| Error::Plan("diff matrix has no mlp row".into()))?;
    let mut ranked: Vec<(usize, f64)> = mlp
        .iter()
        .enumerate()
        .map(|(l, v)| {
            v.map(|v| (l, v))
                .ok_or_else(|| Error::Plan(format!("mlp delta missing for layer {}", l + 1)))
        })
        .collect::<Result<_>>()?;
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.0.cmp(&a.0)));
    let selected = selection_size(fraction, n);
    let mut layers: Vec<usize> = ranked[..selected].iter().map(|(l, _)| *l).collect();
    layers.sort_unstable();
    Ok(manifest.build(layers, include_head, Rationale::TopDelta { fraction, selected }))
}

/// ⌈fraction × n⌉, ignoring float noise such as 0.3 × 10 = 3.0000000000000004.
fn selection_size(fraction: f64, n: usize) -> usize {
    let raw = fraction * n as f64;
    let rounded = raw.round();
    let k = if (raw - rounded).abs() < 1e-9 { rounded } else { raw.ceil() };
    (k as usize).clamp(1, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalancedMultilingual {
    pub per_language_examples: u32,
}

impl Default for BalancedMultilingual {
    fn default() -> Self {
        BalancedMultilingual {
            per_language_examples: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfigTemplate {
    pub num_epochs: u32,
    pub save_steps: u32,
    pub eval_steps: u32,
    pub logging_steps: u32,
    pub batch_size: u32,
    pub gradient_accumulation: u32,
    pub weight_decay: f64,
    pub bf16: bool,
    pub seed: u64,
    pub learning_rate: f64,
    pub dropout: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub balanced_multilingual: Option<BalancedMultilingual>,
}

impl Default for TrainConfigTemplate {
    fn default() -> Self {
        TrainConfigTemplate {
            num_epochs: 3,
            save_steps: 100,
            eval_steps: 100,
            logging_steps: 100,
            batch_size: 64,
            gradient_accumulation: 1,
            weight_decay: 0.01,
            bf16: true,
            seed: 42,
            learning_rate: 5e-6,
            dropout: 0.1,
            balanced_multilingual: None,
        }
    }
}

impl TrainConfigTemplate {
    /// Same hyperparameters, plus the balanced multilingual data flag.
    pub fn multilingual() -> Self {
        TrainConfigTemplate {
            balanced_multilingual: Some(BalancedMultilingual::default()),
            ..Default::default()
        }
    }
}

/// On-disk plan: the plan plus its training template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    #[serde(flatten)]
    pub plan: FreezePlan,
    pub train_config: TrainConfigTemplate,
}

pub fn emit_plan(plan: &FreezePlan, template: &TrainConfigTemplate, out: &Path) -> Result<()> {
    let file = PlanFile {
        plan: plan.clone(),
        train_config: *template,
    };
    let mut text =
        serde_json::to_string_pretty(&file).map_err(|e| Error::json("serializing plan", e))?;
    text.push('\n');
    fs::write(out, text).map_err(|e| Error::io(format!("writing {}", out.display()), e))
}

pub fn read_plan(path: &Path) -> Result<PlanFile> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(format!("parsing {}", path.display()), e))
}

/// Manifest entry as listed in a JSON manifest file (no tensor data).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<u64>,
    #[serde(default = "default_dtype")]
    pub dtype: Dtype,
}

fn default_dtype() -> Dtype {
    Dtype::BF16
}

/// Tensor list from a container file, or from a JSON list of
/// `{name, shape[, dtype]}` when the path ends in `.json`.
pub fn load_tensor_list(path: &Path) -> Result<Vec<TensorMeta>> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let entries: Vec<ManifestEntry> = serde_json::from_str(&text)
            .map_err(|e| Error::json(format!("parsing {}", path.display()), e))?;
        let mut offset = 0;
        Ok(entries
            .into_iter()
            .map(|e| {
                let len = e.dtype.size() * e.shape.iter().product::<u64>();
                let meta = TensorMeta {
                    name: e.name,
                    dtype: e.dtype,
                    shape: e.shape,
                    byte_offset: offset,
                    byte_length: len,
                };
                offset += len;
                meta
            })
            .collect())
    } else {
        Ok(read_manifest(path)?.tensors)
    }
}
