//! Parameter naming schemes: map a dotted parameter path to a layer index
//! and a module kind.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModuleKind {
    Attention,
    Mlp,
    Norm,
    Embedding,
    Head,
    Other,
}

impl ModuleKind {
    pub const ALL: [ModuleKind; 6] = [
        ModuleKind::Attention,
        ModuleKind::Mlp,
        ModuleKind::Norm,
        ModuleKind::Embedding,
        ModuleKind::Head,
        ModuleKind::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModuleKind::Attention => "attention",
            ModuleKind::Mlp => "mlp",
            ModuleKind::Norm => "norm",
            ModuleKind::Embedding => "embedding",
            ModuleKind::Head => "head",
            ModuleKind::Other => "other",
        }
    }
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModuleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModuleKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Scheme(format!("unknown module kind {s:?}")))
    }
}

/// Serialized form of a scheme, as read from a JSON file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub name: String,
    /// Patterns may capture the layer index in a group named `layer`.
    pub patterns: Vec<PatternSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub kind: ModuleKind,
    pub pattern: String,
}

#[derive(Debug, Clone)]
pub struct NamingScheme {
    name: String,
    patterns: Vec<(ModuleKind, Regex)>,
}

const LLAMA: &[(ModuleKind, &str)] = &[
    (ModuleKind::Attention, r"^(?:model\.)?layers\.(?P<layer>\d+)\.self_attn\."),
    (ModuleKind::Mlp, r"^(?:model\.)?layers\.(?P<layer>\d+)\.mlp\."),
    (
        ModuleKind::Norm,
        r"^(?:model\.)?layers\.(?P<layer>\d+)\.(?:input_layernorm|post_attention_layernorm)\.",
    ),
    (ModuleKind::Norm, r"^(?:model\.)?norm\."),
    (ModuleKind::Embedding, r"^(?:model\.)?embed_tokens\."),
    (ModuleKind::Head, r"^lm_head\."),
];

const GEMMA: &[(ModuleKind, &str)] = &[
    (
        ModuleKind::Attention,
        r"^(?:(?:model|language_model)\.)*layers\.(?P<layer>\d+)\.self_attn\.",
    ),
    (
        ModuleKind::Mlp,
        r"^(?:(?:model|language_model)\.)*layers\.(?P<layer>\d+)\.mlp\.",
    ),
    (
        ModuleKind::Norm,
        r"^(?:(?:model|language_model)\.)*layers\.(?P<layer>\d+)\.(?:input_layernorm|post_attention_layernorm|pre_feedforward_layernorm|post_feedforward_layernorm)\.",
    ),
    (ModuleKind::Norm, r"^(?:(?:model|language_model)\.)*norm\."),
    (ModuleKind::Embedding, r"^(?:(?:model|language_model)\.)*embed_tokens\."),
    (ModuleKind::Head, r"^(?:language_model\.)?lm_head\."),
];

/// Layout written by the toy trainer.
const TOY: &[(ModuleKind, &str)] = &[
    (ModuleKind::Attention, r"^blocks\.(?P<layer>\d+)\.attn\."),
    (ModuleKind::Mlp, r"^blocks\.(?P<layer>\d+)\.mlp\."),
    (ModuleKind::Norm, r"^blocks\.(?P<layer>\d+)\.ln[12]\."),
    (ModuleKind::Norm, r"^ln_f\."),
    (ModuleKind::Embedding, r"^(?:tok_emb|pos_emb)\."),
    (ModuleKind::Head, r"^head\."),
];

pub const BUNDLED: &[&str] = &["llama", "gemma", "toy"];

impl NamingScheme {
    pub fn bundled(name: &str) -> Option<NamingScheme> {
        let table = match name {
            "llama" => LLAMA,
            "gemma" => GEMMA,
            "toy" => TOY,
            _ => return None,
        };
        let spec = SchemeSpec {
            name: name.to_string(),
            patterns: table
                .iter()
                .map(|(kind, p)| PatternSpec {
                    kind: *kind,
                    pattern: p.to_string(),
                })
                .collect(),
        };
        Some(NamingScheme::from_spec(&spec).expect("bundled schemes compile"))
    }

    pub fn from_spec(spec: &SchemeSpec) -> Result<NamingScheme> {
        if spec.patterns.is_empty() {
            return Err(Error::Scheme(format!("scheme {:?} has no patterns", spec.name)));
        }
        let patterns = spec
            .patterns
            .iter()
            .map(|p| {
                Regex::new(&p.pattern)
                    .map(|r| (p.kind, r))
                    .map_err(|e| Error::Scheme(format!("pattern {:?}: {e}", p.pattern)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(NamingScheme {
            name: spec.name.clone(),
            patterns,
        })
    }

    /// A bundled scheme name, or a path to a JSON [`SchemeSpec`].
    pub fn load(name_or_path: &str) -> Result<NamingScheme> {
        if let Some(s) = NamingScheme::bundled(name_or_path) {
            return Ok(s);
        }
        let path = Path::new(name_or_path);
        if !path.exists() {
            return Err(Error::Scheme(format!(
                "{name_or_path:?} is neither a bundled scheme ({}) nor a file",
                BUNDLED.join(", ")
            )));
        }
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading scheme {}", path.display()), e))?;
        let spec: SchemeSpec = serde_json::from_str(&text)
            .map_err(|e| Error::json(format!("parsing scheme {}", path.display()), e))?;
        NamingScheme::from_spec(&spec)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `(layer, kind)` for `name`; unmatched names are `(None, Other)`.
    /// Matches from two different kinds are a configuration error.
    pub fn classify(&self, name: &str) -> Result<(Option<usize>, ModuleKind)> {
        let mut found: Option<(Option<usize>, ModuleKind)> = None;
        for (kind, re) in &self.patterns {
            let Some(caps) = re.captures(name) else {
                continue;
            };
            let layer = match caps.name("layer") {
                Some(m) => Some(m.as_str().parse::<usize>().map_err(|e| {
                    Error::Scheme(format!("layer index in {name:?}: {e}"))
                })?),
                None => None,
            };
            match found {
                None => found = Some((layer, *kind)),
                Some(prev) if prev == (layer, *kind) => {}
                Some(prev) => {
                    return Err(Error::Scheme(format!(
                        "scheme {:?}: {name:?} matches both {} and {} patterns",
                        self.name, prev.1, kind
                    )))
                }
            }
        }
        Ok(found.unwrap_or((None, ModuleKind::Other)))
    }

    /// Classifies every name up front so overlapping patterns fail before any work.
    pub fn classify_all<'a, I>(&self, names: I) -> Result<Vec<(Option<usize>, ModuleKind)>>
    where
        I: IntoIterator<Item = &'a str>,
    {
        names.into_iter().map(|n| self.classify(n)).collect()
    }
}

pub fn classify_parameter(name: &str, scheme: &NamingScheme) -> Result<(Option<usize>, ModuleKind)> {
    scheme.classify(name)
}
