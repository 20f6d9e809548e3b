//! Set metrics over correct-answer sets: Jaccard overlap, known/unknown
//! asymmetry, cumulative accuracy and the language-adherence ratio in its
//! general (set-difference over symmetric-difference) and filtered forms.
//!
//! All values are fractions in [0, 1]. A ratio whose denominator is empty is
//! reported as [`Ratio::Undefined`] instead of being coerced to 0 or 1.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lang::LanguageCode;
use crate::matcher::CorrectSets;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Ratio {
    Defined(f64),
    Undefined(UndefinedTag),
}

/// Serialized as the string `"undefined"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UndefinedTag {
    Undefined,
}

impl Ratio {
    pub const UNDEFINED: Ratio = Ratio::Undefined(UndefinedTag::Undefined);

    pub fn from_counts(numerator: usize, denominator: usize) -> Ratio {
        if denominator == 0 {
            Ratio::UNDEFINED
        } else {
            Ratio::Defined(numerator as f64 / denominator as f64)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Ratio::Defined(v) => Some(v),
            Ratio::Undefined(_) => None,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, Ratio::Defined(_))
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ratio::Defined(v) => write!(f, "{v}"),
            Ratio::Undefined(_) => f.write_str("undefined"),
        }
    }
}

/// |A ∩ B| / |A ∪ B|; 0 when both sets are empty (see [`jaccard_flagged`]).
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    jaccard_flagged(a, b).0
}

/// Jaccard index plus a flag set when both inputs were empty.
pub fn jaccard_flagged<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> (f64, bool) {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        (0.0, true)
    } else {
        (inter as f64 / union as f64, false)
    }
}

/// (|A \ B|, |B \ A|): known in A but not B, and the reverse.
pub fn known_unknown<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> (usize, usize) {
    let inter = a.intersection(b).count();
    (a.len() - inter, b.len() - inter)
}

/// Numerator and denominator of the general adherence ratio:
/// |C_ii \ U| and |C_ii Δ U| with U the union over other output languages.
pub fn cococola_general_counts(sets: &CorrectSets) -> (usize, usize) {
    let same = sets.same_language();
    let others = sets.other_union();
    let inter = same.intersection(&others).count();
    let only_same = same.len() - inter;
    let only_other = others.len() - inter;
    (only_same, only_same + only_other)
}

pub fn cococola_general(sets: &CorrectSets) -> Ratio {
    let (num, den) = cococola_general_counts(sets);
    Ratio::from_counts(num, den)
}

/// |C_ii| / (|C_ii| + |C_i,ref|). Only meaningful when the two sets are
/// disjoint, which holds on a filtered subset; overlap is an error.
pub fn cococola_simplified(sets: &CorrectSets) -> Result<Ratio> {
    sets.check_disjoint()?;
    let same = sets.same_language().len();
    let reference = sets.to_reference().len();
    Ok(Ratio::from_counts(same, same + reference))
}

/// |C_ii ∪ C_i,ref| / |universe|.
pub fn cumulative_accuracy(sets: &CorrectSets) -> Result<f64> {
    if sets.universe.is_empty() {
        return Err(Error::Metrics("cumulative accuracy over an empty universe".into()));
    }
    let union = sets.same_language().union(sets.to_reference()).count();
    Ok(union as f64 / sets.universe.len() as f64)
}

/// |C_ii| / |universe|: answers correct and in the input language.
pub fn input_language_accuracy(sets: &CorrectSets) -> Result<f64> {
    if sets.universe.is_empty() {
        return Err(Error::Metrics("accuracy over an empty universe".into()));
    }
    Ok(sets.same_language().len() as f64 / sets.universe.len() as f64)
}

/// SFT minus PLM, both on the percent scale.
pub fn delta_accuracy(plm: f64, sft: f64) -> f64 {
    sft - plm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UniverseKind {
    /// Whole evaluation split.
    Full,
    /// Evaluation ids whose input-language and reference answers differ.
    Filtered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdherenceCounts {
    pub same_language: usize,
    pub reference: usize,
    pub other_union: usize,
    pub universe: usize,
    pub general_numerator: usize,
    pub general_denominator: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoCoColaReport {
    pub input_language: LanguageCode,
    pub universe_kind: UniverseKind,
    pub ratio_general: Ratio,
    /// `None` when the input and reference sets overlap.
    pub ratio_simplified: Option<Ratio>,
    pub cumulative_accuracy: f64,
    pub input_accuracy: f64,
    pub counts: AdherenceCounts,
}

pub fn cococola_report(sets: &CorrectSets, universe_kind: UniverseKind) -> Result<CoCoColaReport> {
    let (num, den) = cococola_general_counts(sets);
    let simplified = match cococola_simplified(sets) {
        Ok(r) => Some(r),
        Err(e) if universe_kind == UniverseKind::Filtered => return Err(e),
        Err(_) => None,
    };
    Ok(CoCoColaReport {
        input_language: sets.input_language,
        universe_kind,
        ratio_general: Ratio::from_counts(num, den),
        ratio_simplified: simplified,
        cumulative_accuracy: cumulative_accuracy(sets)?,
        input_accuracy: input_language_accuracy(sets)?,
        counts: AdherenceCounts {
            same_language: sets.same_language().len(),
            reference: sets.to_reference().len(),
            other_union: sets.other_union().len(),
            universe: sets.universe.len(),
            general_numerator: num,
            general_denominator: den,
        },
    })
}

/// Pairwise Jaccard and known/unknown counts over per-language correct sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapMatrix {
    pub languages: Vec<LanguageCode>,
    /// Symmetric, row/column order = `languages`.
    pub iou: Vec<Vec<f64>>,
    /// `known_not[a][b]` = |A \ B|.
    pub known_not: Vec<Vec<usize>>,
    /// Pairs whose IoU was 0 only because both sets were empty.
    pub empty_pairs: Vec<(LanguageCode, LanguageCode)>,
}

pub fn overlap_matrix<T: Ord + Sync>(
    sets: &BTreeMap<LanguageCode, BTreeSet<T>>,
    order: &[LanguageCode],
) -> Result<OverlapMatrix> {
    for lang in order {
        if !sets.contains_key(lang) {
            return Err(Error::Metrics(format!("no correct set for language {lang}")));
        }
    }
    let rows: Vec<Vec<(f64, bool, usize)>> = order
        .par_iter()
        .map(|a| {
            order
                .iter()
                .map(|b| {
                    let (iou, empty) = jaccard_flagged(&sets[a], &sets[b]);
                    let (known, _) = known_unknown(&sets[a], &sets[b]);
                    (iou, empty, known)
                })
                .collect()
        })
        .collect();
    let mut empty_pairs = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            if cell.1 && i <= j {
                empty_pairs.push((order[i], order[j]));
            }
        }
    }
    Ok(OverlapMatrix {
        languages: order.to_vec(),
        iou: rows.iter().map(|r| r.iter().map(|c| c.0).collect()).collect(),
        known_not: rows.iter().map(|r| r.iter().map(|c| c.2).collect()).collect(),
        empty_pairs,
    })
}
