//! Character n-gram language identification (out-of-place rank distance)
//! over a restricted candidate set.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{ParallelCorpus, Split};
use crate::error::{Error, Result};
use crate::lang::{char_script, devanagari_share, LanguageCode, Script};
use crate::matcher::normalize::normalize;

pub const MAX_NGRAM: usize = 4;
pub const PROFILE_SIZE: usize = 400;
/// Out-of-place cost for an n-gram absent from a profile.
pub const MISSING_PENALTY: u32 = PROFILE_SIZE as u32 + 1;
pub const MIN_TRAINING_QUESTIONS: usize = 50;
pub const DEFAULT_THRESHOLD: f64 = 5.0;
/// Margin reported when no competing candidate exists or the script decides.
pub const MARGIN_SENTINEL: f64 = f64::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageProfile {
    pub language: LanguageCode,
    /// n-gram -> rank, 1 = most frequent.
    pub ngram_ranks: BTreeMap<String, u32>,
}

impl LanguageProfile {
    pub fn from_texts<'a, I>(language: LanguageCode, texts: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts = HashMap::new();
        for text in texts {
            count_ngrams(&normalize(text), &mut counts);
        }
        LanguageProfile {
            language,
            ngram_ranks: rank(counts),
        }
    }

    pub fn len(&self) -> usize {
        self.ngram_ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ngram_ranks.is_empty()
    }

    /// The n-gram with rank 1.
    pub fn top(&self) -> Option<&str> {
        self.ngram_ranks
            .iter()
            .find(|(_, r)| **r == 1)
            .map(|(g, _)| g.as_str())
    }
}

/// Splits normalized text into padded words and counts n-grams of length 1..=4.
pub fn count_ngrams(text: &str, counts: &mut HashMap<String, u64>) {
    for word in words(text) {
        let padded: Vec<char> = std::iter::once('_')
            .chain(word.chars())
            .chain(std::iter::once('_'))
            .collect();
        for n in 1..=MAX_NGRAM {
            for window in padded.windows(n) {
                if n == 1 && window[0] == '_' {
                    continue;
                }
                *counts.entry(window.iter().collect()).or_insert(0) += 1;
            }
        }
    }
}

fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !(c.is_alphabetic() || char_script(c) == Script::Devanagari && !is_danda(c)))
        .filter(|w| !w.is_empty())
}

fn is_danda(c: char) -> bool {
    matches!(c, '\u{0964}' | '\u{0965}') || ('\u{0966}'..='\u{096F}').contains(&c)
}

/// Most frequent first; equal counts ordered lexicographically so ranks are deterministic.
fn rank(counts: HashMap<String, u64>) -> BTreeMap<String, u32> {
    let mut entries: Vec<(String, u64)> = counts.into_iter().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    entries
        .into_iter()
        .take(PROFILE_SIZE)
        .enumerate()
        .map(|(i, (g, _))| (g, i as u32 + 1))
        .collect()
}

/// One profile per declared language, built from training-split questions.
pub fn build_profiles(corpus: &ParallelCorpus) -> Result<Profiles> {
    let train: Vec<&str> = corpus.split_ids(Split::Train).collect();
    let mut profiles = BTreeMap::new();
    let mut short = Vec::new();
    for &lang in corpus.languages() {
        let texts: Vec<&str> = train
            .iter()
            .filter_map(|id| corpus.item(id, lang))
            .map(|item| item.question.as_str())
            .collect();
        if texts.len() < MIN_TRAINING_QUESTIONS {
            short.push(format!("{lang} ({} questions)", texts.len()));
            continue;
        }
        profiles.insert(lang, LanguageProfile::from_texts(lang, texts));
    }
    if !short.is_empty() {
        return Err(Error::LangId(format!(
            "need at least {MIN_TRAINING_QUESTIONS} training questions per language; insufficient: {}",
            short.join(", ")
        )));
    }
    Ok(Profiles(profiles))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Prediction {
    Language(LanguageCode),
    Other,
}

impl Prediction {
    pub fn language(self) -> Option<LanguageCode> {
        match self {
            Prediction::Language(l) => Some(l),
            Prediction::Other => None,
        }
    }
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prediction::Language(l) => write!(f, "{l}"),
            Prediction::Other => f.write_str("other"),
        }
    }
}

impl Serialize for Prediction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Prediction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s == "other" {
            return Ok(Prediction::Other);
        }
        LanguageCode::new(&s)
            .map(Prediction::Language)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LangIdResult {
    pub predicted: Prediction,
    /// Second-best minus best distance.
    pub margin: f64,
    /// Out-of-place distance per candidate (lower is closer).
    pub scores: BTreeMap<LanguageCode, f64>,
}

impl LangIdResult {
    /// Candidate with the smallest distance, ties toward the smaller code.
    pub fn best(&self) -> Option<LanguageCode> {
        self.scores
            .iter()
            .min_by(|a, b| a.1.total_cmp(b.1).then_with(|| a.0.cmp(b.0)))
            .map(|(l, _)| *l)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Profiles(pub BTreeMap<LanguageCode, LanguageProfile>);

impl Profiles {
    pub fn get(&self, lang: LanguageCode) -> Option<&LanguageProfile> {
        self.0.get(&lang)
    }

    pub fn languages(&self) -> impl Iterator<Item = LanguageCode> + '_ {
        self.0.keys().copied()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading profiles {}", path.display()), e))?;
        let profiles: Profiles = serde_json::from_str(&text)
            .map_err(|e| Error::json(format!("parsing profiles {}", path.display()), e))?;
        for (lang, p) in &profiles.0 {
            if *lang != p.language {
                return Err(Error::LangId(format!(
                    "profile keyed {lang} describes {}",
                    p.language
                )));
            }
        }
        Ok(profiles)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::json("serializing profiles", e))?;
        fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn classify(
        &self,
        text: &str,
        candidates: &BTreeSet<LanguageCode>,
        threshold: f64,
    ) -> Result<LangIdResult> {
        classify(text, candidates, self, threshold)
    }
}

pub fn classify(
    text: &str,
    candidates: &BTreeSet<LanguageCode>,
    profiles: &Profiles,
    threshold: f64,
) -> Result<LangIdResult> {
    if candidates.is_empty() {
        return Err(Error::LangId("empty candidate set".into()));
    }
    let missing: Vec<String> = candidates
        .iter()
        .filter(|c| profiles.get(**c).is_none())
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::LangId(format!(
            "no profile for candidates {}",
            missing.join(", ")
        )));
    }
    let normalized = normalize(text);
    let mut counts = HashMap::new();
    count_ngrams(&normalized, &mut counts);
    if counts.is_empty() {
        return Err(Error::LangId(format!(
            "text {text:?} has no letters after normalization"
        )));
    }
    let text_ranks = rank(counts);

    let scores: BTreeMap<LanguageCode, f64> = candidates
        .iter()
        .map(|&lang| {
            let profile = &profiles.0[&lang].ngram_ranks;
            let distance: u64 = text_ranks
                .iter()
                .map(|(g, &r)| match profile.get(g) {
                    Some(&p) => u64::from(r.abs_diff(p)),
                    None => u64::from(MISSING_PENALTY),
                })
                .sum();
            (lang, distance as f64)
        })
        .collect();

    if candidates.contains(&LanguageCode::HI)
        && devanagari_share(&normalized).is_some_and(|s| s > 0.5)
    {
        return Ok(LangIdResult {
            predicted: Prediction::Language(LanguageCode::HI),
            margin: MARGIN_SENTINEL,
            scores,
        });
    }

    let mut sorted: Vec<(LanguageCode, f64)> = scores.iter().map(|(l, s)| (*l, *s)).collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let margin = match sorted.get(1) {
        Some(second) => second.1 - sorted[0].1,
        None => MARGIN_SENTINEL,
    };
    let predicted = if margin < threshold || margin == 0.0 {
        Prediction::Other
    } else {
        Prediction::Language(sorted[0].0)
    };
    Ok(LangIdResult {
        predicted,
        margin,
        scores,
    })
}
