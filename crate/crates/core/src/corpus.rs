//! Parallel closed-book QA corpus: JSONL ingestion, parallelism checks and
//! the reference-language filtered subset.
//!
//! Every question id must carry one row per declared language. Ids are
//! assigned to exactly one split, and the training split never shares an id
//! with the evaluation split.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lang::{expected_script, script_share, LanguageCode};
use crate::matcher::normalize::Normalizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Corpus(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    pub question_id: String,
    pub language: LanguageCode,
    pub split: Split,
    pub question: String,
    pub answer: String,
}

/// What to do with a question id that lacks some declared language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartialRowPolicy {
    #[default]
    Strict,
    /// Drop the id across all languages and record it.
    Quarantine,
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    /// Declared language set. `None` declares every language seen in the file.
    pub languages: Option<Vec<LanguageCode>>,
    pub policy: PartialRowPolicy,
    pub reference_language: LanguageCode,
    pub eval_split: Split,
    pub normalizer: Normalizer,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            languages: None,
            policy: PartialRowPolicy::Strict,
            reference_language: LanguageCode::EN,
            eval_split: Split::Test,
            normalizer: Normalizer::default(),
        }
    }
}

/// An answer whose letters are mostly outside its row's expected script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptWarning {
    pub question_id: String,
    pub language: LanguageCode,
    pub answer: String,
    pub expected_script_share: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelCorpus {
    languages: Vec<LanguageCode>,
    items: BTreeMap<String, BTreeMap<LanguageCode, QAItem>>,
    splits: BTreeMap<Split, BTreeSet<String>>,
    reference_language: LanguageCode,
    eval_split: Split,
    normalizer: Normalizer,
    quarantined: Vec<String>,
    warnings: Vec<ScriptWarning>,
}

#[derive(Deserialize)]
struct RawRow {
    question_id: String,
    language: String,
    split: String,
    question: String,
    answer: String,
}

pub fn ingest_corpus(path: &Path, options: &IngestOptions) -> Result<ParallelCorpus> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    ingest_reader(BufReader::new(file), path, options)
}

pub fn ingest_reader<R: BufRead>(
    reader: R,
    origin: &Path,
    options: &IngestOptions,
) -> Result<ParallelCorpus> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: PathBuf::from(origin),
        line,
        message,
    };

    let declared: Option<BTreeSet<LanguageCode>> =
        options.languages.as_ref().map(|l| l.iter().copied().collect());
    let mut seen_languages = BTreeSet::new();
    let mut items: BTreeMap<String, BTreeMap<LanguageCode, QAItem>> = BTreeMap::new();
    let mut split_of: BTreeMap<String, (Split, usize)> = BTreeMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(format!("reading {}", origin.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRow =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, format!("malformed row: {e}")))?;
        let language = LanguageCode::new(&raw.language).map_err(|e| parse_err(lineno, e.to_string()))?;
        if let Some(declared) = &declared {
            if !declared.contains(&language) {
                return Err(parse_err(
                    lineno,
                    format!("language {language} is not in the declared set"),
                ));
            }
        }
        let split: Split = raw.split.parse().map_err(|e: Error| parse_err(lineno, e.to_string()))?;
        if raw.question_id.is_empty() {
            return Err(parse_err(lineno, "empty question_id".into()));
        }
        if options.normalizer.normalize(&raw.question).is_empty() {
            return Err(parse_err(lineno, format!("question {:?} is empty after normalization", raw.question_id)));
        }
        if options.normalizer.normalize(&raw.answer).is_empty() {
            return Err(parse_err(lineno, format!("answer for {:?} is empty after normalization", raw.question_id)));
        }
        match split_of.get(&raw.question_id) {
            Some((s, first)) if *s != split => {
                return Err(parse_err(
                    lineno,
                    format!(
                        "question {:?} appears in split {split} but line {first} put it in {s}",
                        raw.question_id
                    ),
                ));
            }
            Some(_) => {}
            None => {
                split_of.insert(raw.question_id.clone(), (split, lineno));
            }
        }
        let per_lang = items.entry(raw.question_id.clone()).or_default();
        if per_lang.contains_key(&language) {
            return Err(parse_err(
                lineno,
                format!("duplicate row for ({:?}, {language}, {split})", raw.question_id),
            ));
        }
        seen_languages.insert(language);
        per_lang.insert(
            language,
            QAItem {
                question_id: raw.question_id,
                language,
                split,
                question: raw.question,
                answer: raw.answer,
            },
        );
    }

    let languages: Vec<LanguageCode> = match &options.languages {
        Some(l) => {
            let mut out = Vec::new();
            for lang in l {
                if !out.contains(lang) {
                    out.push(*lang);
                }
            }
            out
        }
        None => {
            let mut l: Vec<_> = seen_languages.into_iter().collect();
            crate::lang::sort_by_default_order(&mut l);
            l
        }
    };

    let mut quarantined = Vec::new();
    for (id, per_lang) in &items {
        if per_lang.len() == languages.len() {
            continue;
        }
        if options.policy == PartialRowPolicy::Strict {
            let missing = languages
                .iter()
                .filter(|l| !per_lang.contains_key(l))
                .map(|l| l.to_string())
                .collect();
            return Err(Error::PartialRow {
                question_id: id.clone(),
                missing,
            });
        }
        quarantined.push(id.clone());
    }
    for id in &quarantined {
        items.remove(id);
        split_of.remove(id);
    }

    let mut splits: BTreeMap<Split, BTreeSet<String>> = BTreeMap::new();
    for (id, (split, _)) in split_of {
        splits.entry(split).or_default().insert(id);
    }

    let mut warnings = Vec::new();
    for per_lang in items.values() {
        for item in per_lang.values() {
            let script = expected_script(item.language);
            if let Some(share) = script_share(&item.answer, script) {
                if share <= 0.5 && script != crate::lang::Script::Other {
                    warnings.push(ScriptWarning {
                        question_id: item.question_id.clone(),
                        language: item.language,
                        answer: item.answer.clone(),
                        expected_script_share: share,
                    });
                }
            }
        }
    }

    Ok(ParallelCorpus {
        languages,
        items,
        splits,
        reference_language: options.reference_language,
        eval_split: options.eval_split,
        normalizer: options.normalizer.clone(),
        quarantined,
        warnings,
    })
}


impl ParallelCorpus {
    pub fn languages(&self) -> &[LanguageCode] {
        &self.languages
    }

    pub fn has_language(&self, lang: LanguageCode) -> bool {
        self.languages.contains(&lang)
    }

    pub fn reference_language(&self) -> LanguageCode {
        self.reference_language
    }

    pub fn eval_split(&self) -> Split {
        self.eval_split
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    /// Ids dropped in quarantine mode because some language was missing.
    pub fn quarantined(&self) -> &[String] {
        &self.quarantined
    }

    pub fn warnings(&self) -> &[ScriptWarning] {
        &self.warnings
    }

    pub fn question_count(&self) -> usize {
        self.items.len()
    }

    pub fn item_count(&self) -> usize {
        self.items.values().map(BTreeMap::len).sum()
    }

    pub fn split_ids(&self, split: Split) -> impl Iterator<Item = &str> {
        self.splits.get(&split).into_iter().flatten().map(String::as_str)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.splits.get(&split).map_or(0, BTreeSet::len)
    }

    pub fn eval_ids(&self) -> BTreeSet<String> {
        self.splits.get(&self.eval_split).cloned().unwrap_or_default()
    }

    pub fn split_of(&self, question_id: &str) -> Option<Split> {
        self.items
            .get(question_id)
            .and_then(|m| m.values().next())
            .map(|item| item.split)
    }

    pub fn item(&self, question_id: &str, lang: LanguageCode) -> Option<&QAItem> {
        self.items.get(question_id)?.get(&lang)
    }

    pub fn items_for(&self, question_id: &str) -> Option<&BTreeMap<LanguageCode, QAItem>> {
        self.items.get(question_id)
    }

    pub fn items(&self) -> impl Iterator<Item = &QAItem> {
        self.items.values().flat_map(|m| m.values())
    }

    /// Evaluation ids whose normalized gold answer in `input_language`
    /// differs from the one in the reference language.
    pub fn build_filtered_subset(&self, input_language: LanguageCode) -> Result<FilteredSubset> {
        let reference = self.reference_language;
        if input_language == reference {
            return Err(Error::Corpus(format!(
                "filtered subset is undefined for the reference language {reference}"
            )));
        }
        if !self.has_language(input_language) {
            return Err(Error::Corpus(format!(
                "language {input_language} is not in the corpus"
            )));
        }
        if !self.has_language(reference) {
            return Err(Error::Corpus(format!(
                "reference language {reference} is not in the corpus"
            )));
        }
        let eval = self.eval_ids();
        if eval.is_empty() {
            return Err(Error::Corpus(format!(
                "evaluation split {} is empty",
                self.eval_split
            )));
        }
        let question_ids = eval
            .into_iter()
            .filter(|id| {
                let per_lang = &self.items[id];
                let a = self.normalizer.normalize(&per_lang[&input_language].answer);
                let b = self.normalizer.normalize(&per_lang[&reference].answer);
                a != b
            })
            .collect();
        Ok(FilteredSubset {
            input_language,
            reference_language: reference,
            question_ids,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilteredSubset {
    pub input_language: LanguageCode,
    pub reference_language: LanguageCode,
    pub question_ids: BTreeSet<String>,
}

impl FilteredSubset {
    pub fn len(&self) -> usize {
        self.question_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.question_ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.question_ids.contains(id)
    }
}
