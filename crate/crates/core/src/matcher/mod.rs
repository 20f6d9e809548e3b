//! Exact-match answer judging and the per-output-language correct sets.

pub mod normalize;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::ParallelCorpus;
use crate::error::{Error, Result};
use crate::lang::LanguageCode;
use crate::langid::{LangIdResult, Prediction, Profiles, DEFAULT_THRESHOLD};

pub use normalize::{normalize, Normalizer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub question_id: String,
    pub input_language: LanguageCode,
    pub model_tag: String,
    pub output: String,
}

pub fn read_generation_log(path: &Path) -> Result<Vec<GenerationRecord>> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: GenerationRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: PathBuf::from(path),
            line: idx + 1,
            message: format!("malformed generation record: {e}"),
        })?;
        records.push(record);
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "label", content = "language", rename_all = "snake_case")]
pub enum Label {
    CorrectInputLang,
    /// Matched the reference-language gold answer (English unless configured otherwise).
    CorrectEnglish,
    CorrectOther(LanguageCode),
    Incorrect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub question_id: String,
    pub input_language: LanguageCode,
    pub model_tag: String,
    #[serde(flatten)]
    pub label: Label,
    /// Language whose gold answer matched.
    pub matched_language: Option<LanguageCode>,
    pub matched_answer: Option<String>,
    /// The span that was compared: first line, cut at the first sentence end.
    pub answer_span: String,
    pub output: String,
    pub langid: Option<LangIdResult>,
}

impl Verdict {
    pub fn is_correct(&self) -> bool {
        self.label != Label::Incorrect
    }

    /// Langid confidently names a language other than the one the gold match implies.
    pub fn langid_disagrees(&self) -> bool {
        match (&self.matched_language, &self.langid) {
            (Some(m), Some(r)) => matches!(r.predicted, Prediction::Language(p) if p != *m),
            _ => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct JudgeOptions {
    pub langid_threshold: f64,
}

impl Default for JudgeOptions {
    fn default() -> Self {
        JudgeOptions {
            langid_threshold: DEFAULT_THRESHOLD,
        }
    }
}

/// First non-empty line of `output`, cut before the first sentence terminator.
///
/// A `.` ending a one-letter token or a dotted abbreviation ("J.", "D.C.")
/// does not end the sentence.
pub fn answer_span(output: &str) -> &str {
    let line = output
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("");
    let chars: Vec<(usize, char)> = line.char_indices().collect();
    let mut token_start = 0;
    for (i, &(pos, c)) in chars.iter().enumerate() {
        if c.is_whitespace() {
            token_start = pos + c.len_utf8();
            continue;
        }
        let at_boundary = chars.get(i + 1).map_or(true, |(_, n)| n.is_whitespace());
        if !at_boundary {
            continue;
        }
        let terminates = match c {
            '!' | '?' | '\u{0964}' | '\u{0965}' | '\u{3002}' => true,
            '.' => {
                let token = &line[token_start..pos];
                token.chars().count() > 1 && !token.contains('.')
            }
            _ => false,
        };
        if terminates {
            return line[..pos].trim_end();
        }
    }
    line
}

/// Decides the verdict for one generation: exact match after normalization
/// against the input language, then the reference language, then the rest.
pub fn judge(
    record: &GenerationRecord,
    corpus: &ParallelCorpus,
    profiles: Option<&Profiles>,
    options: &JudgeOptions,
) -> Result<Verdict> {
    let id = record.question_id.as_str();
    let golds = corpus
        .items_for(id)
        .ok_or_else(|| Error::Matcher(format!("unknown question_id {id:?}")))?;
    if corpus.split_of(id) != Some(corpus.eval_split()) {
        return Err(Error::Matcher(format!(
            "question_id {id:?} is not in the evaluation split {}",
            corpus.eval_split()
        )));
    }
    let input = record.input_language;
    if !corpus.has_language(input) {
        return Err(Error::Matcher(format!(
            "input language {input} of {id:?} is not in the corpus"
        )));
    }
    let reference = corpus.reference_language();
    let normalizer = corpus.normalizer();
    let span = answer_span(&record.output);
    let candidate = normalizer.normalize(span);

    let mut order = vec![input];
    if corpus.has_language(reference) && reference != input {
        order.push(reference);
    }
    for &l in corpus.languages() {
        if !order.contains(&l) {
            order.push(l);
        }
    }

    let matched = if candidate.is_empty() {
        None
    } else {
        order
            .into_iter()
            .find(|lang| normalizer.normalize(&golds[lang].answer) == candidate)
    };
    let label = match matched {
        None => Label::Incorrect,
        Some(l) if l == input => Label::CorrectInputLang,
        Some(l) if l == reference => Label::CorrectEnglish,
        Some(l) => Label::CorrectOther(l),
    };

    let langid = profiles.and_then(|p| {
        let mut candidates: BTreeSet<LanguageCode> = [input, reference]
            .into_iter()
            .chain(matched)
            .filter(|l| p.get(*l).is_some())
            .collect();
        if candidates.is_empty() {
            candidates = p.languages().collect();
        }
        p.classify(span, &candidates, options.langid_threshold).ok()
    });

    Ok(Verdict {
        question_id: record.question_id.clone(),
        input_language: input,
        model_tag: record.model_tag.clone(),
        label,
        matched_language: matched,
        matched_answer: matched.map(|l| golds[&l].answer.clone()),
        answer_span: span.to_string(),
        output: record.output.clone(),
        langid,
    })
}

/// Judges a batch in parallel; output order follows `records`.
pub fn judge_all(
    records: &[GenerationRecord],
    corpus: &ParallelCorpus,
    profiles: Option<&Profiles>,
    options: &JudgeOptions,
) -> Result<Vec<Verdict>> {
    records
        .par_iter()
        .map(|r| judge(r, corpus, profiles, options))
        .collect()
}

pub fn write_verdicts(path: &Path, verdicts: &[Verdict]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut out = BufWriter::new(file);
    for v in verdicts {
        let line = serde_json::to_string(v).map_err(|e| Error::json("serializing verdict", e))?;
        writeln!(out, "{line}").map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    out.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// The family of correct sets C(input -> output language) over one universe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectSets {
    pub input_language: LanguageCode,
    pub reference_language: LanguageCode,
    pub by_output: BTreeMap<LanguageCode, BTreeSet<String>>,
    pub universe: BTreeSet<String>,
}

impl CorrectSets {
    pub fn new(
        input_language: LanguageCode,
        reference_language: LanguageCode,
        universe: BTreeSet<String>,
    ) -> Self {
        CorrectSets {
            input_language,
            reference_language,
            by_output: BTreeMap::new(),
            universe,
        }
    }

    pub fn set(&self, output: LanguageCode) -> &BTreeSet<String> {
        static EMPTY: BTreeSet<String> = BTreeSet::new();
        self.by_output.get(&output).unwrap_or(&EMPTY)
    }

    /// C(input -> input).
    pub fn same_language(&self) -> &BTreeSet<String> {
        self.set(self.input_language)
    }

    /// C(input -> reference).
    pub fn to_reference(&self) -> &BTreeSet<String> {
        self.set(self.reference_language)
    }

    /// Union of C(input -> L) over every L other than the input language.
    pub fn other_union(&self) -> BTreeSet<String> {
        self.by_output
            .iter()
            .filter(|(l, _)| **l != self.input_language)
            .flat_map(|(_, s)| s.iter().cloned())
            .collect()
    }

    /// Universe ids that are in no correct set.
    pub fn incorrect(&self) -> BTreeSet<String> {
        let correct: BTreeSet<&String> = self.by_output.values().flatten().collect();
        self.universe
            .iter()
            .filter(|id| !correct.contains(id))
            .cloned()
            .collect()
    }

    /// Fails loudly when C(input -> input) and C(input -> reference) overlap.
    pub fn check_disjoint(&self) -> Result<()> {
        let overlap: Vec<&String> = self
            .same_language()
            .intersection(self.to_reference())
            .take(5)
            .collect();
        if overlap.is_empty() {
            Ok(())
        } else {
            Err(Error::Metrics(format!(
                "correct sets for {} and {} overlap (e.g. {:?}); the universe is not a filtered subset \
                 or normalization differs between filter and matcher",
                self.input_language, self.reference_language, overlap
            )))
        }
    }
}

/// Partitions correct verdicts into per-output-language sets. Universe ids
/// without a verdict count as incorrect.
pub fn collect_sets(
    verdicts: &[Verdict],
    universe: &BTreeSet<String>,
    input_language: LanguageCode,
    reference_language: LanguageCode,
) -> Result<CorrectSets> {
    let mut sets = CorrectSets::new(input_language, reference_language, universe.clone());
    let mut seen = BTreeSet::new();
    for v in verdicts {
        if v.input_language != input_language {
            return Err(Error::Matcher(format!(
                "verdict for {:?} has input language {}, expected {input_language}",
                v.question_id, v.input_language
            )));
        }
        if !universe.contains(&v.question_id) {
            return Err(Error::Matcher(format!(
                "verdict for {:?} is outside the evaluated universe",
                v.question_id
            )));
        }
        if !seen.insert(v.question_id.as_str()) {
            return Err(Error::Matcher(format!(
                "duplicate verdict for {:?}",
                v.question_id
            )));
        }
        let output = match v.label {
            Label::CorrectInputLang => input_language,
            Label::CorrectEnglish => reference_language,
            Label::CorrectOther(l) => l,
            Label::Incorrect => continue,
        };
        sets.by_output
            .entry(output)
            .or_default()
            .insert(v.question_id.clone());
    }
    Ok(sets)
}
