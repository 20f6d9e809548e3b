#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use lang_adherence::checkpoint::{Dtype, TensorData};
use lang_adherence::corpus::{ingest_corpus, IngestOptions, ParallelCorpus};
use lang_adherence::matcher::{normalize, GenerationRecord, Label};
use lang_adherence::LanguageCode;
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn lang(code: &str) -> LanguageCode {
    LanguageCode::new(code).unwrap()
}

pub fn load_corpus() -> ParallelCorpus {
    ingest_corpus(&fixture("corpus.jsonl"), &IngestOptions::default()).unwrap()
}

/// Minimal CSV reader for the numeric fixtures (no quoting needed).
pub fn read_csv(name: &str) -> Vec<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(fixture(name)).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            header
                .iter()
                .zip(l.split(','))
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect()
        })
        .collect()
}

/// IEEE binary16 bits to f64, written out from the format definition.
pub fn f16_bits_to_f64(bits: u16) -> f64 {
    let sign = if bits >> 15 == 1 { -1.0 } else { 1.0 };
    let exp = ((bits >> 10) & 0x1f) as i32;
    let frac = (bits & 0x3ff) as f64;
    match exp {
        0 => sign * frac * 2f64.powi(-24),
        31 => {
            if frac == 0.0 {
                sign * f64::INFINITY
            } else {
                f64::NAN
            }
        }
        e => sign * (1.0 + frac / 1024.0) * 2f64.powi(e - 15),
    }
}

/// bfloat16 bits are the top half of an f32.
pub fn bf16_bits_to_f64(bits: u16) -> f64 {
    f32::from_bits((bits as u32) << 16) as f64
}

/// Random finite f16 bit pattern.
pub fn random_f16_bits<R: Rng>(rng: &mut R) -> u16 {
    loop {
        let b: u16 = rng.gen();
        if (b >> 10) & 0x1f != 0x1f {
            return b;
        }
    }
}

/// Random finite bf16 with a bounded exponent so sums stay far from overflow.
pub fn random_bf16_bits<R: Rng>(rng: &mut R) -> u16 {
    let sign: u16 = rng.gen_range(0..2);
    let exp: u16 = rng.gen_range(100..150);
    let frac: u16 = rng.gen_range(0..128);
    (sign << 15) | (exp << 7) | frac
}

pub fn raw_tensor(name: &str, dtype: Dtype, shape: &[u64], data: Vec<u8>) -> TensorData {
    TensorData {
        name: name.to_string(),
        dtype,
        shape: shape.to_vec(),
        data,
    }
}

/// Reference decoder for the element types the fuzz tests use.
pub fn decode_all(dtype: Dtype, bytes: &[u8]) -> Vec<f64> {
    match dtype {
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F16 => bytes
            .chunks_exact(2)
            .map(|c| f16_bits_to_f64(u16::from_le_bytes([c[0], c[1]])))
            .collect(),
        Dtype::BF16 => bytes
            .chunks_exact(2)
            .map(|c| bf16_bits_to_f64(u16::from_le_bytes([c[0], c[1]])))
            .collect(),
        other => panic!("no reference decoder for {other}"),
    }
}

pub fn naive_mean_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut sum = 0.0f64;
    for i in 0..a.len() {
        sum += (a[i] - b[i]).abs();
    }
    sum / a.len() as f64
}

pub fn random_bytes<R: Rng>(rng: &mut R, dtype: Dtype, n: usize) -> Vec<u8> {
    match dtype {
        Dtype::F64 => (0..n)
            .flat_map(|_| rng.gen_range(-10.0f64..10.0).to_le_bytes())
            .collect(),
        Dtype::F32 => (0..n)
            .flat_map(|_| rng.gen_range(-1.0f32..1.0).to_le_bytes())
            .collect(),
        Dtype::F16 => (0..n)
            .flat_map(|_| random_f16_bits(rng).to_le_bytes())
            .collect(),
        Dtype::BF16 => (0..n)
            .flat_map(|_| random_bf16_bits(rng).to_le_bytes())
            .collect(),
        other => panic!("no generator for {other}"),
    }
}

/// A generation log of `n` records from the fixture corpus's eval split with
/// labels planted by construction, cycling through every label kind.
pub fn constructed_log(corpus: &ParallelCorpus, n: usize) -> Vec<(GenerationRecord, Label)> {
    let en = corpus.reference_language();
    let langs: Vec<LanguageCode> = corpus.languages().to_vec();
    let ids: Vec<String> = corpus.eval_ids().into_iter().collect();
    let mut out = Vec::new();
    let mut step = 0usize;
    'outer: loop {
        for id in &ids {
            for &input in &langs {
                if out.len() == n {
                    break 'outer;
                }
                step += 1;
                let gold = |l: LanguageCode| corpus.item(id, l).unwrap().answer.clone();
                let norm = |l: LanguageCode| normalize(&gold(l));
                let unique_other = langs.iter().copied().find(|&l| {
                    l != input && l != en && langs.iter().all(|&m| m == l || norm(m) != norm(l))
                });
                let planted = match step % 4 {
                    0 => Some((format!("{}.", gold(input)), Label::CorrectInputLang)),
                    1 if input != en && norm(input) != norm(en) => {
                        Some((format!("  {}\nsecond line", gold(en)), Label::CorrectEnglish))
                    }
                    2 => unique_other.map(|l| (gold(l).to_uppercase(), Label::CorrectOther(l))),
                    3 => Some(("qqzx nothing".to_string(), Label::Incorrect)),
                    _ => None,
                };
                let Some((output, label)) = planted else { continue };
                out.push((
                    GenerationRecord {
                        question_id: id.clone(),
                        input_language: input,
                        model_tag: "constructed".into(),
                        output,
                    },
                    label,
                ));
            }
        }
    }
    out
}

/// Bitmask view of a set of small integer ids; used as an independent oracle.
pub fn mask(set: &BTreeSet<String>) -> u64 {
    set.iter().fold(0u64, |m, s| m | 1u64 << s.parse::<u32>().unwrap())
}

pub fn ids_from_mask(m: u64) -> BTreeSet<String> {
    (0..64).filter(|i| m >> i & 1 == 1).map(|i: u32| i.to_string()).collect()
}
