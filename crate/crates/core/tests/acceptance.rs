//! One line per acceptance criterion. Runs as a plain binary (harness = false)
//! so the lines are always printed; exits nonzero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{Seek, SeekFrom};
use std::time::{Duration, Instant};

use common::*;
use lang_adherence::checkpoint::{
    diff_tensor, read_manifest, write_container, DiffMatrix, Dtype, ModuleKind, NamingScheme,
};
use lang_adherence::matcher::{collect_sets, judge, CorrectSets, JudgeOptions};
use lang_adherence::metrics::{
    cococola_general, cococola_general_counts, cococola_simplified, cumulative_accuracy, jaccard,
    known_unknown, Ratio,
};
use lang_adherence::plan::{
    emit_plan, load_tensor_list, plan_final_layers, plan_from_delta, plan_matched_prefix,
    read_plan, PlanManifest, TrainConfigTemplate,
};
use lang_adherence::report::{render_accuracy_table, AccuracyRow};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Every (PLM, SFT) pair of the accuracy fixture reproduces the printed Δ.
fn accuracy_delta() -> Check {
    const TOL: f64 = 0.01;
    let rows = read_csv("accuracy_delta.csv");
    ensure(rows.len() == 28, || format!("fixture has {} rows, expected 28", rows.len()))?;
    let input: Vec<AccuracyRow> = rows
        .iter()
        .map(|r| AccuracyRow {
            language: lang(&r["language"]),
            model: r["model"].clone(),
            plm: r["plm"].parse::<f64>().unwrap() / 100.0,
            sft: r["sft"].parse::<f64>().unwrap() / 100.0,
        })
        .collect();
    let grid = render_accuracy_table(&input).grid();
    let mut worst = 0.0f64;
    for (i, r) in rows.iter().enumerate() {
        let printed: f64 = r["delta"].parse().unwrap();
        let rendered: f64 = grid.cell(i, "Δ").unwrap().parse().unwrap();
        let err = (rendered - printed).abs();
        worst = worst.max(err);
        ensure(err <= TOL + 1e-9, || {
            format!("{} {}: Δ {rendered} vs printed {printed}", r["language"], r["model"])
        })?;
    }
    Ok(format!("28/28 rows, max |Δ - printed| = {worst:.4} (tol {TOL})"))
}

/// Each universe member kept with probability `p` (random when `None`).
fn random_subset<R: Rng>(rng: &mut R, universe: u64, p: Option<f64>) -> u64 {
    let p = p.unwrap_or_else(|| rng.gen_range(0.0..1.0));
    (0..64).filter(|i| universe >> i & 1 == 1 && rng.gen_bool(p)).fold(0, |m, i| m | 1 << i)
}

fn sets_from_masks(universe: u64, same: u64, reference: u64, others: &[(&str, u64)]) -> CorrectSets {
    let mut s = CorrectSets::new(lang("fr"), lang("en"), ids_from_mask(universe));
    s.by_output.insert(lang("fr"), ids_from_mask(same));
    s.by_output.insert(lang("en"), ids_from_mask(reference));
    for (l, m) in others {
        s.by_output.insert(lang(l), ids_from_mask(*m));
    }
    s
}

/// General and simplified ratios agree on disjoint families where U = C_ien.
fn ratio_forms_agree() -> Check {
    const N: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut undefined = 0;
    for i in 0..N {
        let universe: u64 = rng.gen::<u64>() >> rng.gen_range(0..64);
        let same = random_subset(&mut rng, universe, None);
        let reference = random_subset(&mut rng, universe & !same, None);
        let sets = sets_from_masks(universe, same, reference, &[]);
        let general = cococola_general(&sets);
        let simplified = cococola_simplified(&sets).map_err(|e| format!("instance {i}: {e}"))?;
        let (num, den) = cococola_general_counts(&sets);
        let (a, b) = (same.count_ones() as usize, reference.count_ones() as usize);
        // Rational comparison: num/den == a/(a+b).
        ensure(num * (a + b) == a * den, || format!("instance {i}: {num}/{den} vs {a}/{}", a + b))?;
        match (general, simplified) {
            (Ratio::Defined(g), Ratio::Defined(s)) => {
                ensure((g - s).abs() <= 1e-12, || format!("instance {i}: {g} vs {s}"))?
            }
            (Ratio::Undefined(_), Ratio::Undefined(_)) => undefined += 1,
            (g, s) => return Err(format!("instance {i}: {g} vs {s}")),
        }
    }
    Ok(format!("{N} fuzzed disjoint families equal (rational check), {undefined} both undefined"))
}

/// Element-wise bitmask oracles for every set metric plus invariants.
fn set_metric_oracles() -> Check {
    const N: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..N {
        let universe: u64 = rng.gen::<u64>() | 1;
        let a = random_subset(&mut rng, universe, None);
        let b = random_subset(&mut rng, universe, None);
        let (sa, sb) = (ids_from_mask(a), ids_from_mask(b));

        let inter = (a & b).count_ones() as f64;
        let union = (a | b).count_ones() as f64;
        let expect = if union == 0.0 { 0.0 } else { inter / union };
        let j = jaccard(&sa, &sb);
        ensure(j == expect, || format!("jaccard instance {i}: {j} vs {expect}"))?;
        ensure((0.0..=1.0).contains(&j), || format!("jaccard out of bounds: {j}"))?;
        ensure(j == jaccard(&sb, &sa), || format!("jaccard asymmetric at {i}"))?;
        if a != 0 {
            ensure(jaccard(&sa, &sa) == 1.0, || format!("IoU(A,A) != 1 at {i}"))?;
        }
        let free = universe & !(a | b);
        if free != 0 {
            let bit = free & free.wrapping_neg();
            let (xa, xb) = (ids_from_mask(a | bit), ids_from_mask(b | bit));
            ensure(jaccard(&xa, &xb) >= j, || format!("jaccard not monotone at {i}"))?;
        }

        let ku = known_unknown(&sa, &sb);
        let expect = ((a & !b).count_ones() as usize, (b & !a).count_ones() as usize);
        ensure(ku == expect, || format!("known_unknown instance {i}: {ku:?} vs {expect:?}"))?;
        ensure(ku.0 + (a & b).count_ones() as usize == sa.len(), || "partition identity".into())?;

        // Family with two extra output languages; overlaps allowed.
        let de = random_subset(&mut rng, universe, Some(0.2));
        let es = random_subset(&mut rng, universe, Some(0.2));
        let sets = sets_from_masks(universe, a, b, &[("de", de), ("es", es)]);
        let u = b | de | es;
        let acc = cumulative_accuracy(&sets).map_err(|e| e.to_string())?;
        let expect = (a | b).count_ones() as f64 / universe.count_ones() as f64;
        ensure(acc == expect, || format!("cumulative_accuracy instance {i}: {acc} vs {expect}"))?;
        let floor = a.count_ones().max(b.count_ones()) as f64 / universe.count_ones() as f64;
        ensure(acc >= floor, || format!("cumulative accuracy below max at {i}"))?;

        // Per-element classification: only-input / only-other / both / neither.
        let (mut only_in, mut only_other) = (0usize, 0usize);
        for bit in 0..64 {
            match (a >> bit & 1, u >> bit & 1) {
                (1, 0) => only_in += 1,
                (0, 1) => only_other += 1,
                _ => {}
            }
        }
        let g = cococola_general(&sets);
        let expect = Ratio::from_counts(only_in, only_in + only_other);
        ensure(g == expect, || format!("cococola_general instance {i}: {g} vs {expect}"))?;
        if u == 0 && a != 0 {
            ensure(g == Ratio::Defined(1.0), || format!("U empty but ratio {g} at {i}"))?;
        }
        if a == 0 && u != 0 {
            ensure(g == Ratio::Defined(0.0), || format!("C_ii empty but ratio {g} at {i}"))?;
        }

        let disjoint_b = b & !a;
        let sets = sets_from_masks(universe, a, disjoint_b, &[]);
        let s = cococola_simplified(&sets).map_err(|e| e.to_string())?;
        let expect = Ratio::from_counts(a.count_ones() as usize, (a | disjoint_b).count_ones() as usize);
        ensure(s == expect, || format!("cococola_simplified instance {i}: {s} vs {expect}"))?;
        if a & b != 0 {
            let overlapping = sets_from_masks(universe, a, b, &[]);
            ensure(cococola_simplified(&overlapping).is_err(), || {
                format!("overlap not rejected at {i}")
            })?;
        }
    }
    Ok(format!("{N} instances x 5 metrics match bitmask oracles; bounds/symmetry/monotonicity hold"))
}

/// Streamed delta versus a naive full-load reference with hand-written decoders.
fn tensor_delta_oracle() -> Check {
    const REL: f64 = 1e-6;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cases: &[(Dtype, usize)] = &[
        (Dtype::F32, 1),
        (Dtype::F32, 16_385),
        (Dtype::F64, 8_193),
        (Dtype::F16, 32_769),
        (Dtype::BF16, 32_769),
        (Dtype::F16, 1_000_003),
        (Dtype::BF16, 2_000_000),
        (Dtype::F32, 10_000_000),
    ];
    let mut worst = 0.0f64;
    for (idx, &(dtype, n)) in cases.iter().enumerate() {
        let a_bytes = random_bytes(&mut rng, dtype, n);
        let b_bytes = random_bytes(&mut rng, dtype, n);
        let a_path = dir.path().join(format!("a{idx}.safetensors"));
        let b_path = dir.path().join(format!("b{idx}.safetensors"));
        write_container(&a_path, &[raw_tensor("w", dtype, &[n as u64], a_bytes.clone())])
            .map_err(|e| e.to_string())?;
        write_container(&b_path, &[raw_tensor("w", dtype, &[n as u64], b_bytes.clone())])
            .map_err(|e| e.to_string())?;

        let delta = |x: &std::path::Path, y: &std::path::Path| -> Result<f64, String> {
            let (mx, my) = (read_manifest(x).map_err(|e| e.to_string())?, read_manifest(y).map_err(|e| e.to_string())?);
            let (tx, ty) = (mx.get("w").unwrap(), my.get("w").unwrap());
            let mut fx = File::open(x).map_err(|e| e.to_string())?;
            let mut fy = File::open(y).map_err(|e| e.to_string())?;
            fx.seek(SeekFrom::Start(mx.data_start + tx.byte_offset)).map_err(|e| e.to_string())?;
            fy.seek(SeekFrom::Start(my.data_start + ty.byte_offset)).map_err(|e| e.to_string())?;
            Ok(diff_tensor(tx, ty, fx, fy).map_err(|e| e.to_string())?.mean())
        };

        let got = delta(&a_path, &b_path)?;
        let expect = naive_mean_abs(&decode_all(dtype, &a_bytes), &decode_all(dtype, &b_bytes));
        let rel = if expect == 0.0 { got.abs() } else { ((got - expect) / expect).abs() };
        worst = worst.max(rel);
        ensure(rel <= REL, || format!("{dtype} n={n}: {got} vs {expect} (rel {rel:e})"))?;

        if n <= 2_000_000 {
            ensure(delta(&a_path, &a_path)? == 0.0, || format!("diff(A, A) != 0 for {dtype} n={n}"))?;
            ensure(delta(&b_path, &a_path)? == got, || format!("diff not symmetric for {dtype} n={n}"))?;
        }
    }
    // k-scaling with exact powers of two on f32.
    for k in [2.0f32, 4.0, 0.5, 1024.0] {
        let n = 70_001;
        let a: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let b: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let scale = |v: &[f32]| v.iter().map(|x| x * k).collect::<Vec<_>>();
        let write = |name: &str, v: &[f32]| {
            let p = dir.path().join(name);
            write_container(&p, &[lang_adherence::checkpoint::TensorData::f32("w", &[n as u64], v)]).unwrap();
            p
        };
        let (pa, pb, pka, pkb) = (write("ka", &a), write("kb", &b), write("kka", &scale(&a)), write("kkb", &scale(&b)));
        let scheme = NamingScheme::bundled("toy").unwrap();
        let base = lang_adherence::checkpoint::diff_checkpoints(&pa, &pb, &scheme, 2).map_err(|e| e.to_string())?;
        let scaled = lang_adherence::checkpoint::diff_checkpoints(&pka, &pkb, &scheme, 2).map_err(|e| e.to_string())?;
        let (d, dk) = (base[0].mean_abs_delta, scaled[0].mean_abs_delta);
        ensure(dk == d * k as f64, || format!("k={k}: {dk} vs {}", d * k as f64))?;
    }
    Ok(format!(
        "{} fuzzed tensors up to 1e7 elements (f32/f64/f16/bf16), max rel err {worst:.2e} (tol {REL:e}); diff(A,A)=0, symmetry, k-scaling exact",
        cases.len()
    ))
}

fn manifest(name: &str) -> PlanManifest {
    let tensors = load_tensor_list(&fixture(name)).unwrap();
    PlanManifest::new(&tensors, &NamingScheme::bundled("llama").unwrap()).unwrap()
}

fn freeze_plans() -> Check {
    let mut checked = 0;
    for name in ["llama_1b_manifest.json", "llama_3b_manifest.json", "llama_8b_manifest.json"] {
        let m = manifest(name);
        let per_layer = m.per_layer_counts();
        let mut prev: Option<lang_adherence::plan::FreezePlan> = None;
        for k in 1..=m.layer_count() {
            let plan = plan_final_layers(&m, k, false).map_err(|e| e.to_string())?;
            if let Some(p) = &prev {
                let a: BTreeSet<_> = p.trainable_names().collect();
                let b: BTreeSet<_> = plan.trainable_names().collect();
                ensure(a.is_subset(&b) && plan.counts.trainable > p.counts.trainable, || {
                    format!("{name}: final-{k} is not a superset of final-{}", k - 1)
                })?;
            }
            let prefix = plan_matched_prefix(&m, &plan).map_err(|e| e.to_string())?;
            let target = plan.counts.trainable;
            let last = *prefix.trainable_layers.last().unwrap();
            ensure(prefix.counts.trainable >= target, || format!("{name} k={k}: prefix under target"))?;
            ensure(prefix.counts.trainable - per_layer[last] < target, || {
                format!("{name} k={k}: prefix is not minimal")
            })?;
            checked += 1;
            prev = Some(plan);
        }
    }

    let m1 = manifest("llama_1b_manifest.json");
    let final6 = plan_final_layers(&m1, 6, false).map_err(|e| e.to_string())?;
    ensure(final6.trainable_layers == (10..16).collect::<Vec<_>>(), || {
        format!("16-layer k=6 chose {:?}", final6.trainable_layers)
    })?;
    ensure(final6.trainable_layers_label == "11-16 (1-indexed)", || final6.trainable_layers_label.clone())?;

    let m8 = manifest("llama_8b_manifest.json");
    let matrix = DiffMatrix {
        layer_count: 32,
        rows: vec![ModuleKind::Mlp],
        values: vec![(0..32).map(|l| Some(1e-4 * (1.0 + l as f64))).collect()],
        element_counts: vec![vec![1; 32]],
    };
    let top = plan_from_delta(&matrix, &m8, 0.5, false).map_err(|e| e.to_string())?;
    ensure(top.trainable_layers == (16..32).collect::<Vec<_>>(), || {
        format!("32-layer fraction 0.5 chose {:?}", top.trainable_layers)
    })?;
    let frozen: Vec<usize> = (0..32).filter(|l| !top.trainable_layers.contains(l)).collect();
    ensure(frozen == (0..16).collect::<Vec<_>>(), || format!("frozen {frozen:?}"))?;

    Ok(format!(
        "final-k monotone and matched-prefix minimal over {checked} (model, k) pairs; 16 layers k=6 -> 11-16; \
         32 layers f=0.5 -> 0-based [16, 32) trainable, [0, 16) frozen (label \"{}\")",
        top.trainable_layers_label
    ))
}

fn hyperparameter_template() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("plan.json");
    let plan = plan_final_layers(&manifest("llama_1b_manifest.json"), 6, false).map_err(|e| e.to_string())?;
    emit_plan(&plan, &TrainConfigTemplate::default(), &path).map_err(|e| e.to_string())?;
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).map_err(|e| e.to_string())?;
    let tc = &json["train_config"];
    let expected = serde_json::json!({
        "num_epochs": 3,
        "batch_size": 64,
        "gradient_accumulation": 1,
        "weight_decay": 0.01,
        "bf16": true,
        "seed": 42,
        "learning_rate": 5e-6,
        "dropout": 0.1,
    });
    for (k, v) in expected.as_object().unwrap() {
        ensure(&tc[k] == v, || format!("{k}: emitted {} expected {v}", tc[k]))?;
    }
    let back = read_plan(&path).map_err(|e| e.to_string())?;
    ensure(back.train_config == TrainConfigTemplate::default(), || "template did not round-trip".into())?;
    Ok("8/8 fields equal (epochs 3, batch 64, grad-accum 1, wd 0.01, bf16, seed 42, lr 5e-6, dropout 0.1)".into())
}

fn matcher_constructed_log() -> Check {
    let corpus = load_corpus();
    let log = constructed_log(&corpus, 200);
    ensure(log.len() == 200, || format!("only {} records constructed", log.len()))?;
    let opts = JudgeOptions::default();
    let mut agree = 0;
    for (record, planted) in &log {
        let v = judge(record, &corpus, None, &opts).map_err(|e| e.to_string())?;
        ensure(v.label == *planted, || {
            format!("{} {}: judged {:?}, planted {:?}", record.question_id, record.input_language, v.label, planted)
        })?;
        agree += 1;
    }
    let mut langs = 0;
    for &l in corpus.languages() {
        if l == corpus.reference_language() {
            continue;
        }
        let subset = corpus.build_filtered_subset(l).map_err(|e| e.to_string())?;
        // Every id answered both ways: input gold and English gold.
        let mut verdicts = Vec::new();
        for (n, id) in subset.question_ids.iter().enumerate() {
            let gold = if n % 2 == 0 { l } else { corpus.reference_language() };
            let record = lang_adherence::matcher::GenerationRecord {
                question_id: id.clone(),
                input_language: l,
                model_tag: "mixed".into(),
                output: corpus.item(id, gold).unwrap().answer.clone(),
            };
            verdicts.push(judge(&record, &corpus, None, &opts).map_err(|e| e.to_string())?);
        }
        let sets = collect_sets(&verdicts, &subset.question_ids, l, corpus.reference_language())
            .map_err(|e| e.to_string())?;
        sets.check_disjoint().map_err(|e| e.to_string())?;
        ensure(sets.same_language().len() + sets.to_reference().len() == subset.len(), || {
            format!("{l}: judged sets do not cover the subset")
        })?;
        langs += 1;
    }
    Ok(format!("{agree}/200 planted labels reproduced; filtered-subset disjointness holds for {langs} languages"))
}

fn main() {
    let criteria: [(&str, fn() -> Check, Duration); 7] = [
        ("accuracy delta fixture", accuracy_delta, Duration::from_secs(1)),
        ("general = simplified ratio", ratio_forms_agree, Duration::from_secs(10)),
        ("set-metric oracle suite", set_metric_oracles, Duration::from_secs(30)),
        ("tensor delta oracle", tensor_delta_oracle, Duration::from_secs(60)),
        ("freeze-plan correctness", freeze_plans, Duration::from_secs(5)),
        ("hyperparameter template", hyperparameter_template, Duration::from_secs(1)),
        ("matcher constructed log", matcher_constructed_log, Duration::from_secs(5)),
    ];
    let mut failed = 0;
    for (name, check, budget) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > budget => Err(format!("{detail}; over time budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{elapsed:.2?}]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{elapsed:.2?}]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 7 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
