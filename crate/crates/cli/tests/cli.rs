use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lang_adherence::checkpoint::{write_container, TensorData};
use lang_adherence::report::MetricsFile;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_adherence"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn corpus_rows() -> Vec<Value> {
    std::fs::read_to_string(fixture("corpus.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Log over the test split. French and Hindi answers alternate between the
/// input-language gold, the English gold and a wrong answer by id; every
/// other language answers with its own gold.
fn write_log(path: &Path) -> BTreeMap<String, [usize; 3]> {
    let rows = corpus_rows();
    let mut gold: BTreeMap<(String, String), String> = BTreeMap::new();
    for r in &rows {
        gold.insert(
            (r["question_id"].as_str().unwrap().into(), r["language"].as_str().unwrap().into()),
            r["answer"].as_str().unwrap().into(),
        );
    }
    let mut planted: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    let mut lines = Vec::new();
    for r in rows.iter().filter(|r| r["split"] == "test") {
        let id = r["question_id"].as_str().unwrap();
        let lang = r["language"].as_str().unwrap();
        let own = &gold[&(id.to_string(), lang.to_string())];
        let en = &gold[&(id.to_string(), "en".to_string())];
        let choice = if lang == "fr" || lang == "hi" {
            let h = id.bytes().map(usize::from).sum::<usize>() % 3;
            // Only count English-gold answers where they differ from the input gold.
            if h == 1 && own.to_lowercase() == en.to_lowercase() { 0 } else { h }
        } else {
            0
        };
        let output = match choice {
            0 => format!("{own}."),
            1 => format!("{en}."),
            _ => "zzqx".to_string(),
        };
        planted.entry(lang.to_string()).or_default()[choice] += 1;
        lines.push(serde_json::json!({
            "question_id": id, "input_language": lang, "model_tag": "toy", "output": output,
        }).to_string());
    }
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
    planted
}

#[test]
fn version_flag() {
    let out = run(&["--version"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains(lang_adherence::VERSION));
}

#[test]
fn evaluate_on_fixture_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("gens.jsonl");
    let planted = write_log(&log);
    let verdicts = dir.path().join("verdicts.jsonl");
    let out = run(&[
        "evaluate", "--corpus", p(&fixture("corpus.jsonl")), "--generations", p(&log),
        "--stage", "sft", "--emit-verdicts", p(&verdicts), "--out", p(dir.path()),
    ]);
    assert!(out.status.success());
    let m = MetricsFile::load(&dir.path().join("metrics.json")).unwrap();
    assert_eq!(m.model, "toy");
    assert_eq!(m.languages.len(), 7);
    assert_eq!(std::fs::read_to_string(&verdicts).unwrap().lines().count(), 7 * 251);
    for lm in &m.languages {
        let lang = lm.input_language.as_str();
        let [own, en, wrong] = planted[lang];
        let full = &lm.full;
        assert_eq!(full.counts.universe, 251);
        assert_eq!(own + en + wrong, 251);
        // Accuracy invariants.
        assert!(full.input_accuracy <= full.cumulative_accuracy + 1e-12, "{lang}");
        assert!((0.0..=1.0).contains(&full.cumulative_accuracy));
        if lang == "en" {
            assert!(lm.filtered.is_none());
            assert_eq!(full.cumulative_accuracy, 1.0);
            continue;
        }
        let f = lm.filtered.as_ref().unwrap();
        let ratio = f.ratio_general.value().unwrap();
        assert_eq!(f.ratio_simplified.unwrap().value(), Some(ratio), "{lang}");
        if lang == "fr" || lang == "hi" {
            assert_eq!(f.counts.reference, en, "{lang}");
            assert!(ratio < 1.0);
        } else {
            assert_eq!(ratio, 1.0, "{lang}");
            assert_eq!(full.input_accuracy, 1.0, "{lang}");
        }
    }
    assert!(dir.path().join("report.md").exists());
}

#[test]
fn cococola_writes_filtered_tables() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("gens.jsonl");
    write_log(&log);
    let out = run(&[
        "cococola", "--corpus", p(&fixture("corpus.jsonl")), "--generations", p(&log), "--out", p(dir.path()),
    ]);
    assert!(out.status.success());
    let m = MetricsFile::load(&dir.path().join("cococola.json")).unwrap();
    assert_eq!(m.languages.len(), 6);
    assert!(m.languages.iter().all(|l| l.filtered.is_some()));
    let md = std::fs::read_to_string(dir.path().join("cococola.md")).unwrap();
    assert!(md.contains("| Average |"));
}

#[test]
fn overlap_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("gens.jsonl");
    write_log(&log);
    let out = run(&[
        "overlap", "--corpus", p(&fixture("corpus.jsonl")), "--generations", p(&log), "--out", p(dir.path()),
    ]);
    assert!(out.status.success());
    for f in ["overlap.json", "overlap.csv", "known_not.csv", "overlap.svg"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("overlap.json")).unwrap()).unwrap();
    assert_eq!(v["matrix"]["iou"][0][0], 1.0);
}

fn toy_checkpoint(path: &Path, layers: usize, shift: f32) {
    let mut tensors = vec![TensorData::f32("tok_emb.weight", &[8, 4], &[0.1; 32])];
    for l in 0..layers {
        let v: Vec<f32> = (0..16).map(|i| i as f32 * 0.01 + shift * l as f32).collect();
        tensors.push(TensorData::f32(&format!("blocks.{l}.attn.qkv.weight"), &[4, 4], &v));
        tensors.push(TensorData::f32(&format!("blocks.{l}.mlp.up.weight"), &[4, 4], &v));
    }
    write_container(path, &tensors).unwrap();
}

#[test]
fn diff_of_checkpoint_with_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("a.safetensors");
    toy_checkpoint(&ckpt, 4, 0.0);
    let out = run(&["diff", "--base", p(&ckpt), "--tuned", p(&ckpt), "--scheme", "toy", "--out", p(dir.path())]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("diff.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 5);
    for line in lines {
        assert!(line.split(',').skip(1).all(|c| c == "0"), "{line}");
    }
    assert!(dir.path().join("diff.svg").exists());
}

#[test]
fn plan_final_k_on_16_layers() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("plan.json");
    let out = run(&[
        "plan", "--manifest", p(&fixture("llama_1b_manifest.json")), "--scheme", "llama",
        "--mode", "final-k", "--k", "6", "--out", p(&out_path),
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("11-16"));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(v["trainable_layers_label"], "11-16 (1-indexed)");
    assert_eq!(v["layer_count"], 16);
    assert_eq!(v["trainable"]["model.layers.10.mlp.up_proj.weight"], true);
    assert_eq!(v["trainable"]["model.layers.9.mlp.up_proj.weight"], false);
    assert_eq!(v["train_config"]["learning_rate"], 5e-6);
}

#[test]
fn plan_top_delta_from_diff_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    toy_checkpoint(&a, 4, 0.0);
    toy_checkpoint(&b, 4, 0.5);
    assert!(run(&["diff", "--base", p(&a), "--tuned", p(&b), "--scheme", "toy", "--out", p(dir.path())]).status.success());
    let plan = dir.path().join("plan.json");
    let out = run(&[
        "plan", "--manifest", p(&b), "--scheme", "toy", "--mode", "top-delta", "--fraction", "0.5",
        "--diff", p(&dir.path().join("diff.csv")), "--out", p(&plan),
    ]);
    assert!(out.status.success());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&plan).unwrap()).unwrap();
    assert_eq!(v["trainable_layers"], serde_json::json!([2, 3]));
}

#[test]
fn report_from_metrics_and_diff() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("gens.jsonl");
    write_log(&log);
    for stage in ["plm", "sft"] {
        let sub = dir.path().join(stage);
        assert!(run(&[
            "evaluate", "--corpus", p(&fixture("corpus.jsonl")), "--generations", p(&log),
            "--stage", stage, "--out", p(&sub),
        ]).status.success());
    }
    let ckpt = dir.path().join("c");
    toy_checkpoint(&ckpt, 2, 0.0);
    assert!(run(&["diff", "--base", p(&ckpt), "--tuned", p(&ckpt), "--scheme", "toy", "--out", p(dir.path())]).status.success());
    let out_dir = dir.path().join("report");
    let out = run(&[
        "report", "--metrics", p(&dir.path().join("plm/metrics.json")), p(&dir.path().join("sft/metrics.json")),
        "--diff", p(&dir.path().join("diff.csv")), "--format", "md,csv,json,svg", "--out", p(&out_dir),
    ]);
    assert!(out.status.success());
    let md = std::fs::read_to_string(out_dir.join("report.md")).unwrap();
    assert!(md.contains("Δ"));
    assert!(md.contains(lang_adherence::VERSION));
    assert!(out_dir.join("accuracy.csv").exists());
    assert!(out_dir.join("diff_diff.svg").exists());
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("gens.jsonl");
    write_log(&log);
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "[corpus]\npath = \"{}\"\n\n[matcher]\ngenerations = [\"gens.jsonl\"]\nstage = \"cfg-stage\"\n\n[output]\ndir = \"out\"\n",
            fixture("corpus.jsonl").display()
        ),
    )
    .unwrap();
    assert!(run(&["evaluate", "--config", p(&cfg)]).status.success());
    let m = MetricsFile::load(&dir.path().join("out/metrics.json")).unwrap();
    assert_eq!(m.stage, "cfg-stage");
    // Flags win over the file.
    assert!(run(&["evaluate", "--config", p(&cfg), "--stage", "flag-stage"]).status.success());
    let m = MetricsFile::load(&dir.path().join("out/metrics.json")).unwrap();
    assert_eq!(m.stage, "flag-stage");
}

#[test]
fn errors_exit_one_and_name_the_source() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    let mut text = std::fs::read_to_string(fixture("sample_100.jsonl")).unwrap();
    text.push_str("{not json\n");
    std::fs::write(&bad, text).unwrap();
    let out = bin().args(["ingest", "--corpus", p(&bad)]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: ingest:"), "{err}");
    assert!(err.contains("bad.jsonl") && err.contains("701"), "{err}");

    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    toy_checkpoint(&a, 2, 0.0);
    toy_checkpoint(&b, 3, 0.0);
    let out = bin()
        .args(["diff", "--base", p(&a), "--tuned", p(&b), "--scheme", "toy", "--out", p(dir.path())])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: diff:") && err.contains("blocks.2."), "{err}");

    let out = bin()
        .args(["plan", "--manifest", p(&fixture("llama_1b_manifest.json")), "--mode", "explicit", "--range", "12-17", "--out", p(&dir.path().join("x.json"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("x.json").exists());
}
