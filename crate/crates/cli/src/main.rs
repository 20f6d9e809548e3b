mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use lang_adherence::checkpoint::{build_matrix, diff_checkpoints, DiffMatrix, NamingScheme};
use lang_adherence::corpus::{ingest_corpus, IngestOptions, ParallelCorpus, PartialRowPolicy, Split};
use lang_adherence::lang::default_order;
use lang_adherence::langid::{build_profiles, Profiles, DEFAULT_THRESHOLD};
use lang_adherence::matcher::{
    collect_sets, judge_all, read_generation_log, write_verdicts, GenerationRecord, JudgeOptions,
    Verdict,
};
use lang_adherence::metrics::{cococola_report, overlap_matrix, UniverseKind};
use lang_adherence::plan::{
    emit_plan, load_tensor_list, plan_explicit, plan_final_layers, plan_from_delta,
    plan_matched_prefix, read_plan, FreezePlan, LayerRange, PlanManifest, TrainConfigTemplate,
};
use lang_adherence::report::{
    accuracy_rows_from_metrics, known_not_grid, overlap_grid, render_accuracy_table,
    render_cococola_table, render_heatmap, render_overlap_svg, Format, LanguageMetrics,
    MetricsFile, NamedMatrix, Normalization, PlanSummary, Provenance, ReportBundle, TableLayout,
};
use lang_adherence::{LanguageCode, VERSION};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "adherence", version = VERSION, about = "Language adherence metrics, checkpoint diffs and freeze plans")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a parallel corpus and optionally build langid profiles.
    Ingest(IngestArgs),
    /// Judge a generation log and compute full and filtered metrics.
    Evaluate(EvalArgs),
    /// Adherence ratios on the filtered subsets only.
    Cococola(EvalArgs),
    /// Cross-lingual overlap of correctly answered questions.
    Overlap(OverlapArgs),
    /// Per-layer, per-module mean absolute parameter delta.
    Diff(DiffArgs),
    /// Emit a freeze plan.
    Plan(PlanArgs),
    /// Render tables and figures from metrics and diff files.
    Report(ReportArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Evaluate(_) => "evaluate",
            Command::Cococola(_) => "cococola",
            Command::Overlap(_) => "overlap",
            Command::Diff(_) => "diff",
            Command::Plan(_) => "plan",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Args, Clone)]
struct CorpusArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Comma-separated declared languages; defaults to all in the file.
    #[arg(long, value_delimiter = ',')]
    languages: Option<Vec<String>>,
    #[arg(long)]
    reference: Option<String>,
    #[arg(long)]
    eval_split: Option<String>,
    /// Fail on ids missing a declared language (default).
    #[arg(long, conflicts_with = "quarantine")]
    strict: bool,
    /// Drop ids missing a declared language and record them.
    #[arg(long)]
    quarantine: bool,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Write langid profiles built from the training split.
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Write a JSON summary here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    generations: Option<PathBuf>,
    /// Langid profiles JSON; built from the corpus when omitted.
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long)]
    langid_threshold: Option<f64>,
    /// Model label; defaults to the log's model_tag.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    stage: Option<String>,
    /// Write per-record verdicts as JSONL.
    #[arg(long)]
    emit_verdicts: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OverlapArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    generations: Option<PathBuf>,
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiffArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    tuned: PathBuf,
    /// Bundled scheme name (llama, gemma, toy) or a scheme JSON file.
    #[arg(long)]
    scheme: Option<String>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Figure title and file stem.
    #[arg(long, default_value = "diff")]
    name: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    FinalK,
    MatchedPrefix,
    TopDelta,
    Explicit,
}

#[derive(Args)]
struct PlanArgs {
    /// Checkpoint (safetensors) or JSON list of {name, shape}.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long, value_enum)]
    mode: Mode,
    /// Layer count for final-k, and for the final-k reference of matched-prefix.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    fraction: Option<f64>,
    /// 1-indexed inclusive range such as 11-16.
    #[arg(long)]
    range: Option<String>,
    /// Diff matrix CSV for top-delta.
    #[arg(long)]
    diff: Option<PathBuf>,
    #[arg(long)]
    include_head: bool,
    /// Add the balanced multilingual sampling block to the training template.
    #[arg(long)]
    multilingual: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, num_args = 1..)]
    metrics: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    diff: Vec<PathBuf>,
    /// Overlap JSON files written by `overlap`.
    #[arg(long, num_args = 1..)]
    overlap: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    plans: Vec<PathBuf>,
    /// md, csv, json or svg; repeatable.
    #[arg(long, value_delimiter = ',')]
    format: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    languages: Option<Vec<String>>,
    #[arg(long)]
    plm_stage: Option<String>,
    #[arg(long)]
    sft_stage: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    let result = cli
        .config
        .as_deref()
        .map(RunConfig::load)
        .transpose()
        .and_then(|cfg| run(cli.command, &cfg.unwrap_or_default()));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {name}: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::Ingest(a) => cmd_ingest(a, cfg),
        Command::Evaluate(a) => cmd_evaluate(a, cfg, false),
        Command::Cococola(a) => cmd_evaluate(a, cfg, true),
        Command::Overlap(a) => cmd_overlap(a, cfg),
        Command::Diff(a) => cmd_diff(a, cfg),
        Command::Plan(a) => cmd_plan(a, cfg),
        Command::Report(a) => cmd_report(a, cfg),
    }
}

fn parse_langs(codes: &[String]) -> Result<Vec<LanguageCode>> {
    codes
        .iter()
        .map(|c| LanguageCode::new(c.trim()).map_err(Into::into))
        .collect()
}

fn load_corpus(a: &CorpusArgs, cfg: &RunConfig) -> Result<(PathBuf, ParallelCorpus)> {
    let c = &cfg.corpus;
    let path = a
        .corpus
        .clone()
        .or_else(|| c.path.clone())
        .ok_or_else(|| anyhow!("no corpus given (--corpus or [corpus] path)"))?;
    let mut opts = IngestOptions::default();
    if let Some(l) = a.languages.as_ref().or(c.languages.as_ref()) {
        opts.languages = Some(parse_langs(l)?);
    }
    if let Some(r) = a.reference.as_ref().or(c.reference.as_ref()) {
        opts.reference_language = LanguageCode::new(r)?;
    }
    if let Some(s) = a.eval_split.as_ref().or(c.eval_split.as_ref()) {
        opts.eval_split = s.parse::<Split>()?;
    }
    opts.policy = if a.quarantine {
        PartialRowPolicy::Quarantine
    } else if a.strict {
        PartialRowPolicy::Strict
    } else {
        match c.policy.as_deref() {
            None | Some("strict") => PartialRowPolicy::Strict,
            Some("quarantine") => PartialRowPolicy::Quarantine,
            Some(other) => bail!("unknown partial-row policy {other:?} (strict, quarantine)"),
        }
    };
    let corpus = ingest_corpus(&path, &opts)?;
    Ok((path, corpus))
}

fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = flag
        .or_else(|| cfg.output.dir.clone())
        .ok_or_else(|| anyhow!("no output directory given (--out or [output] dir)"))?;
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_ingest(a: IngestArgs, cfg: &RunConfig) -> Result<()> {
    let (path, corpus) = load_corpus(&a.corpus, cfg)?;
    for w in corpus.warnings() {
        eprintln!(
            "warning: {}: {} answer {:?} for {} is mostly outside the expected script",
            path.display(),
            w.language,
            w.answer,
            w.question_id
        );
    }
    let splits: BTreeMap<String, usize> = [Split::Train, Split::Validation, Split::Test]
        .into_iter()
        .map(|s| (s.to_string(), corpus.split_len(s)))
        .collect();
    let summary = serde_json::json!({
        "corpus": path,
        "languages": corpus.languages(),
        "reference_language": corpus.reference_language(),
        "questions": corpus.question_count(),
        "items": corpus.item_count(),
        "splits": splits,
        "quarantined": corpus.quarantined(),
        "script_warnings": corpus.warnings().len(),
    });
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    match a.out {
        Some(p) => write_text(&p, &text)?,
        None => print!("{text}"),
    }
    if let Some(p) = a.profiles {
        build_profiles(&corpus)?.save(&p)?;
    }
    Ok(())
}

fn resolve_profiles(flag: Option<&PathBuf>, cfg: &RunConfig, corpus: &ParallelCorpus) -> Result<Option<Profiles>> {
    if let Some(p) = flag.or(cfg.matcher.profiles.as_ref()) {
        return Ok(Some(Profiles::load(p)?));
    }
    match build_profiles(corpus) {
        Ok(p) => Ok(Some(p)),
        Err(e) => {
            eprintln!("warning: langid disabled: {e}");
            Ok(None)
        }
    }
}

fn load_log(flag: Option<&PathBuf>, cfg: &RunConfig, model: Option<&str>) -> Result<(PathBuf, String, Vec<GenerationRecord>)> {
    let path = match flag {
        Some(p) => p.clone(),
        None => match cfg.matcher.generations.as_deref() {
            Some([one]) => one.clone(),
            Some([]) | None => bail!("no generation log given (--generations or [matcher] generations)"),
            Some(_) => bail!("[matcher] generations lists several logs; pass one with --generations"),
        },
    };
    let mut records = read_generation_log(&path)?;
    let tags: BTreeSet<&str> = records.iter().map(|r| r.model_tag.as_str()).collect();
    let model = match model.or(cfg.matcher.model.as_deref()) {
        Some(m) => m.to_string(),
        None => match tags.len() {
            1 => tags.into_iter().next().unwrap().to_string(),
            0 => bail!("{}: generation log is empty", path.display()),
            _ => bail!("{}: several model tags {tags:?}; choose one with --model", path.display()),
        },
    };
    if records.iter().any(|r| r.model_tag != model) {
        records.retain(|r| r.model_tag == model);
        if records.is_empty() {
            bail!("{}: no records with model tag {model:?}", path.display());
        }
    }
    Ok((path, model, records))
}

fn input_languages(corpus: &ParallelCorpus, verdicts: &[Verdict]) -> Vec<LanguageCode> {
    let seen: BTreeSet<LanguageCode> = verdicts.iter().map(|v| v.input_language).collect();
    corpus.languages().iter().copied().filter(|l| seen.contains(l)).collect()
}

fn cmd_evaluate(a: EvalArgs, cfg: &RunConfig, filtered_only: bool) -> Result<()> {
    let (corpus_path, corpus) = load_corpus(&a.corpus, cfg)?;
    let reference = corpus.reference_language();

    // The filtered subsets come first so an unusable corpus fails before judging.
    let subsets = if filtered_only {
        let subsets = corpus
            .languages()
            .iter()
            .filter(|&&l| l != reference)
            .map(|&l| Ok((l, corpus.build_filtered_subset(l)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Some(subsets)
    } else {
        None
    };

    let (log_path, model, records) = load_log(a.generations.as_ref(), cfg, a.model.as_deref())?;
    let profiles = resolve_profiles(a.profiles.as_ref(), cfg, &corpus)?;
    let opts = JudgeOptions {
        langid_threshold: a
            .langid_threshold
            .or(cfg.matcher.langid_threshold)
            .unwrap_or(DEFAULT_THRESHOLD),
    };
    let verdicts = judge_all(&records, &corpus, profiles.as_ref(), &opts)
        .with_context(|| format!("judging {}", log_path.display()))?;
    if let Some(p) = &a.emit_verdicts {
        write_verdicts(p, &verdicts)?;
    }

    let universe = corpus.eval_ids();
    let mut languages = Vec::new();
    for lang in input_languages(&corpus, &verdicts) {
        let vs: Vec<Verdict> = verdicts.iter().filter(|v| v.input_language == lang).cloned().collect();
        let full = cococola_report(&collect_sets(&vs, &universe, lang, reference)?, UniverseKind::Full)
            .with_context(|| format!("{}: input language {lang}", log_path.display()))?;
        let filtered = if lang == reference {
            None
        } else {
            let subset = match &subsets {
                Some(s) => s[&lang].clone(),
                None => corpus.build_filtered_subset(lang)?,
            };
            let in_subset: Vec<Verdict> =
                vs.iter().filter(|v| subset.contains(&v.question_id)).cloned().collect();
            if subset.is_empty() {
                None
            } else {
                let sets = collect_sets(&in_subset, &subset.question_ids, lang, reference)?;
                Some(cococola_report(&sets, UniverseKind::Filtered)
                    .with_context(|| format!("{}: filtered subset for {lang}", log_path.display()))?)
            }
        };
        languages.push(LanguageMetrics {
            input_language: lang,
            full,
            filtered,
            langid_disagreements: vs.iter().filter(|v| v.langid_disagrees()).count(),
        });
    }
    if filtered_only {
        languages.retain(|m| m.filtered.is_some());
    }

    let mut provenance = Provenance::new();
    provenance.add_file(&corpus_path)?;
    provenance.add_file(&log_path)?;
    let metrics = MetricsFile {
        model,
        stage: a.stage.or_else(|| cfg.matcher.stage.clone()).unwrap_or_else(|| "eval".into()),
        reference_language: reference,
        languages,
        provenance: provenance.clone(),
    };
    let dir = out_dir(a.out, cfg)?;
    let metrics_path = dir.join(if filtered_only { "cococola.json" } else { "metrics.json" });
    metrics.save(&metrics_path)?;

    let table = render_cococola_table(std::slice::from_ref(&metrics), corpus.languages());
    if filtered_only {
        write_text(&dir.join("cococola.md"), &table.grid(TableLayout::ByLanguage).to_markdown())?;
        write_text(&dir.join("cococola.csv"), &table.grid(TableLayout::ByLanguage).to_csv())?;
    } else {
        let mut bundle = ReportBundle::new(provenance);
        bundle.cococola_table = Some(table);
        bundle.write(Format::Md, &dir)?;
    }
    println!("{}", metrics_path.display());
    Ok(())
}

fn cmd_overlap(a: OverlapArgs, cfg: &RunConfig) -> Result<()> {
    let (corpus_path, corpus) = load_corpus(&a.corpus, cfg)?;
    let (log_path, model, records) = load_log(a.generations.as_ref(), cfg, a.model.as_deref())?;
    let profiles = resolve_profiles(a.profiles.as_ref(), cfg, &corpus)?;
    let verdicts = judge_all(&records, &corpus, profiles.as_ref(), &JudgeOptions::default())
        .with_context(|| format!("judging {}", log_path.display()))?;
    let order = input_languages(&corpus, &verdicts);
    let mut sets: BTreeMap<LanguageCode, BTreeSet<String>> = order.iter().map(|&l| (l, BTreeSet::new())).collect();
    for v in verdicts.iter().filter(|v| v.is_correct()) {
        sets.get_mut(&v.input_language).unwrap().insert(v.question_id.clone());
    }
    let m = overlap_matrix(&sets, &order)?;
    let dir = out_dir(a.out, cfg)?;
    let mut provenance = Provenance::new();
    provenance.add_file(&corpus_path)?;
    provenance.add_file(&log_path)?;
    let named = NamedMatrix { name: model, matrix: m };
    let json = serde_json::to_string_pretty(&named)? + "\n";
    write_text(&dir.join("overlap.json"), &json)?;
    write_text(&dir.join("overlap.csv"), &overlap_grid(&named.matrix).to_csv())?;
    write_text(&dir.join("known_not.csv"), &known_not_grid(&named.matrix).to_csv())?;
    write_text(&dir.join("overlap.svg"), &render_overlap_svg(&named.matrix, &named.name))?;
    Ok(())
}

fn scheme_for(flag: Option<&String>, section: Option<&String>) -> Result<NamingScheme> {
    let name = flag.or(section).map(String::as_str).unwrap_or("llama");
    Ok(NamingScheme::load(name)?)
}

fn cmd_diff(a: DiffArgs, cfg: &RunConfig) -> Result<()> {
    let scheme = scheme_for(a.scheme.as_ref(), cfg.diff.scheme.as_ref())?;
    let workers = a.workers.or(cfg.diff.workers).unwrap_or(0);
    let entries = diff_checkpoints(&a.base, &a.tuned, &scheme, workers)?;
    let matrix = build_matrix(&entries);
    let dir = out_dir(a.out, cfg)?;
    let stem = lang_adherence::report::file_stem(&a.name);
    write_text(&dir.join(format!("{stem}.csv")), &matrix.to_csv())?;
    write_text(
        &dir.join(format!("{stem}.svg")),
        &render_heatmap(&matrix, Normalization::PerMatrix, &a.name),
    )?;
    Ok(())
}

fn cmd_plan(a: PlanArgs, cfg: &RunConfig) -> Result<()> {
    let scheme = scheme_for(a.scheme.as_ref(), cfg.plan.scheme.as_ref())?;
    let tensors = load_tensor_list(&a.manifest)?;
    let manifest = PlanManifest::new(&tensors, &scheme)
        .with_context(|| format!("manifest {}", a.manifest.display()))?;
    let include_head = a.include_head || cfg.plan.include_head.unwrap_or(false);
    let need_k = || a.k.ok_or_else(|| anyhow!("--k is required for this mode"));
    let plan: FreezePlan = match a.mode {
        Mode::FinalK => plan_final_layers(&manifest, need_k()?, include_head)?,
        Mode::MatchedPrefix => {
            let reference = plan_final_layers(&manifest, need_k()?, include_head)?;
            plan_matched_prefix(&manifest, &reference)?
        }
        Mode::TopDelta => {
            let fraction = a.fraction.ok_or_else(|| anyhow!("--fraction is required for top-delta"))?;
            let path = a.diff.as_ref().ok_or_else(|| anyhow!("--diff is required for top-delta"))?;
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let matrix = DiffMatrix::from_csv(&text).with_context(|| format!("parsing {}", path.display()))?;
            plan_from_delta(&matrix, &manifest, fraction, include_head)?
        }
        Mode::Explicit => {
            let label = a.range.as_deref().ok_or_else(|| anyhow!("--range is required for explicit"))?;
            let range = LayerRange::parse_one_indexed(label, manifest.layer_count())?;
            plan_explicit(&manifest, range, include_head)?
        }
    };
    let template = if a.multilingual || cfg.plan.multilingual.unwrap_or(false) {
        TrainConfigTemplate::multilingual()
    } else {
        TrainConfigTemplate::default()
    };
    let out = match a.out {
        Some(p) => p,
        None => out_dir(None, cfg)?.join("plan.json"),
    };
    emit_plan(&plan, &template, &out)?;
    println!(
        "{}: trainable layers {} ({} of {} parameters)",
        out.display(),
        plan.trainable_layers_label,
        plan.counts.trainable,
        plan.counts.total
    );
    Ok(())
}

fn cmd_report(a: ReportArgs, cfg: &RunConfig) -> Result<()> {
    let rc = &cfg.report;
    let order = match a.languages.as_ref().or(rc.languages.as_ref()) {
        Some(l) => parse_langs(l)?,
        None => default_order(),
    };
    let mut formats: Vec<String> = a.format.clone();
    if formats.is_empty() {
        formats = rc.formats.clone().unwrap_or_else(|| vec!["md".into()]);
    }
    let formats = formats.iter().map(|f| f.parse::<Format>()).collect::<Result<Vec<_>, _>>()?;

    let mut provenance = Provenance::new();
    let mut metrics = Vec::new();
    for p in &a.metrics {
        metrics.push(MetricsFile::load(p)?);
        provenance.add_file(p)?;
    }
    let mut bundle = ReportBundle::new(Provenance::new());
    if !metrics.is_empty() {
        let plm = a.plm_stage.as_deref().or(rc.plm_stage.as_deref()).unwrap_or("plm");
        let sft = a.sft_stage.as_deref().or(rc.sft_stage.as_deref()).unwrap_or("sft");
        let rows = accuracy_rows_from_metrics(&metrics, plm, sft, &order);
        if !rows.is_empty() {
            bundle.accuracy_table = Some(render_accuracy_table(&rows));
        }
        bundle.cococola_table = Some(render_cococola_table(&metrics, &order));
    }
    for p in &a.diff {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let matrix = DiffMatrix::from_csv(&text).with_context(|| format!("parsing {}", p.display()))?;
        let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        bundle.heatmap_figures.push(NamedMatrix { name, matrix });
        provenance.add_file(p)?;
    }
    for p in &a.overlap {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let named = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        bundle.overlap_figures.push(named);
        provenance.add_file(p)?;
    }
    for p in &a.plans {
        let file = read_plan(p)?;
        let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        bundle.plans.push(PlanSummary::new(&name, &file.plan));
        provenance.add_file(p)?;
    }
    bundle.provenance = provenance;
    let dir = out_dir(a.out, cfg)?;
    for f in formats {
        for path in bundle.write(f, &dir)? {
            println!("{}", path.display());
        }
    }
    Ok(())
}
