//! Tables and figures: accuracy (PLM/SFT/Δ), adherence ratio tables in two
//! layouts, overlap matrices and checkpoint-diff heatmaps, as Markdown, CSV,
//! JSON and SVG.
//!
//! Rendering is pure: identical inputs and toolkit version give identical
//! bytes. Numbers are shown as percents with two decimals; the only arithmetic
//! done here is the Average, which is the mean of the rendered values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::diff::DiffMatrix;
use crate::error::{Error, Result};
use crate::lang::LanguageCode;
use crate::metrics::{delta_accuracy, CoCoColaReport, OverlapMatrix, Ratio};
use crate::plan::FreezePlan;
use crate::VERSION;

pub const MISSING: &str = "—";

/// Fraction in [0, 1] to a two-decimal percent.
pub fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

fn pct_ratio(r: Ratio) -> String {
    r.value().map(pct).unwrap_or_else(|| MISSING.to_string())
}

/// Mean of already-rendered cells; `—` cells are skipped.
pub fn average_rendered<'a, I: IntoIterator<Item = &'a str>>(cells: I) -> String {
    let vals: Vec<f64> = cells.into_iter().filter_map(|c| c.parse().ok()).collect();
    if vals.is_empty() {
        return MISSING.to_string();
    }
    format!("{:.2}", vals.iter().sum::<f64>() / vals.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub toolkit_version: String,
    pub inputs: Vec<InputDigest>,
}

impl Provenance {
    pub fn new() -> Self {
        Provenance {
            toolkit_version: VERSION.to_string(),
            inputs: Vec::new(),
        }
    }

    pub fn add_file(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest_file(path)?);
        Ok(())
    }
}

impl Default for Provenance {
    fn default() -> Self {
        Provenance::new()
    }
}

pub fn digest_file(path: &Path) -> Result<InputDigest> {
    let ctx = || format!("hashing {}", path.display());
    let mut file = fs::File::open(path).map_err(|e| Error::io(ctx(), e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(ctx(), e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let hex = hasher
        .finalize()
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex,
    })
}

/// Evaluation results for one model at one training stage, as written by
/// `evaluate` / `cococola` and read by `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub model: String,
    /// Free-form stage label such as `plm`, `sft`, `sft-fr`, `final-6`.
    pub stage: String,
    pub reference_language: LanguageCode,
    pub languages: Vec<LanguageMetrics>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageMetrics {
    pub input_language: LanguageCode,
    /// Whole evaluation split.
    pub full: CoCoColaReport,
    /// Filtered subset; absent for the reference language.
    pub filtered: Option<CoCoColaReport>,
    /// Verdicts where langid disagreed with the matched answer's language.
    pub langid_disagreements: usize,
}

impl MetricsFile {
    pub fn language(&self, lang: LanguageCode) -> Option<&LanguageMetrics> {
        self.languages.iter().find(|l| l.input_language == lang)
    }

    pub fn column_label(&self) -> String {
        format!("{} {}", self.model, self.stage)
    }

    pub fn load(path: &Path) -> Result<MetricsFile> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::json(format!("parsing metrics {}", path.display()), e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::json(format!("serializing {}", path.display()), e))?;
    text.push('\n');
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// A rendered table: header plus string cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Grid {
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("| {} |\n", self.header.join(" | ")));
        let sep: Vec<&str> = self
            .header
            .iter()
            .enumerate()
            .map(|(i, _)| if i == 0 { "---" } else { "---:" })
            .collect();
        out.push_str(&format!("| {} |\n", sep.join(" | ")));
        for row in &self.rows {
            out.push_str(&format!("| {} |\n", row.join(" | ")));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in std::iter::once(&self.header).chain(&self.rows) {
            let cells: Vec<String> = row.iter().map(|c| csv_cell(c)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn cell(&self, row: usize, column: &str) -> Option<&str> {
        let col = self.header.iter().position(|h| h == column)?;
        self.rows.get(row).map(|r| r[col].as_str())
    }
}

fn csv_cell(c: &str) -> String {
    if c.contains([',', '"', '\n']) {
        format!("\"{}\"", c.replace('"', "\"\""))
    } else {
        c.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub language: LanguageCode,
    pub model: String,
    /// Fractions in [0, 1].
    pub plm: f64,
    pub sft: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTableRow {
    pub language: LanguageCode,
    pub model: String,
    pub plm: f64,
    pub sft: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub rows: Vec<AccuracyTableRow>,
}

pub fn render_accuracy_table(rows: &[AccuracyRow]) -> AccuracyTable {
    AccuracyTable {
        rows: rows
            .iter()
            .map(|r| AccuracyTableRow {
                language: r.language,
                model: r.model.clone(),
                plm: r.plm,
                sft: r.sft,
                delta: delta_accuracy(r.plm, r.sft),
            })
            .collect(),
    }
}

impl AccuracyTable {
    pub fn grid(&self) -> Grid {
        Grid {
            header: ["Language", "Model", "PLM", "SFT", "Δ"].map(String::from).to_vec(),
            rows: self
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.language.to_string(),
                        r.model.clone(),
                        pct(r.plm),
                        pct(r.sft),
                        pct(r.delta),
                    ]
                })
                .collect(),
        }
    }
}

/// Input-language accuracy on the full split, pairing a `plm_stage` file
/// with an `sft_stage` file of the same model.
pub fn accuracy_rows_from_metrics(
    files: &[MetricsFile],
    plm_stage: &str,
    sft_stage: &str,
    order: &[LanguageCode],
) -> Vec<AccuracyRow> {
    let mut rows = Vec::new();
    for &lang in order {
        for plm in files.iter().filter(|f| f.stage == plm_stage) {
            let Some(sft) = files
                .iter()
                .find(|f| f.stage == sft_stage && f.model == plm.model)
            else {
                continue;
            };
            if let (Some(a), Some(b)) = (plm.language(lang), sft.language(lang)) {
                rows.push(AccuracyRow {
                    language: lang,
                    model: plm.model.clone(),
                    plm: a.full.input_accuracy,
                    sft: b.full.input_accuracy,
                });
            }
        }
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CocolaCell {
    pub ratio: Ratio,
    /// Cumulative accuracy on the filtered subset, when there is one.
    pub acc_filtered: Option<f64>,
    /// Cumulative accuracy on the whole evaluation split.
    pub acc_full: f64,
}

impl CocolaCell {
    /// Ratio from the filtered subset when present, otherwise from the full split.
    pub fn from_metrics(m: &LanguageMetrics) -> CocolaCell {
        CocolaCell {
            ratio: m
                .filtered
                .as_ref()
                .map(|f| f.ratio_general)
                .unwrap_or(m.full.ratio_general),
            acc_filtered: m.filtered.as_ref().map(|f| f.cumulative_accuracy),
            acc_full: m.full.cumulative_accuracy,
        }
    }

    pub fn from_report(r: &CoCoColaReport) -> CocolaCell {
        CocolaCell {
            ratio: r.ratio_general,
            acc_filtered: None,
            acc_full: r.cumulative_accuracy,
        }
    }

    fn rendered(&self) -> [String; 3] {
        [
            pct_ratio(self.ratio),
            self.acc_filtered.map(pct).unwrap_or_else(|| MISSING.into()),
            pct(self.acc_full),
        ]
    }
}

const CELL_FIELDS: [&str; 3] = ["Ratio", "Acc (filtered)", "Acc (full)"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableLayout {
    /// Languages as rows, model/stage columns, Average row at the bottom.
    ByLanguage,
    /// Model/stage rows, language columns, Average columns at the end.
    ByModel,
}

impl FromStr for TableLayout {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "by-language" | "by_language" => Ok(TableLayout::ByLanguage),
            "by-model" | "by_model" => Ok(TableLayout::ByModel),
            _ => Err(Error::Report(format!("unknown table layout {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocolaTable {
    pub languages: Vec<LanguageCode>,
    pub columns: Vec<String>,
    /// column -> language -> cell.
    pub cells: BTreeMap<String, BTreeMap<LanguageCode, CocolaCell>>,
}

impl CocolaTable {
    pub fn new(languages: Vec<LanguageCode>) -> Self {
        CocolaTable {
            languages,
            columns: Vec::new(),
            cells: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, column: &str, lang: LanguageCode, cell: CocolaCell) {
        if !self.columns.iter().any(|c| c == column) {
            self.columns.push(column.to_string());
        }
        self.cells
            .entry(column.to_string())
            .or_default()
            .insert(lang, cell);
    }

    pub fn get(&self, column: &str, lang: LanguageCode) -> Option<&CocolaCell> {
        self.cells.get(column).and_then(|c| c.get(&lang))
    }

    fn rendered(&self, column: &str, lang: LanguageCode) -> [String; 3] {
        self.get(column, lang)
            .map(CocolaCell::rendered)
            .unwrap_or_else(|| [MISSING.into(), MISSING.into(), MISSING.into()])
    }

    pub fn grid(&self, layout: TableLayout) -> Grid {
        match layout {
            TableLayout::ByLanguage => {
                let mut header = vec!["Language".to_string()];
                for c in &self.columns {
                    header.extend(CELL_FIELDS.iter().map(|f| format!("{c} {f}")));
                }
                let mut rows: Vec<Vec<String>> = self
                    .languages
                    .iter()
                    .map(|&lang| {
                        let mut row = vec![lang.to_string()];
                        for c in &self.columns {
                            row.extend(self.rendered(c, lang));
                        }
                        row
                    })
                    .collect();
                let mut avg = vec!["Average".to_string()];
                for col in 1..header.len() {
                    avg.push(average_rendered(rows.iter().map(|r| r[col].as_str())));
                }
                rows.push(avg);
                Grid { header, rows }
            }
            TableLayout::ByModel => {
                let mut header = vec!["Model".to_string()];
                for lang in &self.languages {
                    header.extend(CELL_FIELDS.iter().map(|f| format!("{lang} {f}")));
                }
                header.extend(CELL_FIELDS.iter().map(|f| format!("Average {f}")));
                let rows = self
                    .columns
                    .iter()
                    .map(|c| {
                        let mut row = vec![c.clone()];
                        let per_lang: Vec<[String; 3]> =
                            self.languages.iter().map(|&l| self.rendered(c, l)).collect();
                        for cells in &per_lang {
                            row.extend(cells.iter().cloned());
                        }
                        for i in 0..CELL_FIELDS.len() {
                            row.push(average_rendered(per_lang.iter().map(|p| p[i].as_str())));
                        }
                        row
                    })
                    .collect();
                Grid { header, rows }
            }
        }
    }
}

pub fn render_cococola_table(files: &[MetricsFile], order: &[LanguageCode]) -> CocolaTable {
    let mut table = CocolaTable::new(order.to_vec());
    for f in files {
        let label = f.column_label();
        for &lang in order {
            if let Some(m) = f.language(lang) {
                table.insert(&label, lang, CocolaCell::from_metrics(m));
            }
        }
    }
    table
}

pub fn overlap_grid(m: &OverlapMatrix) -> Grid {
    let mut header = vec![String::new()];
    header.extend(m.languages.iter().map(|l| l.to_string()));
    Grid {
        header,
        rows: m
            .languages
            .iter()
            .zip(&m.iou)
            .map(|(l, row)| {
                std::iter::once(l.to_string())
                    .chain(row.iter().map(|v| v.to_string()))
                    .collect()
            })
            .collect(),
    }
}

/// `known_not[a][b]`: ids answered correctly in row language but not column language.
pub fn known_not_grid(m: &OverlapMatrix) -> Grid {
    let mut header = vec![String::new()];
    header.extend(m.languages.iter().map(|l| l.to_string()));
    Grid {
        header,
        rows: m
            .languages
            .iter()
            .zip(&m.known_not)
            .map(|(l, row)| {
                std::iter::once(l.to_string())
                    .chain(row.iter().map(|v| v.to_string()))
                    .collect()
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Normalization {
    /// Colors span this matrix's own min..max.
    PerMatrix,
    /// Colors span a shared range, so several heatmaps are comparable.
    Global { min: f64, max: f64 },
}

/// Shared min..max over several matrices, for [`Normalization::Global`].
pub fn global_range<'a, I: IntoIterator<Item = &'a DiffMatrix>>(matrices: I) -> Option<(f64, f64)> {
    matrices
        .into_iter()
        .filter_map(DiffMatrix::min_max)
        .reduce(|a, b| (a.0.min(b.0), a.1.max(b.1)))
}

pub fn render_heatmap(matrix: &DiffMatrix, normalization: Normalization, title: &str) -> String {
    let range = match normalization {
        Normalization::PerMatrix => matrix.min_max().unwrap_or((0.0, 0.0)),
        Normalization::Global { min, max } => (min, max),
    };
    let x: Vec<String> = (1..=matrix.layer_count).map(|l| l.to_string()).collect();
    let y: Vec<String> = matrix.rows.iter().map(|k| k.to_string()).collect();
    svg_grid(&SvgGrid {
        title,
        x_title: "layer",
        x_labels: &x,
        y_labels: &y,
        values: &matrix.values,
        range,
        format: |v| format!("{v:.2e}"),
    })
}

pub fn render_overlap_svg(m: &OverlapMatrix, title: &str) -> String {
    let labels: Vec<String> = m.languages.iter().map(|l| l.to_string()).collect();
    let values: Vec<Vec<Option<f64>>> = m
        .iou
        .iter()
        .map(|r| r.iter().map(|v| Some(*v)).collect())
        .collect();
    svg_grid(&SvgGrid {
        title,
        x_title: "",
        x_labels: &labels,
        y_labels: &labels,
        values: &values,
        range: (0.0, 1.0),
        format: |v| format!("{v:.2}"),
    })
}

struct SvgGrid<'a, F: Fn(f64) -> String> {
    title: &'a str,
    x_title: &'a str,
    x_labels: &'a [String],
    y_labels: &'a [String],
    values: &'a [Vec<Option<f64>>],
    range: (f64, f64),
    format: F,
}

const CELL_W: usize = 60;
const CELL_H: usize = 28;
const LEFT: usize = 90;
const TOP: usize = 40;
const BAR_W: usize = 16;
const BAR_STEPS: usize = 32;

const STOPS: [(f64, f64, f64); 5] = [
    (68.0, 1.0, 84.0),
    (59.0, 82.0, 139.0),
    (33.0, 145.0, 140.0),
    (94.0, 201.0, 98.0),
    (253.0, 231.0, 37.0),
];

fn color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    let mix = |x: f64, y: f64| (x + (y - x) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn scale(v: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.0
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn svg_grid<F: Fn(f64) -> String>(g: &SvgGrid<'_, F>) -> String {
    let cols = g.x_labels.len();
    let rows = g.y_labels.len();
    let grid_w = cols * CELL_W;
    let grid_h = rows * CELL_H;
    let bar_x = LEFT + grid_w + 24;
    let width = bar_x + BAR_W + 90;
    let height = TOP + grid_h.max(120) + 50;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{LEFT}" y="22" font-size="14">{}</text>"#,
        escape(g.title)
    );
    for (r, row) in g.values.iter().enumerate() {
        let y = TOP + r * CELL_H;
        for (c, v) in row.iter().enumerate() {
            let x = LEFT + c * CELL_W;
            match v {
                Some(v) => {
                    let t = scale(*v, g.range);
                    let ink = if t < 0.6 { "white" } else { "black" };
                    let _ = writeln!(
                        s,
                        r#"<rect x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="{}" stroke="white"/>"#,
                        color(t)
                    );
                    let _ = writeln!(
                        s,
                        r#"<text x="{}" y="{}" font-size="9" text-anchor="middle" fill="{ink}">{}</text>"#,
                        x + CELL_W / 2,
                        y + CELL_H / 2 + 3,
                        escape(&(g.format)(*v))
                    );
                }
                None => {
                    let _ = writeln!(
                        s,
                        r##"<rect x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="#dddddd" stroke="white"/>"##
                    );
                }
            }
        }
    }
    for (r, label) in g.y_labels.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{}</text>"#,
            LEFT - 6,
            TOP + r * CELL_H + CELL_H / 2 + 4,
            escape(label)
        );
    }
    for (c, label) in g.x_labels.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
            LEFT + c * CELL_W + CELL_W / 2,
            TOP + grid_h + 16,
            escape(label)
        );
    }
    if !g.x_title.is_empty() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
            LEFT + grid_w / 2,
            TOP + grid_h + 36,
            escape(g.x_title)
        );
    }
    let bar_h = grid_h.max(120);
    let step_h = bar_h as f64 / BAR_STEPS as f64;
    for i in 0..BAR_STEPS {
        let t = 1.0 - (i as f64 + 0.5) / BAR_STEPS as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{bar_x}" y="{:.2}" width="{BAR_W}" height="{:.2}" fill="{}"/>"#,
            TOP as f64 + i as f64 * step_h,
            step_h + 0.5,
            color(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="10">{}</text>"#,
        bar_x + BAR_W + 4,
        TOP + 8,
        escape(&(g.format)(g.range.1))
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="10">{}</text>"#,
        bar_x + BAR_W + 4,
        TOP + bar_h,
        escape(&(g.format)(g.range.0))
    );
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Md,
    Csv,
    Json,
    Svg,
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "md" | "markdown" => Ok(Format::Md),
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "svg" => Ok(Format::Svg),
            _ => Err(Error::Report(format!("unknown format {s:?} (md, csv, json, svg)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMatrix<T> {
    pub name: String,
    pub matrix: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub name: String,
    pub scheme: String,
    pub rule: String,
    pub layers: String,
    pub trainable: u64,
    pub total: u64,
}

impl PlanSummary {
    pub fn new(name: &str, plan: &FreezePlan) -> Self {
        PlanSummary {
            name: name.to_string(),
            scheme: plan.scheme.clone(),
            rule: plan.rationale.name().to_string(),
            layers: plan.trainable_layers_label.clone(),
            trainable: plan.counts.trainable,
            total: plan.counts.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub accuracy_table: Option<AccuracyTable>,
    pub cococola_table: Option<CocolaTable>,
    pub overlap_figures: Vec<NamedMatrix<OverlapMatrix>>,
    pub heatmap_figures: Vec<NamedMatrix<DiffMatrix>>,
    pub plans: Vec<PlanSummary>,
    pub provenance: Provenance,
}

impl ReportBundle {
    pub fn new(provenance: Provenance) -> Self {
        ReportBundle {
            accuracy_table: None,
            cococola_table: None,
            overlap_figures: Vec::new(),
            heatmap_figures: Vec::new(),
            plans: Vec::new(),
            provenance,
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("# Language adherence report\n\n");
        let _ = writeln!(s, "Toolkit version {}.", self.provenance.toolkit_version);
        s.push_str("Answers are judged by exact match after normalization. Values are percents.\n\n");
        if let Some(t) = &self.accuracy_table {
            s.push_str("## Accuracy (Δ = SFT − PLM)\n\n");
            s.push_str(&t.grid().to_markdown());
            s.push('\n');
        }
        if let Some(t) = &self.cococola_table {
            s.push_str("## Adherence ratio and cumulative accuracy\n\n");
            s.push_str("Ratio is computed on the filtered subset where one exists. ");
            s.push_str(&format!("{MISSING} marks an undefined or missing value.\n\n"));
            s.push_str(&t.grid(TableLayout::ByLanguage).to_markdown());
            s.push('\n');
            s.push_str(&t.grid(TableLayout::ByModel).to_markdown());
            s.push('\n');
        }
        for o in &self.overlap_figures {
            let _ = writeln!(s, "## Overlap (IoU): {}\n", o.name);
            s.push_str(&overlap_grid(&o.matrix).to_markdown());
            s.push('\n');
        }
        for h in &self.heatmap_figures {
            let _ = writeln!(s, "## Mean absolute delta: {}\n", h.name);
            s.push_str("Cells are element-weighted means over the tensors of one module kind in one layer.\n\n");
            s.push_str(&diff_grid(&h.matrix).to_markdown());
            s.push('\n');
        }
        if !self.plans.is_empty() {
            s.push_str("## Freeze plans\n\n");
            let grid = Grid {
                header: ["Plan", "Scheme", "Rule", "Trainable layers", "Trainable", "Total"]
                    .map(String::from)
                    .to_vec(),
                rows: self
                    .plans
                    .iter()
                    .map(|p| {
                        vec![
                            p.name.clone(),
                            p.scheme.clone(),
                            p.rule.clone(),
                            p.layers.clone(),
                            p.trainable.to_string(),
                            p.total.to_string(),
                        ]
                    })
                    .collect(),
            };
            s.push_str(&grid.to_markdown());
            s.push('\n');
        }
        if !self.provenance.inputs.is_empty() {
            s.push_str("## Inputs\n\n");
            for i in &self.provenance.inputs {
                let _ = writeln!(s, "- `{}` sha256 `{}`", i.path, i.sha256);
            }
        }
        s
    }

    /// Writes the bundle in `format` under `dir`; returns the files written.
    pub fn write(&self, format: Format, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let mut written = Vec::new();
        let mut put = |name: String, text: String| -> Result<()> {
            let path = dir.join(name);
            write_text(&path, &text)?;
            written.push(path);
            Ok(())
        };
        match format {
            Format::Md => put("report.md".into(), self.to_markdown())?,
            Format::Json => {
                let mut text = serde_json::to_string_pretty(self)
                    .map_err(|e| Error::json("serializing report", e))?;
                text.push('\n');
                put("report.json".into(), text)?;
            }
            Format::Csv => {
                if let Some(t) = &self.accuracy_table {
                    put("accuracy.csv".into(), t.grid().to_csv())?;
                }
                if let Some(t) = &self.cococola_table {
                    put("cococola_by_language.csv".into(), t.grid(TableLayout::ByLanguage).to_csv())?;
                    put("cococola_by_model.csv".into(), t.grid(TableLayout::ByModel).to_csv())?;
                }
                for o in &self.overlap_figures {
                    put(format!("overlap_{}.csv", file_stem(&o.name)), overlap_grid(&o.matrix).to_csv())?;
                    put(format!("known_not_{}.csv", file_stem(&o.name)), known_not_grid(&o.matrix).to_csv())?;
                }
                for h in &self.heatmap_figures {
                    put(format!("diff_{}.csv", file_stem(&h.name)), h.matrix.to_csv())?;
                }
            }
            Format::Svg => {
                for o in &self.overlap_figures {
                    put(
                        format!("overlap_{}.svg", file_stem(&o.name)),
                        render_overlap_svg(&o.matrix, &o.name),
                    )?;
                }
                let global = global_range(self.heatmap_figures.iter().map(|h| &h.matrix));
                for h in &self.heatmap_figures {
                    let stem = file_stem(&h.name);
                    put(
                        format!("diff_{stem}.svg"),
                        render_heatmap(&h.matrix, Normalization::PerMatrix, &h.name),
                    )?;
                    if let Some((min, max)) = global {
                        put(
                            format!("diff_{stem}_global.svg"),
                            render_heatmap(&h.matrix, Normalization::Global { min, max }, &h.name),
                        )?;
                    }
                }
            }
        }
        Ok(written)
    }
}

fn diff_grid(m: &DiffMatrix) -> Grid {
    let mut header = vec!["module".to_string()];
    header.extend((1..=m.layer_count).map(|l| l.to_string()));
    Grid {
        header,
        rows: m
            .rows
            .iter()
            .zip(&m.values)
            .map(|(k, row)| {
                std::iter::once(k.to_string())
                    .chain(row.iter().map(|v| match v {
                        Some(v) => format!("{v:.3e}"),
                        None => MISSING.to_string(),
                    }))
                    .collect()
            })
            .collect(),
    }
}

/// File-name-safe version of a figure name.
pub fn file_stem(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if s.is_empty() {
        "unnamed".into()
    } else {
        s
    }
}
