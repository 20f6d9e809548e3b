//! Run configuration file: TOML with one table per module. Every key is
//! optional and command-line flags take precedence.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub matcher: MatcherConfig,
    #[serde(default)]
    pub diff: DiffConfig,
    #[serde(default)]
    pub plan: PlanConfig,
    #[serde(default)]
    pub report: ReportConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub path: Option<PathBuf>,
    pub languages: Option<Vec<String>>,
    pub reference: Option<String>,
    pub eval_split: Option<String>,
    /// `strict` or `quarantine`.
    pub policy: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatcherConfig {
    pub generations: Option<Vec<PathBuf>>,
    pub profiles: Option<PathBuf>,
    pub langid_threshold: Option<f64>,
    pub model: Option<String>,
    pub stage: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffConfig {
    pub scheme: Option<String>,
    pub workers: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub scheme: Option<String>,
    pub include_head: Option<bool>,
    pub multilingual: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub formats: Option<Vec<String>>,
    pub languages: Option<Vec<String>>,
    pub plm_stage: Option<String>,
    pub sft_stage: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        // Relative paths in the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.corpus.path.iter_mut().for_each(fix);
        cfg.matcher.profiles.iter_mut().for_each(fix);
        cfg.output.dir.iter_mut().for_each(fix);
        if let Some(g) = cfg.matcher.generations.as_mut() {
            g.iter_mut().for_each(fix);
        }
        Ok(cfg)
    }
}
