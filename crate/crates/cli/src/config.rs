//! Run settings resolved from, in decreasing priority: command-line flags,
//! `FULL_*` environment variables (both handled by clap), a TOML config
//! file, built-in defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Deserialize;

use full_core::domain::{FollowUpSet, Level, ScoreMode};

pub const REFERENCE_ENDPOINT: &str = "reference";
pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    JsonLines,
    Csv,
    MarkdownTable,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json-lines" | "jsonl" => Ok(Self::JsonLines),
            "csv" => Ok(Self::Csv),
            "markdown-table" | "markdown" => Ok(Self::MarkdownTable),
            other => Err(format!("unknown format {other:?} (json-lines, csv, markdown-table)")),
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::JsonLines => "json-lines",
            Self::Csv => "csv",
            Self::MarkdownTable => "markdown-table",
        })
    }
}

pub fn parse_mode(s: &str) -> Result<ScoreMode, String> {
    match s {
        "full" | "conditional" => Ok(ScoreMode::Conditional),
        "fed-joint" | "joint" => Ok(ScoreMode::Joint),
        other => Err(format!("unknown mode {other:?} (full, fed-joint)")),
    }
}

/// Keys accepted in the config file; all optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub endpoint: Option<String>,
    pub followups: Option<String>,
    pub mode: Option<String>,
    pub level: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub parallelism: Option<usize>,
    pub format: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Flags shared by the commands that talk to a backend.
#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    /// Model server URL, or "reference" for the built-in trigram scorer.
    #[arg(long, env = "FULL_ENDPOINT")]
    pub endpoint: Option<String>,
    /// Follow-up set: "default", "catalog" or a JSON file.
    #[arg(long, env = "FULL_FOLLOWUPS")]
    pub followups: Option<String>,
    /// full (conditional) or fed-joint.
    #[arg(long, env = "FULL_MODE")]
    pub mode: Option<String>,
    /// Only score examples at this level (turn or dialog).
    #[arg(long, env = "FULL_LEVEL")]
    pub level: Option<String>,
    /// Directory holding the persistent score cache.
    #[arg(long, env = "FULL_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,
    /// Ignore any configured cache directory.
    #[arg(long)]
    pub no_cache: bool,
    /// Maximum concurrent scoring requests.
    #[arg(long, env = "FULL_PARALLELISM")]
    pub parallelism: Option<usize>,
    /// TOML config file.
    #[arg(long, env = "FULL_CONFIG")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub endpoint: String,
    pub followups: String,
    pub mode: ScoreMode,
    pub level: Option<Level>,
    pub cache_dir: Option<PathBuf>,
    pub parallelism: usize,
    pub format: OutputFormat,
}

impl RunConfig {
    /// `format` is the command's own flag value, if any.
    pub fn resolve(flags: &RunFlags, format: Option<&str>, default_format: OutputFormat) -> Result<Self> {
        let file = match &flags.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let pick = |flag: &Option<String>, file: &Option<String>| flag.clone().or_else(|| file.clone());

        let mode = match pick(&flags.mode, &file.mode) {
            Some(m) => parse_mode(&m).map_err(anyhow::Error::msg)?,
            None => ScoreMode::Conditional,
        };
        let level =
            pick(&flags.level, &file.level).map(|l| l.parse::<Level>()).transpose().map_err(anyhow::Error::msg)?;
        let parallelism = flags.parallelism.or(file.parallelism).unwrap_or(DEFAULT_PARALLELISM);
        if parallelism == 0 {
            bail!("parallelism must be at least 1");
        }
        let format = match format.map(str::to_owned).or(file.format) {
            Some(f) => f.parse().map_err(anyhow::Error::msg)?,
            None => default_format,
        };
        let cache_dir = if flags.no_cache { None } else { flags.cache_dir.clone().or(file.cache_dir) };
        Ok(Self {
            endpoint: pick(&flags.endpoint, &file.endpoint).unwrap_or_else(|| REFERENCE_ENDPOINT.to_owned()),
            followups: pick(&flags.followups, &file.followups).unwrap_or_else(|| "default".to_owned()),
            mode,
            level,
            cache_dir,
            parallelism,
            format,
        })
    }

    pub fn followup_set(&self) -> Result<FollowUpSet> {
        load_followup_set(&self.followups)
    }
}

pub fn load_followup_set(source: &str) -> Result<FollowUpSet> {
    match source {
        "default" => Ok(full_core::metric::default_followup_set()),
        "catalog" => Ok(full_core::data::load_followup_catalog()),
        path => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading follow-up set {path}"))?;
            serde_json::from_str(&text).with_context(|| format!("parsing follow-up set {path}"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beats_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("full.toml");
        std::fs::write(&path, "endpoint = \"http://file\"\nmode = \"fed-joint\"\nparallelism = 7\nformat = \"csv\"\n")
            .unwrap();
        let flags = RunFlags { endpoint: Some("http://flag".into()), config: Some(path), ..RunFlags::default() };
        let c = RunConfig::resolve(&flags, None, OutputFormat::JsonLines).unwrap();
        assert_eq!(c.endpoint, "http://flag");
        assert_eq!(c.mode, ScoreMode::Joint);
        assert_eq!(c.parallelism, 7);
        assert_eq!(c.format, OutputFormat::Csv);
        assert_eq!(c.followups, "default");

        let c = RunConfig::resolve(&RunFlags::default(), Some("markdown-table"), OutputFormat::JsonLines).unwrap();
        assert_eq!(c.endpoint, REFERENCE_ENDPOINT);
        assert_eq!(c.parallelism, DEFAULT_PARALLELISM);
        assert_eq!(c.format, OutputFormat::MarkdownTable);
    }

    #[test]
    fn rejects_bad_values() {
        let flags = RunFlags { parallelism: Some(0), ..RunFlags::default() };
        assert!(RunConfig::resolve(&flags, None, OutputFormat::Csv).is_err());
        let flags = RunFlags { mode: Some("fancy".into()), ..RunFlags::default() };
        assert!(RunConfig::resolve(&flags, None, OutputFormat::Csv).is_err());
        assert!(RunConfig::resolve(&RunFlags::default(), Some("xml"), OutputFormat::Csv).is_err());
    }
}
