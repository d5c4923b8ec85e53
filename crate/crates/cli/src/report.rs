use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::{ExperimentConfig, Format};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

/// What a subcommand measured, checked, and wrote.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Report {
    pub command: String,
    pub metrics: Vec<(String, String)>,
    pub checks: Vec<Check>,
    #[serde(skip)]
    pub warnings: Vec<String>,
    pub artifacts: Vec<PathBuf>,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            ..Default::default()
        }
    }

    pub fn metric(&mut self, key: &str, value: impl ToString) {
        self.metrics.push((key.to_string(), value.to_string()));
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self, format: Format) -> String {
        let mut out = String::new();
        match format {
            Format::Kv => {
                for (k, v) in &self.metrics {
                    let _ = writeln!(out, "{k}={v}");
                }
                for c in &self.checks {
                    let _ = writeln!(out, "check.{}={}", c.name, if c.passed { "pass" } else { "fail" });
                }
                let _ = writeln!(out, "status={}", if self.passed() { "pass" } else { "fail" });
            }
            Format::Table => {
                let width = self
                    .metrics
                    .iter()
                    .map(|(k, _)| k.len())
                    .chain(self.checks.iter().map(|c| c.name.len()))
                    .max()
                    .unwrap_or(0);
                let _ = writeln!(out, "{}", self.command);
                for (k, v) in &self.metrics {
                    let _ = writeln!(out, "  {k:<width$}  {v}");
                }
                for c in &self.checks {
                    let flag = if c.passed { "PASS" } else { "FAIL" };
                    let _ = writeln!(out, "  {:<width$}  {flag}  {}", c.name, c.detail);
                }
            }
        }
        out
    }

    /// Writes `manifest.json` into `dir` and records it as an artifact.
    pub fn write_manifest(&mut self, dir: &Path, config: &ExperimentConfig) -> Result<()> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            tool: &'static str,
            version: &'static str,
            command: &'a str,
            config: &'a ExperimentConfig,
            seeds: Vec<u64>,
            artifacts: &'a [PathBuf],
            checks: &'a [Check],
            passed: bool,
        }
        let path = dir.join("manifest.json");
        self.artifacts.push(path.clone());
        let manifest = Manifest {
            tool: "prefdyn",
            version: env!("CARGO_PKG_VERSION"),
            command: &self.command,
            config,
            seeds: config.seeds.resolve(),
            artifacts: &self.artifacts,
            checks: &self.checks,
            passed: self.passed(),
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

pub(crate) fn create_file(path: &Path) -> Result<fs::File> {
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}
