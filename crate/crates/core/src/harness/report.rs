use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Experiment, ExperimentKind, LoadedConfig, SamplerKind, Tolerances};
use crate::error::{Error, Result};
use crate::probe::AssumptionReport;

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Comparison {
    AtMost,
    AtLeast,
}

/// JSON has no infinities or NaN; those are written as strings.
mod float {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub name: String,
    pub description: String,
    #[serde(with = "float")]
    pub statistic: f64,
    #[serde(with = "float")]
    pub threshold: f64,
    pub comparison: Comparison,
    pub passed: bool,
    pub sample_size: usize,
    pub config_hash: String,
    pub input_hash: String,
}

/// Pass/fail test on a statistic; `passed` follows from the comparison.
pub(crate) struct Check {
    pub name: String,
    pub description: String,
    pub statistic: f64,
    pub threshold: f64,
    pub comparison: Comparison,
    pub sample_size: usize,
    /// Overrides the comparison (strict bounds, externally decided checks).
    pub verdict: Option<bool>,
}

impl Check {
    pub fn at_most(name: &str, description: String, statistic: f64, threshold: f64, n: usize) -> Self {
        Self {
            name: name.into(),
            description,
            statistic,
            threshold,
            comparison: Comparison::AtMost,
            sample_size: n,
            verdict: None,
        }
    }

    pub fn at_least(name: &str, description: String, statistic: f64, threshold: f64, n: usize) -> Self {
        Self {
            comparison: Comparison::AtLeast,
            ..Self::at_most(name, description, statistic, threshold, n)
        }
    }

    pub fn passes(&self) -> bool {
        if let Some(v) = self.verdict {
            return v;
        }
        match self.comparison {
            Comparison::AtMost => self.statistic <= self.threshold,
            Comparison::AtLeast => self.statistic >= self.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub kind: ExperimentKind,
    pub sampler: SamplerKind,
    pub seed: u64,
    pub config_hash: String,
    pub input_hash: String,
    pub k_max: usize,
    pub checkpoints: Vec<usize>,
    pub ensemble_size: usize,
    pub tolerances: Tolerances,
    pub results: Vec<TestResult>,
    pub diagnostics: BTreeMap<String, f64>,
    pub caveats: Vec<String>,
    pub passed: bool,
}

/// A comma-separated table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(file: &str, header: &[&str]) -> Self {
        Self {
            file: file.into(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub summary: Summary,
    pub tables: Vec<Table>,
}

impl Report {
    pub(crate) fn new(
        loaded: &LoadedConfig,
        exp: &Experiment,
        checks: Vec<Check>,
        diagnostics: BTreeMap<String, f64>,
        caveats: Vec<String>,
        tables: Vec<Table>,
    ) -> Self {
        let config_hash = loaded.config.hash();
        let input_hash = loaded.input_hash();
        let results: Vec<TestResult> = checks
            .into_iter()
            .map(|c| TestResult {
                passed: c.passes(),
                name: c.name,
                description: c.description,
                statistic: c.statistic,
                threshold: c.threshold,
                comparison: c.comparison,
                sample_size: c.sample_size,
                config_hash: config_hash.clone(),
                input_hash: input_hash.clone(),
            })
            .collect();
        let c = &exp.config;
        Self {
            summary: Summary {
                name: c.name.clone(),
                kind: c.kind,
                sampler: c.sampler,
                seed: c.seed,
                config_hash,
                input_hash,
                k_max: c.k_max,
                checkpoints: exp.checkpoints.clone(),
                ensemble_size: c.ensemble_size,
                tolerances: c.tolerances,
                passed: results.iter().all(|r| r.passed),
                results,
                diagnostics,
                caveats,
            },
            tables,
        }
    }

    pub fn passed(&self) -> bool {
        self.summary.passed
    }

    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        s.push('\n');
        s
    }

    /// Writes `summary.json` and every table into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(SUMMARY_FILE), self.summary_json())?;
        for t in &self.tables {
            std::fs::write(dir.join(&t.file), t.to_csv())?;
        }
        Ok(())
    }

    pub fn read_summary(dir: &Path) -> Result<Summary> {
        let path = dir.join(SUMMARY_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Persistence(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

impl Summary {
    /// Human-readable rendering, one line per test.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} ({:?}, {:?} sampler, seed {}, M = {}, k_max = {})",
            self.name, self.kind, self.sampler, self.seed, self.ensemble_size, self.k_max
        );
        let _ = writeln!(s, "config {}", self.config_hash);
        for r in &self.results {
            let op = match r.comparison {
                Comparison::AtMost => "<=",
                Comparison::AtLeast => ">=",
            };
            let _ = writeln!(
                s,
                "[{}] {}: {:.6e} {op} {:.6e} (n = {}) {}",
                if r.passed { "PASS" } else { "FAIL" },
                r.name,
                r.statistic,
                r.threshold,
                r.sample_size,
                r.description
            );
        }
        for (k, v) in &self.diagnostics {
            let _ = writeln!(s, "  {k} = {v}");
        }
        for c in &self.caveats {
            let _ = writeln!(s, "  note: {c}");
        }
        let _ = writeln!(s, "{}", if self.passed { "PASSED" } else { "FAILED" });
        s
    }
}

pub(crate) fn validation_report(loaded: &LoadedConfig, exp: &Experiment, report: &AssumptionReport) -> Report {
    let mut table = Table::new(
        "assumption_checks.csv",
        &["name", "assumption", "passed", "worst", "threshold", "location"],
    );
    let mut checks = Vec::new();
    for c in &report.checks {
        table.push(vec![
            c.name.clone(),
            c.assumption.replace(',', ";"),
            c.passed.to_string(),
            c.worst.to_string(),
            c.threshold.to_string(),
            c.location.clone().unwrap_or_default().replace(',', ";"),
        ]);
        let description = match &c.location {
            Some(loc) => format!("{} (worst at {loc})", c.assumption),
            None => c.assumption.clone(),
        };
        let mut check = match c.name.as_str() {
            "identifiability" | "positive-information" | "positivity" => {
                Check::at_least(&c.name, description, c.worst, c.threshold, exp.model.len())
            }
            _ => Check::at_most(&c.name, description, c.worst, c.threshold, exp.model.len()),
        };
        check.verdict = Some(c.passed);
        checks.push(check);
    }
    Report::new(loaded, exp, checks, BTreeMap::new(), report.caveats.clone(), vec![table])
}
