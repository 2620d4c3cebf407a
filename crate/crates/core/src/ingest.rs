//! Log loading, token abstraction and event encoding.
//!
//! A raw log is split into event reports, each report has its
//! runtime-specific tokens (timestamps, addresses, ids, numbers) replaced by
//! placeholders, and every distinct resulting template is given a dense
//! integer id. Logs then become sequences of those ids.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense event identifier.
pub type EventId = usize;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid abstraction rule `{name}`: {reason}")]
    InvalidRule { name: String, reason: String },
    #[error("log `{0}` has no non-blank content")]
    EmptyLog(String),
    #[error("manifest row {row}: file {path:?} cannot be read: {reason}")]
    MissingFile {
        row: usize,
        path: PathBuf,
        reason: String,
    },
    #[error("manifest row {row}: {reason}")]
    MalformedManifestRow { row: usize, reason: String },
    #[error("duplicate log_id `{log_id}` at manifest row {row}")]
    DuplicateLogId { row: usize, log_id: String },
    #[error("manifest {path:?}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("rules file {path:?}: {reason}")]
    RulesFile { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractionRule {
    pub name: String,
    pub pattern: String,
    pub replacement: String,
}

impl AbstractionRule {
    pub fn new(name: &str, pattern: &str, replacement: &str) -> Self {
        AbstractionRule {
            name: name.to_string(),
            pattern: pattern.to_string(),
            replacement: replacement.to_string(),
        }
    }
}

/// Built-in rules, in application order.
///
/// Every pattern needs a digit or a `/` to match, and every placeholder is
/// `<UPPERCASE>`, so no placeholder can be re-matched by a later pass.
pub fn default_rules() -> Vec<AbstractionRule> {
    vec![
        AbstractionRule::new(
            "iso_timestamp",
            r"\b\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}:\d{2}(?:[.,]\d+)?(?:Z|[+-]\d{2}:?\d{2})?",
            "<TIMESTAMP>",
        ),
        AbstractionRule::new(
            "syslog_timestamp",
            r"\b(?:Jan|Feb|Mar|Apr|May|Jun|Jul|Aug|Sep|Oct|Nov|Dec) +\d{1,2} \d{2}:\d{2}:\d{2}\b",
            "<TIMESTAMP>",
        ),
        AbstractionRule::new(
            "time_of_day",
            r"\b\d{2}:\d{2}:\d{2}(?:[.,]\d+)?\b",
            "<TIMESTAMP>",
        ),
        AbstractionRule::new("ipv4", r"\b\d{1,3}(?:\.\d{1,3}){3}\b", "<IP>"),
        AbstractionRule::new(
            "uuid",
            r"\b[0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{12}\b",
            "<HEX>",
        ),
        AbstractionRule::new("hex_literal", r"\b0[xX][0-9a-fA-F]+\b", "<HEX>"),
        AbstractionRule::new("hex_id", r"\b[0-9a-f]{8,}\b", "<HEX>"),
        AbstractionRule::new("file_path", r"(?:[A-Za-z]:)?(?:/[\w.\-]+){2,}/?", "<PATH>"),
        AbstractionRule::new(
            "duration",
            r"\b\d+(?:\.\d+)?(?:ns|us|ms|s|min|h)\b",
            "<DURATION>",
        ),
        AbstractionRule::new("number", r"\b\d+(?:\.\d+)?\b", "<NUM>"),
    ]
}

/// An ordered, compiled set of abstraction rules.
#[derive(Debug, Clone)]
pub struct Abstractor {
    rules: Vec<(AbstractionRule, Regex)>,
}

impl Abstractor {
    pub fn new(rules: Vec<AbstractionRule>) -> Result<Self, IngestError> {
        let mut compiled = Vec::with_capacity(rules.len());
        for rule in rules {
            let re = Regex::new(&rule.pattern).map_err(|e| IngestError::InvalidRule {
                name: rule.name.clone(),
                reason: e.to_string(),
            })?;
            compiled.push((rule, re));
        }
        // A placeholder that some rule can match would break idempotence.
        for (rule, _) in &compiled {
            for (other, re) in &compiled {
                if re.is_match(&rule.replacement) {
                    return Err(IngestError::InvalidRule {
                        name: rule.name.clone(),
                        reason: format!(
                            "replacement {:?} is matched by rule `{}`",
                            rule.replacement, other.name
                        ),
                    });
                }
            }
        }
        Ok(Abstractor { rules: compiled })
    }

    pub fn with_default_rules() -> Self {
        Self::new(default_rules()).expect("built-in rules are valid")
    }

    /// Loads a JSON array of `{name, pattern, replacement}` objects.
    pub fn from_json_file(path: &Path) -> Result<Self, IngestError> {
        let text = fs::read_to_string(path).map_err(|e| IngestError::RulesFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let rules: Vec<AbstractionRule> =
            serde_json::from_str(&text).map_err(|e| IngestError::RulesFile {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
        Self::new(rules)
    }

    pub fn rules(&self) -> impl Iterator<Item = &AbstractionRule> {
        self.rules.iter().map(|(r, _)| r)
    }

    pub fn abstract_line(&self, line: &str) -> String {
        let mut out = line.to_string();
        for (rule, re) in &self.rules {
            if re.is_match(&out) {
                out = re
                    .replace_all(&out, regex::NoExpand(&rule.replacement))
                    .into_owned();
            }
        }
        out
    }
}

impl Default for Abstractor {
    fn default() -> Self {
        Self::with_default_rules()
    }
}

/// How a log's text is split into event reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelimiterConfig {
    /// Lines starting with a space or tab extend the previous report.
    pub indented_continuation: bool,
}

/// Splits one log into event reports. Blank lines are skipped.
pub fn delineate(text: &str, config: DelimiterConfig) -> Result<Vec<String>, IngestError> {
    let mut reports: Vec<String> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let continues = config.indented_continuation
            && line.starts_with([' ', '\t'])
            && !reports.is_empty();
        if continues {
            let last = reports.last_mut().expect("checked non-empty");
            last.push('\n');
            last.push_str(line);
        } else {
            reports.push(line.to_string());
        }
    }
    if reports.is_empty() {
        return Err(IngestError::EmptyLog(String::new()));
    }
    Ok(reports)
}

/// Bidirectional template ↔ id map, ids assigned in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct EventDictionary {
    templates: Vec<String>,
    index: HashMap<String, EventId>,
}

impl From<Vec<String>> for EventDictionary {
    fn from(templates: Vec<String>) -> Self {
        let mut d = EventDictionary::new();
        for t in &templates {
            d.intern(t);
        }
        d
    }
}

impl From<EventDictionary> for Vec<String> {
    fn from(d: EventDictionary) -> Self {
        d.templates
    }
}

impl EventDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, template: &str) -> EventId {
        if let Some(&id) = self.index.get(template) {
            return id;
        }
        let id = self.templates.len();
        self.templates.push(template.to_string());
        self.index.insert(template.to_string(), id);
        id
    }

    pub fn id(&self, template: &str) -> Option<EventId> {
        self.index.get(template).copied()
    }

    pub fn template(&self, id: EventId) -> Option<&str> {
        self.templates.get(id).map(String::as_str)
    }

    pub fn templates(&self) -> &[String] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Fail,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Pass => "pass",
            Outcome::Fail => "fail",
        })
    }
}

impl std::str::FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "pass" => Ok(Outcome::Pass),
            "fail" => Ok(Outcome::Fail),
            other => Err(format!("outcome must be `pass` or `fail`, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogSequence {
    pub log_id: String,
    pub events: Vec<EventId>,
    pub outcome: Outcome,
    pub truth_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub sequences: Vec<LogSequence>,
    pub dictionary: EventDictionary,
}

impl Dataset {
    pub fn failing(&self) -> impl Iterator<Item = &LogSequence> {
        self.sequences.iter().filter(|s| s.outcome == Outcome::Fail)
    }

    pub fn passing(&self) -> impl Iterator<Item = &LogSequence> {
        self.sequences.iter().filter(|s| s.outcome == Outcome::Pass)
    }

    pub fn n_failing(&self) -> usize {
        self.failing().count()
    }
}

/// One row of the dataset manifest CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub log_id: String,
    pub path: PathBuf,
    pub outcome: Outcome,
    pub truth_label: Option<String>,
}

pub const MANIFEST_HEADER: [&str; 4] = ["log_id", "path", "outcome", "truth_label"];

/// Parses a manifest. Row numbers in errors are 1-based data rows.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, IngestError> {
    let manifest_err = |reason: String| IngestError::Manifest {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| manifest_err(e.to_string()))?;
    let header = reader.headers().map_err(|e| manifest_err(e.to_string()))?;
    let header: Vec<&str> = header.iter().map(str::trim).collect();
    if header != MANIFEST_HEADER {
        return Err(manifest_err(format!(
            "expected header {:?}, found {:?}",
            MANIFEST_HEADER.join(","),
            header.join(",")
        )));
    }

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| IngestError::MalformedManifestRow {
            row,
            reason: e.to_string(),
        })?;
        if record.len() != 4 {
            return Err(IngestError::MalformedManifestRow {
                row,
                reason: format!("expected 4 fields, found {}", record.len()),
            });
        }
        let log_id = record[0].trim().to_string();
        if log_id.is_empty() {
            return Err(IngestError::MalformedManifestRow {
                row,
                reason: "empty log_id".into(),
            });
        }
        let file = record[1].trim();
        if file.is_empty() {
            return Err(IngestError::MalformedManifestRow {
                row,
                reason: "empty path".into(),
            });
        }
        let outcome = record[2]
            .parse::<Outcome>()
            .map_err(|reason| IngestError::MalformedManifestRow { row, reason })?;
        let label = record[3].trim();
        if !seen.insert(log_id.clone()) {
            return Err(IngestError::DuplicateLogId { row, log_id });
        }
        rows.push(ManifestRow {
            log_id,
            path: PathBuf::from(file),
            outcome,
            truth_label: (!label.is_empty()).then(|| label.to_string()),
        });
    }
    Ok(rows)
}

/// Encodes the logs named by a manifest file. Relative paths resolve
/// against the manifest's directory; the dataset is named after it.
pub fn encode_manifest(
    manifest: &Path,
    abstractor: &Abstractor,
    delimiters: DelimiterConfig,
) -> Result<Dataset, IngestError> {
    let rows = read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let name = dataset_name(manifest);
    encode(&name, &rows, base, abstractor, delimiters)
}

fn dataset_name(manifest: &Path) -> String {
    manifest
        .canonicalize()
        .ok()
        .and_then(|p| p.parent().and_then(|d| d.file_name()).map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "dataset".to_string())
}

/// Reads and abstracts every log in parallel, then assigns event ids
/// serially in manifest order so numbering is deterministic.
pub fn encode(
    name: &str,
    rows: &[ManifestRow],
    base_dir: &Path,
    abstractor: &Abstractor,
    delimiters: DelimiterConfig,
) -> Result<Dataset, IngestError> {
    let mut seen = HashSet::new();
    for (i, row) in rows.iter().enumerate() {
        if !seen.insert(row.log_id.as_str()) {
            return Err(IngestError::DuplicateLogId {
                row: i + 1,
                log_id: row.log_id.clone(),
            });
        }
    }

    let abstracted: Vec<Vec<String>> = rows
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            let path = if row.path.is_absolute() {
                row.path.clone()
            } else {
                base_dir.join(&row.path)
            };
            let text = fs::read_to_string(&path).map_err(|e| IngestError::MissingFile {
                row: i + 1,
                path: path.clone(),
                reason: e.to_string(),
            })?;
            let reports = delineate(&text, delimiters).map_err(|e| match e {
                IngestError::EmptyLog(_) => IngestError::EmptyLog(row.log_id.clone()),
                other => other,
            })?;
            Ok(reports.iter().map(|r| abstractor.abstract_line(r)).collect())
        })
        .collect::<Result<_, IngestError>>()?;

    let mut dictionary = EventDictionary::new();
    let sequences = rows
        .iter()
        .zip(abstracted)
        .map(|(row, templates)| LogSequence {
            log_id: row.log_id.clone(),
            events: templates.iter().map(|t| dictionary.intern(t)).collect(),
            outcome: row.outcome,
            truth_label: row.truth_label.clone(),
        })
        .collect();

    Ok(Dataset {
        name: name.to_string(),
        sequences,
        dictionary,
    })
}
