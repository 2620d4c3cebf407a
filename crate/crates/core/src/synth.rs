//! Synthetic labelled corpora with planted failure causes.
//!
//! Every failing log carries exactly one issue. Logs share a backbone of
//! common events, failing logs add their issue's signature events, and
//! noise inserts random shared events. Lines are written as ordinary text
//! with timestamps, addresses, numbers, paths and durations, so the
//! default abstraction rules have real work to do on the way back in.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{ManifestRow, Outcome, MANIFEST_HEADER};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    SpecError(String),
    #[error("output directory {0} is not empty")]
    OutputNotEmpty(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("reading spec {path}: {reason}")]
    SpecFile { path: PathBuf, reason: String },
}

/// Inclusive range of failing logs per issue. Deserializes from either a
/// single count or a `[min, max]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "CountOrRange", into = "[usize; 2]")]
pub struct LogCount {
    pub min: usize,
    pub max: usize,
}

impl LogCount {
    pub fn exactly(n: usize) -> Self {
        LogCount { min: n, max: n }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CountOrRange {
    One(usize),
    Range([usize; 2]),
}

impl From<CountOrRange> for LogCount {
    fn from(v: CountOrRange) -> Self {
        match v {
            CountOrRange::One(n) => LogCount::exactly(n),
            CountOrRange::Range([min, max]) => LogCount { min, max },
        }
    }
}

impl From<LogCount> for [usize; 2] {
    fn from(c: LogCount) -> Self {
        [c.min, c.max]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_issues: usize,
    pub logs_per_issue: LogCount,
    pub n_passing: usize,
    /// Shared templates; the first half (rounded up) form the backbone.
    pub vocab_size: usize,
    /// Chance of inserting one random shared event after each position.
    pub noise_rate: f64,
    /// Templates unique to each issue.
    pub signature_length: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_issues: 5,
            logs_per_issue: LogCount::exactly(20),
            n_passing: 30,
            vocab_size: 20,
            noise_rate: 0.0,
            signature_length: 4,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn from_json_file(path: &Path) -> Result<Self, SynthError> {
        let text = fs::read_to_string(path).map_err(|e| SynthError::SpecFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let spec: SynthSpec = serde_json::from_str(&text).map_err(|e| SynthError::SpecFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |msg: String| Err(SynthError::SpecError(msg));
        if self.n_issues == 0 {
            return fail("n_issues must be at least 1".into());
        }
        if self.logs_per_issue.min == 0 || self.logs_per_issue.min > self.logs_per_issue.max {
            return fail(format!(
                "logs_per_issue [{}, {}] must satisfy 1 ≤ min ≤ max",
                self.logs_per_issue.min, self.logs_per_issue.max
            ));
        }
        if self.n_issues * self.logs_per_issue.min < 2 {
            return fail("at least 2 failing logs are needed".into());
        }
        if self.vocab_size == 0 {
            return fail("vocab_size must be at least 1".into());
        }
        if self.signature_length == 0 {
            return fail("signature_length must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return fail(format!("noise_rate {} outside [0, 1]", self.noise_rate));
        }
        Ok(())
    }

    pub fn backbone_len(&self) -> usize {
        self.vocab_size.div_ceil(2)
    }
}

/// Where a template comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateKind {
    Shared(usize),
    Signature { issue: usize, slot: usize },
}

const SYLLABLES: [&str; 10] = ["ko", "lu", "mi", "nu", "po", "ru", "si", "tu", "vo", "zi"];

/// Letter-only code for an index. The letters avoid a–f so that no code
/// can look like a hex identifier.
fn code(mut index: usize) -> String {
    let mut parts = Vec::new();
    for _ in 0..2 {
        parts.push(SYLLABLES[index % 10]);
        index /= 10;
    }
    while index > 0 {
        parts.push(SYLLABLES[index % 10]);
        index /= 10;
    }
    parts.reverse();
    parts.concat()
}

/// Writes one log line for the template, filling its variable slots.
fn render(kind: TemplateKind, clock: &mut Clock, rng: &mut ChaCha8Rng) -> String {
    let ts = clock.tick(rng);
    match kind {
        TemplateKind::Signature { issue, slot } => format!(
            "{ts} ERROR fault-{} {} raised code {} at {}",
            code(issue),
            code(slot),
            rng.random_range(1..500),
            ip(rng)
        ),
        TemplateKind::Shared(i) => {
            let word = code(i);
            match i % 4 {
                0 => format!(
                    "{ts} INFO stage-{word} step {} finished in {}ms",
                    rng.random_range(1..100),
                    rng.random_range(1..5000)
                ),
                1 => format!(
                    "{ts} DEBUG stage-{word} contacted {} port {}",
                    ip(rng),
                    rng.random_range(1024..65535)
                ),
                2 => format!(
                    "{ts} INFO stage-{word} wrote /var/build/{}/out-{}.log",
                    rng.random_range(1..10_000),
                    rng.random_range(1..100)
                ),
                _ => format!(
                    "{ts} WARN stage-{word} retry {} of {}",
                    rng.random_range(1..4),
                    rng.random_range(4..9)
                ),
            }
        }
    }
}

fn ip(rng: &mut ChaCha8Rng) -> String {
    format!(
        "10.{}.{}.{}",
        rng.random_range(0..256),
        rng.random_range(0..256),
        rng.random_range(1..255)
    )
}

struct Clock {
    day: usize,
    seconds: usize,
}

impl Clock {
    fn tick(&mut self, rng: &mut ChaCha8Rng) -> String {
        self.seconds = (self.seconds + rng.random_range(1..30)) % 86_400;
        let (h, m, s) = (self.seconds / 3600, self.seconds / 60 % 60, self.seconds % 60);
        format!("2024-05-{:02}T{h:02}:{m:02}:{s:02}Z", self.day)
    }
}

/// One generated log, before it is written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthLog {
    pub log_id: String,
    pub outcome: Outcome,
    pub truth_label: Option<String>,
    pub templates: Vec<TemplateKind>,
    pub text: String,
}

/// Generates the corpus in memory, in manifest order.
pub fn generate_logs(spec: &SynthSpec) -> Result<Vec<SynthLog>, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let backbone: Vec<TemplateKind> = (0..spec.backbone_len()).map(TemplateKind::Shared).collect();

    // (issue, templates) per log; `None` marks a passing log.
    let mut plans: Vec<(Option<usize>, Vec<TemplateKind>)> = Vec::new();
    for issue in 0..spec.n_issues {
        let count = rng.random_range(spec.logs_per_issue.min..=spec.logs_per_issue.max);
        for _ in 0..count {
            let mut events = backbone.clone();
            events.extend((0..spec.signature_length).map(|slot| TemplateKind::Signature { issue, slot }));
            plans.push((Some(issue), with_noise(&events, spec, &mut rng)));
        }
    }
    for _ in 0..spec.n_passing {
        plans.push((None, with_noise(&backbone, spec, &mut rng)));
    }
    plans.shuffle(&mut rng);

    let width = plans.len().to_string().len().max(4);
    Ok(plans
        .into_iter()
        .enumerate()
        .map(|(i, (issue, templates))| {
            let mut clock = Clock {
                day: 1 + i % 28,
                seconds: rng.random_range(0..86_400),
            };
            let mut text = String::new();
            for &t in &templates {
                text.push_str(&render(t, &mut clock, &mut rng));
                text.push('\n');
            }
            SynthLog {
                log_id: format!("log-{:0width$}", i + 1),
                outcome: if issue.is_some() { Outcome::Fail } else { Outcome::Pass },
                truth_label: issue.map(|k| format!("issue-{}", k + 1)),
                templates,
                text,
            }
        })
        .collect())
}

fn with_noise(events: &[TemplateKind], spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<TemplateKind> {
    let mut out = Vec::with_capacity(events.len());
    for &e in events {
        out.push(e);
        if spec.noise_rate > 0.0 && rng.random_bool(spec.noise_rate) {
            out.push(TemplateKind::Shared(rng.random_range(0..spec.vocab_size)));
        }
    }
    out
}

/// Writes `logs/<log_id>.log` and `manifest.csv` under `out_dir`, which
/// must be absent or empty. Returns the manifest path.
pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<PathBuf, SynthError> {
    let logs = generate_logs(spec)?;
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    if out_dir.exists() {
        let mut entries = fs::read_dir(out_dir).map_err(io_err(out_dir))?;
        if entries.next().is_some() {
            return Err(SynthError::OutputNotEmpty(out_dir.to_path_buf()));
        }
    }
    let log_dir = out_dir.join("logs");
    fs::create_dir_all(&log_dir).map_err(io_err(&log_dir))?;

    let manifest_path = out_dir.join("manifest.csv");
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&manifest_path)
        .map_err(|e| SynthError::Io { path: manifest_path.clone(), source: e.into() })?;
    let csv_err = |e: csv::Error| SynthError::Io { path: manifest_path.clone(), source: e.into() };
    writer.write_record(MANIFEST_HEADER).map_err(csv_err)?;
    for log in &logs {
        let rel = PathBuf::from("logs").join(format!("{}.log", log.log_id));
        let abs = out_dir.join(&rel);
        fs::write(&abs, &log.text).map_err(io_err(&abs))?;
        let row = ManifestRow {
            log_id: log.log_id.clone(),
            path: rel,
            outcome: log.outcome,
            truth_label: log.truth_label.clone(),
        };
        writer
            .write_record([
                row.log_id.as_str(),
                &row.path.to_string_lossy(),
                &row.outcome.to_string(),
                row.truth_label.as_deref().unwrap_or(""),
            ])
            .map_err(csv_err)?;
    }
    writer.flush().map_err(io_err(&manifest_path))?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{encode_manifest, Abstractor, DelimiterConfig};
    use crate::vectorize::compute_contrast;
    use std::collections::{BTreeMap, BTreeSet};

    fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
        let mut out = BTreeMap::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in fs::read_dir(&d).unwrap() {
                let p = entry.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
                }
            }
        }
        out
    }

    #[test]
    fn codes_are_distinct_and_hex_free() {
        let codes: BTreeSet<String> = (0..1000).map(code).collect();
        assert_eq!(codes.len(), 1000);
        assert!(codes.iter().all(|c| !c.chars().any(|ch| ch.is_ascii_hexdigit())));
    }

    #[test]
    fn noiseless_issues_share_sequences() {
        let spec = SynthSpec {
            n_issues: 2,
            logs_per_issue: LogCount::exactly(2),
            n_passing: 3,
            ..SynthSpec::default()
        };
        let logs = generate_logs(&spec).unwrap();
        let fail: Vec<&SynthLog> = logs.iter().filter(|l| l.outcome == Outcome::Fail).collect();
        assert_eq!(fail.len(), 4);
        for a in &fail {
            for b in &fail {
                assert_eq!(a.templates == b.templates, a.truth_label == b.truth_label);
            }
        }
        assert_eq!(logs.iter().filter(|l| l.outcome == Outcome::Pass).count(), 3);
    }

    #[test]
    fn round_trip_through_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec { noise_rate: 0.2, seed: 7, ..SynthSpec::default() };
        let manifest = generate(&spec, dir.path()).unwrap();
        let ds = encode_manifest(&manifest, &Abstractor::with_default_rules(), DelimiterConfig::default()).unwrap();
        // Every template abstracts to its own event.
        let kinds = spec.vocab_size + spec.n_issues * spec.signature_length;
        assert!(ds.dictionary.len() <= kinds);
        let logs = generate_logs(&spec).unwrap();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (log, seq) in logs.iter().zip(&ds.sequences) {
            assert_eq!(log.log_id, seq.log_id);
            assert_eq!(log.templates.len(), seq.events.len());
            for (t, e) in log.templates.iter().zip(&seq.events) {
                let key = format!("{t:?}");
                assert_eq!(*seen.entry(key).or_insert(*e), *e);
            }
        }
        let ids: BTreeSet<usize> = seen.values().copied().collect();
        assert_eq!(ids.len(), seen.len());

        let contrast = compute_contrast(&ds).unwrap();
        for (t, e) in &seen {
            if t.starts_with("Signature") {
                assert!(contrast.contains(*e));
            }
        }
    }

    #[test]
    fn no_passing_logs_make_everything_contrast() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec { n_passing: 0, n_issues: 2, logs_per_issue: LogCount::exactly(2), ..SynthSpec::default() };
        let manifest = generate(&spec, dir.path()).unwrap();
        let ds = encode_manifest(&manifest, &Abstractor::with_default_rules(), DelimiterConfig::default()).unwrap();
        let contrast = compute_contrast(&ds).unwrap();
        assert_eq!(contrast.delta_s.len(), ds.dictionary.len());
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = SynthSpec { noise_rate: 0.3, logs_per_issue: LogCount { min: 3, max: 9 }, seed: 11, ..SynthSpec::default() };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate(&spec, a.path()).unwrap();
        generate(&spec, b.path()).unwrap();
        assert_eq!(tree(a.path()), tree(b.path()));
        let c = tempfile::tempdir().unwrap();
        generate(&SynthSpec { seed: 12, ..spec }, c.path()).unwrap();
        assert_ne!(tree(a.path()), tree(c.path()));
    }

    #[test]
    fn rejects_bad_specs_and_dirty_dirs() {
        for bad in [
            SynthSpec { n_issues: 0, ..SynthSpec::default() },
            SynthSpec { logs_per_issue: LogCount { min: 4, max: 2 }, ..SynthSpec::default() },
            SynthSpec { n_issues: 1, logs_per_issue: LogCount::exactly(1), ..SynthSpec::default() },
            SynthSpec { noise_rate: 1.5, ..SynthSpec::default() },
            SynthSpec { signature_length: 0, ..SynthSpec::default() },
            SynthSpec { vocab_size: 0, ..SynthSpec::default() },
        ] {
            assert!(matches!(generate_logs(&bad), Err(SynthError::SpecError(_))), "{bad:?}");
        }
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x"), "y").unwrap();
        assert!(matches!(generate(&SynthSpec::default(), dir.path()), Err(SynthError::OutputNotEmpty(_))));
    }

    #[test]
    fn spec_json_accepts_count_or_range() {
        let s: SynthSpec = serde_json::from_str(r#"{"n_issues": 3, "logs_per_issue": 7}"#).unwrap();
        assert_eq!(s.logs_per_issue, LogCount::exactly(7));
        let s: SynthSpec = serde_json::from_str(r#"{"logs_per_issue": [2, 5], "seed": 4}"#).unwrap();
        assert_eq!(s.logs_per_issue, LogCount { min: 2, max: 5 });
        assert_eq!(s.n_issues, 5);
        assert!(serde_json::from_str::<SynthSpec>(r#"{"bogus": 1}"#).is_err());
    }
}
