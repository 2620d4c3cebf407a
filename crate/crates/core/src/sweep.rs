//! Full γ × θ × configuration sweeps with an append-only, resumable CSV.
//!
//! Next to `<out>.csv` sits `<out>.csv.fingerprint`, a JSON file holding
//! the grid and a SHA-256 over grid, settings and dataset identities. A
//! rerun with the same fingerprint skips every record already present.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cluster::{cut, hac, Criterion};
use crate::dimred::{ReductionConfig, ReductionMethod};
use crate::ingest::Dataset;
use crate::metrics::QualityScores;
use crate::pipeline::{distance_stage, reduce_stage, truth_labels, PipelineError};
use crate::vectorize::{compute_contrast, vectorize_lenient, WeightingMode};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("no datasets given")]
    NoDatasets,
    #[error("dataset name `{0}` appears more than once")]
    DuplicateDataset(String),
    #[error("dataset `{0}` has failing logs without a truth label")]
    MissingTruth(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("{path:?} was written for a different grid or dataset set; use a new output path")]
    FingerprintMismatch { path: PathBuf },
    #[error("{path:?} exists without its fingerprint file {sidecar:?}")]
    MissingFingerprint { path: PathBuf, sidecar: PathBuf },
    #[error("incomplete grid: {found} of {expected} records present (first missing: {first_missing})")]
    IncompleteGrid {
        expected: usize,
        found: usize,
        first_missing: String,
    },
    #[error("duplicate record {0}")]
    DuplicateRecord(String),
    #[error("dataset `{dataset}`, {method}/{criterion}, gamma {gamma}: {source}")]
    Pipeline {
        dataset: String,
        method: ReductionMethod,
        criterion: Criterion,
        gamma: f64,
        source: PipelineError,
    },
    #[error("{path:?}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path:?}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path:?}: {reason}")]
    Sidecar { path: PathBuf, reason: String },
}

/// One (reduction, linkage) configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Treatment {
    pub method: ReductionMethod,
    pub criterion: Criterion,
}

impl Treatment {
    pub const BASELINE: Treatment = Treatment {
        method: ReductionMethod::None,
        criterion: Criterion::Complete,
    };

    /// All 16 configurations, reduction-major.
    pub fn all() -> Vec<Treatment> {
        ReductionMethod::ALL
            .iter()
            .flat_map(|&method| Criterion::ALL.iter().map(move |&criterion| Treatment { method, criterion }))
            .collect()
    }
}

impl fmt::Display for Treatment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}", self.method, self.criterion)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub gammas: Vec<f64>,
    pub thetas: Vec<f64>,
    pub treatments: Vec<Treatment>,
    pub target_evar: f64,
    pub weighting_mode: WeightingMode,
    pub seed: u64,
    pub nmf_max_iters: usize,
    pub nmf_tolerance: f64,
}

impl Default for GridSpec {
    /// γ ∈ {0.00, 0.05, …, 1.00}, θ ∈ {0.10, 0.15, …, 0.90}, all 16
    /// configurations.
    fn default() -> Self {
        let r = ReductionConfig::default();
        GridSpec {
            gammas: (0..=20).map(|i| i as f64 / 20.0).collect(),
            thetas: (2..=18).map(|i| i as f64 / 20.0).collect(),
            treatments: Treatment::all(),
            target_evar: r.target_evar,
            weighting_mode: WeightingMode::Counts,
            seed: r.seed,
            nmf_max_iters: r.nmf_max_iters,
            nmf_tolerance: r.nmf_tolerance,
        }
    }
}

impl GridSpec {
    pub fn baseline_only() -> Self {
        GridSpec {
            treatments: vec![Treatment::BASELINE],
            ..GridSpec::default()
        }
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        let bad = |m: String| Err(SweepError::InvalidGrid(m));
        if self.gammas.is_empty() || self.thetas.is_empty() || self.treatments.is_empty() {
            return bad("gammas, thetas and treatments must be non-empty".into());
        }
        if let Some(g) = self.gammas.iter().find(|g| !(0.0..=1.0).contains(*g)) {
            return bad(format!("gamma {g} outside [0, 1]"));
        }
        if let Some(t) = self.thetas.iter().find(|t| !(**t > 0.0)) {
            return bad(format!("theta {t} must be > 0"));
        }
        if !(self.target_evar > 0.0 && self.target_evar < 1.0) {
            return bad(format!("target_evar {} outside (0, 1)", self.target_evar));
        }
        let distinct = |v: &[f64]| v.iter().map(|x| param_key(*x)).collect::<BTreeSet<_>>().len() == v.len();
        if !distinct(&self.gammas) || !distinct(&self.thetas) {
            return bad("repeated gamma or theta value".into());
        }
        if self.treatments.iter().collect::<BTreeSet<_>>().len() != self.treatments.len() {
            return bad("repeated treatment".into());
        }
        Ok(())
    }

    pub fn cells_per_dataset(&self) -> usize {
        self.gammas.len() * self.thetas.len() * self.treatments.len()
    }

    fn reduction(&self, method: ReductionMethod) -> ReductionConfig {
        ReductionConfig {
            method,
            target_evar: self.target_evar,
            nmf_max_iters: self.nmf_max_iters,
            nmf_tolerance: self.nmf_tolerance,
            seed: self.seed,
        }
    }
}

/// Canonical text for a grid parameter: two decimals when that is exact,
/// the shortest round-trip form otherwise.
pub fn param_key(x: f64) -> String {
    let two = format!("{x:.2}");
    if two.parse::<f64>() == Ok(x) {
        two
    } else {
        format!("{x}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub dataset: String,
    pub method: ReductionMethod,
    pub criterion: Criterion,
    pub gamma: f64,
    pub theta: f64,
    pub k: usize,
    pub achieved_evar: f64,
    pub ami: f64,
    pub nmi: f64,
    pub homogeneity: f64,
    pub completeness: f64,
    pub er: f64,
    pub ier: f64,
    pub n_clusters: usize,
    pub runtime_ms: f64,
    pub seed: u64,
}

pub const SWEEP_HEADER: [&str; 16] = [
    "dataset",
    "method",
    "criterion",
    "gamma",
    "theta",
    "k",
    "achieved_evar",
    "ami",
    "nmi",
    "homogeneity",
    "completeness",
    "er",
    "ier",
    "n_clusters",
    "runtime_ms",
    "seed",
];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordKey {
    pub dataset: String,
    pub treatment: Treatment,
    pub gamma: String,
    pub theta: String,
}

impl fmt::Display for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, gamma={}, theta={})", self.dataset, self.treatment, self.gamma, self.theta)
    }
}

impl SweepRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            dataset: self.dataset.clone(),
            treatment: Treatment { method: self.method, criterion: self.criterion },
            gamma: param_key(self.gamma),
            theta: param_key(self.theta),
        }
    }

    pub fn treatment(&self) -> Treatment {
        Treatment { method: self.method, criterion: self.criterion }
    }
}

/// Contents of the `.fingerprint` sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub fingerprint: String,
    pub datasets: Vec<String>,
    pub grid: GridSpec,
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".fingerprint");
    PathBuf::from(s)
}

pub fn read_sidecar(out: &Path) -> Result<SweepManifest, SweepError> {
    let path = sidecar_path(out);
    let text = fs::read_to_string(&path).map_err(|source| SweepError::Io { path: path.clone(), source })?;
    serde_json::from_str(&text).map_err(|e| SweepError::Sidecar { path, reason: e.to_string() })
}

pub fn fingerprint(datasets: &[Dataset], grid: &GridSpec) -> String {
    #[derive(Serialize)]
    struct Identity<'a> {
        name: &'a str,
        n_logs: usize,
        n_failing: usize,
        n_events: usize,
    }
    let ids: Vec<Identity> = datasets
        .iter()
        .map(|d| Identity {
            name: &d.name,
            n_logs: d.sequences.len(),
            n_failing: d.n_failing(),
            n_events: d.dictionary.len(),
        })
        .collect();
    let payload = serde_json::to_vec(&(grid, ids)).expect("plain data serializes");
    hex::encode(Sha256::digest(&payload))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SweepOptions {
    /// Worker threads; `None` uses rayon's default.
    pub jobs: Option<usize>,
    /// Stop after this many (dataset, method, criterion, γ) units. Only
    /// useful for exercising resume.
    pub max_units: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepSummary {
    pub expected: usize,
    pub skipped: usize,
    pub written: usize,
}

/// Drops a trailing partial line (an interrupted write) so appends start
/// on a fresh line.
fn repair_tail(path: &Path) -> Result<(), SweepError> {
    let io_err = |source| SweepError::Io { path: path.to_path_buf(), source };
    let bytes = fs::read(path).map_err(io_err)?;
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let file = OpenOptions::new().write(true).open(path).map_err(io_err)?;
    file.set_len(keep as u64).map_err(io_err)
}

/// Reads a sweep CSV, ignoring a trailing partial line.
pub fn load_records(path: &Path) -> Result<Vec<SweepRecord>, SweepError> {
    let bytes = fs::read(path).map_err(|source| SweepError::Io { path: path.to_path_buf(), source })?;
    let end = if bytes.ends_with(b"\n") || bytes.is_empty() {
        bytes.len()
    } else {
        bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1)
    };
    let mut reader = csv::Reader::from_reader(&bytes[..end]);
    let headers = reader.headers().map_err(|source| SweepError::Csv { path: path.to_path_buf(), source })?;
    if headers.iter().ne(SWEEP_HEADER.iter().copied()) && end > 0 {
        return Err(SweepError::Sidecar {
            path: path.to_path_buf(),
            reason: format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>()),
        });
    }
    reader
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|source| SweepError::Csv { path: path.to_path_buf(), source })
}

/// Every expected key, in grid order.
pub fn expected_keys(datasets: &[String], grid: &GridSpec) -> Vec<RecordKey> {
    let mut keys = Vec::with_capacity(datasets.len() * grid.cells_per_dataset());
    for d in datasets {
        for &t in &grid.treatments {
            for &g in &grid.gammas {
                for &th in &grid.thetas {
                    keys.push(RecordKey {
                        dataset: d.clone(),
                        treatment: t,
                        gamma: param_key(g),
                        theta: param_key(th),
                    });
                }
            }
        }
    }
    keys
}

/// Checks that `records` hold exactly one record per grid cell.
pub fn check_complete(records: &[SweepRecord], datasets: &[String], grid: &GridSpec) -> Result<(), SweepError> {
    let mut present = BTreeSet::new();
    for r in records {
        let key = r.key();
        if !present.insert(key.clone()) {
            return Err(SweepError::DuplicateRecord(key.to_string()));
        }
    }
    let expected = expected_keys(datasets, grid);
    if let Some(missing) = expected.iter().find(|k| !present.contains(*k)) {
        let found = expected.iter().filter(|k| present.contains(*k)).count();
        return Err(SweepError::IncompleteGrid {
            expected: expected.len(),
            found,
            first_missing: missing.to_string(),
        });
    }
    Ok(())
}

struct Unit<'a> {
    dataset: &'a Dataset,
    truth: &'a [String],
    method: ReductionMethod,
    gamma: f64,
    criteria: Vec<(Criterion, Vec<f64>)>,
}

/// Runs every missing grid cell for `datasets`, appending to `out`.
pub fn sweep(
    datasets: &[Dataset],
    grid: &GridSpec,
    out: &Path,
    options: SweepOptions,
) -> Result<SweepSummary, SweepError> {
    if datasets.is_empty() {
        return Err(SweepError::NoDatasets);
    }
    grid.validate()?;
    let mut names = BTreeSet::new();
    let mut truths = Vec::with_capacity(datasets.len());
    for d in datasets {
        if !names.insert(d.name.as_str()) {
            return Err(SweepError::DuplicateDataset(d.name.clone()));
        }
        truths.push(truth_labels(d).ok_or_else(|| SweepError::MissingTruth(d.name.clone()))?);
    }
    let names: Vec<String> = datasets.iter().map(|d| d.name.clone()).collect();
    let print = fingerprint(datasets, grid);
    let sidecar = sidecar_path(out);
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SweepError::Io { path, source }
    };

    let mut done = BTreeSet::new();
    if out.exists() {
        if !sidecar.exists() {
            return Err(SweepError::MissingFingerprint { path: out.to_path_buf(), sidecar });
        }
        if read_sidecar(out)?.fingerprint != print {
            return Err(SweepError::FingerprintMismatch { path: out.to_path_buf() });
        }
        repair_tail(out)?;
        done = load_records(out)?.iter().map(SweepRecord::key).collect();
    } else {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let manifest = SweepManifest {
            fingerprint: print,
            datasets: names.clone(),
            grid: grid.clone(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("plain data serializes");
        fs::write(&sidecar, json + "\n").map_err(io_err(&sidecar))?;
    }
    let needs_header = fs::metadata(out).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(out).map_err(io_err(out))?;
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file);
    let csv_err = |source| SweepError::Csv { path: out.to_path_buf(), source };
    if needs_header {
        writer.write_record(SWEEP_HEADER).map_err(csv_err)?;
        writer.flush().map_err(io_err(out))?;
    }

    let expected = names.len() * grid.cells_per_dataset();
    let skipped = expected_keys(&names, grid).iter().filter(|k| done.contains(*k)).count();

    // Missing work grouped by (dataset, method, γ), which share one
    // weighted matrix, reduction and distance matrix.
    let mut groups: Vec<Unit> = Vec::new();
    for (d, truth) in datasets.iter().zip(&truths) {
        let methods: BTreeSet<ReductionMethod> = grid.treatments.iter().map(|t| t.method).collect();
        for method in methods {
            for &gamma in &grid.gammas {
                let mut criteria = Vec::new();
                for t in grid.treatments.iter().filter(|t| t.method == method) {
                    let thetas: Vec<f64> = grid
                        .thetas
                        .iter()
                        .copied()
                        .filter(|&th| {
                            !done.contains(&RecordKey {
                                dataset: d.name.clone(),
                                treatment: *t,
                                gamma: param_key(gamma),
                                theta: param_key(th),
                            })
                        })
                        .collect();
                    if !thetas.is_empty() {
                        criteria.push((t.criterion, thetas));
                    }
                }
                if !criteria.is_empty() {
                    groups.push(Unit { dataset: d, truth, method, gamma, criteria });
                }
            }
        }
    }

    let writer = Mutex::new(writer);
    let written = AtomicUsize::new(0);
    let units_started = AtomicUsize::new(0);
    let run = || -> Result<(), SweepError> {
        groups.par_iter().try_for_each(|unit| run_group(unit, grid, &writer, &written, &units_started, options.max_units, out))
    };
    match options.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .expect("thread pool")
            .install(run)?,
        None => run()?,
    }
    writer.into_inner().expect("writer lock").flush().map_err(io_err(out))?;
    Ok(SweepSummary { expected, skipped, written: written.into_inner() })
}

fn run_group(
    unit: &Unit,
    grid: &GridSpec,
    writer: &Mutex<csv::Writer<fs::File>>,
    written: &AtomicUsize,
    units_started: &AtomicUsize,
    max_units: Option<usize>,
    out: &Path,
) -> Result<(), SweepError> {
    let fail = |criterion: Criterion, source: PipelineError| SweepError::Pipeline {
        dataset: unit.dataset.name.clone(),
        method: unit.method,
        criterion,
        gamma: unit.gamma,
        source,
    };
    let first = unit.criteria[0].0;
    let start = Instant::now();
    let contrast = compute_contrast(unit.dataset).map_err(|e| fail(first, e.into()))?;
    let (matrix, _, _) =
        vectorize_lenient(unit.dataset, &contrast, unit.gamma, grid.weighting_mode).map_err(|e| fail(first, e.into()))?;
    let reduced = reduce_stage(&matrix, &grid.reduction(unit.method)).map_err(|e| fail(first, e.into()))?;
    let dist = distance_stage(&reduced, true).map_err(|e| fail(first, e.into()))?;
    let prep_ms = start.elapsed().as_secs_f64() * 1e3;

    unit.criteria.par_iter().try_for_each(|(criterion, thetas)| {
        if let Some(limit) = max_units {
            if units_started.fetch_add(1, Ordering::SeqCst) >= limit {
                return Ok(());
            }
        }
        let start = Instant::now();
        let dendrogram = hac(&dist, *criterion).map_err(|e| fail(*criterion, e.into()))?;
        let hac_ms = start.elapsed().as_secs_f64() * 1e3;
        let mut records = Vec::with_capacity(thetas.len());
        for &theta in thetas {
            let start = Instant::now();
            let clustering = cut(&dendrogram, theta).map_err(|e| fail(*criterion, e.into()))?;
            let scores = QualityScores::compute(unit.truth, &clustering.assignment)
                .map_err(|e| fail(*criterion, e.into()))?;
            records.push(SweepRecord {
                dataset: unit.dataset.name.clone(),
                method: unit.method,
                criterion: *criterion,
                gamma: unit.gamma,
                theta,
                k: reduced.k,
                achieved_evar: reduced.achieved_evar,
                ami: scores.ami,
                nmi: scores.nmi,
                homogeneity: scores.homogeneity,
                completeness: scores.completeness,
                er: scores.er,
                ier: scores.ier,
                n_clusters: clustering.n_clusters(),
                runtime_ms: prep_ms + hac_ms + start.elapsed().as_secs_f64() * 1e3,
                seed: grid.seed,
            });
        }
        let mut w = writer.lock().expect("writer lock");
        for r in &records {
            w.serialize(r).map_err(|source| SweepError::Csv { path: out.to_path_buf(), source })?;
        }
        w.flush().map_err(|source| SweepError::Io { path: out.to_path_buf(), source })?;
        written.fetch_add(records.len(), Ordering::SeqCst);
        Ok(())
    })
}

/// Records grouped by key, for lookups by grid cell.
pub fn index_records(records: &[SweepRecord]) -> BTreeMap<RecordKey, &SweepRecord> {
    records.iter().map(|r| (r.key(), r)).collect()
}
