//! Bag-of-events vectors weighted by event rarity and pass/fail contrast.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Dataset, EventId, Outcome};

#[derive(Debug, Error, PartialEq)]
pub enum VectorizeError {
    #[error("dataset has no failing logs")]
    NoFailingLogs,
    #[error("clustering needs at least 2 failing logs, found {0}")]
    TooFewFailingLogs(usize),
    #[error("event frequency weight undefined for N={n_logs}, n_e={doc_freq}")]
    DomainError { n_logs: usize, doc_freq: usize },
    #[error("gamma must lie in [0, 1], got {0}")]
    GammaOutOfRange(f64),
    #[error("all-zero weighted rows for logs: {}", .0.join(", "))]
    DegenerateRow(Vec<String>),
}

/// Events seen in at least one failing log and in no passing log.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastSet {
    pub delta_s: BTreeSet<EventId>,
}

impl ContrastSet {
    pub fn contains(&self, event: EventId) -> bool {
        self.delta_s.contains(&event)
    }
}

pub fn compute_contrast(dataset: &Dataset) -> Result<ContrastSet, VectorizeError> {
    let failing: BTreeSet<EventId> = dataset
        .failing()
        .flat_map(|s| s.events.iter().copied())
        .collect();
    if dataset.n_failing() == 0 {
        return Err(VectorizeError::NoFailingLogs);
    }
    let passing: BTreeSet<EventId> = dataset
        .passing()
        .flat_map(|s| s.events.iter().copied())
        .collect();
    Ok(ContrastSet {
        delta_s: failing.difference(&passing).copied().collect(),
    })
}

/// `S(ln(N / n_e))` with `S` the logistic sigmoid.
pub fn event_frequency_weight(n_logs: usize, doc_freq: usize) -> Result<f64, VectorizeError> {
    if n_logs == 0 || doc_freq == 0 || doc_freq > n_logs {
        return Err(VectorizeError::DomainError { n_logs, doc_freq });
    }
    let x = (n_logs as f64 / doc_freq as f64).ln();
    Ok(1.0 / (1.0 + (-x).exp()))
}

/// `γ·w_con + (1−γ)·w_f`. γ = 0.5 is the classic equal split.
pub fn combine_weights(contrast_weight: f64, frequency_weight: f64, gamma: f64) -> f64 {
    gamma * contrast_weight + (1.0 - gamma) * frequency_weight
}

/// How an event's occurrences in a log enter its vector cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingMode {
    /// Weight times the raw occurrence count.
    #[default]
    Counts,
    /// Weight alone, if the event occurs at all.
    Binary,
}

impl fmt::Display for WeightingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightingMode::Counts => "counts",
            WeightingMode::Binary => "binary",
        })
    }
}

impl std::str::FromStr for WeightingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "counts" => Ok(WeightingMode::Counts),
            "binary" => Ok(WeightingMode::Binary),
            other => Err(format!("unknown weighting mode {other:?}")),
        }
    }
}

/// Per-event weights; all vectors are indexed by event id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub n_logs: usize,
    pub doc_freq: Vec<usize>,
    /// Zero for events absent from every failing log.
    pub w_f: Vec<f64>,
    pub w_con: Vec<f64>,
    pub gamma: f64,
    pub w: Vec<f64>,
}

impl WeightVector {
    pub fn new(dataset: &Dataset, contrast: &ContrastSet, gamma: f64) -> Result<Self, VectorizeError> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(VectorizeError::GammaOutOfRange(gamma));
        }
        let n_events = dataset.dictionary.len();
        let n_logs = dataset.n_failing();
        if n_logs == 0 {
            return Err(VectorizeError::NoFailingLogs);
        }
        let mut doc_freq = vec![0usize; n_events];
        let mut seen = vec![usize::MAX; n_events];
        for (i, seq) in dataset.failing().enumerate() {
            for &e in &seq.events {
                if seen[e] != i {
                    seen[e] = i;
                    doc_freq[e] += 1;
                }
            }
        }
        let mut w_f = vec![0.0; n_events];
        let mut w_con = vec![0.0; n_events];
        let mut w = vec![0.0; n_events];
        for e in 0..n_events {
            if doc_freq[e] == 0 {
                continue;
            }
            w_f[e] = event_frequency_weight(n_logs, doc_freq[e])?;
            w_con[e] = if contrast.contains(e) { 1.0 } else { 0.0 };
            w[e] = combine_weights(w_con[e], w_f[e], gamma);
        }
        Ok(WeightVector {
            n_logs,
            doc_freq,
            w_f,
            w_con,
            gamma,
            w,
        })
    }

    /// Writes `event_id,template,n_e,w_f,w_con,w`.
    pub fn write_csv<W: Write>(&self, dataset: &Dataset, out: W) -> csv::Result<()> {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        writer.write_record(["event_id", "template", "n_e", "w_f", "w_con", "w"])?;
        for e in 0..self.w.len() {
            writer.write_record([
                e.to_string(),
                dataset.dictionary.template(e).unwrap_or_default().to_string(),
                self.doc_freq[e].to_string(),
                self.w_f[e].to_string(),
                self.w_con[e].to_string(),
                self.w[e].to_string(),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Failing logs × events.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<EventId>,
    pub values: DMatrix<f64>,
    pub weighting_mode: WeightingMode,
}

impl WeightedMatrix {
    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }
}

pub fn vectorize(
    dataset: &Dataset,
    gamma: f64,
    mode: WeightingMode,
) -> Result<(WeightedMatrix, WeightVector), VectorizeError> {
    let contrast = compute_contrast(dataset)?;
    vectorize_with_contrast(dataset, &contrast, gamma, mode)
}

/// As [`vectorize`], reusing a precomputed contrast set across γ values.
pub fn vectorize_with_contrast(
    dataset: &Dataset,
    contrast: &ContrastSet,
    gamma: f64,
    mode: WeightingMode,
) -> Result<(WeightedMatrix, WeightVector), VectorizeError> {
    let (matrix, weights, degenerate) = vectorize_lenient(dataset, contrast, gamma, mode)?;
    if !degenerate.is_empty() {
        return Err(VectorizeError::DegenerateRow(degenerate));
    }
    Ok((matrix, weights))
}

/// As [`vectorize_with_contrast`], but all-zero rows are kept and their
/// log ids returned instead of raising [`VectorizeError::DegenerateRow`].
pub fn vectorize_lenient(
    dataset: &Dataset,
    contrast: &ContrastSet,
    gamma: f64,
    mode: WeightingMode,
) -> Result<(WeightedMatrix, WeightVector, Vec<String>), VectorizeError> {
    let n_fail = dataset.n_failing();
    if n_fail == 0 {
        return Err(VectorizeError::NoFailingLogs);
    }
    if n_fail < 2 {
        return Err(VectorizeError::TooFewFailingLogs(n_fail));
    }
    let weights = WeightVector::new(dataset, contrast, gamma)?;
    let n_events = dataset.dictionary.len();
    let mut values = DMatrix::zeros(n_fail, n_events);
    let mut rows = Vec::with_capacity(n_fail);
    let mut degenerate = Vec::new();
    for (i, seq) in dataset.failing().enumerate() {
        debug_assert_eq!(seq.outcome, Outcome::Fail);
        rows.push(seq.log_id.clone());
        let mut tf = vec![0usize; n_events];
        for &e in &seq.events {
            tf[e] += 1;
        }
        let mut any = false;
        for (e, &count) in tf.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let factor = match mode {
                WeightingMode::Counts => count as f64,
                WeightingMode::Binary => 1.0,
            };
            let v = factor * weights.w[e];
            values[(i, e)] = v;
            any |= v > 0.0;
        }
        if !any {
            degenerate.push(seq.log_id.clone());
        }
    }
    Ok((
        WeightedMatrix {
            rows,
            cols: (0..n_events).collect(),
            values,
            weighting_mode: mode,
        },
        weights,
        degenerate,
    ))
}
