//! One pass through the pipeline:
//! ingest → vectorize → (dimred) → cluster → metrics.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{
    cosine_distance_matrix_with, cut, hac, select_representatives, ClusterError, Clustering, Criterion,
    Dendrogram, DistanceMatrix, ZeroRowPolicy,
};
use crate::dimred::{
    estimate_components, reduce_lsi, reduce_nmf, reduce_pca, DimredError, ReducedMatrix, ReductionConfig,
    ReductionMethod,
};
use crate::ingest::{encode_manifest, Abstractor, Dataset, DelimiterConfig, IngestError};
use crate::metrics::{MetricsError, QualityScores};
use crate::vectorize::{vectorize_lenient, ContrastSet, VectorizeError, WeightVector, WeightedMatrix, WeightingMode};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("ingest: {0}")]
    Ingest(#[from] IngestError),
    #[error("vectorize: {0}")]
    Vectorize(#[from] VectorizeError),
    #[error("dimred: {0}")]
    Dimred(#[from] DimredError),
    #[error("cluster: {0}")]
    Cluster(#[from] ClusterError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("config: {0}")]
    InvalidConfig(String),
}

impl PipelineError {
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Ingest(_) => "ingest",
            PipelineError::Vectorize(_) => "vectorize",
            PipelineError::Dimred(_) => "dimred",
            PipelineError::Cluster(_) => "cluster",
            PipelineError::Metrics(_) => "metrics",
            PipelineError::InvalidConfig(_) => "config",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: ReductionMethod,
    pub criterion: Criterion,
    pub gamma: f64,
    pub theta: f64,
    pub target_evar: f64,
    pub weighting_mode: WeightingMode,
    pub seed: u64,
    pub nmf_max_iters: usize,
    pub nmf_tolerance: f64,
}

impl Default for RunConfig {
    /// The original LogCluster setup: no reduction, complete linkage,
    /// equal split between contrast and frequency weights, θ = 0.5.
    fn default() -> Self {
        let r = ReductionConfig::default();
        RunConfig {
            method: ReductionMethod::None,
            criterion: Criterion::Complete,
            gamma: 0.5,
            theta: 0.5,
            target_evar: r.target_evar,
            weighting_mode: WeightingMode::Counts,
            seed: r.seed,
            nmf_max_iters: r.nmf_max_iters,
            nmf_tolerance: r.nmf_tolerance,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(PipelineError::InvalidConfig(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(self.theta > 0.0) {
            return Err(PipelineError::InvalidConfig(format!("theta {} must be > 0", self.theta)));
        }
        if !(self.target_evar > 0.0 && self.target_evar < 1.0) {
            return Err(PipelineError::InvalidConfig(format!(
                "target_evar {} outside (0, 1)",
                self.target_evar
            )));
        }
        Ok(())
    }

    pub fn reduction(&self) -> ReductionConfig {
        ReductionConfig {
            method: self.method,
            target_evar: self.target_evar,
            nmf_max_iters: self.nmf_max_iters,
            nmf_tolerance: self.nmf_tolerance,
            seed: self.seed,
        }
    }
}

/// Reduces with the PCA-estimated `k`. A matrix whose rows are all equal
/// has no variance to estimate from; it is passed through unreduced.
pub fn reduce_stage(m: &WeightedMatrix, config: &ReductionConfig) -> Result<ReducedMatrix, DimredError> {
    let unreduced = || ReducedMatrix {
        values: m.values.clone(),
        k: m.values.ncols(),
        achieved_evar: 1.0,
        method: ReductionMethod::None,
        iters: 0,
    };
    if config.method == ReductionMethod::None {
        return Ok(unreduced());
    }
    let k = match estimate_components(&m.values, config.target_evar) {
        Ok(k) => k,
        Err(DimredError::RankDeficient) => return Ok(unreduced()),
        Err(e) => return Err(e),
    };
    match config.method {
        ReductionMethod::Pca => reduce_pca(&m.values, k),
        ReductionMethod::Lsi => reduce_lsi(&m.values, k),
        ReductionMethod::Nmf => reduce_nmf(&m.values, k, config.nmf_max_iters, config.nmf_tolerance, config.seed),
        ReductionMethod::None => unreachable!("handled above"),
    }
}

/// Cosine distances between reduced rows. Raw weighted rows must be
/// nonzero; reduced rows may legitimately project onto the origin.
pub fn distance_stage(reduced: &ReducedMatrix, allow_zero_rows: bool) -> Result<DistanceMatrix, ClusterError> {
    let policy = if allow_zero_rows || reduced.method != ReductionMethod::None {
        ZeroRowPolicy::Orthogonal
    } else {
        ZeroRowPolicy::Reject
    };
    cosine_distance_matrix_with(&reduced.values, policy)
}

/// Ground-truth labels of the failing logs, in matrix row order, if every
/// failing log has one.
pub fn truth_labels(dataset: &Dataset) -> Option<Vec<String>> {
    dataset.failing().map(|s| s.truth_label.clone()).collect()
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log_ids: Vec<String>,
    pub weights: WeightVector,
    pub k: usize,
    pub achieved_evar: f64,
    /// Reduction actually applied; `None` when a rank-deficient matrix
    /// was passed through.
    pub applied_method: ReductionMethod,
    pub dendrogram: Dendrogram,
    pub clustering: Clustering,
    pub scores: Option<QualityScores>,
}

pub fn run_once(dataset: &Dataset, config: &RunConfig) -> Result<RunOutcome, PipelineError> {
    config.validate()?;
    let contrast = crate::vectorize::compute_contrast(dataset)?;
    run_with_contrast(dataset, &contrast, config)
}

fn run_with_contrast(
    dataset: &Dataset,
    contrast: &ContrastSet,
    config: &RunConfig,
) -> Result<RunOutcome, PipelineError> {
    let (matrix, weights, degenerate) = vectorize_lenient(dataset, contrast, config.gamma, config.weighting_mode)?;
    if !degenerate.is_empty() {
        return Err(VectorizeError::DegenerateRow(degenerate).into());
    }
    let reduced = reduce_stage(&matrix, &config.reduction())?;
    let dist = distance_stage(&reduced, false)?;
    let dendrogram = hac(&dist, config.criterion)?;
    let clustering = select_representatives(cut(&dendrogram, config.theta)?, &dist);
    let scores = match truth_labels(dataset) {
        Some(truth) => Some(QualityScores::compute(&truth, &clustering.assignment)?),
        None => None,
    };
    Ok(RunOutcome {
        log_ids: matrix.rows,
        weights,
        k: reduced.k,
        achieved_evar: reduced.achieved_evar,
        applied_method: reduced.method,
        dendrogram,
        clustering,
        scores,
    })
}

/// Encodes the manifest with the default rules, then runs.
pub fn run_manifest(manifest: &Path, config: &RunConfig) -> Result<(Dataset, RunOutcome), PipelineError> {
    config.validate()?;
    let dataset = encode_manifest(manifest, &Abstractor::with_default_rules(), DelimiterConfig::default())?;
    let outcome = run_once(&dataset, config)?;
    Ok((dataset, outcome))
}
