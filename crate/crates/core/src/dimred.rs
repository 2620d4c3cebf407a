//! Optional dimensionality reduction of the weighted matrix: PCA, LSI
//! (truncated SVD) or NMF, with the component count taken from PCA's
//! explained-variance curve.
//!
//! Explained variance ("evar") is the centered variance ratio for PCA and
//! the uncentered Frobenius-energy ratio for LSI and NMF. The two are only
//! equal when every column has zero mean, which is why LSI can land below
//! the requested target with a PCA-derived `k`.

use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DimredError {
    #[error("matrix has zero variance; reduction is not meaningful")]
    RankDeficient,
    #[error("need at least 2 rows, found {0}")]
    TooFewRows(usize),
    #[error("component count {k} outside 1..={max}")]
    InvalidComponents { k: usize, max: usize },
    #[error("target explained variance must lie strictly in (0, 1), got {0}")]
    InvalidTarget(f64),
    #[error("negative entry {value} at ({row}, {col}); NMF needs a nonnegative matrix")]
    NonNegativityViolation { row: usize, col: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReductionMethod {
    #[default]
    None,
    Pca,
    Lsi,
    Nmf,
}

impl ReductionMethod {
    pub const ALL: [ReductionMethod; 4] = [
        ReductionMethod::None,
        ReductionMethod::Pca,
        ReductionMethod::Lsi,
        ReductionMethod::Nmf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReductionMethod::None => "none",
            ReductionMethod::Pca => "pca",
            ReductionMethod::Lsi => "lsi",
            ReductionMethod::Nmf => "nmf",
        }
    }
}

impl fmt::Display for ReductionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ReductionMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown reduction method {s:?} (none|pca|lsi|nmf)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReductionConfig {
    pub method: ReductionMethod,
    pub target_evar: f64,
    pub nmf_max_iters: usize,
    pub nmf_tolerance: f64,
    pub seed: u64,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        ReductionConfig {
            method: ReductionMethod::None,
            target_evar: 0.80,
            nmf_max_iters: 500,
            nmf_tolerance: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedMatrix {
    pub values: DMatrix<f64>,
    pub k: usize,
    pub achieved_evar: f64,
    pub method: ReductionMethod,
    /// NMF iterations performed; zero for the other methods.
    pub iters: usize,
}

/// Singular values sorted descending, with the matching left vectors.
fn sorted_svd(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .expect("finite singular values")
            .then(a.cmp(&b))
    });
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u_sorted = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    (sigma, u_sorted)
}

fn centered(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows() as f64;
    let means: Vec<f64> = m.column_iter().map(|c| c.sum() / n).collect();
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)] - means[c])
}

fn zero_variance(total: f64, m: &DMatrix<f64>) -> bool {
    let scale = m.norm_squared();
    scale == 0.0 || total <= 1e-20 * scale
}

/// Largest `k` any reduction may use: `min(rows − 1, cols)`.
pub fn max_components(m: &DMatrix<f64>) -> usize {
    (m.nrows().saturating_sub(1)).min(m.ncols())
}

/// Centered per-component variances (squared singular values), descending.
pub fn pca_spectrum(m: &DMatrix<f64>) -> Result<Vec<f64>, DimredError> {
    if m.nrows() < 2 {
        return Err(DimredError::TooFewRows(m.nrows()));
    }
    let (sigma, _) = sorted_svd(&centered(m));
    let spectrum: Vec<f64> = sigma.iter().map(|s| s * s).collect();
    if zero_variance(spectrum.iter().sum(), m) {
        return Err(DimredError::RankDeficient);
    }
    Ok(spectrum)
}

/// Smallest `k` whose top-`k` principal components reach `target_evar`.
pub fn estimate_components(m: &DMatrix<f64>, target_evar: f64) -> Result<usize, DimredError> {
    check_target(target_evar)?;
    let spectrum = pca_spectrum(m)?;
    let total: f64 = spectrum.iter().sum();
    let max = max_components(m);
    let mut cumulative = 0.0;
    for (i, v) in spectrum.iter().take(max).enumerate() {
        cumulative += v;
        if cumulative / total >= target_evar {
            return Ok(i + 1);
        }
    }
    Ok(max)
}

fn check_target(target: f64) -> Result<(), DimredError> {
    if target > 0.0 && target < 1.0 {
        Ok(())
    } else {
        Err(DimredError::InvalidTarget(target))
    }
}

fn check_k(k: usize, max: usize) -> Result<(), DimredError> {
    if k == 0 || k > max {
        Err(DimredError::InvalidComponents { k, max })
    } else {
        Ok(())
    }
}

pub fn reduce_pca(m: &DMatrix<f64>, k: usize) -> Result<ReducedMatrix, DimredError> {
    if m.nrows() < 2 {
        return Err(DimredError::TooFewRows(m.nrows()));
    }
    check_k(k, max_components(m))?;
    let (sigma, u) = sorted_svd(&centered(m));
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    if zero_variance(total, m) {
        return Err(DimredError::RankDeficient);
    }
    let kept: f64 = sigma.iter().take(k).map(|s| s * s).sum();
    let values = DMatrix::from_fn(m.nrows(), k, |r, c| u[(r, c)] * sigma[c]);
    Ok(ReducedMatrix {
        values,
        k,
        achieved_evar: kept / total,
        method: ReductionMethod::Pca,
        iters: 0,
    })
}

/// Truncated SVD of the uncentered matrix; rows become `U_k Σ_k`.
pub fn reduce_lsi(m: &DMatrix<f64>, k: usize) -> Result<ReducedMatrix, DimredError> {
    check_k(k, m.nrows().min(m.ncols()))?;
    let energy = m.norm_squared();
    if energy == 0.0 {
        return Err(DimredError::RankDeficient);
    }
    let (sigma, u) = sorted_svd(m);
    let kept: f64 = sigma.iter().take(k).map(|s| s * s).sum();
    let values = DMatrix::from_fn(m.nrows(), k, |r, c| u[(r, c)] * sigma[c]);
    Ok(ReducedMatrix {
        values,
        k,
        achieved_evar: kept / energy,
        method: ReductionMethod::Lsi,
        iters: 0,
    })
}

/// Result of a multiplicative-update NMF run.
#[derive(Debug, Clone, PartialEq)]
pub struct NmfFit {
    pub w: DMatrix<f64>,
    pub h: DMatrix<f64>,
    /// Squared Frobenius error at initialization and after each iteration.
    pub objective: Vec<f64>,
    pub iters: usize,
}

fn frobenius_error(x: &DMatrix<f64>, w: &DMatrix<f64>, h: &DMatrix<f64>) -> f64 {
    (x - w * h).norm_squared()
}

/// Lee–Seung multiplicative updates for `min ‖X − WH‖²_F`, `W, H ≥ 0`.
///
/// Entries whose update denominator is zero are left unchanged, which keeps
/// every step an exact majorize-minimize step. A zero tolerance disables
/// early stopping so exactly `max_iters` updates run.
pub fn nmf(
    x: &DMatrix<f64>,
    k: usize,
    max_iters: usize,
    tolerance: f64,
    seed: u64,
) -> Result<NmfFit, DimredError> {
    for (c, col) in x.column_iter().enumerate() {
        for (r, &v) in col.iter().enumerate() {
            if v < 0.0 || v.is_nan() {
                return Err(DimredError::NonNegativityViolation { row: r, col: c, value: v });
            }
        }
    }
    check_k(k, x.nrows().min(x.ncols()))?;
    let mean = x.mean();
    if mean == 0.0 {
        return Err(DimredError::RankDeficient);
    }
    let scale = (mean / k as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = DMatrix::from_fn(x.nrows(), k, |_, _| rng.random::<f64>() * scale);
    let mut h = DMatrix::from_fn(k, x.ncols(), |_, _| rng.random::<f64>() * scale);

    let mut objective = vec![frobenius_error(x, &w, &h)];
    let mut iters = 0;
    while iters < max_iters {
        let wt = w.transpose();
        let numer = &wt * x;
        let denom = (&wt * &w) * &h;
        h.zip_zip_apply(&numer, &denom, |hv, n, d| {
            if d > 0.0 {
                *hv *= n / d;
            }
        });

        let ht = h.transpose();
        let numer = x * &ht;
        let denom = &w * (&h * &ht);
        w.zip_zip_apply(&numer, &denom, |wv, n, d| {
            if d > 0.0 {
                *wv *= n / d;
            }
        });

        iters += 1;
        let prev = *objective.last().expect("seeded with initial error");
        let cur = frobenius_error(x, &w, &h);
        objective.push(cur);
        if tolerance > 0.0 && (prev == 0.0 || (prev - cur) / prev < tolerance) {
            break;
        }
    }
    Ok(NmfFit { w, h, objective, iters })
}

pub fn reduce_nmf(
    m: &DMatrix<f64>,
    k: usize,
    max_iters: usize,
    tolerance: f64,
    seed: u64,
) -> Result<ReducedMatrix, DimredError> {
    let fit = nmf(m, k, max_iters, tolerance, seed)?;
    let energy = m.norm_squared();
    let residual = *fit.objective.last().expect("non-empty trace");
    Ok(ReducedMatrix {
        achieved_evar: 1.0 - residual / energy,
        values: fit.w,
        k,
        method: ReductionMethod::Nmf,
        iters: fit.iters,
    })
}

/// Runs the configured reduction with the PCA-estimated `k`.
pub fn reduce(m: &DMatrix<f64>, config: &ReductionConfig) -> Result<ReducedMatrix, DimredError> {
    check_target(config.target_evar)?;
    if config.method == ReductionMethod::None {
        return Ok(ReducedMatrix {
            values: m.clone(),
            k: m.ncols(),
            achieved_evar: 1.0,
            method: ReductionMethod::None,
            iters: 0,
        });
    }
    let k = estimate_components(m, config.target_evar)?;
    match config.method {
        ReductionMethod::Pca => reduce_pca(m, k),
        ReductionMethod::Lsi => reduce_lsi(m, k),
        ReductionMethod::Nmf => {
            reduce_nmf(m, k, config.nmf_max_iters, config.nmf_tolerance, config.seed)
        }
        ReductionMethod::None => unreachable!("handled above"),
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::spectrum_4321;
    use super::*;
    use rand::Rng;
    use proptest::prelude::*;

    fn rand_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>())
    }

    fn pairwise(m: &DMatrix<f64>) -> Vec<f64> {
        let mut d = Vec::new();
        for i in 0..m.nrows() {
            for j in i + 1..m.nrows() {
                d.push((m.row(i) - m.row(j)).norm());
            }
        }
        d
    }

    #[test]
    fn spectrum_fixture_gives_three_components() {
        let m = spectrum_4321();
        let s = pca_spectrum(&m).unwrap();
        let total: f64 = s.iter().sum();
        let ratios: Vec<f64> = s.iter().map(|v| v / total).collect();
        for (r, want) in ratios.iter().zip([0.4, 0.3, 0.2, 0.1]) {
            assert!((r - want).abs() < 1e-12);
        }
        assert_eq!(estimate_components(&m, 0.80).unwrap(), 3);
        let r = reduce_pca(&m, 3).unwrap();
        assert!((r.achieved_evar - 0.9).abs() < 1e-9);
    }

    #[test]
    fn rank_one_needs_one_component() {
        let dir = [1.0, 2.0, 0.5];
        let m = DMatrix::from_fn(5, 3, |r, c| (r as f64 + 1.0) * dir[c]);
        for target in [0.1, 0.5, 0.99] {
            assert_eq!(estimate_components(&m, target).unwrap(), 1);
        }
    }

    #[test]
    fn identical_rows_are_rank_deficient() {
        let m = DMatrix::from_fn(4, 3, |_, c| [0.1, 0.7, 0.3][c]);
        assert_eq!(estimate_components(&m, 0.8), Err(DimredError::RankDeficient));
        assert_eq!(reduce_pca(&m, 1), Err(DimredError::RankDeficient));
        assert_eq!(reduce_lsi(&DMatrix::zeros(3, 3), 1), Err(DimredError::RankDeficient));
    }

    #[test]
    fn full_rank_pca_preserves_distances() {
        let m = rand_matrix(6, 4, 3);
        let r = reduce_pca(&m, 4).unwrap();
        assert!((r.achieved_evar - 1.0).abs() < 1e-12);
        for (a, b) in pairwise(&m).iter().zip(pairwise(&r.values)) {
            assert!((a - b).abs() < 1e-9);
        }
        let wide = rand_matrix(4, 9, 5);
        let r = reduce_pca(&wide, 3).unwrap();
        for (a, b) in pairwise(&wide).iter().zip(pairwise(&r.values)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn two_rows_project_symmetrically() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.0, 3.0, 1.0]);
        let r = reduce_pca(&m, 1).unwrap();
        assert!((r.values[(0, 0)] + r.values[(1, 0)]).abs() < 1e-12);
        assert!(r.values[(0, 0)].abs() > 0.1);
    }

    #[test]
    fn lsi_evar_from_constructed_singular_values() {
        // U (3x3 rotation) · diag(4, 3, 0) · Vᵀ (3x3 rotation).
        let (c, s) = (0.6f64, 0.8f64);
        let u = DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]);
        let vt = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c]);
        let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 4.0, 0.0]));
        let m = &u * sigma * &vt;
        let r = reduce_lsi(&m, 1).unwrap();
        assert!((r.achieved_evar - 16.0 / 25.0).abs() < 1e-12);
        let r = reduce_lsi(&m, 2).unwrap();
        assert!((r.achieved_evar - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lsi_matches_pca_on_zero_mean_columns() {
        let m = spectrum_4321();
        for k in 1..=4 {
            let p = reduce_pca(&m, k).unwrap();
            let l = reduce_lsi(&m, k).unwrap();
            assert!((p.achieved_evar - l.achieved_evar).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn nmf_recovers_rank_one() {
        let a = [1.0, 2.0, 0.5, 3.0];
        let b = [0.2, 1.0, 4.0];
        let m = DMatrix::from_fn(4, 3, |r, c| a[r] * b[c]);
        let r = reduce_nmf(&m, 1, 500, 1e-12, 7).unwrap();
        assert!(r.achieved_evar >= 0.999, "{}", r.achieved_evar);
        assert_eq!(r.values.ncols(), 1);
    }

    #[test]
    fn nmf_objective_is_monotone_and_deterministic() {
        let m = rand_matrix(12, 7, 11);
        let a = nmf(&m, 3, 300, 0.0, 42).unwrap();
        assert_eq!(a.iters, 300);
        for pair in a.objective.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-10);
        }
        let b = nmf(&m, 3, 300, 0.0, 42).unwrap();
        assert_eq!(a, b);
        let c = nmf(&m, 3, 300, 0.0, 43).unwrap();
        assert_ne!(a.w, c.w);
    }

    #[test]
    fn nmf_rejects_negative_input() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 0.0, 1.0]);
        assert!(matches!(
            nmf(&m, 1, 10, 1e-5, 0),
            Err(DimredError::NonNegativityViolation { row: 0, col: 1, .. })
        ));
    }

    #[test]
    fn nmf_stops_on_tolerance() {
        let m = rand_matrix(10, 6, 1);
        let fit = nmf(&m, 2, 10_000, 1e-3, 0).unwrap();
        assert!(fit.iters < 10_000);
        assert_eq!(fit.objective.len(), fit.iters + 1);
    }

    #[test]
    fn reduce_dispatch_preserves_rows() {
        let m = rand_matrix(9, 5, 2);
        for method in ReductionMethod::ALL {
            let cfg = ReductionConfig { method, ..Default::default() };
            let r = reduce(&m, &cfg).unwrap();
            assert_eq!(r.values.nrows(), 9);
            assert_eq!(r.method, method);
            assert!(r.k <= 5);
            assert!(r.achieved_evar <= 1.0 + 1e-9 && r.achieved_evar >= 0.0);
            if method == ReductionMethod::Pca {
                assert!(r.achieved_evar >= 0.8);
            }
        }
        let bad = ReductionConfig { target_evar: 1.0, ..Default::default() };
        assert_eq!(reduce(&m, &bad), Err(DimredError::InvalidTarget(1.0)));
    }

    #[test]
    fn invalid_component_counts() {
        let m = rand_matrix(3, 5, 0);
        assert_eq!(reduce_pca(&m, 3), Err(DimredError::InvalidComponents { k: 3, max: 2 }));
        assert_eq!(reduce_pca(&m, 0), Err(DimredError::InvalidComponents { k: 0, max: 2 }));
        assert!(reduce_lsi(&m, 3).is_ok());
    }

    #[test]
    fn nmf_evar_grows_with_k_on_planted_structure() {
        // Three nonnegative parts, noise-free: more components never hurt.
        let parts = rand_matrix(3, 8, 21);
        let mix = rand_matrix(15, 3, 22);
        let m = &mix * &parts;
        let mut prev = 0.0;
        for k in 1..=3 {
            let r = reduce_nmf(&m, k, 3000, 1e-12, 5).unwrap();
            assert!(r.achieved_evar >= prev - 1e-6, "k={k}: {} < {prev}", r.achieved_evar);
            prev = r.achieved_evar;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn pca_meets_target_and_is_monotone(seed in 0u64..10_000, rows in 3usize..12, cols in 2usize..9,
                                            t1 in 0.05f64..0.95, dt in 0.0f64..0.5) {
            let m = rand_matrix(rows, cols, seed);
            let t2 = (t1 + dt).min(0.99);
            let k1 = estimate_components(&m, t1).unwrap();
            let k2 = estimate_components(&m, t2).unwrap();
            prop_assert!(k2 >= k1);
            prop_assert!(k1 >= 1 && k1 <= max_components(&m));
            let r = reduce_pca(&m, k1).unwrap();
            prop_assert!(r.achieved_evar >= t1);
            let mut prev = 0.0;
            for k in 1..=max_components(&m) {
                let p = reduce_pca(&m, k).unwrap().achieved_evar;
                let l = reduce_lsi(&m, k).unwrap().achieved_evar;
                prop_assert!(p >= prev - 1e-12);
                prop_assert!(l <= 1.0 + 1e-9);
                prev = p;
            }
        }
    }
}
