//! External clustering quality: AMI, NMI, homogeneity, completeness and
//! effort reduction.
//!
//! Entropies use natural logarithms. AMI and NMI normalize by
//! `max(H(U), H(V))`; the expected mutual information for AMI follows the
//! hypergeometric permutation model and is accumulated in log-factorial
//! space so it stays finite for large `n`.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("label lists differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("label lists are empty")]
    Empty,
    #[error("counts out of range: n={n}, proposed={proposed}, truth={truth}")]
    RangeError { n: usize, proposed: usize, truth: usize },
}

/// Truth classes (rows) × proposed clusters (columns).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<usize>>,
    pub n: usize,
}

impl ContingencyTable {
    pub fn new<T: Hash + Eq, U: Hash + Eq>(truth: &[T], pred: &[U]) -> Result<Self, MetricsError> {
        if truth.len() != pred.len() {
            return Err(MetricsError::LengthMismatch(truth.len(), pred.len()));
        }
        if truth.is_empty() {
            return Err(MetricsError::Empty);
        }
        let rows = dense_labels(truth);
        let cols = dense_labels(pred);
        let n_rows = rows.iter().max().map_or(0, |m| m + 1);
        let n_cols = cols.iter().max().map_or(0, |m| m + 1);
        let mut counts = vec![vec![0usize; n_cols]; n_rows];
        for (&r, &c) in rows.iter().zip(&cols) {
            counts[r][c] += 1;
        }
        Ok(ContingencyTable {
            counts,
            n: truth.len(),
        })
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<usize> {
        let n_cols = self.counts.first().map_or(0, Vec::len);
        (0..n_cols)
            .map(|c| self.counts.iter().map(|r| r[c]).sum())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let n_cols = self.counts.first().map_or(0, Vec::len);
        let counts = (0..n_cols)
            .map(|c| self.counts.iter().map(|r| r[c]).collect())
            .collect();
        ContingencyTable { counts, n: self.n }
    }

    /// True when both partitions are the same up to relabeling.
    pub fn is_identity(&self) -> bool {
        let rows_ok = self.counts.iter().all(|r| r.iter().filter(|&&c| c > 0).count() == 1);
        let t = self.transpose();
        let cols_ok = t.counts.iter().all(|r| r.iter().filter(|&&c| c > 0).count() == 1);
        rows_ok && cols_ok
    }
}

fn dense_labels<T: Hash + Eq>(labels: &[T]) -> Vec<usize> {
    let mut ids: HashMap<&T, usize> = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(l).or_insert(next)
        })
        .collect()
}

fn entropy(sizes: &[usize], n: usize) -> f64 {
    let n = n as f64;
    -sizes
        .iter()
        .filter(|&&s| s > 0)
        .map(|&s| {
            let p = s as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

pub fn mutual_information(table: &ContingencyTable) -> f64 {
    let n = table.n as f64;
    let a = table.row_sums();
    let b = table.col_sums();
    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (a[i] as f64 * b[j] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

fn log_factorials(n: usize) -> Vec<f64> {
    let mut table = vec![0.0; n + 1];
    for i in 1..=n {
        table[i] = table[i - 1] + (i as f64).ln();
    }
    table
}

/// E[MI] under random permutations with fixed marginals.
pub fn expected_mutual_information(table: &ContingencyTable) -> f64 {
    let n = table.n;
    let nf = n as f64;
    let a = table.row_sums();
    let b = table.col_sums();
    let lf = log_factorials(n);
    let mut emi = 0.0;
    for &ai in &a {
        for &bj in &b {
            let lo = (ai + bj).saturating_sub(n).max(1);
            let hi = ai.min(bj);
            let fixed = lf[ai] + lf[bj] + lf[n - ai] + lf[n - bj] - lf[n];
            for nij in lo..=hi {
                let nijf = nij as f64;
                let term = nijf / nf * (nf * nijf / (ai as f64 * bj as f64)).ln();
                let log_p = fixed
                    - lf[nij]
                    - lf[ai - nij]
                    - lf[bj - nij]
                    - lf[n + nij - ai - bj];
                emi += term * log_p.exp();
            }
        }
    }
    emi
}

pub fn ami<T: Hash + Eq, U: Hash + Eq>(truth: &[T], pred: &[U]) -> Result<f64, MetricsError> {
    let table = ContingencyTable::new(truth, pred)?;
    Ok(ami_from_table(&table))
}

pub fn ami_from_table(table: &ContingencyTable) -> f64 {
    if table.is_identity() {
        return 1.0;
    }
    let h_u = entropy(&table.row_sums(), table.n);
    let h_v = entropy(&table.col_sums(), table.n);
    let mi = mutual_information(table);
    let emi = expected_mutual_information(table);
    let denom = h_u.max(h_v) - emi;
    if denom.abs() < 1e-15 {
        return 0.0;
    }
    (mi - emi) / denom
}

pub fn nmi<T: Hash + Eq, U: Hash + Eq>(truth: &[T], pred: &[U]) -> Result<f64, MetricsError> {
    let table = ContingencyTable::new(truth, pred)?;
    Ok(nmi_from_table(&table))
}

pub fn nmi_from_table(table: &ContingencyTable) -> f64 {
    if table.is_identity() {
        return 1.0;
    }
    let norm = entropy(&table.row_sums(), table.n).max(entropy(&table.col_sums(), table.n));
    if norm == 0.0 {
        return 0.0;
    }
    mutual_information(table) / norm
}

/// `1 − H(rows | cols) / H(rows)`, or 1 when the rows have zero entropy.
fn homogeneity_of(table: &ContingencyTable) -> f64 {
    let h_rows = entropy(&table.row_sums(), table.n);
    if h_rows == 0.0 {
        return 1.0;
    }
    let n = table.n as f64;
    let b = table.col_sums();
    let mut conditional = 0.0;
    for row in &table.counts {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                conditional -= nij / n * (nij / b[j] as f64).ln();
            }
        }
    }
    1.0 - conditional / h_rows
}

/// Returns `(homogeneity, completeness)` of `pred` against `truth`.
pub fn homogeneity_completeness<T: Hash + Eq, U: Hash + Eq>(
    truth: &[T],
    pred: &[U],
) -> Result<(f64, f64), MetricsError> {
    let table = ContingencyTable::new(truth, pred)?;
    Ok((homogeneity_of(&table), homogeneity_of(&table.transpose())))
}

/// `(ER, IER) = (1 − proposed/n, 1 − truth/n)`.
pub fn effort_reduction(n: usize, proposed: usize, truth: usize) -> Result<(f64, f64), MetricsError> {
    if n == 0 || proposed == 0 || truth == 0 || proposed > n || truth > n {
        return Err(MetricsError::RangeError { n, proposed, truth });
    }
    let nf = n as f64;
    Ok((1.0 - proposed as f64 / nf, 1.0 - truth as f64 / nf))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScores {
    pub ami: f64,
    pub nmi: f64,
    pub homogeneity: f64,
    pub completeness: f64,
    pub er: f64,
    pub ier: f64,
}

impl QualityScores {
    pub fn compute<T: Hash + Eq, U: Hash + Eq>(truth: &[T], pred: &[U]) -> Result<Self, MetricsError> {
        let table = ContingencyTable::new(truth, pred)?;
        let (er, ier) = effort_reduction(table.n, table.col_sums().len(), table.row_sums().len())?;
        Ok(QualityScores {
            ami: ami_from_table(&table),
            nmi: nmi_from_table(&table),
            homogeneity: homogeneity_of(&table),
            completeness: homogeneity_of(&table.transpose()),
            er,
            ier,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ami_of_relabeled_partition_is_one() {
        assert_eq!(ami(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(nmi(&["a", "a", "b"], &[7, 7, 3]).unwrap(), 1.0);
    }

    #[test]
    fn single_class_conventions() {
        assert_eq!(ami(&[1, 1, 1], &[0, 0, 0]).unwrap(), 1.0);
        assert_eq!(ami(&[1, 1, 1], &[0, 1, 2]).unwrap(), 0.0);
        assert_eq!(nmi(&[1, 1, 1], &[0, 1, 1]).unwrap(), 0.0);
        assert_eq!(ami(&[0, 1, 2], &[2, 1, 0]).unwrap(), 1.0);
    }

    #[test]
    fn nmi_zero_for_product_structure() {
        // Every (truth, pred) combination appears exactly once: MI = 0.
        let truth = [0, 0, 1, 1];
        let pred = [0, 1, 0, 1];
        assert!(nmi(&truth, &pred).unwrap().abs() < 1e-15);
        let table = ContingencyTable::new(&truth, &pred).unwrap();
        assert!(mutual_information(&table).abs() < 1e-15);
    }

    #[test]
    fn homogeneity_completeness_hand_values() {
        // truth [0,0,1,1], pred [0,0,0,1]:
        // H(C) = ln 2; H(C|K) = 3/4·H(2/3,1/3); H(K) = H(3/4,1/4); H(K|C) = 1/2·ln 2.
        let (h, c) = homogeneity_completeness(&[0, 0, 1, 1], &[0, 0, 0, 1]).unwrap();
        let ln2 = 2f64.ln();
        let h_third = -(2.0 / 3.0 * (2.0f64 / 3.0).ln() + 1.0 / 3.0 * (1.0f64 / 3.0).ln());
        let h_quarter = -(0.75 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        assert!((h - (1.0 - 0.75 * h_third / ln2)).abs() < 1e-12);
        assert!((c - (1.0 - 0.5 * ln2 / h_quarter)).abs() < 1e-12);
    }

    #[test]
    fn trivial_solutions() {
        let truth = [0, 0, 1, 1, 2, 2];
        let (h, c) = homogeneity_completeness(&truth, &[0, 1, 2, 3, 4, 5]).unwrap();
        assert_eq!(h, 1.0);
        assert!(c < 0.7);
        let (h, c) = homogeneity_completeness(&truth, &[0; 6]).unwrap();
        assert_eq!(c, 1.0);
        assert!(h < 1e-12);
    }

    #[test]
    fn effort_reduction_values() {
        let (er, ier) = effort_reduction(10, 3, 2).unwrap();
        assert!((er - 0.7).abs() < 1e-15 && (ier - 0.8).abs() < 1e-15);
        assert_eq!(effort_reduction(10, 10, 2).unwrap().0, 0.0);
        assert_eq!(effort_reduction(10, 1, 2).unwrap().0, 0.9);
        assert!(effort_reduction(10, 11, 2).is_err());
        assert!(effort_reduction(10, 0, 2).is_err());
    }

    #[test]
    fn errors() {
        assert_eq!(ami(&[0, 1], &[0]), Err(MetricsError::LengthMismatch(2, 1)));
        assert_eq!(nmi::<u8, u8>(&[], &[]), Err(MetricsError::Empty));
    }

    #[test]
    fn scores_bundle() {
        let s = QualityScores::compute(&["x", "x", "y", "y", "y"], &[0, 0, 1, 1, 2]).unwrap();
        assert!(s.ami <= s.nmi + 1e-9);
        assert_eq!(s.homogeneity, 1.0);
        assert!((s.er - 0.4).abs() < 1e-15);
        assert!((s.ier - 0.6).abs() < 1e-15);
        // Fewer clusters than classes ⇔ ER > IER.
        let s = QualityScores::compute(&[0, 0, 1, 1, 2], &[0, 0, 0, 1, 1]).unwrap();
        assert!(s.er > s.ier);
    }
}
