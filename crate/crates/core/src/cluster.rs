//! Cosine-distance hierarchical agglomerative clustering.
//!
//! [`hac`] always merges the globally closest pair of clusters, breaking
//! ties on the smallest `(min id, max id)`. Leaves are ids `0..n`, the
//! cluster created by merge `s` gets id `n + s`. Inter-cluster distances
//! are maintained with the Lance–Williams recurrence of the chosen
//! criterion, and each live cluster caches its nearest neighbour so a
//! merge only rescans the rows it invalidated.

use std::cmp::Ordering;
use std::fmt;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("row {0} is an all-zero vector; cosine distance is undefined")]
    ZeroVector(usize),
    #[error("need at least 2 points, found {0}")]
    TooFewPoints(usize),
    #[error("non-finite distance between {0} and {1}")]
    NonFinite(usize, usize),
    #[error("threshold must be positive, got {0}")]
    InvalidThreshold(f64),
}

/// Condensed upper-triangular distance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    /// Builds from a full square matrix, reading its upper triangle.
    pub fn from_square(m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "distance matrix must be square");
        let n = m.nrows();
        let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                d.push(m[(i, j)]);
            }
        }
        DistanceMatrix { n, d }
    }

    pub fn from_condensed(n: usize, d: Vec<f64>) -> Self {
        assert_eq!(d.len(), n * n.saturating_sub(1) / 2, "condensed length mismatch");
        DistanceMatrix { n, d }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn condensed(&self) -> &[f64] {
        &self.d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            Ordering::Equal => 0.0,
            Ordering::Less => self.d[self.offset(i, j)],
            Ordering::Greater => self.d[self.offset(j, i)],
        }
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        self.n * i - i * (i + 1) / 2 + (j - i - 1)
    }
}

/// What to do with all-zero rows when computing cosine distances.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ZeroRowPolicy {
    #[default]
    Reject,
    /// A zero row is at distance 1 from every nonzero row and 0 from other
    /// zero rows. Used for reduced coordinates, where a row can project to
    /// the origin.
    Orthogonal,
}

/// `d(i, j) = 1 − cos(v_i, v_j)`, clamped to `[0, 2]`.
pub fn cosine_distance_matrix(m: &DMatrix<f64>) -> Result<DistanceMatrix, ClusterError> {
    cosine_distance_matrix_with(m, ZeroRowPolicy::Reject)
}

pub fn cosine_distance_matrix_with(
    m: &DMatrix<f64>,
    policy: ZeroRowPolicy,
) -> Result<DistanceMatrix, ClusterError> {
    let n = m.nrows();
    let norms: Vec<f64> = m.row_iter().map(|r| r.norm()).collect();
    let max_norm = norms.iter().cloned().fold(0.0, f64::max);
    let is_zero: Vec<bool> = norms
        .iter()
        .map(|&x| x == 0.0 || x <= 1e-12 * max_norm)
        .collect();
    if policy == ZeroRowPolicy::Reject {
        if let Some(i) = is_zero.iter().position(|&z| z) {
            return Err(ClusterError::ZeroVector(i));
        }
    }
    let unit: Vec<Vec<f64>> = m
        .row_iter()
        .zip(&norms)
        .zip(&is_zero)
        .map(|((r, &norm), &zero)| {
            if zero {
                vec![0.0; m.ncols()]
            } else {
                r.iter().map(|v| v / norm).collect()
            }
        })
        .collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| {
                    if is_zero[i] || is_zero[j] {
                        return if is_zero[i] && is_zero[j] { 0.0 } else { 1.0 };
                    }
                    let cos: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
                    let d = 1.0 - cos;
                    if d.abs() < 1e-12 {
                        0.0
                    } else {
                        d.clamp(0.0, 2.0)
                    }
                })
                .collect()
        })
        .collect();
    Ok(DistanceMatrix {
        n,
        d: rows.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Single,
    Complete,
    Average,
    Weighted,
}

/// Coefficients of `d(k, i∪j) = α_i d(k,i) + α_j d(k,j) + β d(i,j) + γ |d(k,i) − d(k,j)|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanceWilliams {
    pub alpha_i: f64,
    pub alpha_j: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [
        Criterion::Single,
        Criterion::Complete,
        Criterion::Average,
        Criterion::Weighted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Single => "single",
            Criterion::Complete => "complete",
            Criterion::Average => "average",
            Criterion::Weighted => "weighted",
        }
    }

    pub fn lance_williams(self, size_i: usize, size_j: usize) -> LanceWilliams {
        let (ni, nj) = (size_i as f64, size_j as f64);
        match self {
            Criterion::Single => LanceWilliams { alpha_i: 0.5, alpha_j: 0.5, beta: 0.0, gamma: -0.5 },
            Criterion::Complete => LanceWilliams { alpha_i: 0.5, alpha_j: 0.5, beta: 0.0, gamma: 0.5 },
            Criterion::Average => LanceWilliams {
                alpha_i: ni / (ni + nj),
                alpha_j: nj / (ni + nj),
                beta: 0.0,
                gamma: 0.0,
            },
            Criterion::Weighted => LanceWilliams { alpha_i: 0.5, alpha_j: 0.5, beta: 0.0, gamma: 0.0 },
        }
    }

    /// Distance from `k` to the union of `i` and `j`.
    ///
    /// Same value as the Lance–Williams form; single and complete are
    /// evaluated as min/max so they stay bit-exact.
    #[inline]
    pub fn update(self, d_ki: f64, d_kj: f64, size_i: usize, size_j: usize) -> f64 {
        match self {
            Criterion::Single => d_ki.min(d_kj),
            Criterion::Complete => d_ki.max(d_kj),
            Criterion::Average => {
                let (ni, nj) = (size_i as f64, size_j as f64);
                (ni * d_ki + nj * d_kj) / (ni + nj)
            }
            Criterion::Weighted => 0.5 * (d_ki + d_kj),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown criterion {s:?} (single|complete|average|weighted)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// Smaller of the two merged cluster ids.
    pub a: usize,
    pub b: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n: usize,
    pub criterion: Criterion,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn max_distance(&self) -> f64 {
        self.merges.iter().map(|m| m.distance).fold(0.0, f64::max)
    }
}

struct HacState {
    n: usize,
    dist: Vec<f64>,
    id: Vec<usize>,
    size: Vec<usize>,
    active: Vec<bool>,
    nn: Vec<Option<usize>>,
}

impl HacState {
    #[inline]
    fn d(&self, s: usize, t: usize) -> f64 {
        self.dist[s * self.n + t]
    }

    #[inline]
    fn set(&mut self, s: usize, t: usize, v: f64) {
        self.dist[s * self.n + t] = v;
        self.dist[t * self.n + s] = v;
    }

    /// Ordering key of the pair in slots `s`, `t`.
    #[inline]
    fn key(&self, s: usize, t: usize) -> (f64, usize, usize) {
        let (a, b) = (self.id[s], self.id[t]);
        (self.d(s, t), a.min(b), a.max(b))
    }

    fn rescan(&mut self, s: usize) {
        let mut best: Option<usize> = None;
        for t in 0..self.n {
            if t == s || !self.active[t] {
                continue;
            }
            if best.is_none_or(|b| key_less(self.key(s, t), self.key(s, b))) {
                best = Some(t);
            }
        }
        self.nn[s] = best;
    }
}

#[inline]
fn key_less(x: (f64, usize, usize), y: (f64, usize, usize)) -> bool {
    match x.0.partial_cmp(&y.0).expect("finite distances") {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => (x.1, x.2) < (y.1, y.2),
    }
}

pub fn hac(dist: &DistanceMatrix, criterion: Criterion) -> Result<Dendrogram, ClusterError> {
    let n = dist.len();
    if n < 2 {
        return Err(ClusterError::TooFewPoints(n));
    }
    let mut state = HacState {
        n,
        dist: vec![0.0; n * n],
        id: (0..n).collect(),
        size: vec![1; n],
        active: vec![true; n],
        nn: vec![None; n],
    };
    for i in 0..n {
        for j in i + 1..n {
            let v = dist.get(i, j);
            if !v.is_finite() {
                return Err(ClusterError::NonFinite(i, j));
            }
            state.set(i, j, v);
        }
    }
    for s in 0..n {
        state.rescan(s);
    }

    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut best: Option<(usize, usize)> = None;
        for s in (0..n).filter(|&s| state.active[s]) {
            let t = state.nn[s].expect("an active partner exists");
            if best.is_none_or(|(bs, bt)| key_less(state.key(s, t), state.key(bs, bt))) {
                best = Some((s, t));
            }
        }
        let (s, t) = best.expect("at least two active clusters");
        let (keep, gone) = (s.min(t), s.max(t));
        let height = state.d(keep, gone);
        let (size_keep, size_gone) = (state.size[keep], state.size[gone]);
        let (id_keep, id_gone) = (state.id[keep], state.id[gone]);
        merges.push(Merge {
            a: id_keep.min(id_gone),
            b: id_keep.max(id_gone),
            distance: height,
            size: size_keep + size_gone,
        });

        state.active[gone] = false;
        for k in 0..n {
            if k != keep && state.active[k] {
                let v = criterion.update(state.d(k, keep), state.d(k, gone), size_keep, size_gone);
                state.set(k, keep, v);
            }
        }
        state.id[keep] = n + step;
        state.size[keep] = size_keep + size_gone;

        for k in 0..n {
            if k == keep || !state.active[k] {
                continue;
            }
            match state.nn[k] {
                Some(p) if p == keep || p == gone => state.rescan(k),
                Some(p) => {
                    if key_less(state.key(k, keep), state.key(k, p)) {
                        state.nn[k] = Some(keep);
                    }
                }
                None => state.rescan(k),
            }
        }
        state.rescan(keep);
    }
    Ok(Dendrogram { n, criterion, merges })
}

/// A flat partition of the points. Labels are numbered in order of each
/// cluster's smallest member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub assignment: Vec<usize>,
    pub clusters: Vec<Vec<usize>>,
    /// One per cluster once [`select_representatives`] has run.
    pub representatives: Vec<usize>,
    pub theta: f64,
}

impl Clustering {
    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    fn from_roots(roots: &[usize], theta: f64) -> Self {
        let mut label_of_root = std::collections::HashMap::new();
        let mut assignment = Vec::with_capacity(roots.len());
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        for (i, &r) in roots.iter().enumerate() {
            let next = label_of_root.len();
            let label = *label_of_root.entry(r).or_insert(next);
            if label == clusters.len() {
                clusters.push(Vec::new());
            }
            clusters[label].push(i);
            assignment.push(label);
        }
        Clustering {
            assignment,
            clusters,
            representatives: Vec::new(),
            theta,
        }
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Flat clusters: maximal subtrees whose merges all happen at distance ≤ θ.
pub fn cut(dendrogram: &Dendrogram, theta: f64) -> Result<Clustering, ClusterError> {
    if !(theta > 0.0) {
        return Err(ClusterError::InvalidThreshold(theta));
    }
    let n = dendrogram.n;
    let mut parent: Vec<usize> = (0..n).collect();
    // Representative leaf of each cluster id, or None once a subtree has
    // crossed the threshold.
    let mut leaf_of: Vec<Option<usize>> = (0..n).map(Some).collect();
    for m in &dendrogram.merges {
        let joined = match (leaf_of[m.a], leaf_of[m.b]) {
            (Some(x), Some(y)) if m.distance <= theta => {
                let (rx, ry) = (find(&mut parent, x), find(&mut parent, y));
                parent[rx.max(ry)] = rx.min(ry);
                Some(rx.min(ry))
            }
            _ => None,
        };
        leaf_of.push(joined);
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    Ok(Clustering::from_roots(&roots, theta))
}

/// Picks, per cluster, the member with the smallest mean distance to the
/// other members; ties go to the lower index.
pub fn select_representatives(mut clustering: Clustering, dist: &DistanceMatrix) -> Clustering {
    clustering.representatives = clustering
        .clusters
        .iter()
        .map(|members| {
            if members.len() == 1 {
                return members[0];
            }
            let mut best = members[0];
            let mut best_mean = f64::INFINITY;
            for &i in members {
                let total: f64 = members.iter().filter(|&&j| j != i).map(|&j| dist.get(i, j)).sum();
                let mean = total / (members.len() - 1) as f64;
                if mean < best_mean {
                    best_mean = mean;
                    best = i;
                }
            }
            best
        })
        .collect();
    clustering
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterExport {
    pub label: usize,
    pub representative: String,
    pub members: Vec<String>,
}

/// JSON shape of an exported clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringExport {
    pub theta: f64,
    pub criterion: Criterion,
    pub clusters: Vec<ClusterExport>,
}

impl ClusteringExport {
    pub fn new(clustering: &Clustering, criterion: Criterion, log_ids: &[String]) -> Self {
        let clusters = clustering
            .clusters
            .iter()
            .enumerate()
            .map(|(label, members)| ClusterExport {
                label,
                representative: clustering
                    .representatives
                    .get(label)
                    .map(|&r| log_ids[r].clone())
                    .unwrap_or_default(),
                members: members.iter().map(|&m| log_ids[m].clone()).collect(),
            })
            .collect();
        ClusteringExport {
            theta: clustering.theta,
            criterion,
            clusters,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_points(xs: &[f64]) -> DistanceMatrix {
        let n = xs.len();
        DistanceMatrix::from_square(&DMatrix::from_fn(n, n, |i, j| (xs[i] - xs[j]).abs()))
    }

    #[test]
    fn cosine_examples() {
        let m = DMatrix::from_row_slice(4, 3, &[1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 3.0, 3.0, 0.0]);
        let d = cosine_distance_matrix(&m).unwrap();
        assert!((d.get(0, 1) - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-12);
        assert!((d.get(1, 2) - 1.0).abs() < 1e-12);
        assert_eq!(d.get(0, 3), 0.0);
        assert_eq!(d.get(2, 1), d.get(1, 2));
    }

    #[test]
    fn cosine_zero_rows() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
        assert_eq!(cosine_distance_matrix(&m), Err(ClusterError::ZeroVector(1)));
        let d = cosine_distance_matrix_with(&m, ZeroRowPolicy::Orthogonal).unwrap();
        assert_eq!(d.get(0, 1), 1.0);
        assert_eq!(d.get(1, 2), 1.0);
    }

    #[test]
    fn two_points_merge_once() {
        let d = DistanceMatrix::from_condensed(2, vec![0.3]);
        for c in Criterion::ALL {
            let den = hac(&d, c).unwrap();
            assert_eq!(den.merges, vec![Merge { a: 0, b: 1, distance: 0.3, size: 2 }]);
        }
        assert_eq!(
            hac(&DistanceMatrix::from_condensed(1, vec![]), Criterion::Single),
            Err(ClusterError::TooFewPoints(1))
        );
    }

    #[test]
    fn four_points_on_a_line() {
        let d = line_points(&[0.0, 1.0, 9.0, 10.0]);
        let single = hac(&d, Criterion::Single).unwrap();
        let got: Vec<_> = single.merges.iter().map(|m| (m.a, m.b, m.distance)).collect();
        assert_eq!(got, vec![(0, 1, 1.0), (2, 3, 1.0), (4, 5, 8.0)]);
        let complete = hac(&d, Criterion::Complete).unwrap();
        let got: Vec<_> = complete.merges.iter().map(|m| (m.a, m.b, m.distance)).collect();
        assert_eq!(got, vec![(0, 1, 1.0), (2, 3, 1.0), (4, 5, 10.0)]);
        let average = hac(&d, Criterion::Average).unwrap();
        assert_eq!(average.merges[2].distance, 9.0);

        let c = cut(&complete, 5.0).unwrap();
        assert_eq!(c.clusters, vec![vec![0, 1], vec![2, 3]]);
        assert_eq!(c.assignment, vec![0, 0, 1, 1]);
    }

    #[test]
    fn chaining_single_versus_complete() {
        // Near-even chain: single linkage glues everything at gap ≤ 1.1,
        // complete linkage keeps two balanced halves.
        let d = line_points(&[0.0, 1.0, 2.0, 3.1, 4.1, 5.1]);
        let single = cut(&hac(&d, Criterion::Single).unwrap(), 1.5).unwrap();
        assert_eq!(single.n_clusters(), 1);
        let complete = cut(&hac(&d, Criterion::Complete).unwrap(), 3.0).unwrap();
        assert_eq!(complete.clusters, vec![vec![0, 1, 2], vec![3, 4, 5]]);
    }

    #[test]
    fn cut_extremes() {
        let d = line_points(&[0.0, 0.4, 3.0, 7.5, 7.7]);
        let den = hac(&d, Criterion::Average).unwrap();
        assert_eq!(cut(&den, den.max_distance() + 1.0).unwrap().n_clusters(), 1);
        let first = den.merges[0].distance;
        assert_eq!(cut(&den, first * 0.5).unwrap().n_clusters(), 5);
        assert_eq!(cut(&den, first).unwrap().n_clusters(), 4);
        assert!(cut(&den, 0.0).is_err());
    }

    #[test]
    fn representatives() {
        let d = line_points(&[0.0, 1.0, 2.0, 10.0]);
        let c = Clustering::from_roots(&[0, 0, 0, 3], 1.0);
        let c = select_representatives(c, &d);
        assert_eq!(c.representatives, vec![1, 3]);

        let d = line_points(&[0.0, 1.0]);
        let c = select_representatives(Clustering::from_roots(&[0, 0], 1.0), &d);
        assert_eq!(c.representatives, vec![0]);
    }

    #[test]
    fn lance_williams_coefficients_agree_with_update() {
        for c in Criterion::ALL {
            for &(a, b, ni, nj) in &[(0.3, 0.7, 1, 2), (0.9, 0.1, 3, 1), (0.5, 0.5, 2, 2)] {
                let lw = c.lance_williams(ni, nj);
                let general = lw.alpha_i * a + lw.alpha_j * b + lw.beta * 0.2 + lw.gamma * (a - b).abs();
                assert!((general - c.update(a, b, ni, nj)).abs() < 1e-12, "{c}");
            }
        }
    }

    #[test]
    fn export_uses_log_ids() {
        let d = line_points(&[0.0, 1.0, 9.0]);
        let den = hac(&d, Criterion::Complete).unwrap();
        let c = select_representatives(cut(&den, 2.0).unwrap(), &d);
        let ids: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let e = ClusteringExport::new(&c, Criterion::Complete, &ids);
        let json = serde_json::to_value(&e).unwrap();
        assert_eq!(json["criterion"], "complete");
        assert_eq!(json["clusters"][0]["members"], serde_json::json!(["x", "y"]));
        assert_eq!(json["clusters"][1]["representative"], "z");
    }
}
