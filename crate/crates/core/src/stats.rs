//! Nonparametric comparison of configurations over a complete blocked
//! design: Friedman omnibus test, paired Wilcoxon signed-rank post-hoc
//! tests with Pratt's treatment of zero differences, Holm step-down
//! adjustment and Vargha–Delaney effect sizes.

use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("incomplete design: {0}")]
    IncompleteDesign(String),
    #[error("paired samples differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("sample is empty")]
    EmptySample,
    #[error("p-value {0} outside [0, 1]")]
    RangeError(f64),
    #[error("no comparison between `{0}` and `{1}`")]
    MissingComparison(String, String),
}

/// Treatments × blocks score matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockTable {
    pub treatments: Vec<String>,
    pub blocks: Vec<String>,
    /// `scores[t][b]`.
    pub scores: Vec<Vec<f64>>,
}

impl BlockTable {
    pub fn new(treatments: Vec<String>, blocks: Vec<String>, scores: Vec<Vec<f64>>) -> Result<Self, StatsError> {
        let table = BlockTable { treatments, blocks, scores };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<(), StatsError> {
        if self.scores.len() != self.treatments.len() {
            return Err(StatsError::IncompleteDesign(format!(
                "{} treatments but {} score rows",
                self.treatments.len(),
                self.scores.len()
            )));
        }
        for (t, row) in self.treatments.iter().zip(&self.scores) {
            if row.len() != self.blocks.len() {
                return Err(StatsError::IncompleteDesign(format!(
                    "treatment `{t}` has {} of {} blocks",
                    row.len(),
                    self.blocks.len()
                )));
            }
            if let Some(b) = row.iter().position(|v| !v.is_finite()) {
                return Err(StatsError::IncompleteDesign(format!(
                    "treatment `{t}` has no finite score for block `{}`",
                    self.blocks[b]
                )));
            }
        }
        Ok(())
    }

    /// Within-block ranks (1 = lowest score, ties share the mean rank),
    /// as `ranks[t][b]`.
    pub fn ranks(&self) -> Vec<Vec<f64>> {
        let k = self.treatments.len();
        let mut ranks = vec![vec![0.0; self.blocks.len()]; k];
        for b in 0..self.blocks.len() {
            let column: Vec<f64> = (0..k).map(|t| self.scores[t][b]).collect();
            for (t, r) in rank_average(&column).into_iter().enumerate() {
                ranks[t][b] = r;
            }
        }
        ranks
    }
}

/// 1-based ranks with ties sharing their mean rank.
pub fn rank_average(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean;
        }
        i = j + 1;
    }
    ranks
}

/// Sizes of each group of tied values.
fn tie_sizes(values: &[f64]) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let mut sizes = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        sizes.push(j - i + 1);
        i = j + 1;
    }
    sizes
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub statistic: f64,
    pub p: f64,
    pub df: usize,
}

/// `χ² = 12n / (k(k+1)) · Σ_j (R̄_j − (k+1)/2)²`, divided by the tie
/// correction `1 − Σ(t³ − t) / (n·k·(k² − 1))`.
pub fn friedman(table: &BlockTable) -> Result<FriedmanResult, StatsError> {
    table.validate()?;
    let k = table.treatments.len();
    let n = table.blocks.len();
    if k < 2 || n < 2 {
        return Err(StatsError::IncompleteDesign(format!(
            "need ≥2 treatments and ≥2 blocks, have {k} and {n}"
        )));
    }
    let ranks = table.ranks();
    let (kf, nf) = (k as f64, n as f64);
    let centre = (kf + 1.0) / 2.0;
    let spread: f64 = ranks
        .iter()
        .map(|r| {
            let mean = r.iter().sum::<f64>() / nf;
            (mean - centre).powi(2)
        })
        .sum();
    let raw = 12.0 * nf / (kf * (kf + 1.0)) * spread;

    let mut tie_total = 0.0;
    for b in 0..n {
        let column: Vec<f64> = (0..k).map(|t| table.scores[t][b]).collect();
        tie_total += tie_sizes(&column)
            .into_iter()
            .map(|t| (t * t * t - t) as f64)
            .sum::<f64>();
    }
    let correction = 1.0 - tie_total / (nf * kf * (kf * kf - 1.0));
    if correction <= 0.0 {
        // Every block is one big tie.
        return Ok(FriedmanResult { statistic: 0.0, p: 1.0, df: k - 1 });
    }
    let statistic = raw / correction;
    let chi2 = ChiSquared::new((k - 1) as f64).expect("df ≥ 1");
    Ok(FriedmanResult {
        statistic,
        p: chi2.sf(statistic).clamp(0.0, 1.0),
        df: k - 1,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// First sample tends to be larger.
    Greater,
    Less,
}

impl std::str::FromStr for Alternative {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "two-sided" => Ok(Alternative::TwoSided),
            "greater" => Ok(Alternative::Greater),
            "less" => Ok(Alternative::Less),
            other => Err(format!("unknown alternative {other:?} (two-sided|greater|less)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WilcoxonMethod {
    /// Exact below [`EXACT_BELOW`] pairs, normal approximation otherwise.
    #[default]
    Auto,
    Exact,
    Normal,
}

pub const EXACT_BELOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonOptions {
    pub alternative: Alternative,
    pub method: WilcoxonMethod,
    pub continuity: bool,
}

impl Default for WilcoxonOptions {
    fn default() -> Self {
        WilcoxonOptions {
            alternative: Alternative::TwoSided,
            method: WilcoxonMethod::Auto,
            continuity: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(T+, T−)` for two-sided tests, `T+` otherwise.
    pub statistic: f64,
    pub t_plus: f64,
    pub t_minus: f64,
    pub n_zero: usize,
    pub z: Option<f64>,
    pub p: f64,
    pub exact: bool,
}

/// Signed-rank statistics with Pratt's handling of zeros: zero differences
/// take part in the ranking of `|a − b|`, then their ranks are discarded.
/// Returns `(T+, T−, nonzero ranks, zero count)`.
pub fn pratt_signed_ranks(a: &[f64], b: &[f64]) -> Result<(f64, f64, Vec<f64>, usize), StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = rank_average(&abs);
    let (mut t_plus, mut t_minus) = (0.0, 0.0);
    let mut nonzero = Vec::new();
    for (d, r) in diffs.iter().zip(&ranks) {
        if *d > 0.0 {
            t_plus += r;
            nonzero.push(*r);
        } else if *d < 0.0 {
            t_minus += r;
            nonzero.push(*r);
        }
    }
    let n_zero = diffs.len() - nonzero.len();
    Ok((t_plus, t_minus, nonzero, n_zero))
}

/// Exact `(P(T+ ≤ t), P(T+ ≥ t))` when each rank's sign is a fair coin.
/// Ranks are multiples of ½, so the distribution is built over doubled ranks.
fn exact_tails(ranks: &[f64], t_plus: f64) -> (f64, f64) {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut ways = vec![0.0f64; total + 1];
    ways[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if ways[s] != 0.0 {
                ways[s + r] += ways[s];
            }
        }
        reach += r;
    }
    let all = 2f64.powi(ranks.len() as i32);
    let t = (2.0 * t_plus).round() as usize;
    let lower: f64 = ways[..=t.min(total)].iter().sum();
    let upper: f64 = if t > total { 0.0 } else { ways[t..].iter().sum() };
    (lower / all, upper / all)
}

pub fn wilcoxon_pratt(a: &[f64], b: &[f64], options: WilcoxonOptions) -> Result<WilcoxonResult, StatsError> {
    let (t_plus, t_minus, nonzero, n_zero) = pratt_signed_ranks(a, b)?;
    let n = a.len();
    if nonzero.is_empty() {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            t_plus,
            t_minus,
            n_zero,
            z: None,
            p: 1.0,
            exact: false,
        });
    }
    let statistic = match options.alternative {
        Alternative::TwoSided => t_plus.min(t_minus),
        _ => t_plus,
    };
    let exact = match options.method {
        WilcoxonMethod::Exact => true,
        WilcoxonMethod::Normal => false,
        WilcoxonMethod::Auto => n < EXACT_BELOW,
    };

    if exact {
        let (lower, upper) = exact_tails(&nonzero, t_plus);
        let p = match options.alternative {
            Alternative::TwoSided => (2.0 * lower.min(upper)).min(1.0),
            Alternative::Greater => upper,
            Alternative::Less => lower,
        };
        return Ok(WilcoxonResult { statistic, t_plus, t_minus, n_zero, z: None, p, exact: true });
    }

    let (nf, zf) = (n as f64, n_zero as f64);
    let mean = nf * (nf + 1.0) / 4.0 - zf * (zf + 1.0) / 4.0;
    let ties: f64 = tie_sizes(&nonzero)
        .into_iter()
        .map(|t| (t * t * t - t) as f64)
        .sum();
    let var = (nf * (nf + 1.0) * (2.0 * nf + 1.0) - zf * (zf + 1.0) * (2.0 * zf + 1.0) - 0.5 * ties) / 24.0;
    let se = var.sqrt();
    let mut diff = t_plus - mean;
    let cc = if options.continuity { 0.5 } else { 0.0 };
    diff = match options.alternative {
        Alternative::TwoSided => diff.signum() * (diff.abs() - cc).max(0.0),
        Alternative::Greater => diff - cc,
        Alternative::Less => diff + cc,
    };
    let z = if se > 0.0 { diff / se } else { 0.0 };
    let normal = Normal::standard();
    let p = match options.alternative {
        Alternative::TwoSided => (2.0 * normal.sf(z.abs())).min(1.0),
        Alternative::Greater => normal.sf(z),
        Alternative::Less => normal.cdf(z),
    };
    Ok(WilcoxonResult { statistic, t_plus, t_minus, n_zero, z: Some(z), p, exact: false })
}

/// Holm step-down adjustment, returned in input order.
pub fn holm(pvalues: &[f64]) -> Result<Vec<f64>, StatsError> {
    if let Some(&bad) = pvalues.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(StatsError::RangeError(bad));
    }
    let m = pvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvalues[a].partial_cmp(&pvalues[b]).expect("range-checked"));
    let mut adjusted = vec![0.0; m];
    let mut running = 0.0f64;
    for (j, &idx) in order.iter().enumerate() {
        let candidate = ((m - j) as f64 * pvalues[idx]).min(1.0);
        running = running.max(candidate);
        adjusted[idx] = running;
    }
    Ok(adjusted)
}

/// `(A12, A21)`: probability that a draw from `a` beats one from `b`,
/// counting ties as half.
pub fn vargha_delaney(a: &[f64], b: &[f64]) -> Result<(f64, f64), StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let mut sorted = b.to_vec();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap_or(Ordering::Equal));
    // Twice (wins + ½ ties), kept integral so the ratio is exact.
    let mut doubled: u128 = 0;
    for &x in a {
        let below = sorted.partition_point(|&y| y < x);
        let not_above = sorted.partition_point(|&y| y <= x);
        doubled += 2 * below as u128 + (not_above - below) as u128;
    }
    let pairs = 2 * a.len() as u128 * b.len() as u128;
    let a12 = doubled as f64 / pairs as f64;
    let a21 = (pairs - doubled) as f64 / pairs as f64;
    Ok((a12, a21))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub treatment_a: String,
    pub treatment_b: String,
    pub statistic: f64,
    pub p: f64,
    pub adjusted_p: f64,
    pub a12: f64,
    pub a21: f64,
    pub significant: bool,
}

/// Every unordered pair of treatments: Wilcoxon over blocks, Holm across
/// the family, Vargha–Delaney on the raw scores.
pub fn pairwise_comparisons(
    table: &BlockTable,
    options: WilcoxonOptions,
    alpha: f64,
) -> Result<Vec<PairwiseComparison>, StatsError> {
    table.validate()?;
    let k = table.treatments.len();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    let tests: Vec<(WilcoxonResult, (f64, f64))> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let w = wilcoxon_pratt(&table.scores[i], &table.scores[j], options)?;
            let vd = vargha_delaney(&table.scores[i], &table.scores[j])?;
            Ok((w, vd))
        })
        .collect::<Result<_, StatsError>>()?;
    let raw: Vec<f64> = tests.iter().map(|(w, _)| w.p).collect();
    let adjusted = holm(&raw)?;
    Ok(pairs
        .iter()
        .zip(tests)
        .zip(adjusted)
        .map(|((&(i, j), (w, (a12, a21))), adj)| PairwiseComparison {
            treatment_a: table.treatments[i].clone(),
            treatment_b: table.treatments[j].clone(),
            statistic: w.statistic,
            p: w.p,
            adjusted_p: adj,
            a12,
            a21,
            significant: adj < alpha,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankGroupRow {
    pub group: String,
    pub treatment: String,
    pub rank_sum: f64,
    pub median: f64,
    pub mean: f64,
}

/// `a, b, …, z, aa, ab, …`
pub fn group_letter(mut index: usize) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'a' + (index % 26) as u8);
        if index < 26 {
            break;
        }
        index = index / 26 - 1;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Orders treatments best-first by within-block rank sum; each treatment
/// joins its predecessor's group when their comparison is not significant
/// at `alpha`, and opens the next group otherwise.
pub fn rank_groups(
    table: &BlockTable,
    comparisons: &[PairwiseComparison],
    alpha: f64,
) -> Result<Vec<RankGroupRow>, StatsError> {
    table.validate()?;
    let lookup: HashMap<(&str, &str), &PairwiseComparison> = comparisons
        .iter()
        .flat_map(|c| {
            [
                ((c.treatment_a.as_str(), c.treatment_b.as_str()), c),
                ((c.treatment_b.as_str(), c.treatment_a.as_str()), c),
            ]
        })
        .collect();
    for (i, a) in table.treatments.iter().enumerate() {
        for b in &table.treatments[i + 1..] {
            if !lookup.contains_key(&(a.as_str(), b.as_str())) {
                return Err(StatsError::MissingComparison(a.clone(), b.clone()));
            }
        }
    }

    let ranks = table.ranks();
    let rank_sums: Vec<f64> = ranks.iter().map(|r| r.iter().sum()).collect();
    let mut order: Vec<usize> = (0..table.treatments.len()).collect();
    order.sort_by(|&x, &y| {
        rank_sums[y]
            .partial_cmp(&rank_sums[x])
            .unwrap_or(Ordering::Equal)
            .then(x.cmp(&y))
    });

    let mut rows = Vec::with_capacity(order.len());
    let mut group = 0;
    for (pos, &t) in order.iter().enumerate() {
        if pos > 0 {
            let prev = &table.treatments[order[pos - 1]];
            let cmp = lookup[&(prev.as_str(), table.treatments[t].as_str())];
            if cmp.adjusted_p < alpha {
                group += 1;
            }
        }
        let scores = &table.scores[t];
        rows.push(RankGroupRow {
            group: group_letter(group),
            treatment: table.treatments[t].clone(),
            rank_sum: rank_sums[t],
            median: median(scores),
            mean: scores.iter().sum::<f64>() / scores.len() as f64,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn ranks_share_ties() {
        assert_eq!(rank_average(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn friedman_consistent_ordering() {
        for n in [3usize, 5, 10] {
            let scores = vec![vec![0.1; n], vec![0.5; n], vec![0.9; n]];
            let t = BlockTable::new(names("t", 3), names("b", n), scores).unwrap();
            let r = friedman(&t).unwrap();
            assert!((r.statistic - 2.0 * n as f64).abs() < 1e-12);
            assert_eq!(r.df, 2);
        }
    }

    #[test]
    fn friedman_all_tied() {
        let t = BlockTable::new(names("t", 4), names("b", 6), vec![vec![0.3; 6]; 4]).unwrap();
        let r = friedman(&t).unwrap();
        assert_eq!((r.statistic, r.p), (0.0, 1.0));
    }

    #[test]
    fn friedman_two_treatments_match_sign_statistic() {
        // k = 2: χ² reduces to (wins − losses)² / n. Enumerate every
        // win/loss pattern over n = 4 blocks.
        for mask in 0u32..16 {
            let a: Vec<f64> = (0..4).map(|b| if mask >> b & 1 == 1 { 1.0 } else { 0.0 }).collect();
            let bb: Vec<f64> = a.iter().map(|x| 1.0 - x).collect();
            let t = BlockTable::new(names("t", 2), names("b", 4), vec![a, bb]).unwrap();
            let wins = mask.count_ones() as f64;
            let expected = (wins - (4.0 - wins)).powi(2) / 4.0;
            assert!((friedman(&t).unwrap().statistic - expected).abs() < 1e-12, "mask {mask}");
        }
    }

    #[test]
    fn friedman_rejects_ragged_or_tiny_tables() {
        assert!(BlockTable::new(names("t", 2), names("b", 3), vec![vec![1.0; 3], vec![1.0; 2]]).is_err());
        let t = BlockTable::new(names("t", 1), names("b", 3), vec![vec![1.0; 3]]).unwrap();
        assert!(matches!(friedman(&t), Err(StatsError::IncompleteDesign(_))));
        let bad = BlockTable {
            treatments: names("t", 2),
            blocks: names("b", 2),
            scores: vec![vec![1.0, f64::NAN], vec![0.0, 0.0]],
        };
        assert!(friedman(&bad).is_err());
    }

    #[test]
    fn wilcoxon_all_zero() {
        let a = [0.2, 0.4, 0.4];
        let r = wilcoxon_pratt(&a, &a, WilcoxonOptions::default()).unwrap();
        assert_eq!((r.statistic, r.p), (0.0, 1.0));
    }

    #[test]
    fn wilcoxon_exact_all_positive() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [0.0; 5];
        let r = wilcoxon_pratt(&a, &b, WilcoxonOptions::default()).unwrap();
        assert!(r.exact);
        assert_eq!(r.p, 1.0 / 16.0);
        assert_eq!(r.t_plus, 15.0);
        let g = wilcoxon_pratt(&a, &b, WilcoxonOptions { alternative: Alternative::Greater, ..Default::default() }).unwrap();
        assert_eq!(g.p, 1.0 / 32.0);
    }

    #[test]
    fn pratt_keeps_zeros_in_the_ranking() {
        // d = [0, 0, 1, −2, 3, 4]. Pratt ranks |d| with zeros: 1.5, 1.5, 3, 4, 5, 6
        // → T+ = 3 + 5 + 6 = 14, T− = 4. Dropping zeros first would rank
        // [1, −2, 3, 4] as 1, 2, 3, 4 → T+ = 8, T− = 2.
        let a = [1.0, 1.0, 2.0, 0.0, 4.0, 5.0];
        let b = [1.0, 1.0, 1.0, 2.0, 1.0, 1.0];
        let (tp, tm, ranks, zeros) = pratt_signed_ranks(&a, &b).unwrap();
        assert_eq!((tp, tm, zeros), (14.0, 4.0, 2));
        assert_eq!(ranks, vec![3.0, 4.0, 5.0, 6.0]);
        let r = wilcoxon_pratt(&a, &b, WilcoxonOptions::default()).unwrap();
        assert_eq!(r.statistic, 4.0);
    }

    #[test]
    fn wilcoxon_normal_regime() {
        let a: Vec<f64> = (0..30).map(|i| i as f64 * 0.1 + 0.05).collect();
        let b: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let r = wilcoxon_pratt(&a, &b, WilcoxonOptions::default()).unwrap();
        assert!(!r.exact);
        assert!(r.p < 1e-5);
        let r = wilcoxon_pratt(&b, &b.iter().rev().copied().collect::<Vec<_>>(), WilcoxonOptions::default()).unwrap();
        assert!(r.p > 0.5);
        assert!(wilcoxon_pratt(&a, &b[..3], WilcoxonOptions::default()).is_err());
    }

    #[test]
    fn holm_examples() {
        assert_eq!(holm(&[0.03]).unwrap(), vec![0.03]);
        assert_eq!(holm(&[0.01, 0.04]).unwrap(), vec![0.02, 0.04]);
        assert_eq!(holm(&[1.0, 1.0, 1.0]).unwrap(), vec![1.0; 3]);
        assert_eq!(holm(&[0.04, 0.01]).unwrap(), vec![0.04, 0.02]);
        assert_eq!(holm(&[0.5, 1.2]), Err(StatsError::RangeError(1.2)));
    }

    #[test]
    fn vargha_delaney_examples() {
        assert_eq!(vargha_delaney(&[5.0, 6.0], &[1.0, 2.0, 3.0]).unwrap(), (1.0, 0.0));
        assert_eq!(vargha_delaney(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap(), (0.5, 0.5));
        assert_eq!(vargha_delaney(&[1.0, 3.0], &[2.0, 2.0]).unwrap(), (0.5, 0.5));
        assert_eq!(vargha_delaney(&[], &[1.0]), Err(StatsError::EmptySample));
    }

    #[test]
    fn group_letters() {
        assert_eq!(group_letter(0), "a");
        assert_eq!(group_letter(25), "z");
        assert_eq!(group_letter(26), "aa");
        assert_eq!(group_letter(27), "ab");
    }

    fn comparisons_with(table: &BlockTable, insignificant: &[(usize, usize)]) -> Vec<PairwiseComparison> {
        let k = table.treatments.len();
        let mut out = Vec::new();
        for i in 0..k {
            for j in i + 1..k {
                let same = insignificant.contains(&(i, j)) || insignificant.contains(&(j, i));
                out.push(PairwiseComparison {
                    treatment_a: table.treatments[i].clone(),
                    treatment_b: table.treatments[j].clone(),
                    statistic: 0.0,
                    p: if same { 0.5 } else { 0.001 },
                    adjusted_p: if same { 0.5 } else { 0.001 },
                    a12: 0.5,
                    a21: 0.5,
                    significant: !same,
                });
            }
        }
        out
    }

    fn ladder(k: usize) -> BlockTable {
        let scores = (0..k).map(|t| (0..5).map(|b| (t * 10 + b) as f64).collect()).collect();
        BlockTable::new(names("t", k), names("b", 5), scores).unwrap()
    }

    #[test]
    fn rank_groups_structure() {
        let t = ladder(16);
        let all = rank_groups(&t, &comparisons_with(&t, &[]), 0.05).unwrap();
        assert_eq!(all.len(), 16);
        assert_eq!(all[0].treatment, "t15");
        let letters: std::collections::HashSet<_> = all.iter().map(|r| r.group.clone()).collect();
        assert_eq!(letters.len(), 16);

        let pairs: Vec<(usize, usize)> = (0..16).flat_map(|i| (i + 1..16).map(move |j| (i, j))).collect();
        let none = rank_groups(&t, &comparisons_with(&t, &pairs), 0.05).unwrap();
        assert!(none.iter().all(|r| r.group == "a"));

        let one = rank_groups(&t, &comparisons_with(&t, &[(14, 13)]), 0.05).unwrap();
        let groups: Vec<&str> = one.iter().map(|r| r.group.as_str()).collect();
        assert_eq!(&groups[..4], &["a", "b", "b", "c"]);
        assert_eq!(one[1].treatment, "t14");
        assert_eq!(one[2].treatment, "t13");
        assert_eq!(one[0].median, 152.0);
        assert_eq!(one[0].mean, 152.0);
    }

    #[test]
    fn rank_groups_needs_every_pair() {
        let t = ladder(3);
        let mut c = comparisons_with(&t, &[]);
        c.pop();
        assert!(matches!(rank_groups(&t, &c, 0.05), Err(StatsError::MissingComparison(..))));
    }

    #[test]
    fn pairwise_family() {
        let t = ladder(4);
        let c = pairwise_comparisons(&t, WilcoxonOptions::default(), 0.05).unwrap();
        assert_eq!(c.len(), 6);
        for x in &c {
            assert!(x.adjusted_p >= x.p);
            assert!((x.a12 + x.a21 - 1.0).abs() < 1e-12);
        }
    }
}
