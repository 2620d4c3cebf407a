//! Plot-ready CSVs from a complete sweep: parameter heatmaps, AMI
//! boxplot quantiles, explained-variance tables and the rank table.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dimred::ReductionMethod;
use crate::stats::{
    friedman, pairwise_comparisons, rank_groups, BlockTable, FriedmanResult, PairwiseComparison, RankGroupRow,
    StatsError, WilcoxonOptions,
};
use crate::sweep::{check_complete, param_key, GridSpec, SweepError, SweepRecord, Treatment};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error("stats: {0}")]
    Stats(#[from] StatsError),
    #[error("{path:?}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path:?}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

impl ReportError {
    pub fn is_incomplete_grid(&self) -> bool {
        matches!(
            self,
            ReportError::Sweep(SweepError::IncompleteGrid { .. } | SweepError::DuplicateRecord(_))
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ami,
    Nmi,
    Homogeneity,
    Completeness,
    Er,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Ami, Metric::Nmi, Metric::Homogeneity, Metric::Completeness, Metric::Er];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Ami => "ami",
            Metric::Nmi => "nmi",
            Metric::Homogeneity => "homogeneity",
            Metric::Completeness => "completeness",
            Metric::Er => "er",
        }
    }

    pub fn of(self, r: &SweepRecord) -> f64 {
        match self {
            Metric::Ami => r.ami,
            Metric::Nmi => r.nmi,
            Metric::Homogeneity => r.homogeneity,
            Metric::Completeness => r.completeness,
            Metric::Er => r.er,
        }
    }
}

/// Rows are θ, columns are γ, each cell the mean over datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub thetas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub cells: Vec<Vec<f64>>,
}

impl Heatmap {
    pub fn shape(&self) -> (usize, usize) {
        (self.cells.len(), self.cells.first().map_or(0, Vec::len))
    }

    /// Cellwise `self − other`.
    pub fn minus(&self, other: &Heatmap) -> Heatmap {
        Heatmap {
            thetas: self.thetas.clone(),
            gammas: self.gammas.clone(),
            cells: self
                .cells
                .iter()
                .zip(&other.cells)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ReportError> {
        let mut w = csv_writer(path)?;
        let csv_err = |source| ReportError::Csv { path: path.to_path_buf(), source };
        let mut header = vec!["theta\\gamma".to_string()];
        header.extend(self.gammas.iter().map(|g| param_key(*g)));
        w.write_record(&header).map_err(csv_err)?;
        for (theta, row) in self.thetas.iter().zip(&self.cells) {
            let mut fields = vec![param_key(*theta)];
            fields.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&fields).map_err(csv_err)?;
        }
        w.flush().map_err(|source| ReportError::Io { path: path.to_path_buf(), source })
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, ReportError> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|source| ReportError::Csv { path: path.to_path_buf(), source })
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ReportError> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(|source| ReportError::Csv { path: path.to_path_buf(), source })?;
    }
    w.flush().map_err(|source| ReportError::Io { path: path.to_path_buf(), source })
}

/// Records of a complete grid, indexed by (treatment, γ key, θ key).
struct Cells<'a> {
    by_cell: HashMap<(Treatment, String, String), Vec<&'a SweepRecord>>,
}

impl<'a> Cells<'a> {
    fn new(records: &'a [SweepRecord]) -> Self {
        let mut by_cell: HashMap<_, Vec<_>> = HashMap::new();
        for r in records {
            by_cell
                .entry((r.treatment(), param_key(r.gamma), param_key(r.theta)))
                .or_default()
                .push(r);
        }
        Cells { by_cell }
    }

    fn mean(&self, t: Treatment, gamma: f64, theta: f64, metric: Metric) -> f64 {
        let rs = &self.by_cell[&(t, param_key(gamma), param_key(theta))];
        rs.iter().map(|r| metric.of(r)).sum::<f64>() / rs.len() as f64
    }
}

pub fn heatmap(records: &[SweepRecord], grid: &GridSpec, treatment: Treatment, metric: Metric) -> Heatmap {
    heatmap_from(&Cells::new(records), grid, treatment, metric)
}

fn heatmap_from(cells: &Cells, grid: &GridSpec, treatment: Treatment, metric: Metric) -> Heatmap {
    Heatmap {
        thetas: grid.thetas.clone(),
        gammas: grid.gammas.clone(),
        cells: grid
            .thetas
            .iter()
            .map(|&th| grid.gammas.iter().map(|&g| cells.mean(treatment, g, th, metric)).collect())
            .collect(),
    }
}

/// `q`-quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotRow {
    pub method: ReductionMethod,
    pub criterion: crate::cluster::Criterion,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

/// AMI distribution per configuration, over every block.
pub fn boxplot(records: &[SweepRecord], grid: &GridSpec) -> Vec<BoxplotRow> {
    let mut by_treatment: HashMap<Treatment, Vec<f64>> = HashMap::new();
    for r in records {
        by_treatment.entry(r.treatment()).or_default().push(r.ami);
    }
    grid.treatments
        .iter()
        .filter_map(|t| {
            let mut v = by_treatment.remove(t)?;
            v.sort_by(|a, b| a.total_cmp(b));
            Some(BoxplotRow {
                method: t.method,
                criterion: t.criterion,
                n: v.len(),
                min: v[0],
                q1: quantile(&v, 0.25),
                median: quantile(&v, 0.5),
                q3: quantile(&v, 0.75),
                max: v[v.len() - 1],
                mean: v.iter().sum::<f64>() / v.len() as f64,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvarRow {
    pub dataset: String,
    pub method: ReductionMethod,
    pub gamma: f64,
    pub k: usize,
    pub target_evar: f64,
    pub achieved_evar: f64,
    pub shortfall: bool,
}

/// One row per reduced (dataset, method, γ); `k` and evar do not depend
/// on the linkage or θ.
pub fn evar_rows(records: &[SweepRecord], target_evar: f64) -> Vec<EvarRow> {
    let mut seen: BTreeMap<(String, ReductionMethod, String), EvarRow> = BTreeMap::new();
    for r in records.iter().filter(|r| r.method != ReductionMethod::None) {
        seen.entry((r.dataset.clone(), r.method, param_key(r.gamma))).or_insert_with(|| EvarRow {
            dataset: r.dataset.clone(),
            method: r.method,
            gamma: r.gamma,
            k: r.k,
            target_evar,
            achieved_evar: r.achieved_evar,
            shortfall: r.achieved_evar < target_evar,
        });
    }
    seen.into_values().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvarSummary {
    pub method: ReductionMethod,
    pub n: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub below_target: usize,
}

pub fn evar_summary(rows: &[EvarRow]) -> Vec<EvarSummary> {
    let mut by_method: BTreeMap<ReductionMethod, Vec<&EvarRow>> = BTreeMap::new();
    for r in rows {
        by_method.entry(r.method).or_default().push(r);
    }
    by_method
        .into_iter()
        .map(|(method, rs)| {
            let mut v: Vec<f64> = rs.iter().map(|r| r.achieved_evar).collect();
            v.sort_by(|a, b| a.total_cmp(b));
            EvarSummary {
                method,
                n: v.len(),
                min: v[0],
                median: quantile(&v, 0.5),
                max: v[v.len() - 1],
                below_target: rs.iter().filter(|r| r.shortfall).count(),
            }
        })
        .collect()
}

/// Treatments × (dataset, γ, θ) blocks of AMI scores.
pub fn block_table(records: &[SweepRecord], datasets: &[String], grid: &GridSpec) -> Result<BlockTable, ReportError> {
    check_complete(records, datasets, grid)?;
    let index: HashMap<_, _> = records.iter().map(|r| (r.key(), r.ami)).collect();
    let mut blocks = Vec::new();
    let mut keys = Vec::new();
    for d in datasets {
        for &g in &grid.gammas {
            for &th in &grid.thetas {
                blocks.push(format!("{d}|{}|{}", param_key(g), param_key(th)));
                keys.push((d.clone(), param_key(g), param_key(th)));
            }
        }
    }
    let scores = grid
        .treatments
        .iter()
        .map(|&t| {
            keys.iter()
                .map(|(d, g, th)| {
                    index[&crate::sweep::RecordKey {
                        dataset: d.clone(),
                        treatment: t,
                        gamma: g.clone(),
                        theta: th.clone(),
                    }]
                })
                .collect()
        })
        .collect();
    Ok(BlockTable::new(
        grid.treatments.iter().map(Treatment::to_string).collect(),
        blocks,
        scores,
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: String,
    pub dim_reduction: String,
    pub hac: String,
    pub median_ami: f64,
    pub mean_ami: f64,
    pub rank_sum: f64,
}

impl From<&RankGroupRow> for GroupRow {
    fn from(r: &RankGroupRow) -> Self {
        let (m, c) = r.treatment.split_once('+').unwrap_or((&r.treatment, ""));
        GroupRow {
            group: r.group.clone(),
            dim_reduction: m.to_string(),
            hac: c.to_string(),
            median_ami: r.median,
            mean_ami: r.mean,
            rank_sum: r.rank_sum,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub friedman: FriedmanResult,
    pub pairwise: Vec<PairwiseComparison>,
    pub groups: Vec<RankGroupRow>,
}

/// Friedman omnibus, all pairwise Wilcoxon tests and the rank groups.
/// Refuses incomplete grids.
pub fn compare(
    records: &[SweepRecord],
    datasets: &[String],
    grid: &GridSpec,
    options: WilcoxonOptions,
    alpha: f64,
) -> Result<Comparison, ReportError> {
    let table = block_table(records, datasets, grid)?;
    let friedman = friedman(&table)?;
    let pairwise = pairwise_comparisons(&table, options, alpha)?;
    let groups = rank_groups(&table, &pairwise, alpha)?;
    Ok(Comparison { friedman, pairwise, groups })
}

/// Writes `friedman.json`, `comparisons.csv` and `groups.csv`.
pub fn write_comparison(c: &Comparison, out_dir: &Path) -> Result<(), ReportError> {
    let io_err = |path: PathBuf| move |source| ReportError::Io { path, source };
    fs::create_dir_all(out_dir).map_err(io_err(out_dir.to_path_buf()))?;
    let path = out_dir.join("friedman.json");
    let json = serde_json::to_string_pretty(&c.friedman).expect("plain data serializes");
    fs::write(&path, json + "\n").map_err(io_err(path.clone()))?;
    write_rows(&out_dir.join("comparisons.csv"), &c.pairwise)?;
    let groups: Vec<GroupRow> = c.groups.iter().map(GroupRow::from).collect();
    write_rows(&out_dir.join("groups.csv"), &groups)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub heatmaps: usize,
    pub comparison: Option<Comparison>,
    pub evar: Vec<EvarSummary>,
}

/// Writes every view under `out_dir`. The rank table needs at least two
/// configurations and is skipped otherwise.
pub fn write_report(
    records: &[SweepRecord],
    datasets: &[String],
    grid: &GridSpec,
    out_dir: &Path,
    options: WilcoxonOptions,
    alpha: f64,
) -> Result<ReportSummary, ReportError> {
    check_complete(records, datasets, grid)?;
    let maps = out_dir.join("heatmaps");
    fs::create_dir_all(&maps).map_err(|source| ReportError::Io { path: maps.clone(), source })?;
    let cells = Cells::new(records);
    let mut heatmaps = 0;
    for &t in &grid.treatments {
        for metric in Metric::ALL {
            let h = heatmap_from(&cells, grid, t, metric);
            h.write_csv(&maps.join(format!("{}_{}_{}.csv", metric.as_str(), t.method, t.criterion)))?;
            heatmaps += 1;
            let base = Treatment { method: ReductionMethod::None, criterion: t.criterion };
            if t.method != ReductionMethod::None && grid.treatments.contains(&base) {
                let diff = h.minus(&heatmap_from(&cells, grid, base, metric));
                diff.write_csv(&maps.join(format!(
                    "diff_{}_{}_vs_none_{}.csv",
                    metric.as_str(),
                    t.method,
                    t.criterion
                )))?;
                heatmaps += 1;
            }
        }
    }
    write_rows(&out_dir.join("boxplot.csv"), &boxplot(records, grid))?;
    let evar = evar_rows(records, grid.target_evar);
    write_rows(&out_dir.join("evar.csv"), &evar)?;
    let evar = evar_summary(&evar);
    write_rows(&out_dir.join("evar_summary.csv"), &evar)?;

    let comparison = if grid.treatments.len() >= 2 {
        let c = compare(records, datasets, grid, options, alpha)?;
        write_comparison(&c, out_dir)?;
        Some(c)
    } else {
        None
    };
    Ok(ReportSummary { heatmaps, comparison, evar })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::Criterion;

    fn fake_records(datasets: &[&str], grid: &GridSpec) -> Vec<SweepRecord> {
        let mut out = Vec::new();
        for (di, d) in datasets.iter().enumerate() {
            for (ti, t) in grid.treatments.iter().enumerate() {
                for (gi, &g) in grid.gammas.iter().enumerate() {
                    for (hi, &th) in grid.thetas.iter().enumerate() {
                        let ami = ((ti * 7 + gi * 3 + hi + di * 5) % 11) as f64 / 10.0;
                        out.push(SweepRecord {
                            dataset: d.to_string(),
                            method: t.method,
                            criterion: t.criterion,
                            gamma: g,
                            theta: th,
                            k: 3,
                            achieved_evar: if t.method == ReductionMethod::Lsi { 0.7 } else { 0.85 },
                            ami,
                            nmi: ami,
                            homogeneity: ami,
                            completeness: ami,
                            er: 0.5,
                            ier: 0.9,
                            n_clusters: 4,
                            runtime_ms: 1.0,
                            seed: 0,
                        });
                    }
                }
            }
        }
        out
    }

    #[test]
    fn heatmap_shape_and_self_difference() {
        let grid = GridSpec::default();
        let records = fake_records(&["a"], &grid);
        let h = heatmap(&records, &grid, Treatment::BASELINE, Metric::Ami);
        assert_eq!(h.shape(), (17, 21));
        assert!(h.minus(&h).cells.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn heatmap_averages_datasets() {
        let grid = GridSpec { gammas: vec![0.5], thetas: vec![0.5], ..GridSpec::baseline_only() };
        let mut records = fake_records(&["a", "b"], &grid);
        records[0].ami = 0.2;
        records[1].ami = 0.6;
        let h = heatmap(&records, &grid, Treatment::BASELINE, Metric::Ami);
        assert!((h.cells[0][0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }

    #[test]
    fn evar_surfaces_shortfall() {
        let grid = GridSpec { gammas: vec![0.0, 1.0], thetas: vec![0.5], ..GridSpec::default() };
        let records = fake_records(&["a"], &grid);
        let rows = evar_rows(&records, 0.8);
        // pca, lsi, nmf × 2 γ.
        assert_eq!(rows.len(), 6);
        let summary = evar_summary(&rows);
        let lsi = summary.iter().find(|s| s.method == ReductionMethod::Lsi).unwrap();
        assert_eq!(lsi.below_target, 2);
        assert!(summary.iter().filter(|s| s.method != ReductionMethod::Lsi).all(|s| s.below_target == 0));
    }

    #[test]
    fn full_report_files() {
        let grid = GridSpec::default();
        let records = fake_records(&["a"], &grid);
        let dir = tempfile::tempdir().unwrap();
        let s = write_report(&records, &["a".into()], &grid, dir.path(), WilcoxonOptions::default(), 0.05).unwrap();
        assert_eq!(s.heatmaps, 16 * 5 + 12 * 5);
        let groups = fs::read_to_string(dir.path().join("groups.csv")).unwrap();
        let mut lines = groups.lines();
        assert_eq!(lines.next().unwrap(), "group,dim_reduction,hac,median_ami,mean_ami,rank_sum");
        assert_eq!(lines.count(), 16);
        let cmp = fs::read_to_string(dir.path().join("comparisons.csv")).unwrap();
        assert!(cmp.starts_with("treatment_a,treatment_b,statistic,p,adjusted_p,a12,a21,significant\n"));
        assert_eq!(cmp.lines().count(), 121);
        let h = fs::read_to_string(dir.path().join("heatmaps/ami_none_complete.csv")).unwrap();
        assert_eq!(h.lines().count(), 18);
        assert!(h.lines().all(|l| l.split(',').count() == 22));
        let d = fs::read_to_string(dir.path().join("heatmaps/diff_ami_nmf_vs_none_complete.csv")).unwrap();
        assert_eq!(d.lines().count(), 18);
    }

    #[test]
    fn incomplete_grid_refused() {
        let grid = GridSpec { gammas: vec![0.0, 0.5], thetas: vec![0.5], ..GridSpec::default() };
        let mut records = fake_records(&["a"], &grid);
        records.pop();
        let dir = tempfile::tempdir().unwrap();
        let err = write_report(&records, &["a".into()], &grid, dir.path(), WilcoxonOptions::default(), 0.05).unwrap_err();
        assert!(err.is_incomplete_grid());
        let err = compare(&records, &["a".into()], &grid, WilcoxonOptions::default(), 0.05).unwrap_err();
        assert!(err.is_incomplete_grid());
        assert_eq!(Treatment { method: ReductionMethod::Nmf, criterion: Criterion::Average }.to_string(), "nmf+average");
    }
}
