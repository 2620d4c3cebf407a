use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use logclust::cluster::{ClusteringExport, Criterion};
use logclust::dimred::ReductionMethod;
use logclust::ingest::{encode_manifest, Abstractor, DelimiterConfig};
use logclust::metrics::QualityScores;
use logclust::pipeline::{run_once, PipelineError, RunConfig};
use logclust::report::{compare, write_comparison, write_report, ReportError};
use logclust::stats::{Alternative, WilcoxonMethod, WilcoxonOptions};
use logclust::sweep::{load_records, read_sidecar, sweep, GridSpec, SweepError, SweepOptions};
use logclust::synth::{generate, LogCount, SynthSpec};
use logclust::vectorize::WeightingMode;

#[derive(Parser)]
#[command(name = "logclust", version, about = "Cluster failure logs by their underlying cause")]
struct Cli {
    /// JSON file with defaults for `run`, `grid`, `synth` and `compare`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for NMF initialization and corpus synthesis.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic corpus into --out-dir.
    Synth(SynthArgs),
    /// Abstract a manifest's logs into event sequences.
    Encode(EncodeArgs),
    /// Cluster one dataset with one configuration.
    Run(RunArgs),
    /// Run the γ × θ × configuration grid, resuming if output exists.
    Sweep(SweepArgs),
    /// Friedman, pairwise Wilcoxon and rank groups from a sweep.
    Compare(CompareArgs),
    /// Heatmap, boxplot, explained-variance and rank-table CSVs from a sweep.
    Report(CompareArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Spec JSON; flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    issues: Option<usize>,
    /// Failing logs per issue: `N` or `MIN-MAX`.
    #[arg(long, value_parser = parse_count)]
    logs_per_issue: Option<LogCount>,
    #[arg(long)]
    passing: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    signature_length: Option<usize>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// JSON list of `{name, pattern, replacement}` rules replacing the defaults.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Treat indented lines as continuations of the previous event.
    #[arg(long)]
    indented_continuation: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    method: Option<ReductionMethod>,
    #[arg(long)]
    criterion: Option<Criterion>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    target_evar: Option<f64>,
    #[arg(long)]
    weighting: Option<WeightingMode>,
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    indented_continuation: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Dataset manifest; repeat for several datasets.
    #[arg(long = "manifest", required = true)]
    manifests: Vec<PathBuf>,
    /// Only the baseline configuration (none + complete).
    #[arg(long)]
    baseline_only: bool,
    /// Output CSV (default: <out-dir>/sweep.csv).
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    target_evar: Option<f64>,
    #[arg(long)]
    weighting: Option<WeightingMode>,
    /// Stop after this many work units, leaving a resumable partial sweep.
    #[arg(long, hide = true)]
    max_units: Option<usize>,
}

#[derive(Args)]
struct CompareArgs {
    /// Sweep CSV; its `.fingerprint` file supplies the grid.
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    alternative: Option<Alternative>,
    /// Force exact Wilcoxon p-values.
    #[arg(long, conflicts_with = "normal")]
    exact: bool,
    /// Force the normal approximation.
    #[arg(long)]
    normal: bool,
    /// Disable the continuity correction of the normal approximation.
    #[arg(long)]
    no_continuity: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    run: RunConfig,
    grid: GridSpec,
    synth: SynthSpec,
    compare: CompareConfig,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CompareConfig {
    alpha: f64,
    wilcoxon: WilcoxonOptions,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig { alpha: 0.05, wilcoxon: WilcoxonOptions::default() }
    }
}

fn parse_count(s: &str) -> Result<LogCount, String> {
    let num = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    match s.split_once('-') {
        Some((a, b)) => Ok(LogCount { min: num(a)?, max: num(b)? }),
        None => Ok(LogCount::exactly(num(s)?)),
    }
}

enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Incomplete(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Incomplete(_) => 3,
        }
    }
}

fn data<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Data(e.into())
}

fn usage<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Usage(e.into())
}

fn from_pipeline(e: PipelineError) -> Failure {
    match e {
        PipelineError::InvalidConfig(_) => usage(e),
        other => data(other),
    }
}

fn from_sweep(e: SweepError) -> Failure {
    match e {
        SweepError::InvalidGrid(_) => usage(e),
        SweepError::IncompleteGrid { .. } | SweepError::DuplicateRecord(_) => Failure::Incomplete(e.into()),
        other => data(other),
    }
}

fn from_report(e: ReportError) -> Failure {
    if e.is_incomplete_grid() {
        Failure::Incomplete(e.into())
    } else {
        data(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(e) | Failure::Data(e) | Failure::Incomplete(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}

fn load_config(cli: &Cli) -> Result<FileConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))
                .map_err(usage)?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))
                .map_err(usage)?
        }
        None => FileConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
        cfg.grid.seed = seed;
        cfg.synth.seed = seed;
    }
    Ok(cfg)
}

fn abstractor(rules: Option<&Path>) -> Result<Abstractor, Failure> {
    match rules {
        Some(p) => Abstractor::from_json_file(p).map_err(usage),
        None => Ok(Abstractor::with_default_rules()),
    }
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(data)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("plain data serializes");
    fs::write(path, text + "\n")
        .with_context(|| format!("writing {}", path.display()))
        .map_err(data)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli)?;
    if let Some(j) = cli.jobs {
        // Ingest and distance rows share the global pool; the sweep builds its own.
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(usage)?;
    }
    match &cli.command {
        Command::Synth(a) => cmd_synth(&cli, cfg.synth, a),
        Command::Encode(a) => cmd_encode(&cli, a),
        Command::Run(a) => cmd_run(&cli, cfg.run, a),
        Command::Sweep(a) => cmd_sweep(&cli, cfg.grid, a),
        Command::Compare(a) => cmd_compare(&cli, cfg.compare, a, false),
        Command::Report(a) => cmd_compare(&cli, cfg.compare, a, true),
    }
}

fn cmd_synth(cli: &Cli, mut spec: SynthSpec, a: &SynthArgs) -> Result<(), Failure> {
    if let Some(p) = &a.spec {
        spec = SynthSpec::from_json_file(p).map_err(usage)?;
        if let Some(seed) = cli.seed {
            spec.seed = seed;
        }
    }
    spec.n_issues = a.issues.unwrap_or(spec.n_issues);
    spec.logs_per_issue = a.logs_per_issue.unwrap_or(spec.logs_per_issue);
    spec.n_passing = a.passing.unwrap_or(spec.n_passing);
    spec.vocab_size = a.vocab_size.unwrap_or(spec.vocab_size);
    spec.noise_rate = a.noise.unwrap_or(spec.noise_rate);
    spec.signature_length = a.signature_length.unwrap_or(spec.signature_length);
    spec.validate().map_err(usage)?;
    let manifest = generate(&spec, &cli.out_dir).map_err(data)?;
    println!("{}", manifest.display());
    Ok(())
}

fn cmd_encode(cli: &Cli, a: &EncodeArgs) -> Result<(), Failure> {
    let abs = abstractor(a.rules.as_deref())?;
    let delim = DelimiterConfig { indented_continuation: a.indented_continuation };
    let ds = encode_manifest(&a.manifest, &abs, delim).map_err(data)?;
    create_dir(&cli.out_dir)?;
    write_json(&cli.out_dir.join("dataset.json"), &ds)?;
    let events = cli.out_dir.join("events.csv");
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&events)
        .map_err(data)?;
    w.write_record(["event_id", "template"]).map_err(data)?;
    for (id, t) in ds.dictionary.templates().iter().enumerate() {
        w.write_record([id.to_string().as_str(), t]).map_err(data)?;
    }
    w.flush().map_err(data)?;
    println!(
        "{}: {} logs ({} failing), {} distinct events",
        ds.name,
        ds.sequences.len(),
        ds.n_failing(),
        ds.dictionary.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct RunSummary<'a> {
    dataset: &'a str,
    config: &'a RunConfig,
    applied_method: ReductionMethod,
    k: usize,
    achieved_evar: f64,
    n_logs: usize,
    n_clusters: usize,
    scores: Option<QualityScores>,
}

fn cmd_run(cli: &Cli, mut cfg: RunConfig, a: &RunArgs) -> Result<(), Failure> {
    cfg.method = a.method.unwrap_or(cfg.method);
    cfg.criterion = a.criterion.unwrap_or(cfg.criterion);
    cfg.gamma = a.gamma.unwrap_or(cfg.gamma);
    cfg.theta = a.theta.unwrap_or(cfg.theta);
    cfg.target_evar = a.target_evar.unwrap_or(cfg.target_evar);
    cfg.weighting_mode = a.weighting.unwrap_or(cfg.weighting_mode);
    cfg.validate().map_err(from_pipeline)?;

    let abs = abstractor(a.rules.as_deref())?;
    let delim = DelimiterConfig { indented_continuation: a.indented_continuation };
    let ds = encode_manifest(&a.manifest, &abs, delim)
        .map_err(|e| from_pipeline(e.into()))?;
    let out = run_once(&ds, &cfg).map_err(from_pipeline)?;

    create_dir(&cli.out_dir)?;
    let export = ClusteringExport::new(&out.clustering, cfg.criterion, &out.log_ids);
    write_json(&cli.out_dir.join("clustering.json"), &export)?;
    let weights = cli.out_dir.join("weights.csv");
    let file = fs::File::create(&weights)
        .with_context(|| format!("writing {}", weights.display()))
        .map_err(data)?;
    out.weights.write_csv(&ds, file).map_err(data)?;
    let summary = RunSummary {
        dataset: &ds.name,
        config: &cfg,
        applied_method: out.applied_method,
        k: out.k,
        achieved_evar: out.achieved_evar,
        n_logs: out.log_ids.len(),
        n_clusters: out.clustering.n_clusters(),
        scores: out.scores,
    };
    write_json(&cli.out_dir.join("run.json"), &summary)?;

    print!(
        "{}: {} failing logs -> {} clusters ({}+{}, gamma={}, theta={}, k={}, evar={:.4})",
        ds.name,
        summary.n_logs,
        summary.n_clusters,
        cfg.method,
        cfg.criterion,
        cfg.gamma,
        cfg.theta,
        out.k,
        out.achieved_evar
    );
    match out.scores {
        Some(s) => println!(
            " AMI={:.4} NMI={:.4} H={:.4} C={:.4} ER={:.4} IER={:.4}",
            s.ami, s.nmi, s.homogeneity, s.completeness, s.er, s.ier
        ),
        None => println!(),
    }
    Ok(())
}

fn cmd_sweep(cli: &Cli, mut grid: GridSpec, a: &SweepArgs) -> Result<(), Failure> {
    if a.baseline_only {
        grid.treatments = GridSpec::baseline_only().treatments;
    }
    grid.target_evar = a.target_evar.unwrap_or(grid.target_evar);
    grid.weighting_mode = a.weighting.unwrap_or(grid.weighting_mode);
    grid.validate().map_err(from_sweep)?;

    let abs = Abstractor::with_default_rules();
    let datasets = a
        .manifests
        .iter()
        .map(|m| encode_manifest(m, &abs, DelimiterConfig::default()).with_context(|| format!("{}", m.display())))
        .collect::<Result<Vec<_>, _>>()
        .map_err(data)?;
    let output = a.output.clone().unwrap_or_else(|| cli.out_dir.join("sweep.csv"));
    let options = SweepOptions { jobs: cli.jobs, max_units: a.max_units };
    let s = sweep(&datasets, &grid, &output, options).map_err(from_sweep)?;
    println!(
        "{}: {} records expected, {} already present, {} written",
        output.display(),
        s.expected,
        s.skipped,
        s.written
    );
    Ok(())
}

fn cmd_compare(cli: &Cli, cfg: CompareConfig, a: &CompareArgs, full: bool) -> Result<(), Failure> {
    let alpha = a.alpha.unwrap_or(cfg.alpha);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(usage(anyhow!("alpha {alpha} outside (0, 1)")));
    }
    let mut options = cfg.wilcoxon;
    options.alternative = a.alternative.unwrap_or(options.alternative);
    if a.exact {
        options.method = WilcoxonMethod::Exact;
    } else if a.normal {
        options.method = WilcoxonMethod::Normal;
    }
    if a.no_continuity {
        options.continuity = false;
    }

    let manifest = read_sidecar(&a.records).map_err(data)?;
    let records = load_records(&a.records).map_err(data)?;
    if full {
        let s = write_report(&records, &manifest.datasets, &manifest.grid, &cli.out_dir, options, alpha)
            .map_err(from_report)?;
        println!("{} heatmaps written to {}", s.heatmaps, cli.out_dir.join("heatmaps").display());
        for e in &s.evar {
            println!(
                "evar {}: median {:.4} (min {:.4}, max {:.4}), {} of {} below target {}",
                e.method, e.median, e.min, e.max, e.below_target, e.n, manifest.grid.target_evar
            );
        }
        if let Some(c) = &s.comparison {
            print_groups(c);
        }
    } else {
        let c = compare(&records, &manifest.datasets, &manifest.grid, options, alpha).map_err(from_report)?;
        write_comparison(&c, &cli.out_dir).map_err(data)?;
        print_groups(&c);
    }
    Ok(())
}

fn print_groups(c: &logclust::report::Comparison) {
    println!(
        "Friedman chi2={:.4} df={} p={:.3e}",
        c.friedman.statistic, c.friedman.df, c.friedman.p
    );
    for g in &c.groups {
        println!(
            "{:<3} {:<18} median AMI {:.4}  mean AMI {:.4}",
            g.group, g.treatment, g.median, g.mean
        );
    }
}
