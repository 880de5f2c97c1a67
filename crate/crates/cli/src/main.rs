//! Command-line front end: graph export, single fits, and the benchmark,
//! ablation, neighbor-sweep, and grid experiments with report rendering.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

use cfsrag::data::{load_csv, CsvOptions, DatasetRef};
use cfsrag::eval::{extract_labels, ExtractionMethod, MetricTriple};
use cfsrag::factorize::{fit, write_checkpoint, Hyperparams, Variant};
use cfsrag::graph::{build_graph, AffinityGraph};
use cfsrag::matrix::{DataMatrix, LabelVector};
use cfsrag::harness::{
    parse_config_file, render_report, run_ablation, run_benchmark, run_sweep_p,
    ExperimentConfig, ExperimentReport, GridCellSummary, ReportFormat,
};
use cfsrag::{Error, Result};

#[derive(Parser)]
#[command(
    name = "cfsrag",
    version,
    about = "Concept factorization with self-representation and adaptive graph regularization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the p-neighbor affinity graph and export its weights.
    Graph(GraphArgs),
    /// Run one factorization and print its fit summary and scores.
    Fit(FitArgs),
    /// Multi-seed benchmark across variants and hyperparameter grids.
    Bench(ExperimentArgs),
    /// Four-variant ablation with pairwise significance tests.
    Ablate(ExperimentArgs),
    /// Neighbor-count sweep emitting per-p metric curves.
    SweepP(ExperimentArgs),
    /// Hyperparameter grid search reporting every cell.
    Grid(ExperimentArgs),
    /// Re-render a saved JSON report as JSON, CSV, or Markdown.
    Report(ReportArgs),
}

#[derive(Args)]
struct GraphArgs {
    /// CSV path or `blobs:clusters=3,per_cluster=20,dim=10,spread=10,stddev=1`.
    #[arg(long, value_name = "PATH")]
    dataset: String,

    /// Neighbors kept per affinity row.
    #[arg(long, value_name = "INT", default_value_t = 5)]
    neighbors: usize,

    /// Min-max scale each feature to [0, 1] before computing distances.
    #[arg(long, value_name = "BOOL", default_value_t = false, action = ArgAction::Set)]
    scale_features: bool,

    /// Directory for the edge-list file; written to stdout when omitted.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// CSV path or `blobs:...` spec.
    #[arg(long, value_name = "PATH")]
    dataset: String,

    /// nmf | cf | cfsr | cfsr-f | cfsrg | cfsrag.
    #[arg(long, value_name = "NAME", default_value = "cfsrag")]
    variant: String,

    /// Self-representation coupling weight.
    #[arg(long, value_name = "FLOAT")]
    alpha: Option<f64>,

    /// Graph smoothness weight.
    #[arg(long, value_name = "FLOAT")]
    beta: Option<f64>,

    /// Ridge weight on the representation matrix.
    #[arg(long, value_name = "FLOAT")]
    lambda: Option<f64>,

    /// Neighbors kept per affinity row.
    #[arg(long, value_name = "INT")]
    neighbors: Option<usize>,

    /// Cluster count; defaults to the dataset's class count.
    #[arg(long, value_name = "INT")]
    clusters: Option<usize>,

    #[arg(long, value_name = "UINT64", default_value_t = 0)]
    seed: u64,

    #[arg(long, value_name = "INT")]
    max_iter: Option<usize>,

    /// Relative objective-change stopping tolerance.
    #[arg(long, value_name = "FLOAT")]
    tol: Option<f64>,

    /// kmeans | argmax label extraction.
    #[arg(long, value_name = "NAME", default_value = "kmeans")]
    extract: String,

    #[arg(long, value_name = "BOOL", default_value_t = false, action = ArgAction::Set)]
    scale_features: bool,

    /// Directory for fit.json and factors.json; print-only when omitted.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

/// Flags shared by bench, ablate, sweep-p, and grid. Every value is optional;
/// the config file fills gaps first and built-in defaults cover the rest.
#[derive(Args)]
struct ExperimentArgs {
    /// `key = value` settings file applied before the flags below.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// CSV path or `blobs:...` spec.
    #[arg(long, value_name = "PATH")]
    dataset: Option<String>,

    /// Comma-separated variant list.
    #[arg(long, value_name = "NAME[,NAME]")]
    variant: Option<String>,

    /// Grid values for the coupling weight.
    #[arg(long, value_name = "FLOAT|LIST")]
    alpha: Option<String>,

    /// Grid values for the graph smoothness weight.
    #[arg(long, value_name = "FLOAT|LIST")]
    beta: Option<String>,

    /// Grid values for the ridge weight.
    #[arg(long, value_name = "FLOAT|LIST")]
    lambda: Option<String>,

    /// Neighbor counts to sweep.
    #[arg(long, value_name = "INT|LIST")]
    neighbors: Option<String>,

    /// Cluster count; defaults to the dataset's class count.
    #[arg(long, value_name = "INT")]
    clusters: Option<usize>,

    /// Runs per grid cell.
    #[arg(long, value_name = "INT")]
    runs: Option<usize>,

    /// Master seed; every run seed is derived from it.
    #[arg(long, value_name = "UINT64")]
    seed: Option<u64>,

    #[arg(long, value_name = "INT")]
    max_iter: Option<usize>,

    /// Relative objective-change stopping tolerance.
    #[arg(long, value_name = "FLOAT")]
    tol: Option<f64>,

    /// kmeans | argmax label extraction.
    #[arg(long, value_name = "NAME")]
    extract: Option<String>,

    /// Min-max scale each feature to [0, 1].
    #[arg(long, value_name = "BOOL")]
    scale_features: Option<String>,

    /// Directory for the rendered report files.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,

    /// Write only this rendering instead of all three.
    #[arg(long, value_name = "json|csv|md")]
    format: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// A JSON report produced by bench, ablate, sweep-p, or grid.
    #[arg(value_name = "REPORT.json")]
    input: PathBuf,

    /// Directory for the rendered files.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,

    /// Write only this rendering instead of all three.
    #[arg(long, value_name = "json|csv|md")]
    format: Option<String>,
}

#[derive(Clone, Copy, PartialEq)]
enum ExperimentKind {
    Bench,
    Ablate,
    SweepP,
    Grid,
}

impl ExperimentKind {
    fn stem(self) -> &'static str {
        match self {
            ExperimentKind::Bench => "bench",
            ExperimentKind::Ablate => "ablate",
            ExperimentKind::SweepP => "sweep-p",
            ExperimentKind::Grid => "grid",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Graph(args) => cmd_graph(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Bench(args) => cmd_experiment(args, ExperimentKind::Bench),
        Command::Ablate(args) => cmd_experiment(args, ExperimentKind::Ablate),
        Command::SweepP(args) => cmd_experiment(args, ExperimentKind::SweepP),
        Command::Grid(args) => cmd_experiment(args, ExperimentKind::Grid),
        Command::Report(args) => cmd_report(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

/// Loads any dataset reference, tolerating missing labels for CSV files.
fn load_any(dataset: &DatasetRef) -> Result<(DataMatrix, Option<LabelVector>)> {
    match dataset {
        DatasetRef::Csv { path, options } => load_csv(path, options),
        synthetic => synthetic.load().map(|(x, y)| (x, Some(y))),
    }
}

fn cmd_graph(args: GraphArgs) -> Result<()> {
    let dataset = DatasetRef::parse(&args.dataset, &CsvOptions::default())?;
    let (x, _) = load_any(&dataset)?;
    let x = if args.scale_features {
        x.scale_features_minmax()
    } else {
        x
    };
    let graph = build_graph(&x, args.neighbors)?;
    let (edges, count) = render_edges(&graph);
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join("graph.txt");
            fs::write(&path, &edges)?;
            println!(
                "graph: {} samples, p = {}, {} nonzero weights -> {}",
                graph.sample_count(),
                graph.p(),
                count,
                path.display()
            );
        }
        None => print!("{edges}"),
    }
    Ok(())
}

/// Renders the symmetrized weights as `i j weight` lines in row-major order.
/// 17 significant digits round-trip an f64 exactly.
fn render_edges(graph: &AffinityGraph) -> (String, usize) {
    let mut out = String::new();
    let mut count = 0;
    for ((i, j), &weight) in graph.w().indexed_iter() {
        if weight > 0.0 {
            out.push_str(&format!("{i} {j} {weight:.16e}\n"));
            count += 1;
        }
    }
    (out, count)
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let dataset = DatasetRef::parse(&args.dataset, &CsvOptions::default())?;
    let (x, labels) = load_any(&dataset)?;
    let x = if args.scale_features {
        x.scale_features_minmax()
    } else {
        x
    };
    let variant = Variant::parse(&args.variant)?;
    let clusters = match (args.clusters, &labels) {
        (Some(c), _) => c,
        (None, Some(y)) => y.class_count(),
        (None, None) => {
            return Err(Error::Config(
                "--clusters is required when the dataset has no label column".into(),
            ))
        }
    };

    let mut hp = Hyperparams::new(variant, clusters);
    if let Some(v) = args.alpha {
        hp.alpha = v;
    }
    if let Some(v) = args.beta {
        hp.beta = v;
    }
    if let Some(v) = args.lambda {
        hp.lambda = v;
    }
    if let Some(v) = args.neighbors {
        hp.neighbors = v;
    }
    if let Some(v) = args.max_iter {
        hp.max_iter = v;
    }
    if let Some(v) = args.tol {
        hp.rel_tol = v;
    }
    hp.seed = args.seed;
    let hp = hp.with_forced_zeros();

    let method = ExtractionMethod::parse(&args.extract)?;
    let result = fit(&x, &hp)?;
    let assignment = extract_labels(&result.state.v().view(), method, 10, args.seed)?;
    let metrics = match &labels {
        Some(y) => Some(MetricTriple::compute(y, &assignment)?),
        None => None,
    };

    println!(
        "fit: {} on {} ({} samples, {} features, {} clusters)",
        variant,
        dataset.id(),
        x.sample_count(),
        x.feature_dim(),
        clusters
    );
    println!(
        "objective {:.6e} after {} iterations ({})",
        result.final_objective,
        result.iterations_run,
        if result.converged {
            "converged"
        } else {
            "max-iter"
        }
    );
    if let Some(m) = &metrics {
        println!(
            "NMI {:.4}  ACC {:.4}  PUR {:.4}",
            m.nmi, m.acc, m.purity
        );
    }

    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        let summary = serde_json::json!({
            "dataset": dataset.id(),
            "variant": variant.to_string(),
            "alpha": hp.alpha,
            "beta": hp.beta,
            "lambda": hp.lambda,
            "neighbors": hp.neighbors,
            "clusters": clusters,
            "seed": args.seed,
            "max_iter": hp.max_iter,
            "tol": hp.rel_tol,
            "extract": args.extract,
            "scale_features": args.scale_features,
            "iterations": result.iterations_run,
            "converged": result.converged,
            "objective": result.final_objective,
            "metrics": metrics.as_ref().map(|m| {
                serde_json::json!({ "nmi": m.nmi, "acc": m.acc, "purity": m.purity })
            }),
            "labels": assignment.labels(),
        });
        let summary_path = dir.join("fit.json");
        let text = serde_json::to_string_pretty(&summary)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        fs::write(&summary_path, text + "\n")?;
        let factors_path = dir.join("factors.json");
        let mut file = fs::File::create(&factors_path)?;
        write_checkpoint(&result.state, &mut file)?;
        println!(
            "wrote {} and {}",
            summary_path.display(),
            factors_path.display()
        );
    }
    Ok(())
}

impl ExperimentArgs {
    /// Flag overrides in `apply` key form, in the order they beat the file.
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut pairs = Vec::new();
        let mut push = |key: &'static str, value: Option<String>| {
            if let Some(v) = value {
                pairs.push((key, v));
            }
        };
        push("dataset", self.dataset.clone());
        push("variant", self.variant.clone());
        push("alpha", self.alpha.clone());
        push("beta", self.beta.clone());
        push("lambda", self.lambda.clone());
        push("neighbors", self.neighbors.clone());
        push("clusters", self.clusters.map(|v| v.to_string()));
        push("runs", self.runs.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push("max-iter", self.max_iter.map(|v| v.to_string()));
        push("tol", self.tol.map(|v| v.to_string()));
        push("extract", self.extract.clone());
        push("scale-features", self.scale_features.clone());
        pairs
    }

    /// Builds the effective config and reports whether a neighbor list was
    /// given explicitly (sweep-p falls back to its own default grid otherwise).
    fn build_config(&self) -> Result<(ExperimentConfig, bool)> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        if let Some(path) = &self.config {
            pairs.extend(parse_config_file(path)?);
        }
        pairs.extend(
            self.overrides()
                .into_iter()
                .map(|(k, v)| (k.to_string(), v)),
        );
        let given = |key: &str| pairs.iter().any(|(k, _)| k.replace('_', "-") == key);
        if !given("dataset") {
            return Err(Error::Config(
                "no dataset given: pass --dataset or set it in the config file".into(),
            ));
        }
        let neighbors_given = given("neighbors");
        // Placeholder; the guaranteed dataset pair overwrites it below.
        let mut config =
            ExperimentConfig::new(DatasetRef::parse("unset.csv", &CsvOptions::default())?);
        for (key, value) in &pairs {
            config.apply(key, value)?;
        }
        config.validate()?;
        Ok((config, neighbors_given))
    }
}

fn cmd_experiment(args: ExperimentArgs, kind: ExperimentKind) -> Result<()> {
    let (config, neighbors_given) = args.build_config()?;
    let report = match kind {
        ExperimentKind::Bench | ExperimentKind::Grid => run_benchmark(&config)?,
        ExperimentKind::Ablate => run_ablation(&config)?,
        ExperimentKind::SweepP => {
            let requested = neighbors_given.then(|| config.neighbor_grid.clone());
            run_sweep_p(&config, requested.as_deref())?
        }
    };
    write_renderings(&report, &args.out, kind.stem(), args.format.as_deref())?;
    print_summary(&report, kind);
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&args.input)?;
    let report: ExperimentReport = serde_json::from_str(&text).map_err(|e| {
        Error::Config(format!(
            "{}: not a report file: {e}",
            args.input.display()
        ))
    })?;
    let stem = args
        .input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("report")
        .to_string();
    write_renderings(&report, &args.out, &stem, args.format.as_deref())
}

fn write_renderings(
    report: &ExperimentReport,
    out: &PathBuf,
    stem: &str,
    only: Option<&str>,
) -> Result<()> {
    let formats = match only {
        Some(text) => vec![ReportFormat::parse(text)?],
        None => vec![ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown],
    };
    fs::create_dir_all(out)?;
    for format in formats {
        let extension = match format {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        };
        let path = out.join(format!("{stem}.{extension}"));
        fs::write(&path, render_report(report, format)?)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cell_scores(cell: &GridCellSummary) -> String {
    format!(
        "NMI {:.2}±{:.2}  ACC {:.2}±{:.2}  PUR {:.2}±{:.2}",
        100.0 * cell.mean_nmi,
        100.0 * cell.std_nmi,
        100.0 * cell.mean_acc,
        100.0 * cell.std_acc,
        100.0 * cell.mean_purity,
        100.0 * cell.std_purity
    )
}

fn cell_point(cell: &GridCellSummary) -> String {
    format!(
        "alpha={} beta={} lambda={} p={}",
        cell.alpha, cell.beta, cell.lambda, cell.neighbors
    )
}

fn print_summary(report: &ExperimentReport, kind: ExperimentKind) {
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    if kind == ExperimentKind::SweepP {
        for point in &report.sweep {
            for summary in &point.best {
                println!(
                    "p={:<3} {:>7}: {}",
                    point.neighbors,
                    summary.variant,
                    cell_scores(&summary.best)
                );
            }
        }
        return;
    }
    if kind == ExperimentKind::Grid {
        // Per-variant leaderboard; the full per-cell table is in the files.
        for summary in &report.best {
            let variant = &summary.variant;
            let mut cells: Vec<&GridCellSummary> = report
                .cells
                .iter()
                .filter(|cell| &cell.variant == variant)
                .collect();
            cells.sort_by(|a, b| b.mean_nmi.total_cmp(&a.mean_nmi));
            for (rank, cell) in cells.iter().take(5).enumerate() {
                println!(
                    "{:>7} #{} {} at {}",
                    variant,
                    rank + 1,
                    cell_scores(cell),
                    cell_point(cell)
                );
            }
        }
        return;
    }
    for summary in &report.best {
        println!(
            "{:>7}: {} at {}",
            summary.variant,
            cell_scores(&summary.best),
            cell_point(&summary.best)
        );
    }
    for test in &report.pairwise {
        println!(
            "{} vs {}: R+ = {:.1}, R- = {:.1}, p = {:.3e}",
            test.a, test.b, test.result.w_plus, test.result.w_minus, test.result.p_value
        );
    }
}
