//! Experiment report structure and the JSON / CSV / Markdown renderers.
//!
//! Reports carry no timestamps or host details: rendering the same experiment
//! twice yields identical bytes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{RankSummary, SignedRankResult, WinLoss};

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn parse(text: &str) -> Result<ReportFormat> {
        match text.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(Error::Config(format!(
                "unknown format '{other}' (expected json, csv, or md)"
            ))),
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEcho {
    pub id: String,
    pub sample_count: usize,
    pub feature_dim: usize,
    pub class_count: usize,
    pub clusters_used: usize,
}

/// The experiment settings that shaped the results. Worker count is omitted
/// on purpose: it never influences the numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub variants: Vec<String>,
    pub alpha_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub neighbor_grid: Vec<usize>,
    pub runs: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub extraction: String,
    pub restarts: usize,
    pub scale_features: bool,
}

/// Per-variant behavior switches, spelling out how the family members differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantEcho {
    pub variant: String,
    pub self_representation: bool,
    pub beta_forced_zero: bool,
    pub lambda_forced_zero: bool,
    pub uses_neighbor_graph: bool,
    pub refreshes_graph_each_iteration: bool,
}

/// One completed fit-and-score run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: String,
    /// Position in `cells`.
    pub cell: usize,
    /// First-occurrence index in the full grid enumeration; the seed input.
    pub grid_index: usize,
    pub run: usize,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub neighbors: usize,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub nmi: f64,
    pub acc: f64,
    pub purity: f64,
}

/// Aggregate over the successful runs of one (variant, grid point) cell.
/// Hyperparameters a variant ignores are echoed as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCellSummary {
    pub variant: String,
    pub cell: usize,
    pub grid_index: usize,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub neighbors: usize,
    pub runs_used: usize,
    pub converged_runs: usize,
    pub mean_iterations: f64,
    pub mean_nmi: f64,
    pub std_nmi: f64,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub mean_purity: f64,
    pub std_purity: f64,
}

/// A variant's best grid cell, ranked by mean NMI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub best: GridCellSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantWinLoss {
    pub variant: String,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    pub result: SignedRankResult,
}

/// Significance analysis over the per-run scores at each variant's best cell.
/// Rows are (metric, run) pairs restricted to runs every variant completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsBlock {
    pub reference: String,
    pub rows_used: usize,
    pub win_loss_total: WinLoss,
    pub win_loss: Vec<VariantWinLoss>,
    pub friedman: Option<RankSummary>,
    pub wilcoxon: Vec<PairwiseTest>,
    pub notes: Vec<String>,
}

/// Best-per-variant summaries at one neighbor count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub neighbors: usize,
    pub best: Vec<VariantSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format_version: u32,
    /// "benchmark", "ablation", or "sweep-p".
    pub kind: String,
    pub dataset: DatasetEcho,
    pub config: ConfigEcho,
    pub variant_settings: Vec<VariantEcho>,
    pub records: Vec<RunRecord>,
    pub cells: Vec<GridCellSummary>,
    pub best: Vec<VariantSummary>,
    pub stats: Option<StatsBlock>,
    /// All-pairs significance tests (ablation runs).
    pub pairwise: Vec<PairwiseTest>,
    /// Neighbor-count sweep results (sweep-p runs).
    pub sweep: Vec<SweepPoint>,
    pub warnings: Vec<String>,
}

impl ExperimentReport {
    pub fn best_cell(&self, variant: &str) -> Option<&GridCellSummary> {
        self.best
            .iter()
            .find(|s| s.variant == variant)
            .map(|s| &s.best)
    }
}

/// Mean and population standard deviation as percentage points.
fn pm(mean: f64, std: f64) -> String {
    format!("{:.2}±{:.2}", 100.0 * mean, 100.0 * std)
}

pub fn render_report(report: &ExperimentReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let mut text = serde_json::to_string_pretty(report)
                .map_err(|e| Error::invalid(format!("report serialization: {e}")))?;
            text.push('\n');
            Ok(text)
        }
        ReportFormat::Csv => Ok(render_csv(report)),
        ReportFormat::Markdown => Ok(render_markdown(report)),
    }
}

fn csv_rows(report: &ExperimentReport) -> Vec<(Option<usize>, &VariantSummary)> {
    if report.sweep.is_empty() {
        report.best.iter().map(|s| (None, s)).collect()
    } else {
        report
            .sweep
            .iter()
            .flat_map(|point| point.best.iter().map(|s| (Some(point.neighbors), s)))
            .collect()
    }
}

fn render_csv(report: &ExperimentReport) -> String {
    let sweeping = !report.sweep.is_empty();
    let mut out = String::new();
    if sweeping {
        out.push_str("neighbors,");
    }
    out.push_str("variant,alpha,beta,lambda,best_neighbors,runs,nmi,acc,purity\n");
    for (p, summary) in csv_rows(report) {
        let c = &summary.best;
        if let Some(p) = p {
            out.push_str(&format!("{p},"));
        }
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            summary.variant,
            c.alpha,
            c.beta,
            c.lambda,
            c.neighbors,
            c.runs_used,
            pm(c.mean_nmi, c.std_nmi),
            pm(c.mean_acc, c.std_acc),
            pm(c.mean_purity, c.std_purity),
        ));
    }
    out
}

fn render_markdown(report: &ExperimentReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("# {} on {}\n\n", report.kind, report.dataset.id));
    out.push_str(&format!(
        "{} samples, {} features, {} classes, {} clusters, {} runs per cell, seed {}.\n\n",
        report.dataset.sample_count,
        report.dataset.feature_dim,
        report.dataset.class_count,
        report.dataset.clusters_used,
        report.config.runs,
        report.config.seed,
    ));

    if !report.sweep.is_empty() {
        render_sweep_table(report, &mut out);
    } else if !report.best.is_empty() {
        render_summary_table(report, &mut out);
    }

    if !report.pairwise.is_empty() {
        out.push_str("\n## Pairwise signed-rank tests\n\n");
        out.push_str("| a | b | W+ | W- | p |\n|---|---|---|---|---|\n");
        for test in &report.pairwise {
            out.push_str(&format!(
                "| {} | {} | {:.1} | {:.1} | {:.3e} |\n",
                test.a, test.b, test.result.w_plus, test.result.w_minus, test.result.p_value
            ));
        }
    }

    if !report.warnings.is_empty() {
        out.push_str("\n## Warnings\n\n");
        for w in &report.warnings {
            out.push_str(&format!("- {w}\n"));
        }
    }
    out
}

fn render_summary_table(report: &ExperimentReport, out: &mut String) {
    let variants: Vec<&str> = report.best.iter().map(|s| s.variant.as_str()).collect();
    out.push_str("| metric |");
    for v in &variants {
        out.push_str(&format!(" {v} |"));
    }
    out.push('\n');
    out.push_str("|---|");
    for _ in &variants {
        out.push_str("---|");
    }
    out.push('\n');

    let metric_rows: [(&str, fn(&GridCellSummary) -> (f64, f64)); 3] = [
        ("nmi", |c| (c.mean_nmi, c.std_nmi)),
        ("acc", |c| (c.mean_acc, c.std_acc)),
        ("purity", |c| (c.mean_purity, c.std_purity)),
    ];
    for (name, pick) in metric_rows {
        out.push_str(&format!("| {name} |"));
        for summary in &report.best {
            let (mean, std) = pick(&summary.best);
            out.push_str(&format!(" {} |", pm(mean, std)));
        }
        out.push('\n');
    }

    if let Some(stats) = &report.stats {
        out.push_str("| win/loss |");
        for v in &variants {
            if *v == stats.reference {
                out.push_str(" ref |");
            } else {
                match stats.win_loss.iter().find(|wl| wl.variant == *v) {
                    Some(wl) => out.push_str(&format!(" {}/{} |", wl.wins, wl.losses)),
                    None => out.push_str(" - |"),
                }
            }
        }
        out.push('\n');

        if let Some(friedman) = &stats.friedman {
            out.push_str("| F-rank |");
            for v in &variants {
                match friedman.method_names.iter().position(|n| n == v) {
                    Some(j) => out.push_str(&format!(" {:.2} |", friedman.mean_ranks[j])),
                    None => out.push_str(" - |"),
                }
            }
            out.push('\n');
        }

        out.push_str("| p-value |");
        for v in &variants {
            if *v == stats.reference {
                out.push_str(" ref |");
            } else {
                match stats.wilcoxon.iter().find(|t| t.b == *v) {
                    Some(t) => out.push_str(&format!(" {:.3e} |", t.result.p_value)),
                    None => out.push_str(" - |"),
                }
            }
        }
        out.push('\n');
    }
}

fn render_sweep_table(report: &ExperimentReport, out: &mut String) {
    let mut variants: Vec<&str> = Vec::new();
    for point in &report.sweep {
        for s in &point.best {
            if !variants.contains(&s.variant.as_str()) {
                variants.push(&s.variant);
            }
        }
    }
    out.push_str("NMI by neighbor count:\n\n| p |");
    for v in &variants {
        out.push_str(&format!(" {v} |"));
    }
    out.push('\n');
    out.push_str("|---|");
    for _ in &variants {
        out.push_str("---|");
    }
    out.push('\n');
    for point in &report.sweep {
        out.push_str(&format!("| {} |", point.neighbors));
        for v in &variants {
            match point.best.iter().find(|s| s.variant == *v) {
                Some(s) => out.push_str(&format!(" {} |", pm(s.best.mean_nmi, s.best.std_nmi))),
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
}
