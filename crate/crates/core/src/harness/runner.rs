//! Grid enumeration, deduplication, parallel execution, and aggregation.

use rayon::prelude::*;
use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::eval::{extract_labels, MetricTriple};
use crate::factorize::{fit, Hyperparams, Variant};
use crate::harness::config::ExperimentConfig;
use crate::harness::derive_seed;
use crate::harness::report::{
    ConfigEcho, DatasetEcho, ExperimentReport, GridCellSummary, PairwiseTest, RunRecord,
    StatsBlock, SweepPoint, VariantEcho, VariantSummary, REPORT_FORMAT_VERSION,
};
use crate::matrix::{DataMatrix, LabelVector};
use crate::stats::{friedman_ranks, wilcoxon_signed_rank, win_loss, ScoreTable, WinLoss};

/// Runs every variant over the full hyperparameter grid and compares them.
pub fn run_benchmark(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let (x, labels, clusters) = prepare_data(config)?;
    run_experiment_on(&x, &labels, clusters, config, "benchmark", false)
}

/// Benchmarks the fixed self-representation ladder, adding every pairwise
/// significance test. The config's own variant list is ignored.
pub fn run_ablation(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut config = config.clone();
    config.variants = vec![Variant::Cfsr, Variant::CfsrF, Variant::Cfsrg, Variant::Cfsrag];
    let (x, labels, clusters) = prepare_data(&config)?;
    run_experiment_on(&x, &labels, clusters, &config, "ablation", true)
}

/// Sensitivity of the graph-based variants to the neighbor count. Each value
/// of `p_values` (default `DEFAULT_NEIGHBOR_SWEEP`) becomes one sweep point;
/// values needing more samples than the dataset has are skipped with a
/// warning.
pub fn run_sweep_p(
    config: &ExperimentConfig,
    p_values: Option<&[usize]>,
) -> Result<ExperimentReport> {
    let mut config = config.clone();
    let requested: Vec<usize> = p_values
        .map(|p| p.to_vec())
        .unwrap_or_else(|| crate::harness::config::DEFAULT_NEIGHBOR_SWEEP.to_vec());
    if requested.is_empty() {
        return Err(Error::Config("no neighbor counts to sweep".into()));
    }

    let mut warnings = Vec::new();
    let graph_variants: Vec<Variant> = config
        .variants
        .iter()
        .copied()
        .filter(|v| v.uses_graph())
        .collect();
    for v in &config.variants {
        if !v.uses_graph() {
            warnings.push(format!("sweep: '{v}' has no neighbor graph, skipping it"));
        }
    }
    if graph_variants.is_empty() {
        return Err(Error::Config(
            "sweep needs at least one graph-based variant".into(),
        ));
    }
    config.variants = graph_variants;
    config.neighbor_grid = requested.clone();
    config.validate()?;

    let (x, labels, clusters) = prepare_data(&config)?;
    let n = x.sample_count();

    let mut merged = empty_report(&config, &x, &labels, clusters, "sweep-p");
    merged.warnings.append(&mut warnings);

    for &p in &requested {
        if p + 2 > n {
            merged.warnings.push(format!(
                "sweep: skipping p={p}, the dataset has {n} samples so p can be at most {}",
                n.saturating_sub(2)
            ));
            continue;
        }
        let mut sub = config.clone();
        sub.neighbor_grid = vec![p];
        let point = run_experiment_on(&x, &labels, clusters, &sub, "sweep-p", false)?;

        let cell_offset = merged.cells.len();
        for mut record in point.records {
            record.cell += cell_offset;
            merged.records.push(record);
        }
        for mut cell in point.cells {
            cell.cell += cell_offset;
            merged.cells.push(cell);
        }
        merged.warnings.extend(point.warnings);
        merged.sweep.push(SweepPoint {
            neighbors: p,
            best: point.best,
        });
    }
    Ok(merged)
}

fn prepare_data(config: &ExperimentConfig) -> Result<(DataMatrix, LabelVector, usize)> {
    config.validate()?;
    let (x, labels) = config.dataset.load()?;
    let x = if config.scale_features {
        x.scale_features_minmax()
    } else {
        x
    };
    let clusters = config.clusters.unwrap_or_else(|| labels.class_count());
    if clusters == 0 || clusters > x.sample_count() {
        return Err(Error::Config(format!(
            "{clusters} clusters requested for {} samples",
            x.sample_count()
        )));
    }
    Ok((x, labels, clusters))
}

/// The hyperparameters a variant actually reads, zeroed elsewhere. This is
/// both the report echo and the deduplication key, so grid axes a variant
/// ignores collapse to a single cell.
fn effective_settings(
    variant: Variant,
    alpha: f64,
    beta: f64,
    lambda: f64,
    p: usize,
) -> (f64, f64, f64, usize) {
    match variant {
        Variant::Nmf | Variant::Cf => (0.0, 0.0, 0.0, 0),
        Variant::Cfsr => (alpha, 0.0, 0.0, 0),
        Variant::CfsrF => (alpha, 0.0, lambda, 0),
        Variant::Cfsrg | Variant::Cfsrag => (alpha, beta, lambda, p),
    }
}

fn canonical_variant_index(variant: Variant) -> u64 {
    Variant::ALL
        .iter()
        .position(|&v| v == variant)
        .expect("every variant appears in ALL") as u64
}

struct CellPlan {
    variant: Variant,
    hp: Hyperparams,
    grid_index: usize,
    echo: (f64, f64, f64, usize),
}

struct Job {
    cell: usize,
    run: usize,
    seed: u64,
    hp: Hyperparams,
}

fn plan_cells(
    config: &ExperimentConfig,
    clusters: usize,
    n: usize,
    warnings: &mut Vec<String>,
) -> Vec<CellPlan> {
    let mut cells = Vec::new();
    for &variant in &config.variants {
        let mut seen: HashSet<(u64, u64, u64, usize)> = HashSet::new();
        let mut grid_index = 0usize;
        for &alpha in &config.alpha_grid {
            for &beta in &config.beta_grid {
                for &lambda in &config.lambda_grid {
                    for &p in &config.neighbor_grid {
                        let index = grid_index;
                        grid_index += 1;
                        let echo = effective_settings(variant, alpha, beta, lambda, p);
                        let key = (echo.0.to_bits(), echo.1.to_bits(), echo.2.to_bits(), echo.3);
                        if !seen.insert(key) {
                            continue;
                        }
                        let mut hp = Hyperparams::new(variant, clusters);
                        hp.alpha = alpha;
                        hp.beta = beta;
                        hp.lambda = lambda;
                        hp.neighbors = p;
                        hp.max_iter = config.max_iter;
                        hp.rel_tol = config.rel_tol;
                        let hp = hp.with_forced_zeros();
                        if let Err(e) = hp.validate().and_then(|_| hp.validate_for(n)) {
                            warnings.push(format!(
                                "skipping {variant} cell alpha={alpha} beta={beta} \
                                 lambda={lambda} p={p}: {e}"
                            ));
                            continue;
                        }
                        cells.push(CellPlan {
                            variant,
                            hp,
                            grid_index: index,
                            echo,
                        });
                    }
                }
            }
        }
    }
    cells
}

fn run_experiment_on(
    x: &DataMatrix,
    labels: &LabelVector,
    clusters: usize,
    config: &ExperimentConfig,
    kind: &str,
    all_pairs: bool,
) -> Result<ExperimentReport> {
    let mut report = empty_report(config, x, labels, clusters, kind);
    let cells = plan_cells(config, clusters, x.sample_count(), &mut report.warnings);

    let mut jobs = Vec::with_capacity(cells.len() * config.runs);
    for (ci, cell) in cells.iter().enumerate() {
        for run in 0..config.runs {
            let seed = derive_seed(
                config.seed,
                &[
                    canonical_variant_index(cell.variant),
                    cell.grid_index as u64,
                    run as u64,
                ],
            );
            let mut hp = cell.hp;
            hp.seed = seed;
            jobs.push(Job {
                cell: ci,
                run,
                seed,
                hp,
            });
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.resolve())
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let outcomes: Vec<Result<RunRecord>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| run_job(x, labels, config, &cells[job.cell], job))
            .collect()
    });

    let mut failures = 0usize;
    for (job, outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(record) => report.records.push(record),
            Err(e) => {
                failures += 1;
                let cell = &cells[job.cell];
                report.warnings.push(format!(
                    "excluded {} run {} (alpha={} beta={} lambda={} p={}): {e}",
                    cell.variant, job.run, cell.echo.0, cell.echo.1, cell.echo.2, cell.echo.3
                ));
            }
        }
    }
    if failures > 0 {
        report
            .warnings
            .push(format!("{failures} runs failed and were excluded"));
    }

    let (summaries, mut cell_warnings) = summarize_cells(&cells, &report.records);
    report.cells = summaries;
    report.warnings.append(&mut cell_warnings);
    select_best(config, &cells, &mut report);
    attach_stats(config, all_pairs, &mut report);
    Ok(report)
}

fn run_job(
    x: &DataMatrix,
    labels: &LabelVector,
    config: &ExperimentConfig,
    cell: &CellPlan,
    job: &Job,
) -> Result<RunRecord> {
    let outcome = fit(x, &job.hp)?;
    let assignment = extract_labels(
        &outcome.state.v().view(),
        config.extraction,
        config.restarts,
        job.seed,
    )?;
    let metrics = MetricTriple::compute(labels, &assignment)?;
    Ok(RunRecord {
        variant: cell.variant.to_string(),
        cell: job.cell,
        grid_index: cell.grid_index,
        run: job.run,
        seed: job.seed,
        alpha: cell.echo.0,
        beta: cell.echo.1,
        lambda: cell.echo.2,
        neighbors: cell.echo.3,
        iterations: outcome.iterations_run,
        converged: outcome.converged,
        objective: outcome.final_objective,
        nmi: metrics.nmi,
        acc: metrics.acc,
        purity: metrics.purity,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn summarize_cells(
    cells: &[CellPlan],
    records: &[RunRecord],
) -> (Vec<GridCellSummary>, Vec<String>) {
    let mut summaries = Vec::with_capacity(cells.len());
    let mut warnings = Vec::new();
    for (ci, cell) in cells.iter().enumerate() {
        let mine: Vec<&RunRecord> = records.iter().filter(|r| r.cell == ci).collect();
        let nmi: Vec<f64> = mine.iter().map(|r| r.nmi).collect();
        let acc: Vec<f64> = mine.iter().map(|r| r.acc).collect();
        let purity: Vec<f64> = mine.iter().map(|r| r.purity).collect();
        let iters: Vec<f64> = mine.iter().map(|r| r.iterations as f64).collect();
        let (mean_nmi, std_nmi) = mean_std(&nmi);
        let (mean_acc, std_acc) = mean_std(&acc);
        let (mean_purity, std_purity) = mean_std(&purity);
        let (mean_iterations, _) = mean_std(&iters);
        if mine.is_empty() {
            warnings.push(format!(
                "no successful runs for {} cell alpha={} beta={} lambda={} p={}",
                cell.variant, cell.echo.0, cell.echo.1, cell.echo.2, cell.echo.3
            ));
        }
        summaries.push(GridCellSummary {
            variant: cell.variant.to_string(),
            cell: ci,
            grid_index: cell.grid_index,
            alpha: cell.echo.0,
            beta: cell.echo.1,
            lambda: cell.echo.2,
            neighbors: cell.echo.3,
            runs_used: mine.len(),
            converged_runs: mine.iter().filter(|r| r.converged).count(),
            mean_iterations,
            mean_nmi,
            std_nmi,
            mean_acc,
            std_acc,
            mean_purity,
            std_purity,
        });
    }
    (summaries, warnings)
}

fn select_best(config: &ExperimentConfig, cells: &[CellPlan], report: &mut ExperimentReport) {
    for &variant in &config.variants {
        let mut best: Option<&GridCellSummary> = None;
        for (ci, cell) in cells.iter().enumerate() {
            if cell.variant != variant {
                continue;
            }
            let summary = &report.cells[ci];
            if summary.runs_used == 0 {
                continue;
            }
            let better = match best {
                None => true,
                Some(current) => summary.mean_nmi > current.mean_nmi,
            };
            if better {
                best = Some(summary);
            }
        }
        match best {
            Some(cell) => report.best.push(VariantSummary {
                variant: variant.to_string(),
                best: cell.clone(),
            }),
            None => report.warnings.push(format!(
                "variant {variant} has no usable grid cell and is missing from the summary"
            )),
        }
    }
}

/// Builds the score table over the best cells: one row per (metric, run),
/// metric-major, using only runs every summarized variant completed.
fn build_score_table(report: &ExperimentReport, runs: usize) -> Option<(ScoreTable, usize)> {
    if report.best.len() < 2 {
        return None;
    }
    let mut per_variant: Vec<HashMap<usize, (f64, f64, f64)>> = Vec::new();
    for summary in &report.best {
        let mut by_run = HashMap::new();
        for r in &report.records {
            if r.cell == summary.best.cell {
                by_run.insert(r.run, (r.nmi, r.acc, r.purity));
            }
        }
        per_variant.push(by_run);
    }
    let common: Vec<usize> = (0..runs)
        .filter(|run| per_variant.iter().all(|m| m.contains_key(run)))
        .collect();
    if common.is_empty() {
        return None;
    }
    let mut rows = Vec::with_capacity(3 * common.len());
    for metric in 0..3 {
        for &run in &common {
            let row: Vec<f64> = per_variant
                .iter()
                .map(|m| {
                    let (nmi, acc, purity) = m[&run];
                    [nmi, acc, purity][metric]
                })
                .collect();
            rows.push(row);
        }
    }
    let names: Vec<String> = report.best.iter().map(|s| s.variant.clone()).collect();
    match ScoreTable::new(names, rows) {
        Ok(table) => Some((table, common.len())),
        Err(_) => None,
    }
}

fn attach_stats(config: &ExperimentConfig, all_pairs: bool, report: &mut ExperimentReport) {
    let Some((table, _common_runs)) = build_score_table(report, config.runs) else {
        if report.best.len() >= 2 {
            report
                .warnings
                .push("statistics skipped: no run completed under every variant".into());
        }
        return;
    };

    let names: Vec<String> = table.method_names().to_vec();
    let reference = if names.iter().any(|n| n == "cfsrag") {
        "cfsrag".to_string()
    } else {
        names.last().cloned().expect("at least two methods")
    };
    let ref_idx = names.iter().position(|n| *n == reference).unwrap();
    let mut notes = Vec::new();

    let win_loss_total = win_loss(&table, &reference).expect("reference is in the table");
    let mut per_opponent = Vec::new();
    for (j, name) in names.iter().enumerate() {
        if j == ref_idx {
            continue;
        }
        let mut tally = WinLoss {
            wins: 0,
            losses: 0,
            ties: 0,
        };
        for row in table.rows() {
            if row[ref_idx] > row[j] {
                tally.wins += 1;
            } else if row[ref_idx] < row[j] {
                tally.losses += 1;
            } else {
                tally.ties += 1;
            }
        }
        per_opponent.push(crate::harness::report::VariantWinLoss {
            variant: name.clone(),
            wins: tally.wins,
            losses: tally.losses,
            ties: tally.ties,
        });
    }

    let friedman = match friedman_ranks(&table) {
        Ok(summary) => Some(summary),
        Err(e) => {
            notes.push(format!("rank test skipped: {e}"));
            None
        }
    };

    let mut wilcoxon = Vec::new();
    for (j, name) in names.iter().enumerate() {
        if j == ref_idx {
            continue;
        }
        match wilcoxon_signed_rank(&table.column(ref_idx), &table.column(j)) {
            Ok(result) => wilcoxon.push(PairwiseTest {
                a: reference.clone(),
                b: name.clone(),
                result,
            }),
            Err(e) => notes.push(format!("signed-rank {reference} vs {name}: {e}")),
        }
    }

    if all_pairs {
        for i in 0..names.len() {
            for j in (i + 1)..names.len() {
                match wilcoxon_signed_rank(&table.column(i), &table.column(j)) {
                    Ok(result) => report.pairwise.push(PairwiseTest {
                        a: names[i].clone(),
                        b: names[j].clone(),
                        result,
                    }),
                    Err(e) => notes.push(format!("signed-rank {} vs {}: {e}", names[i], names[j])),
                }
            }
        }
    }

    report.stats = Some(StatsBlock {
        reference,
        rows_used: table.case_count(),
        win_loss_total,
        win_loss: per_opponent,
        friedman,
        wilcoxon,
        notes,
    });
}

fn empty_report(
    config: &ExperimentConfig,
    x: &DataMatrix,
    labels: &LabelVector,
    clusters: usize,
    kind: &str,
) -> ExperimentReport {
    ExperimentReport {
        format_version: REPORT_FORMAT_VERSION,
        kind: kind.to_string(),
        dataset: DatasetEcho {
            id: config.dataset.id(),
            sample_count: x.sample_count(),
            feature_dim: x.feature_dim(),
            class_count: labels.class_count(),
            clusters_used: clusters,
        },
        config: ConfigEcho {
            variants: config.variants.iter().map(|v| v.to_string()).collect(),
            alpha_grid: config.alpha_grid.clone(),
            beta_grid: config.beta_grid.clone(),
            lambda_grid: config.lambda_grid.clone(),
            neighbor_grid: config.neighbor_grid.clone(),
            runs: config.runs,
            seed: config.seed,
            max_iter: config.max_iter,
            rel_tol: config.rel_tol,
            extraction: config.extraction.to_string(),
            restarts: config.restarts,
            scale_features: config.scale_features,
        },
        variant_settings: config
            .variants
            .iter()
            .map(|&v| VariantEcho {
                variant: v.to_string(),
                self_representation: v.is_self_representation(),
                beta_forced_zero: matches!(v, Variant::Cfsr | Variant::CfsrF),
                lambda_forced_zero: matches!(v, Variant::Cfsr),
                uses_neighbor_graph: v.uses_graph(),
                refreshes_graph_each_iteration: v.refreshes_graph(),
            })
            .collect(),
        records: Vec::new(),
        cells: Vec::new(),
        best: Vec::new(),
        stats: None,
        pairwise: Vec::new(),
        sweep: Vec::new(),
        warnings: Vec::new(),
    }
}
