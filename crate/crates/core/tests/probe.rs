//! Scratch probes for calibrating acceptance fixtures. Not part of the suite.

use std::time::Instant;

use cfsrag::data::{make_blobs, CsvOptions, DatasetRef, SyntheticSpec};
use cfsrag::eval::{extract_labels, ExtractionMethod, MetricTriple};
use cfsrag::factorize::{fit, kkt_residuals, Hyperparams, Variant};
use cfsrag::harness::{run_ablation, ExperimentConfig, WorkerCount};
use cfsrag::matrix::{DataMatrix, LabelVector};

fn blobs(
    clusters: usize,
    per: usize,
    dim: usize,
    spread: f64,
    stddev: f64,
    seed: u64,
) -> (DataMatrix, LabelVector) {
    make_blobs(&SyntheticSpec {
        clusters,
        per_cluster: per,
        feature_dim: dim,
        spread,
        stddev,
        seed,
    })
    .unwrap()
}

#[test]
fn probe_criterion4_tail() {
    for (alpha, lambda, stddev) in [
        (300.0, 1.0, 0.002),
        (300.0, 3.0, 0.002),
        (100.0, 1.0, 0.002),
        (300.0, 1.0, 0.01),
    ] {
        let (x, _) = blobs(3, 10, 10, 1.0, stddev, 5);
        for seed in 1..=6u64 {
            let mut hp = Hyperparams::new(Variant::Cfsrag, 3);
            hp.alpha = alpha;
            hp.beta = 1e-3;
            hp.lambda = lambda;
            hp.neighbors = 5;
            hp.rel_tol = 1e-8;
            hp.max_iter = 40_000;
            hp.seed = seed;
            let t = Instant::now();
            match fit(&x, &hp) {
                Ok(result) => {
                    let kkt = kkt_residuals(&result.state, &hp).unwrap();
                    let blocks = [
                        (&kkt.r_u, kkt.scale_u),
                        (&kkt.r_v, kkt.scale_v),
                        (&kkt.r_z, kkt.scale_z),
                    ];
                    let worst = blocks
                        .iter()
                        .map(|(r, s)| {
                            r.iter().fold(0.0f64, |m, &e| m.max(e.abs())) / s.max(1e-300)
                        })
                        .fold(0.0f64, f64::max);
                    println!(
                        "a={alpha} l={lambda} sd={stddev} seed {seed}: conv={} iters={} worst={:.3e} ({:.2?})",
                        result.converged,
                        result.iterations_run,
                        worst,
                        t.elapsed()
                    );
                }
                Err(e) => println!("a={alpha} l={lambda} sd={stddev} seed {seed}: ERROR {e}"),
            }
        }
    }
}

#[test]
fn probe_criterion8_bases() {
    for base in [0u64, 1000, 2000, 3000, 4000] {
        let mut perfect = 0;
        let mut failures = String::new();
        for s in 0..10u64 {
            let (x, truth) = blobs(3, 30, 10, 10.0, 0.5, base + s);
            let mut hp = Hyperparams::new(Variant::Cfsrag, 3);
            hp.seed = s;
            let result = fit(&x, &hp).unwrap();
            let pred = extract_labels(
                &result.state.v().view(),
                ExtractionMethod::KMeansOnV,
                10,
                5000 + s,
            )
            .unwrap();
            let m = MetricTriple::compute(&truth, &pred).unwrap();
            if m.nmi >= 1.0 - 1e-12 && m.acc >= 1.0 - 1e-12 {
                perfect += 1;
            } else {
                failures.push_str(&format!(" s{}={:.3}", s, m.nmi));
            }
        }
        println!("base {base}: perfect {perfect}/10{failures}");
    }
}

fn ladder_at(
    dataset: DatasetRef,
    cell: (f64, f64, f64, usize),
    runs: usize,
    scale: bool,
) -> Vec<(String, f64)> {
    let mut config = ExperimentConfig::new(dataset);
    config.alpha_grid = vec![cell.0];
    config.beta_grid = vec![cell.1];
    config.lambda_grid = vec![cell.2];
    config.neighbor_grid = vec![cell.3];
    config.runs = runs;
    config.seed = 7;
    config.scale_features = scale;
    config.workers = WorkerCount::Fixed(1);
    let report = run_ablation(&config).unwrap();
    report
        .best
        .iter()
        .map(|b| (b.variant.clone(), b.best.mean_nmi))
        .collect()
}

#[test]
fn probe_criterion10_zoo_cells() {
    let zoo = || {
        DatasetRef::parse(
            concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/zoo.csv"),
            &CsvOptions::default(),
        )
        .unwrap()
    };
    let t = Instant::now();
    for alpha in [1.0, 10.0] {
        for beta in [0.1, 1.0, 10.0] {
            for lambda in [1.0, 10.0] {
                for p in [3usize, 5] {
                    let means = ladder_at(zoo(), (alpha, beta, lambda, p), 10, true);
                    let v: Vec<f64> = means.iter().map(|(_, m)| *m).collect();
                    let ladder_ok = v[0] <= v[1] && v[1] <= v[2];
                    let adaptive_ok = v[3] >= v[2] - 0.02;
                    println!(
                        "cell a={alpha} b={beta} l={lambda} p={p}: {:.4} {:.4} {:.4} {:.4} ladder={} adaptive={}",
                        v[0], v[1], v[2], v[3], ladder_ok, adaptive_ok
                    );
                }
            }
        }
    }
    println!("zoo cells elapsed {:.2?}", t.elapsed());
}

#[test]
fn probe_criterion10_blob_cells() {
    for stddev in [0.5, 1.0, 1.5, 2.0] {
        let dataset = DatasetRef::Synthetic(SyntheticSpec {
            clusters: 3,
            per_cluster: 20,
            feature_dim: 8,
            spread: 5.0,
            stddev,
            seed: 11,
        });
        let means = ladder_at(dataset, (1.0, 0.1, 0.1, 5), 10, false);
        let v: Vec<f64> = means.iter().map(|(_, m)| *m).collect();
        println!(
            "blobs sd={stddev}: {:.4} {:.4} {:.4} {:.4} ladder={} adaptive={}",
            v[0],
            v[1],
            v[2],
            v[3],
            v[0] <= v[1] && v[1] <= v[2],
            v[3] >= v[2] - 0.02
        );
    }
}
