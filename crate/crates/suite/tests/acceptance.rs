//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use kgalign::checkpoint::EncoderCheckpoint;
use kgalign::commands;
use kgalign::config::RunConfig;
use kgalign::pipeline::{align, run_experiment, Dataset, Embeddings, Features};
use kgalign::report::MetricsReport;
use kgalign::synth::{gen_synth, SynthSpec};
use kgalign_core::align::{candidate_pool, rank_candidates, Candidate, FusionMode, RankedList};
use kgalign_core::encoder::Ablation;
use kgalign_core::graph::EntityId;
use kgalign_core::linalg::Matrix;
use kgalign_core::sparse::NormalizedAdjacency;
use kgalign_core::train::{Metric, REL_ERROR_FLOOR};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Suite {
    failed: Vec<&'static str>,
}

impl Suite {
    fn report(&mut self, name: &'static str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(name);
        }
    }
}

fn synth(root: &Path, name: &str, spec: SynthSpec) -> PathBuf {
    let dir = root.join(name);
    gen_synth(&spec, &dir).expect("gen-synth");
    dir
}

fn structural_hits1(root: &Path, seed: u64, ratio: f64, ablation: Ablation) -> f64 {
    let spec = SynthSpec {
        rng_seed: seed,
        train_ratio: ratio,
        ..SynthSpec::default()
    };
    let dir = synth(root, &format!("s{seed}-r{ratio}-{}", ablation.tag()), spec);
    let mut config = RunConfig::load(&dir.join("config.toml")).unwrap();
    config.ablation = ablation;
    config.tau = 1.0;
    let dataset = Dataset::load(&config.data_dir).unwrap();
    let experiment = run_experiment(&dataset, &config).unwrap();
    let hits = experiment.hits(1.0, 1).unwrap();
    eprintln!("  seed {seed} ratio {ratio} {}: Hits@1 {hits:.4}", ablation.tag());
    hits
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn grad_check(suite: &mut Suite) {
    let start = Instant::now();
    let single = commands::grad_check(0, Metric::L1, Ablation::Full, false).unwrap();
    let runtime = start.elapsed().as_secs_f64();
    let mut worst = single.max_rel_error;
    let mut checked = single.checked;
    for seed in 0..3 {
        for metric in [Metric::L1, Metric::L2, Metric::Cosine] {
            for ablation in Ablation::ALL {
                let r = commands::grad_check(seed, metric, ablation, false).unwrap();
                worst = worst.max(r.max_rel_error);
                checked += r.checked;
            }
        }
    }
    let corrupted = commands::grad_check(0, Metric::L1, Ablation::Full, true).unwrap();
    suite.report(
        "gradient correctness",
        worst < 1e-4 && corrupted.max_rel_error > 1e-2 && runtime < 10.0,
        format!(
            "max rel error {worst:.2e} over {checked} entries (floor {REL_ERROR_FLOOR:e}), \
             corrupted w_s1 {:.2e}, single check {runtime:.2}s",
            corrupted.max_rel_error
        ),
    );
}

/// `Â = A + I` with `A` symmetric and binary, scaled entrywise by
/// `1/sqrt(d_i)·1/sqrt(d_j)`.
fn dense_oracle(n: usize, edges: &[(u32, u32)]) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        a[i][i] = 1.0;
    }
    for &(x, y) in edges {
        a[x as usize][y as usize] = 1.0;
        a[y as usize][x as usize] = 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    (0..n)
        .map(|i| (0..n).map(|j| a[i][j] / deg[i].sqrt() / deg[j].sqrt()).collect())
        .collect()
}

fn adjacency_oracle(suite: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=50usize);
        let m = rng.random_range(0..=3 * n);
        let edges: Vec<(u32, u32)> = (0..m)
            .map(|_| (rng.random_range(0..n as u32), rng.random_range(0..n as u32)))
            .collect();
        let sparse = NormalizedAdjacency::from_edges(n, edges.iter().copied()).to_dense();
        let dense = dense_oracle(n, &edges);
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((sparse.row(i)[j] - dense[i][j]).abs());
            }
        }
    }
    suite.report(
        "adjacency oracle",
        worst <= 1e-12,
        format!("max entrywise difference {worst:.1e} over 100 graphs, n <= 50"),
    );
}

fn brute_cosine(a: &[f64], b: &[f64]) -> f64 {
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let bb: f64 = b.iter().map(|x| x * x).sum();
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        (ab / (aa * bb).sqrt()).clamp(-1.0, 1.0)
    }
}

/// Descending score, ascending id, over `ids`.
fn brute_sort(query: &[f64], targets: &Matrix, ids: impl Iterator<Item = u32>) -> Vec<u32> {
    let mut all: Vec<(u32, f64)> = ids.map(|t| (t, brute_cosine(query, targets.row(t as usize)))).collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.into_iter().map(|p| p.0).collect()
}

fn random_table(rng: &mut ChaCha8Rng, rows: usize, cols: usize, integer: bool) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            if integer {
                rng.random_range(-2i32..=2) as f64
            } else {
                rng.random_range(-1.0..1.0)
            }
        })
        .collect();
    Matrix::from_vec(rows, cols, data)
}

fn targets(list: &RankedList) -> Vec<u32> {
    list.candidates.iter().map(|c: &Candidate| c.target.0).collect()
}

fn ranking_oracle(suite: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut mismatches = 0;
    let mut ties = 0;
    for instance in 0..200 {
        // Half the instances use small integers, which produce exact ties.
        let integer = instance % 2 == 0;
        let ns = rng.random_range(1..=20usize);
        let nt = rng.random_range(1..=30usize);
        let dim = rng.random_range(1..=8usize);
        let g = [random_table(&mut rng, ns, dim, integer), random_table(&mut rng, nt, dim, integer)];
        let c = [random_table(&mut rng, ns, dim, integer), random_table(&mut rng, nt, dim, integer)];
        let q = rng.random_range(1..=nt + 5);
        let sources: Vec<EntityId> = (0..ns as u32).map(EntityId).collect();
        let pools = candidate_pool([&g[0], &g[1]], &sources, q).unwrap();
        let lists = rank_candidates([&c[0], &c[1]], &sources, &pools);
        for (i, (pool, list)) in pools.iter().zip(&lists).enumerate() {
            let full = brute_sort(g[0].row(i), &g[1], 0..nt as u32);
            let expected_pool: Vec<u32> = full.into_iter().take(q).collect();
            let got_pool: Vec<u32> = pool.iter().map(|e| e.0).collect();
            let expected = brute_sort(c[0].row(i), &c[1], expected_pool.iter().copied());
            let scores: BTreeSet<u64> = list.candidates.iter().map(|c| c.score.to_bits()).collect();
            ties += list.candidates.len() - scores.len();
            if got_pool != expected_pool || targets(list) != expected || list.source != sources[i] {
                mismatches += 1;
            }
        }
    }
    suite.report(
        "ranking oracle",
        mismatches == 0,
        format!("{mismatches} mismatching sources over 200 instances ({ties} tied scores exercised)"),
    );
}

fn hits_row(report: &MetricsReport, tau: f64, k: usize) -> f64 {
    report
        .rows
        .iter()
        .find(|r| r.tau == tau)
        .and_then(|r| r.hits_at(k))
        .expect("row present")
}

/// gen-synth, train-struct, train-sem and eval through the command layer.
fn command_run(dir: &Path) -> (RunConfig, f64) {
    let start = Instant::now();
    gen_synth(&SynthSpec::default(), dir).unwrap();
    let mut config = RunConfig::load(&dir.join("config.toml")).unwrap();
    config.tau_sweep = vec![1.0, 0.5];
    commands::train_struct(&config).unwrap();
    commands::train_sem(&config).unwrap();
    commands::eval(&config).unwrap();
    (config, start.elapsed().as_secs_f64())
}

/// Returns the seed 0, ratio 0.3, full-model Hits@1 at tau = 1.
fn end_to_end_and_determinism(suite: &mut Suite, root: &Path) -> f64 {
    let dir = root.join("e2e");
    let (config, first_runtime) = command_run(&dir);
    let metrics_path = config.reports_dir().join("metrics.json");
    let first_report = fs::read(&metrics_path).unwrap();
    let first_ckpt = fs::read(config.encoder_checkpoint()).unwrap();
    let first_mlp = fs::read(config.mlp_checkpoint()).unwrap();
    let report = MetricsReport::load(&metrics_path).unwrap();
    let hits1 = hits_row(&report, 1.0, 1);

    let (_, second_runtime) = command_run(&dir);
    let same_report = fs::read(&metrics_path).unwrap() == first_report;
    let same_ckpt = fs::read(config.encoder_checkpoint()).unwrap() == first_ckpt
        && fs::read(config.mlp_checkpoint()).unwrap() == first_mlp;
    let loaded = EncoderCheckpoint::load(&config.encoder_checkpoint()).unwrap();
    let resaved = root.join("resaved.ckpt");
    loaded.save(&resaved).unwrap();
    let round_trip = fs::read(&resaved).unwrap() == first_ckpt && loaded.to_bytes() == first_ckpt;

    suite.report(
        "twin-graph end-to-end, p = 0.10",
        hits1 >= 0.80 && first_runtime < 120.0 && report.structural_loss.len() <= 300,
        format!(
            "Hits@1 {hits1:.4} (tau = 1, {} test seeds, {} epochs), runtime {first_runtime:.1}s",
            report.dataset.test,
            report.structural_loss.len()
        ),
    );
    suite.report(
        "determinism",
        same_report && same_ckpt && round_trip,
        format!(
            "metrics.json identical: {same_report}, checkpoints identical: {same_ckpt}, \
             save/load/save identical: {round_trip} (second run {second_runtime:.1}s)"
        ),
    );
    hits1
}

fn noiseless_and_fusion_limits(suite: &mut Suite, root: &Path) {
    let spec = SynthSpec {
        noise: 0.0,
        ..SynthSpec::default()
    };
    let dir = synth(root, "noiseless", spec);
    let mut config = RunConfig::load(&dir.join("config.toml")).unwrap();
    config.tau_sweep = vec![0.5];
    let dataset = Dataset::load(&config.data_dir).unwrap();
    let experiment = run_experiment(&dataset, &config).unwrap();
    let hits1 = experiment.hits(0.5, 1).unwrap();
    suite.report(
        "twin-graph end-to-end, p = 0, tau = 0.5",
        hits1 >= 0.95,
        format!("Hits@1 {hits1:.4} on {} test seeds", experiment.split.test.len()),
    );

    let features = Features::build(&dataset.pair, &config);
    let tables = dataset.text_tables().unwrap();
    let mlp = experiment.mlp.as_ref().unwrap();
    let embeddings = Embeddings::compute(&features, &experiment.encoder, Some((mlp, &tables)));
    let sem = embeddings.semantic.as_ref().unwrap();
    let sources: Vec<EntityId> = experiment.split.test.iter().map(|s| s.left).collect();
    let structural = [&embeddings.structural[0], &embeddings.structural[1]];
    let pools = candidate_pool(structural, &sources, config.pool_size).unwrap();
    let pure_g = rank_candidates(structural, &sources, &pools);
    let pure_b = rank_candidates([&sem[0], &sem[1]], &sources, &pools);
    let mut differing = 0;
    let mut compared = 0;
    for fusion in [FusionMode::Sum, FusionMode::Concat] {
        let config = RunConfig { fusion, ..config.clone() };
        for (tau, pure) in [(1.0, &pure_g), (0.0, &pure_b)] {
            let fused = align(&embeddings, &experiment.split.test, tau, &config).unwrap();
            for (a, b) in fused.lists.iter().zip(pure.iter()) {
                compared += 1;
                if a.source != b.source || targets(a) != targets(b) {
                    differing += 1;
                }
            }
        }
    }
    suite.report(
        "fusion limits",
        differing == 0 && compared == 4 * sources.len(),
        format!("{differing} of {compared} orderings differ (tau in {{0, 1}}, sum and concat)"),
    );
}

fn ablation_direction(suite: &mut Suite, root: &Path, full_seed0: f64) -> Vec<f64> {
    let mut per_ablation: Vec<Vec<f64>> = vec![Vec::new(); Ablation::ALL.len()];
    for seed in 0..5u64 {
        for (i, ablation) in Ablation::ALL.into_iter().enumerate() {
            let hits = if seed == 0 && ablation == Ablation::Full {
                full_seed0
            } else {
                structural_hits1(root, seed, 0.3, ablation)
            };
            per_ablation[i].push(hits);
        }
    }
    let means: Vec<f64> = per_ablation.iter().map(|v| mean(v)).collect();
    let [full, no_rel, no_attr, no_hw] = [means[0], means[1], means[2], means[3]];
    let full_best = full >= no_rel && full >= no_attr && full >= no_hw;
    let highway_worst = no_hw <= no_rel && no_hw <= no_attr;
    suite.report(
        "ablation direction",
        full_best && highway_worst,
        format!(
            "mean Hits@1 over 5 seeds: full {full:.4}, no-rel {no_rel:.4}, no-attr {no_attr:.4}, \
             no-highway {no_hw:.4} (full best: {full_best}, no-highway worst: {highway_worst})"
        ),
    );
    per_ablation.swap_remove(0)
}

fn seed_ratio_monotonicity(suite: &mut Suite, root: &Path, full_at_03: &[f64]) {
    let mut means = Vec::new();
    for ratio in [0.1, 0.3, 0.5] {
        let hits: Vec<f64> = if ratio == 0.3 {
            full_at_03[..3].to_vec()
        } else {
            (0..3).map(|seed| structural_hits1(root, seed, ratio, Ablation::Full)).collect()
        };
        means.push(mean(&hits));
    }
    suite.report(
        "seed-ratio monotonicity",
        means.windows(2).all(|w| w[0] <= w[1]),
        format!(
            "mean Hits@1 over 3 seeds: ratio 0.1 {:.4}, 0.3 {:.4}, 0.5 {:.4}",
            means[0], means[1], means[2]
        ),
    );
}

fn main() {
    let root = tempfile::tempdir().unwrap();
    let mut suite = Suite { failed: Vec::new() };
    grad_check(&mut suite);
    adjacency_oracle(&mut suite);
    ranking_oracle(&mut suite);
    let full_seed0 = end_to_end_and_determinism(&mut suite, root.path());
    noiseless_and_fusion_limits(&mut suite, root.path());
    let full_at_03 = ablation_direction(&mut suite, root.path(), full_seed0);
    seed_ratio_monotonicity(&mut suite, root.path(), &full_at_03);
    if suite.failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: {} failed: {}", suite.failed.len(), suite.failed.join(", "));
        std::process::exit(1);
    }
}
