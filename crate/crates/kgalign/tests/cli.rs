use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kgalign::config::RunConfig;
use kgalign::pipeline::{run_experiment, Dataset};
use kgalign::report::MetricsReport;

fn kgalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgalign"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = kgalign(args);
    assert!(
        out.status.success(),
        "kgalign {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A 60-node dataset with a short schedule written next to it.
fn small_dataset(root: &Path) -> PathBuf {
    let data = root.join("data");
    ok(&["gen-synth", "--n", "60", "--seed", "3", "--out", s(&data)]);
    let mut config = RunConfig::from_toml(&fs::read_to_string(data.join("config.toml")).unwrap()).unwrap();
    config.d = 16;
    config.h = 16;
    config.epochs = 40;
    config.sem_epochs = 10;
    config.sem_hidden = 32;
    config.tau_sweep = vec![0.0, 0.5, 1.0];
    let path = data.join("small.toml");
    fs::write(&path, config.to_toml()).unwrap();
    path
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn gen_synth_is_deterministic() {
    let root = tempfile::tempdir().unwrap();
    let (a, b, c) = (root.path().join("a"), root.path().join("b"), root.path().join("c"));
    ok(&["gen-synth", "--n", "50", "--seed", "5", "--out", s(&a)]);
    ok(&["gen-synth", "--n", "50", "--seed", "5", "--out", s(&b)]);
    ok(&["gen-synth", "--n", "50", "--seed", "6", "--out", s(&c)]);
    let fa = files(&a);
    assert_eq!(fa.len(), 12);
    assert_eq!(fa, files(&b));
    assert_ne!(fa, files(&c));
    let rel = fs::read_to_string(a.join("rel_triples_1.tsv")).unwrap();
    assert_eq!(rel.lines().count(), 150);
}

#[test]
fn commands_run_in_order_and_agree_with_the_in_memory_run() {
    let root = tempfile::tempdir().unwrap();
    let config_path = small_dataset(root.path());
    let out = root.path().join("out");
    let base = ["--config", s(&config_path), "--out", s(&out)];
    let run = |cmd: &[&str]| ok(&[&base[..], cmd].concat());

    let early = kgalign(&[&base[..], &["eval"]].concat());
    assert!(!early.status.success());
    assert!(String::from_utf8_lossy(&early.stderr).contains("run `train-struct` first"));

    run(&["ingest", "--dump-adjacency"]);
    assert!(out.join("logs/adjacency_1.coo").exists());
    assert!(out.join("reports/ingest.json").exists());

    run(&["train-struct"]);
    let before_sem = kgalign(&[&base[..], &["eval"]].concat());
    assert!(String::from_utf8_lossy(&before_sem.stderr).contains("run `train-sem` first"));
    run(&["train-sem"]);
    run(&["align"]);
    let candidates = fs::read_to_string(out.join("reports/candidates.tsv")).unwrap();
    assert!(candidates.starts_with("source\trank\ttarget\tscore\n"));
    run(&["eval"]);

    let report = MetricsReport::load(&out.join("reports/metrics.json")).unwrap();
    let mut config = RunConfig::load(&config_path).unwrap();
    config.out_dir = out.clone();
    assert_eq!(report.config, config);
    assert_eq!(report.rows.len(), 3);
    assert_eq!(report.structural_loss.len(), 40);
    assert_eq!(report.semantic_loss.len(), 10);
    assert!(report.structural_loss[39] < report.structural_loss[0]);

    let dataset = Dataset::load(&config.data_dir).unwrap();
    let experiment = run_experiment(&dataset, &config).unwrap();
    for row in &report.rows {
        for k in [1, 10] {
            assert_eq!(row.hits_at(k), experiment.hits(row.tau, k), "tau {} k {k}", row.tau);
        }
    }
}

#[test]
fn mismatched_checkpoint_is_reported() {
    let root = tempfile::tempdir().unwrap();
    let config_path = small_dataset(root.path());
    let out = root.path().join("out");
    let base = ["--config", s(&config_path), "--out", s(&out)];
    ok(&[&base[..], &["train-struct"]].concat());
    let other = kgalign(&[&base[..], &["--ablation", "no-rel", "eval", "--tau", "1"]].concat());
    assert!(!other.status.success());
    assert!(String::from_utf8_lossy(&other.stderr).contains("does not match"));
}

#[test]
fn grad_check_exit_status_reflects_the_result() {
    let good = kgalign(&["grad-check", "--seed", "1"]);
    assert!(good.status.success(), "{}", String::from_utf8_lossy(&good.stderr));
    let bad = kgalign(&["grad-check", "--seed", "1", "--corrupt-w-s1"]);
    assert!(!bad.status.success());
}

#[test]
fn bad_flags_are_rejected() {
    for args in [
        &["--ablation", "none-at-all", "eval"][..],
        &["--metric", "l3", "eval"],
        &["--fusion", "product", "eval"],
        &["gen-synth", "--n", "3", "--out", "/nonexistent/never"],
    ] {
        assert!(!kgalign(args).status.success(), "{args:?}");
    }
}
