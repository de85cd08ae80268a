use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use kgalign::commands;
use kgalign::config::RunConfig;
use kgalign::synth::{gen_synth, SynthSpec};
use kgalign_core::align::FusionMode;
use kgalign_core::encoder::Ablation;
use kgalign_core::train::Metric;

#[derive(Parser, Debug)]
#[command(name = "kgalign", version, about = "Entity alignment between two knowledge graphs")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Run configuration (TOML). Without it, defaults apply and the data is
    /// read from the current directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (for gen-synth: the dataset directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single-threaded ranking.
    #[arg(long, global = true)]
    deterministic: bool,
    #[arg(long, global = true, value_parser = parse_ablation)]
    ablation: Option<Ablation>,
    /// Fusion weight; a comma-separated list makes `eval` report a sweep.
    #[arg(long, global = true, value_delimiter = ',')]
    tau: Vec<f64>,
    #[arg(long, global = true, value_parser = parse_fusion)]
    fusion: Option<FusionMode>,
    #[arg(long, global = true, value_parser = parse_metric)]
    metric: Option<Metric>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load and validate the dataset and print its counts.
    Ingest {
        /// Also write the normalized adjacencies to logs/ as coordinate lists.
        #[arg(long)]
        dump_adjacency: bool,
    },
    /// Train the structural encoder.
    TrainStruct,
    /// Train the semantic head over the text embeddings.
    TrainSem,
    /// Rank candidates at one fusion weight and dump them.
    Align,
    /// Report Hits@k for each fusion weight.
    Eval,
    /// Write a synthetic twin-graph dataset.
    GenSynth(SynthArgs),
    /// Compare analytic gradients with central differences.
    GradCheck {
        /// Scale the analytic gradient of w_s1 by 1.5 before comparing.
        #[arg(long)]
        corrupt_w_s1: bool,
    },
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 6.0)]
    degree: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0.3)]
    ratio: f64,
    #[arg(long, default_value_t = 8)]
    relation_types: usize,
    #[arg(long, default_value_t = 12)]
    attribute_keys: usize,
    #[arg(long, default_value_t = 64)]
    text_width: usize,
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    Ablation::from_tag(s).ok_or_else(|| "expected one of none, no-rel, no-attr, no-highway".into())
}

fn parse_fusion(s: &str) -> Result<FusionMode, String> {
    FusionMode::from_tag(s).ok_or_else(|| "expected sum or concat".into())
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    Metric::from_tag(s).ok_or_else(|| "expected one of l1, l2, cos".into())
}

fn run_config(g: &Global) -> anyhow::Result<RunConfig> {
    let mut config = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &g.out {
        config.out_dir = out.clone();
    }
    if let Some(seed) = g.seed {
        config.rng_seed = seed;
    }
    config.deterministic |= g.deterministic;
    if let Some(a) = g.ablation {
        config.ablation = a;
    }
    match g.tau.as_slice() {
        [] => {}
        [tau] => {
            config.tau = *tau;
            config.tau_sweep.clear();
        }
        taus => {
            config.tau = taus[0];
            config.tau_sweep = taus.to_vec();
        }
    }
    if let Some(f) = g.fusion {
        config.fusion = f;
    }
    if let Some(m) = g.metric {
        config.metric = m;
    }
    config.validate()?;
    Ok(config)
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let g = &cli.global;
    match &cli.command {
        Command::Ingest { dump_adjacency } => {
            let config = run_config(g)?;
            let o = commands::ingest(&config, *dump_adjacency).context("ingest")?;
            let s = &o.summary;
            for i in 0..2 {
                println!(
                    "g{}: {} entities, {} relation triples ({} duplicates dropped), {} attribute triples ({} duplicates dropped)",
                    i + 1,
                    s.entities[i],
                    s.relation_triples[i],
                    s.duplicate_relation_triples[i],
                    s.attribute_triples[i],
                    s.duplicate_attribute_triples[i]
                );
            }
            println!("seeds: {} ({} train, {} test)", s.seeds, s.train, s.test);
            println!(
                "feature columns: {} relation, {} attribute",
                o.relation_columns, o.attribute_columns
            );
            match o.text_width {
                Some(w) => println!("text embeddings: width {w}"),
                None => println!("text embeddings: none"),
            }
        }
        Command::TrainStruct => {
            let config = run_config(g)?;
            let o = commands::train_struct(&config).context("train-struct")?;
            println!(
                "loss {:.6} -> {:.6} over {} epochs; wrote {}",
                o.first_loss(),
                o.last_loss(),
                o.losses.len(),
                o.checkpoint.display()
            );
        }
        Command::TrainSem => {
            let config = run_config(g)?;
            let o = commands::train_sem(&config).context("train-sem")?;
            println!(
                "loss {:.6} -> {:.6} over {} epochs; wrote {}",
                o.first_loss(),
                o.last_loss(),
                o.losses.len(),
                o.checkpoint.display()
            );
        }
        Command::Align | Command::Eval => {
            let config = run_config(g)?;
            let (name, report) = if matches!(cli.command, Command::Align) {
                ("align", commands::align(&config).context("align")?)
            } else {
                ("eval", commands::eval(&config).context("eval")?)
            };
            for row in &report.rows {
                let hits: Vec<String> = row
                    .hits
                    .iter()
                    .map(|h| format!("Hits@{}={:.4}", h.k, h.value))
                    .collect();
                println!("{name} tau={} {} MRR={:.4}", row.tau, hits.join(" "), row.mrr);
            }
        }
        Command::GenSynth(a) => {
            let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("synth"));
            let spec = SynthSpec {
                n: a.n,
                avg_degree: a.degree,
                relation_types: a.relation_types,
                attribute_keys: a.attribute_keys,
                noise: a.noise,
                train_ratio: a.ratio,
                rng_seed: g.seed.unwrap_or(0),
                text_width: a.text_width,
                ..SynthSpec::default()
            };
            let data = gen_synth(&spec, &dir).context("gen-synth")?;
            println!(
                "wrote {} ({} entities, {} / {} relation triples)",
                dir.display(),
                spec.n,
                data.edges[0].len(),
                data.edges[1].len()
            );
        }
        Command::GradCheck { corrupt_w_s1 } => {
            let seed = g.seed.unwrap_or(0);
            let metric = g.metric.unwrap_or(Metric::L1);
            let ablation = g.ablation.unwrap_or(Ablation::Full);
            let r = commands::grad_check(seed, metric, ablation, *corrupt_w_s1).context("grad-check")?;
            println!(
                "max relative error {:.3e} over {} entries (worst: {}[{}])",
                r.max_rel_error, r.checked, r.worst.0, r.worst.1
            );
            if !(r.max_rel_error < commands::GRAD_CHECK_TOLERANCE) {
                bail!(
                    "gradient check failed: {:.3e} >= {:e}",
                    r.max_rel_error,
                    commands::GRAD_CHECK_TOLERANCE
                );
            }
        }
    }
    Ok(())
}
