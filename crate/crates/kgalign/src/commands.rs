//! The CLI commands as library calls. Each reads a validated [`RunConfig`] and
//! writes under its output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use kgalign_core::encoder::Ablation;
use kgalign_core::error::Side;
use kgalign_core::train::{grad_check as core_grad_check, GradCheckReport, Metric, TinyInstance};

use crate::checkpoint::{EncoderCheckpoint, MlpCheckpoint};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::write_tsv;
use crate::pipeline::{align as run_align, check_encoder, train_encoder, train_mlp, Alignment, Dataset, Embeddings, Features};
use crate::report::{load_curve, save_curve, DatasetSummary, MetricsReport, MetricsRow};

/// Creates `checkpoints/`, `reports/` and `logs/`.
pub fn prepare_out(config: &RunConfig) -> Result<()> {
    for dir in [config.checkpoints_dir(), config.reports_dir(), config.logs_dir()] {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    Ok(())
}

fn write_log(config: &RunConfig, command: &str, body: &str) -> Result<()> {
    let path = config.logs_dir().join(format!("{command}.log"));
    fs::write(&path, body).map_err(|e| Error::io(&path, e))
}

fn structural_curve(config: &RunConfig) -> PathBuf {
    config.reports_dir().join("structural_loss.json")
}

fn semantic_curve(config: &RunConfig) -> PathBuf {
    config.reports_dir().join("semantic_loss.json")
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutcome {
    pub summary: DatasetSummary,
    pub relation_columns: usize,
    pub attribute_columns: usize,
    /// Width of the text embeddings, if the dataset has them.
    pub text_width: Option<usize>,
}

/// Loads and checks the dataset. With `dump_adjacency` the normalized
/// adjacencies are written to `logs/adjacency_{1,2}.coo`.
pub fn ingest(config: &RunConfig, dump_adjacency: bool) -> Result<IngestOutcome> {
    prepare_out(config)?;
    let dataset = Dataset::load(&config.data_dir)?;
    let split = dataset.split(config)?;
    let features = Features::build(&dataset.pair, config);
    let text_width = if dataset.layout.text_embeddings(Side::Left).exists()
        || dataset.layout.text_embeddings_binary(Side::Left).exists()
    {
        let tables = dataset.text_tables()?;
        if tables[0].width() != tables[1].width() {
            return Err(Error::Config(format!(
                "text embedding widths differ: {} vs {}",
                tables[0].width(),
                tables[1].width()
            )));
        }
        Some(tables[0].width())
    } else {
        None
    };
    if dump_adjacency {
        for side in [Side::Left, Side::Right] {
            let path = config.logs_dir().join(format!("adjacency_{}.coo", side.index() + 1));
            let adj = &features.adjacency[side.index()];
            write_tsv(
                &path,
                adj.coo()
                    .into_iter()
                    .map(|(i, j, v)| [i.to_string(), j.to_string(), format!("{v:e}")]),
            )?;
        }
    }
    let summary = DatasetSummary::new(&dataset, split.train.len(), split.test.len());
    let path = config.reports_dir().join("ingest.json");
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(IngestOutcome {
        summary,
        relation_columns: features.relation_vocab.len() * 2,
        attribute_columns: features.attribute_vocab.len(),
        text_width,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn first_loss(&self) -> f64 {
        self.losses.first().copied().unwrap_or(f64::NAN)
    }

    pub fn last_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }
}

pub fn train_struct(config: &RunConfig) -> Result<TrainOutcome> {
    let start = Instant::now();
    prepare_out(config)?;
    let dataset = Dataset::load(&config.data_dir)?;
    let split = dataset.split(config)?;
    let features = Features::build(&dataset.pair, config);
    let (checkpoint, losses) = train_encoder(&features, &split.train, config)?;
    let path = config.encoder_checkpoint();
    checkpoint.save(&path)?;
    save_curve(&structural_curve(config), &losses)?;
    let mut log = String::new();
    let _ = writeln!(log, "epochs\t{}", losses.len());
    let _ = writeln!(log, "train_seeds\t{}", split.train.len());
    let _ = writeln!(log, "first_loss\t{}", losses.first().unwrap_or(&f64::NAN));
    let _ = writeln!(log, "last_loss\t{}", losses.last().unwrap_or(&f64::NAN));
    let _ = writeln!(log, "seconds\t{:.3}", start.elapsed().as_secs_f64());
    write_log(config, "train-struct", &log)?;
    Ok(TrainOutcome {
        checkpoint: path,
        losses,
    })
}

pub fn train_sem(config: &RunConfig) -> Result<TrainOutcome> {
    let start = Instant::now();
    prepare_out(config)?;
    let dataset = Dataset::load(&config.data_dir)?;
    let split = dataset.split(config)?;
    let tables = dataset.text_tables()?;
    let (checkpoint, losses) = train_mlp(&tables, &split.train, config)?;
    let path = config.mlp_checkpoint();
    checkpoint.save(&path)?;
    save_curve(&semantic_curve(config), &losses)?;
    let mut log = String::new();
    let _ = writeln!(log, "epochs\t{}", losses.len());
    let _ = writeln!(log, "text_width\t{}", tables[0].width());
    let _ = writeln!(log, "last_loss\t{}", losses.last().unwrap_or(&f64::NAN));
    let _ = writeln!(log, "seconds\t{:.3}", start.elapsed().as_secs_f64());
    write_log(config, "train-sem", &log)?;
    Ok(TrainOutcome {
        checkpoint: path,
        losses,
    })
}

/// Loads what alignment at the given `taus` needs.
fn prepare_alignment(config: &RunConfig, taus: &[f64]) -> Result<(Dataset, Embeddings, DatasetSummary, Vec<kgalign_core::graph::SeedPair>)> {
    let dataset = Dataset::load(&config.data_dir)?;
    let split = dataset.split(config)?;
    let features = Features::build(&dataset.pair, config);
    let encoder = EncoderCheckpoint::load(&config.encoder_checkpoint())?;
    check_encoder(&encoder, &features, config, config.encoder_checkpoint())?;
    let semantic = if taus.iter().any(|&t| t < 1.0) {
        let mlp = MlpCheckpoint::load(&config.mlp_checkpoint())?;
        let tables = dataset.text_tables()?;
        if mlp.params.input_width() != tables[0].width() {
            return Err(Error::CheckpointMismatch {
                path: config.mlp_checkpoint(),
                message: format!(
                    "text width: checkpoint has {}, data has {}",
                    mlp.params.input_width(),
                    tables[0].width()
                ),
            });
        }
        Some((mlp, tables))
    } else {
        None
    };
    let embeddings = Embeddings::compute(&features, &encoder, semantic.as_ref().map(|(m, t)| (m, t)));
    let summary = DatasetSummary::new(&dataset, split.train.len(), split.test.len());
    Ok((dataset, embeddings, summary, split.test))
}

fn report(config: &RunConfig, command: &str, summary: DatasetSummary, alignments: &[Alignment]) -> Result<MetricsReport> {
    Ok(MetricsReport {
        command: command.to_string(),
        config: config.clone(),
        dataset: summary,
        rows: alignments.iter().map(|a| MetricsRow::new(a, config)).collect(),
        structural_loss: load_curve(&structural_curve(config))?,
        semantic_loss: load_curve(&semantic_curve(config))?,
    })
}

/// Ranks every test source at `config.tau`, writing the candidate lists to
/// `reports/candidates.tsv` and metrics to `reports/align.json`.
pub fn align(config: &RunConfig) -> Result<MetricsReport> {
    let start = Instant::now();
    prepare_out(config)?;
    let (dataset, embeddings, summary, test) = prepare_alignment(config, &[config.tau])?;
    let alignment = run_align(&embeddings, &test, config.tau, config)?;
    let (g1, g2) = (&dataset.pair.g1, &dataset.pair.g2);
    let mut rows = vec![["source".to_string(), "rank".into(), "target".into(), "score".into()]];
    for list in &alignment.lists {
        for (rank, c) in list.candidates.iter().enumerate() {
            rows.push([
                g1.entity_label(list.source).to_string(),
                (rank + 1).to_string(),
                g2.entity_label(c.target).to_string(),
                format!("{}", c.score),
            ]);
        }
    }
    write_tsv(&config.reports_dir().join("candidates.tsv"), rows)?;
    let report = report(config, "align", summary, std::slice::from_ref(&alignment))?;
    report.save(&config.reports_dir().join("align.json"))?;
    write_log(config, "align", &format!("seconds\t{:.3}\n", start.elapsed().as_secs_f64()))?;
    Ok(report)
}

/// One metrics row per fusion weight in [`RunConfig::taus`], written to
/// `reports/metrics.json`.
pub fn eval(config: &RunConfig) -> Result<MetricsReport> {
    let start = Instant::now();
    prepare_out(config)?;
    let taus = config.taus();
    let (_, embeddings, summary, test) = prepare_alignment(config, &taus)?;
    let alignments = taus
        .iter()
        .map(|&tau| run_align(&embeddings, &test, tau, config))
        .collect::<Result<Vec<_>>>()?;
    let report = report(config, "eval", summary, &alignments)?;
    report.save(&config.reports_dir().join("metrics.json"))?;
    write_log(config, "eval", &format!("seconds\t{:.3}\n", start.elapsed().as_secs_f64()))?;
    Ok(report)
}

/// Tolerance `grad-check` enforces.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

/// Checks structural gradients on a random 8-node instance. With
/// `corrupt_w_s1` the analytic gradient of `w_s1` is scaled by 1.5 first.
pub fn grad_check(rng_seed: u64, metric: Metric, ablation: Ablation, corrupt_w_s1: bool) -> Result<GradCheckReport> {
    let instance = TinyInstance::random(8, rng_seed);
    let problem = instance.problem(metric, ablation);
    if !corrupt_w_s1 {
        return Ok(core_grad_check(&problem, &instance.params, rng_seed)?);
    }
    let mut analytic = problem.evaluate(&instance.params)?.grads;
    analytic.w_s1 = analytic.w_s1.scale(1.5);
    Ok(kgalign_core::train::finite_difference_check(
        &problem,
        &instance.params,
        &analytic,
        4,
        kgalign_core::train::GRAD_CHECK_STEP,
        rng_seed,
    )?)
}
