//! End-to-end steps shared by the CLI commands and the in-memory runner.

use std::path::PathBuf;

use kgalign_core::align::{
    candidate_pool, fuse, hits_at_k, mean_reciprocal_rank, rank_candidates, HitsAtK, RankedList,
};
use kgalign_core::encoder::{encode, GraphInputs};
use kgalign_core::error::Side;
use kgalign_core::features::{attribute_features, relation_features, ColumnVocabulary};
use kgalign_core::graph::{split_seeds, EntityId, KnowledgeGraphPair, LoadReport, SeedPair, SeedSplit};
use kgalign_core::linalg::Matrix;
use kgalign_core::semantic::{train_semantic, TextEmbeddingTable};
use kgalign_core::sparse::NormalizedAdjacency;
use kgalign_core::train::train_structural;
use rayon::prelude::*;

use crate::checkpoint::{EncoderCheckpoint, MlpCheckpoint};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{load_graph, load_seeds, DatasetLayout};
use crate::textemb::load_text_embeddings;

/// Both graphs and the full seed alignment, as loaded from a dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub layout: DatasetLayout,
    pub pair: KnowledgeGraphPair,
    pub load_reports: [LoadReport; 2],
}

impl Dataset {
    pub fn load(dir: impl Into<PathBuf>) -> Result<Self> {
        let layout = DatasetLayout::new(dir);
        let optional = |p: PathBuf| p.exists().then_some(p);
        let mut graphs = Vec::with_capacity(2);
        for side in [Side::Left, Side::Right] {
            let attrs = optional(layout.attribute_triples(side));
            let labels = optional(layout.entity_labels(side));
            graphs.push(load_graph(
                &layout.relation_triples(side),
                attrs.as_deref(),
                labels.as_deref(),
            )?);
        }
        let (g2, r2) = graphs.pop().expect("two graphs");
        let (g1, r1) = graphs.pop().expect("two graphs");
        let seeds = load_seeds(&layout.seeds(), &g1, &g2)?;
        Ok(Self {
            layout,
            pair: KnowledgeGraphPair { g1, g2, seeds },
            load_reports: [r1, r2],
        })
    }

    /// Text embeddings for both graphs, from `text_emb_{1,2}.tsv` or, failing
    /// that, `text_emb_{1,2}.bin`.
    pub fn text_tables(&self) -> Result<[TextEmbeddingTable; 2]> {
        let load = |side: Side| {
            let tsv = self.layout.text_embeddings(side);
            let bin = self.layout.text_embeddings_binary(side);
            let path = if tsv.exists() || !bin.exists() { tsv } else { bin };
            load_text_embeddings(&path, self.pair.graph(side), side)
        };
        Ok([load(Side::Left)?, load(Side::Right)?])
    }

    pub fn split(&self, config: &RunConfig) -> Result<SeedSplit> {
        Ok(split_seeds(&self.pair.seeds, config.train_ratio, config.rng_seed)?)
    }
}

/// Adjacency and aspect features for both graphs.
#[derive(Debug, Clone)]
pub struct Features {
    pub adjacency: [NormalizedAdjacency; 2],
    pub relation: [Matrix; 2],
    pub attribute: [Matrix; 2],
    pub relation_vocab: ColumnVocabulary,
    pub attribute_vocab: ColumnVocabulary,
}

impl Features {
    pub fn build(pair: &KnowledgeGraphPair, config: &RunConfig) -> Self {
        let graphs = [&pair.g1, &pair.g2];
        let relation_vocab = ColumnVocabulary::relations(&graphs, config.relation_columns);
        let attribute_vocab = ColumnVocabulary::attributes(&graphs, config.attribute_columns);
        Self {
            adjacency: graphs.map(NormalizedAdjacency::from_graph),
            relation: graphs.map(|g| relation_features(g, &relation_vocab)),
            attribute: graphs.map(|g| attribute_features(g, &attribute_vocab)),
            relation_vocab,
            attribute_vocab,
        }
    }

    pub fn inputs(&self) -> [GraphInputs<'_>; 2] {
        std::array::from_fn(|i| GraphInputs {
            adjacency: &self.adjacency[i],
            relation: &self.relation[i],
            attribute: &self.attribute[i],
        })
    }
}

/// Trains the structural encoder. The returned checkpoint is already
/// rounded to its on-disk precision.
pub fn train_encoder(
    features: &Features,
    train: &[SeedPair],
    config: &RunConfig,
) -> Result<(EncoderCheckpoint, Vec<f64>)> {
    let trained = train_structural(features.inputs(), train, &config.structural())?;
    let checkpoint = EncoderCheckpoint {
        params: trained.params,
        metric: config.metric,
        ablation: config.ablation,
        train_initial_features: config.train_initial_features,
        rng_seed: config.rng_seed,
    };
    Ok((checkpoint.quantized(), trained.losses))
}

pub fn train_mlp(
    tables: &[TextEmbeddingTable; 2],
    train: &[SeedPair],
    config: &RunConfig,
) -> Result<(MlpCheckpoint, Vec<f64>)> {
    let trained = train_semantic([&tables[0], &tables[1]], train, &config.semantic())?;
    let checkpoint = MlpCheckpoint {
        params: trained.params,
        rng_seed: config.rng_seed,
    };
    Ok((checkpoint.quantized(), trained.losses))
}

/// Fails unless `checkpoint` was trained for these features and settings.
pub fn check_encoder(
    checkpoint: &EncoderCheckpoint,
    features: &Features,
    config: &RunConfig,
    path: PathBuf,
) -> Result<()> {
    let dims = checkpoint.params.dims();
    let expected = [
        ("g1 entities", features.adjacency[0].n()),
        ("g2 entities", features.adjacency[1].n()),
        ("relation columns", features.relation[0].cols()),
        ("attribute columns", features.attribute[0].cols()),
        ("d", config.d),
        ("h", config.h),
    ];
    let found = [dims.entities[0], dims.entities[1], dims.k_rel, dims.k_attr, dims.d, dims.h];
    for ((name, want), got) in expected.into_iter().zip(found) {
        if want != got {
            return Err(Error::CheckpointMismatch {
                path,
                message: format!("{name}: checkpoint has {got}, run has {want}"),
            });
        }
    }
    if checkpoint.ablation != config.ablation {
        return Err(Error::CheckpointMismatch {
            path,
            message: format!(
                "ablation: checkpoint has `{}`, run has `{}`",
                checkpoint.ablation.tag(),
                config.ablation.tag()
            ),
        });
    }
    Ok(())
}

/// Ranked lists and metrics for one fusion weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub tau: f64,
    pub lists: Vec<RankedList>,
    pub hits: Vec<HitsAtK>,
    pub mrr: f64,
}

/// Per-graph embedding tables that alignment works from.
#[derive(Debug, Clone)]
pub struct Embeddings {
    pub structural: [Matrix; 2],
    pub semantic: Option<[Matrix; 2]>,
}

impl Embeddings {
    pub fn compute(
        features: &Features,
        encoder: &EncoderCheckpoint,
        semantic: Option<(&MlpCheckpoint, &[TextEmbeddingTable; 2])>,
    ) -> Self {
        let [o1, o2] = encode(&encoder.params, features.inputs(), encoder.ablation);
        let semantic = semantic.map(|(mlp, tables)| {
            [&tables[0], &tables[1]]
                .map(|t| kgalign_core::semantic::mlp_project(&t.vectors, &mlp.params))
        });
        Self {
            structural: [o1.hybrid, o2.hybrid],
            semantic,
        }
    }
}

/// Threads used for ranking: 1 in deterministic mode, else `KGALIGN_THREADS`
/// if set, else the rayon default.
pub fn ranking_threads(config: &RunConfig) -> Option<usize> {
    if config.deterministic {
        return Some(1);
    }
    std::env::var("KGALIGN_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n >= 1)
}

const CHUNK: usize = 32;

/// Pools under the structural tables, fused re-ranking, Hits@k and MRR.
/// Sources are processed in parallel; every list depends only on its own
/// source, so the result does not depend on the thread count.
pub fn align(
    embeddings: &Embeddings,
    gold: &[SeedPair],
    tau: f64,
    config: &RunConfig,
) -> Result<Alignment> {
    let structural = [&embeddings.structural[0], &embeddings.structural[1]];
    let fused = match &embeddings.semantic {
        Some(sem) => [0, 1].map(|i| fuse(structural[i], &sem[i], tau, config.fusion)),
        None if tau == 1.0 => [0, 1].map(|i| Ok(structural[i].clone())),
        None => {
            return Err(Error::Config(format!(
                "tau = {tau} needs semantic embeddings (run `train-sem`)"
            )))
        }
    };
    let [f1, f2] = fused;
    let fused = [f1?, f2?];

    let sources: Vec<EntityId> = gold.iter().map(|s| s.left).collect();
    let work = || -> Result<Vec<RankedList>> {
        let chunks: Vec<Vec<RankedList>> = sources
            .par_chunks(CHUNK)
            .map(|chunk| {
                let pools = candidate_pool(structural, chunk, config.pool_size)?;
                Ok(rank_candidates([&fused[0], &fused[1]], chunk, &pools))
            })
            .collect::<Result<_>>()?;
        Ok(chunks.into_iter().flatten().collect())
    };
    let lists = match ranking_threads(config) {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let hits = hits_at_k(&lists, gold, &config.ks)?;
    let mrr = mean_reciprocal_rank(&lists, gold);
    Ok(Alignment {
        tau,
        lists,
        hits,
        mrr,
    })
}

/// Everything an in-memory run produces.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub split: SeedSplit,
    pub encoder: EncoderCheckpoint,
    pub structural_loss: Vec<f64>,
    pub mlp: Option<MlpCheckpoint>,
    pub semantic_loss: Vec<f64>,
    pub alignments: Vec<Alignment>,
}

impl Experiment {
    pub fn hits(&self, tau: f64, k: usize) -> Option<f64> {
        self.alignments
            .iter()
            .find(|a| a.tau == tau)?
            .hits
            .iter()
            .find(|h| h.k == k)
            .map(|h| h.value)
    }
}

/// Split, train and evaluate without touching the output directory. The
/// semantic head is trained only when some requested `tau` is below 1.
pub fn run_experiment(dataset: &Dataset, config: &RunConfig) -> Result<Experiment> {
    config.validate()?;
    let split = dataset.split(config)?;
    let features = Features::build(&dataset.pair, config);
    let (encoder, structural_loss) = train_encoder(&features, &split.train, config)?;
    let taus = config.taus();
    let (mlp, semantic_loss, tables) = if taus.iter().any(|&t| t < 1.0) {
        let tables = dataset.text_tables()?;
        let (mlp, losses) = train_mlp(&tables, &split.train, config)?;
        (Some(mlp), losses, Some(tables))
    } else {
        (None, Vec::new(), None)
    };
    let semantic = mlp.as_ref().zip(tables.as_ref());
    let embeddings = Embeddings::compute(&features, &encoder, semantic);
    let alignments = taus
        .iter()
        .map(|&tau| align(&embeddings, &split.test, tau, config))
        .collect::<Result<_>>()?;
    Ok(Experiment {
        split,
        encoder,
        structural_loss,
        mlp,
        semantic_loss,
        alignments,
    })
}
