//! Synthetic twin graphs with a known alignment.
//!
//! `g1` is a random graph with typed edges and random attribute keys. `g2` is
//! a relabeled copy: each edge is dropped with probability `p` and the same
//! number of random edges is added back. Attribute triples get the same
//! treatment, each key replaced by a random one with probability `p`.
//! Aligned entities share one description string.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use kgalign_core::fixture::fixture_embedding;
use kgalign_core::semantic::Provenance;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{write_tsv, DatasetLayout};
use crate::textemb::{write_text, LabelledEmbeddings};
use kgalign_core::error::Side;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n: usize,
    pub avg_degree: f64,
    pub relation_types: usize,
    pub attribute_keys: usize,
    /// Most attribute keys an entity gets; at least one.
    pub max_attributes: usize,
    /// Edge (and attribute) noise fraction `p`.
    pub noise: f64,
    /// Written into the generated `config.toml`.
    pub train_ratio: f64,
    pub rng_seed: u64,
    /// Width of the fixture text embeddings.
    pub text_width: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 200,
            avg_degree: 6.0,
            relation_types: 8,
            attribute_keys: 12,
            max_attributes: 3,
            noise: 0.1,
            train_ratio: 0.3,
            rng_seed: 0,
            text_width: 64,
        }
    }
}

/// A generated pair, with `g2` entity `perm[i]` aligned to `g1` entity `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub spec: SynthSpec,
    /// `(head, relation type, tail)` over `0..n`.
    pub edges: [Vec<(usize, usize, usize)>; 2],
    /// `(entity, key)` over `0..n`.
    pub attributes: [Vec<(usize, usize)>; 2],
    pub perm: Vec<usize>,
    pub descriptions: Vec<String>,
}

const WORDS: [&str; 16] = [
    "amber", "basalt", "cobalt", "delta", "ember", "fjord", "granite", "harbor", "indigo", "juniper",
    "kestrel", "lumen", "meadow", "nickel", "orchid", "quartz",
];

pub fn entity_label(side: Side, i: usize) -> String {
    match side {
        Side::Left => format!("a{i:05}"),
        Side::Right => format!("b{i:05}"),
    }
}

impl SynthSpec {
    pub fn edge_count(&self) -> usize {
        (self.n as f64 * self.avg_degree / 2.0).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n < 10 {
            return fail(format!("synthetic graphs need n >= 10, got {}", self.n));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return fail(format!("noise must lie in [0, 1), got {}", self.noise));
        }
        if !(self.avg_degree > 0.0) || self.edge_count() > self.n * (self.n - 1) / 4 {
            return fail(format!(
                "avg_degree {} is out of range for {} nodes",
                self.avg_degree, self.n
            ));
        }
        if self.relation_types == 0 || self.attribute_keys == 0 || self.max_attributes == 0 {
            return fail("relation_types, attribute_keys and max_attributes must be >= 1".into());
        }
        if self.max_attributes > self.attribute_keys {
            return fail("max_attributes cannot exceed attribute_keys".into());
        }
        if self.text_width < 8 {
            return fail(format!("text_width must be at least 8, got {}", self.text_width));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return fail(format!("train_ratio must lie in (0, 1), got {}", self.train_ratio));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<SynthData> {
        self.validate()?;
        let n = self.n;
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        let random_edge = |rng: &mut ChaCha8Rng, present: &mut BTreeSet<(usize, usize)>| loop {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a != b && present.insert((a.min(b), a.max(b))) {
                break (a, rng.random_range(0..self.relation_types), b);
            }
        };

        let mut present = BTreeSet::new();
        let g1_edges: Vec<_> = (0..self.edge_count())
            .map(|_| random_edge(&mut rng, &mut present))
            .collect();
        let mut g1_attrs = Vec::new();
        for e in 0..n {
            let count = rng.random_range(1..=self.max_attributes);
            let keys = rand::seq::index::sample(&mut rng, self.attribute_keys, count);
            let mut keys: Vec<usize> = keys.into_iter().collect();
            keys.sort_unstable();
            g1_attrs.extend(keys.into_iter().map(|k| (e, k)));
        }

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);

        let mut g2_present = BTreeSet::new();
        let mut g2_edges = Vec::with_capacity(g1_edges.len());
        let mut dropped = 0;
        for &(h, r, t) in &g1_edges {
            if rng.random_bool(self.noise) {
                dropped += 1;
            } else {
                let (h, t) = (perm[h], perm[t]);
                g2_present.insert((h.min(t), h.max(t)));
                g2_edges.push((h, r, t));
            }
        }
        // Re-added edges must not duplicate a kept one, nor restore a dropped
        // one in place.
        let mut forbidden = g2_present.clone();
        for &(h, _, t) in &g1_edges {
            let (h, t) = (perm[h], perm[t]);
            forbidden.insert((h.min(t), h.max(t)));
        }
        for _ in 0..dropped {
            g2_edges.push(random_edge(&mut rng, &mut forbidden));
        }
        g2_edges.shuffle(&mut rng);

        let mut g2_attrs = Vec::with_capacity(g1_attrs.len());
        let mut g2_attr_set = BTreeSet::new();
        for &(e, k) in &g1_attrs {
            let key = if rng.random_bool(self.noise) {
                rng.random_range(0..self.attribute_keys)
            } else {
                k
            };
            if g2_attr_set.insert((perm[e], key)) {
                g2_attrs.push((perm[e], key));
            }
        }
        g2_attrs.shuffle(&mut rng);

        let descriptions = (0..n)
            .map(|i| {
                let w = |rng: &mut ChaCha8Rng| WORDS[rng.random_range(0..WORDS.len())];
                format!("{} {} {} number {i}", w(&mut rng), w(&mut rng), w(&mut rng))
            })
            .collect();

        Ok(SynthData {
            spec: self.clone(),
            edges: [g1_edges, g2_edges],
            attributes: [g1_attrs, g2_attrs],
            perm,
            descriptions,
        })
    }
}

impl SynthData {
    /// Entity label of `g1` index `i` or `g2` index `j`.
    pub fn label(&self, side: Side, i: usize) -> String {
        entity_label(side, i)
    }

    /// Description of `g2` entity `j`.
    fn description(&self, side: Side, i: usize, inverse: &[usize]) -> &str {
        match side {
            Side::Left => &self.descriptions[i],
            Side::Right => &self.descriptions[inverse[i]],
        }
    }

    /// Writes the dataset files and a `config.toml` pointing at them.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let layout = DatasetLayout::new(dir);
        let n = self.spec.n;
        let mut inverse = vec![0; n];
        for (i, &j) in self.perm.iter().enumerate() {
            inverse[j] = i;
        }
        for side in [Side::Left, Side::Right] {
            let s = side.index();
            let label = |i: usize| self.label(side, i);
            write_tsv(
                &layout.relation_triples(side),
                self.edges[s].iter().map(|&(h, r, t)| [label(h), format!("rel{r}"), label(t)]),
            )?;
            write_tsv(
                &layout.attribute_triples(side),
                self.attributes[s]
                    .iter()
                    .map(|&(e, k)| [label(e), format!("key{k}"), format!("value of key{k}")]),
            )?;
            write_tsv(
                &layout.entity_labels(side),
                (0..n).map(|i| [label(i), format!("entity {}", label(i))]),
            )?;
            write_tsv(
                &layout.descriptions(side),
                (0..n).map(|i| [label(i), self.description(side, i, &inverse).to_string()]),
            )?;
            let table = LabelledEmbeddings {
                width: self.spec.text_width,
                provenance: Provenance::HashFixture,
                rows: (0..n)
                    .map(|i| {
                        let text = self.description(side, i, &inverse);
                        (label(i), fixture_embedding(text, self.spec.text_width, self.spec.rng_seed))
                    })
                    .collect(),
            };
            write_text(&layout.text_embeddings(side), &table)?;
        }
        write_tsv(
            &layout.seeds(),
            (0..n).map(|i| [self.label(Side::Left, i), self.label(Side::Right, self.perm[i])]),
        )?;
        let config = RunConfig {
            data_dir: ".".into(),
            out_dir: "out".into(),
            rng_seed: self.spec.rng_seed,
            train_ratio: self.spec.train_ratio,
            ..RunConfig::default()
        };
        let path = dir.join("config.toml");
        fs::write(&path, config.to_toml()).map_err(|e| Error::io(&path, e))
    }
}

/// Generates and writes in one step.
pub fn gen_synth(spec: &SynthSpec, dir: &Path) -> Result<SynthData> {
    let data = spec.generate()?;
    data.write(dir)?;
    Ok(data)
}
