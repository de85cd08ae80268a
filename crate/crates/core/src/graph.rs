//! Knowledge-graph data model: interning, triple stores, seed alignments and
//! the seeded train/test split.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result, Side};

macro_rules! id_type {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }
    };
}

id_type!(
    /// Dense entity index within one graph.
    EntityId
);
id_type!(RelationId);
id_type!(AttrKeyId);

/// Assigns contiguous ids `0..n` to strings in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Interner {
    labels: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl Interner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = u32::try_from(self.labels.len()).expect("more than u32::MAX labels");
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), id);
        id
    }

    pub fn get(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> &str {
        &self.labels[id as usize]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationTriple {
    pub head: EntityId,
    pub rel: RelationId,
    pub tail: EntityId,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct AttributeTriple {
    pub entity: EntityId,
    pub key: AttrKeyId,
    /// Kept for export; features only look at keys.
    pub value: String,
}

/// One interned knowledge graph. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGraph {
    entities: Interner,
    relations: Interner,
    attr_keys: Interner,
    names: Vec<Option<String>>,
    rel_triples: Vec<RelationTriple>,
    attr_triples: Vec<AttributeTriple>,
}

impl KnowledgeGraph {
    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn entities(&self) -> &Interner {
        &self.entities
    }

    pub fn relations(&self) -> &Interner {
        &self.relations
    }

    pub fn attr_keys(&self) -> &Interner {
        &self.attr_keys
    }

    pub fn entity(&self, label: &str) -> Option<EntityId> {
        self.entities.get(label).map(EntityId)
    }

    pub fn entity_label(&self, id: EntityId) -> &str {
        self.entities.label(id.0)
    }

    /// Human-readable name from the labels file, if one was given.
    pub fn entity_name(&self, id: EntityId) -> Option<&str> {
        self.names[id.index()].as_deref()
    }

    pub fn relation_triples(&self) -> &[RelationTriple] {
        &self.rel_triples
    }

    pub fn attribute_triples(&self) -> &[AttributeTriple] {
        &self.attr_triples
    }
}

/// Counts gathered while building a graph.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub entities: usize,
    pub relation_types: usize,
    pub attribute_keys: usize,
    pub relation_triples: usize,
    pub attribute_triples: usize,
    pub duplicate_relation_triples: usize,
    pub duplicate_attribute_triples: usize,
}

/// Incremental builder. Ids are assigned in the order entities, relations
/// and keys are first seen; duplicate triples are dropped and counted.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    entities: Interner,
    relations: Interner,
    attr_keys: Interner,
    names: Vec<Option<String>>,
    rel_triples: Vec<RelationTriple>,
    rel_seen: BTreeSet<RelationTriple>,
    attr_triples: Vec<AttributeTriple>,
    attr_seen: BTreeSet<(u32, u32, String)>,
    dup_rel: usize,
    dup_attr: usize,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_entity(&mut self, label: &str) -> EntityId {
        let id = self.entities.intern(label);
        if id as usize == self.names.len() {
            self.names.push(None);
        }
        EntityId(id)
    }

    /// Registers `label` and attaches a display name to it.
    pub fn add_entity_name(&mut self, label: &str, name: &str) -> EntityId {
        let id = self.add_entity(label);
        self.names[id.index()] = Some(name.to_string());
        id
    }

    /// Returns `false` when the triple was a duplicate.
    pub fn add_relation(&mut self, head: &str, rel: &str, tail: &str) -> bool {
        let head = self.add_entity(head);
        let rel = RelationId(self.relations.intern(rel));
        let tail = self.add_entity(tail);
        let triple = RelationTriple { head, rel, tail };
        if self.rel_seen.insert(triple) {
            self.rel_triples.push(triple);
            true
        } else {
            self.dup_rel += 1;
            false
        }
    }

    pub fn add_attribute(&mut self, entity: &str, key: &str, value: &str) -> bool {
        let entity = self.add_entity(entity);
        let key = AttrKeyId(self.attr_keys.intern(key));
        if self
            .attr_seen
            .insert((entity.0, key.0, value.to_string()))
        {
            self.attr_triples.push(AttributeTriple {
                entity,
                key,
                value: value.to_string(),
            });
            true
        } else {
            self.dup_attr += 1;
            false
        }
    }

    pub fn finish(self) -> Result<(KnowledgeGraph, LoadReport)> {
        if self.rel_triples.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let report = LoadReport {
            entities: self.entities.len(),
            relation_types: self.relations.len(),
            attribute_keys: self.attr_keys.len(),
            relation_triples: self.rel_triples.len(),
            attribute_triples: self.attr_triples.len(),
            duplicate_relation_triples: self.dup_rel,
            duplicate_attribute_triples: self.dup_attr,
        };
        let graph = KnowledgeGraph {
            entities: self.entities,
            relations: self.relations,
            attr_keys: self.attr_keys,
            names: self.names,
            rel_triples: self.rel_triples,
            attr_triples: self.attr_triples,
        };
        Ok((graph, report))
    }
}

/// A known-equivalent pair `(entity in g1, entity in g2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SeedPair {
    pub left: EntityId,
    pub right: EntityId,
}

impl SeedPair {
    pub fn new(left: u32, right: u32) -> Self {
        Self {
            left: EntityId(left),
            right: EntityId(right),
        }
    }
}

/// Two graphs plus their seed alignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGraphPair {
    pub g1: KnowledgeGraph,
    pub g2: KnowledgeGraph,
    pub seeds: Vec<SeedPair>,
}

impl KnowledgeGraphPair {
    pub fn graph(&self, side: Side) -> &KnowledgeGraph {
        match side {
            Side::Left => &self.g1,
            Side::Right => &self.g2,
        }
    }
}

/// Resolves labelled seed rows `(line, left, right)` against both graphs.
/// The result must be injective on both sides.
pub fn resolve_seeds<'a>(
    rows: impl IntoIterator<Item = (usize, &'a str, &'a str)>,
    g1: &KnowledgeGraph,
    g2: &KnowledgeGraph,
) -> Result<Vec<SeedPair>> {
    let mut seen_left = BTreeSet::new();
    let mut seen_right = BTreeSet::new();
    let mut seeds = Vec::new();
    for (line, left, right) in rows {
        let l = g1.entity(left).ok_or_else(|| Error::UnknownLabel {
            line,
            side: Side::Left,
            label: left.to_string(),
        })?;
        let r = g2.entity(right).ok_or_else(|| Error::UnknownLabel {
            line,
            side: Side::Right,
            label: right.to_string(),
        })?;
        if !seen_left.insert(l) {
            return Err(Error::NonInjectiveSeeds {
                line,
                side: Side::Left,
                label: left.to_string(),
            });
        }
        if !seen_right.insert(r) {
            return Err(Error::NonInjectiveSeeds {
                line,
                side: Side::Right,
                label: right.to_string(),
            });
        }
        seeds.push(SeedPair { left: l, right: r });
    }
    Ok(seeds)
}

/// Seeds partitioned into a training prefix and a held-out test set.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSplit {
    pub train: Vec<SeedPair>,
    pub test: Vec<SeedPair>,
    pub ratio: f64,
    pub rng_seed: u64,
}

/// Shuffles `seeds` under `rng_seed` and takes the first
/// `round(ratio · |seeds|)` pairs for training.
pub fn split_seeds(seeds: &[SeedPair], ratio: f64, rng_seed: u64) -> Result<SeedSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(alloc::format!(
            "train ratio must lie in (0, 1), got {ratio}"
        )));
    }
    if seeds.len() < 2 {
        return Err(Error::Config(alloc::format!(
            "need at least 2 seed pairs to split, got {}",
            seeds.len()
        )));
    }
    let mut shuffled = seeds.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    shuffled.shuffle(&mut rng);
    let n_train = libm::round(ratio * seeds.len() as f64) as usize;
    let test = shuffled.split_off(n_train);
    Ok(SeedSplit {
        train: shuffled,
        test,
        ratio,
        rng_seed,
    })
}
