//! Per-entity input features: relation/attribute count profiles and the
//! trainable initial topology features.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::KnowledgeGraph;
use crate::linalg::{normalize_rows, Matrix};

pub const DEFAULT_RELATION_COLUMNS: usize = 1000;
pub const DEFAULT_ATTRIBUTE_COLUMNS: usize = 1000;

/// Ordered names selected as feature columns, shared by both graphs so that
/// column `j` means the same relation type or key on either side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnVocabulary {
    names: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl ColumnVocabulary {
    /// Keeps the `cap` most frequent names. `counts` yields `(name, count)`
    /// in first-seen order; ties keep that order.
    fn top_by_frequency<'a>(counts: impl IntoIterator<Item = (&'a str, usize)>, cap: usize) -> Self {
        let mut totals: Vec<(String, usize)> = Vec::new();
        let mut position: BTreeMap<&'a str, usize> = BTreeMap::new();
        for (name, count) in counts {
            match position.get(name) {
                Some(&p) => totals[p].1 += count,
                None => {
                    position.insert(name, totals.len());
                    totals.push((String::from(name), count));
                }
            }
        }
        // Stable sort keeps first-seen order among equal counts.
        totals.sort_by(|a, b| b.1.cmp(&a.1));
        totals.truncate(cap);
        let names: Vec<String> = totals.into_iter().map(|(n, _)| n).collect();
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Self { names, index }
    }

    /// Relation types ranked by joint triple frequency over `graphs`. Each
    /// type contributes a head and a tail column, so `cap / 2` types are kept.
    pub fn relations(graphs: &[&KnowledgeGraph], cap: usize) -> Self {
        let counts = graphs.iter().flat_map(|g| {
            let mut per_rel = alloc::vec![0usize; g.relations().len()];
            for t in g.relation_triples() {
                per_rel[t.rel.index()] += 1;
            }
            g.relations()
                .labels()
                .iter()
                .zip(per_rel)
                .map(|(l, c)| (l.as_str(), c))
                .collect::<Vec<_>>()
        });
        Self::top_by_frequency(counts, cap / 2)
    }

    /// Attribute keys ranked by joint triple frequency over `graphs`.
    pub fn attributes(graphs: &[&KnowledgeGraph], cap: usize) -> Self {
        let counts = graphs.iter().flat_map(|g| {
            let mut per_key = alloc::vec![0usize; g.attr_keys().len()];
            for t in g.attribute_triples() {
                per_key[t.key.index()] += 1;
            }
            g.attr_keys()
                .labels()
                .iter()
                .zip(per_key)
                .map(|(l, c)| (l.as_str(), c))
                .collect::<Vec<_>>()
        });
        Self::top_by_frequency(counts, cap)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

/// Relation profile: for each kept relation type `t` at position `p`,
/// column `2p` counts triples where the entity is the head and `2p + 1`
/// where it is the tail. Nonzero rows are L2-normalized.
pub fn relation_features(graph: &KnowledgeGraph, vocab: &ColumnVocabulary) -> Matrix {
    let column_of: Vec<Option<usize>> = graph
        .relations()
        .labels()
        .iter()
        .map(|l| vocab.position(l))
        .collect();
    let mut x = Matrix::zeros(graph.entity_count(), 2 * vocab.len());
    for t in graph.relation_triples() {
        if let Some(p) = column_of[t.rel.index()] {
            x[(t.head.index(), 2 * p)] += 1.0;
            x[(t.tail.index(), 2 * p + 1)] += 1.0;
        }
    }
    normalize_rows(&mut x);
    x
}

/// Attribute profile: presence counts of each kept key, L2-normalized.
pub fn attribute_features(graph: &KnowledgeGraph, vocab: &ColumnVocabulary) -> Matrix {
    let column_of: Vec<Option<usize>> = graph
        .attr_keys()
        .labels()
        .iter()
        .map(|l| vocab.position(l))
        .collect();
    let mut x = Matrix::zeros(graph.entity_count(), vocab.len());
    for t in graph.attribute_triples() {
        if let Some(p) = column_of[t.key.index()] {
            x[(t.entity.index(), p)] += 1.0;
        }
    }
    normalize_rows(&mut x);
    x
}

/// One standard normal draw (Box–Muller).
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        if u1 > 0.0 {
            let r = libm::sqrt(-2.0 * libm::log(u1));
            return r * libm::cos(core::f64::consts::TAU * u2);
        }
    }
}

/// Normal with mean 0 and standard deviation `std`, resampled until it lies
/// within `±2·std`.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    loop {
        let z = standard_normal(rng);
        if libm::fabs(z) <= 2.0 {
            return z * std;
        }
    }
}

/// `rows × cols` matrix of truncated-normal draws with standard deviation `std`.
pub fn truncated_normal_matrix<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    std: f64,
    rng: &mut R,
) -> Matrix {
    let data = (0..rows * cols).map(|_| truncated_normal(rng, std)).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Initial topology features `n × d`: truncated normal, std `1/sqrt(d)`.
pub fn init_features(n: usize, d: usize, rng_seed: u64) -> Matrix {
    assert!(d >= 1, "feature width must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    truncated_normal_matrix(n, d, 1.0 / libm::sqrt(d as f64), &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;
    use crate::linalg::l2_norm;

    #[test]
    fn head_counts_for_single_relation() {
        let mut b = GraphBuilder::new();
        b.add_relation("x", "likes", "y");
        b.add_relation("x", "likes", "z");
        b.add_entity("lonely");
        let (g, _) = b.finish().unwrap();
        let vocab = ColumnVocabulary::relations(&[&g], DEFAULT_RELATION_COLUMNS);
        let x = relation_features(&g, &vocab);
        assert_eq!(x.shape(), (4, 2));
        assert_eq!(x.row(0), &[1.0, 0.0]);
        assert_eq!(x.row(1), &[0.0, 1.0]);
        assert_eq!(x.row(3), &[0.0, 0.0]);
    }

    #[test]
    fn attribute_presence_is_normalized() {
        let mut b = GraphBuilder::new();
        b.add_relation("p", "cites", "q");
        b.add_attribute("p", "name", "Widget");
        b.add_attribute("p", "year", "2020");
        let (g, _) = b.finish().unwrap();
        let vocab = ColumnVocabulary::attributes(&[&g], 10);
        let x = attribute_features(&g, &vocab);
        let s = 1.0 / libm::sqrt(2.0);
        assert!((x[(0, 0)] - s).abs() < 1e-15 && (x[(0, 1)] - s).abs() < 1e-15);
        assert_eq!(x.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn joint_vocabulary_aligns_columns_across_graphs() {
        let mut b1 = GraphBuilder::new();
        b1.add_relation("a", "r", "b");
        b1.add_attribute("a", "color", "red");
        b1.add_attribute("b", "size", "xl");
        let (g1, _) = b1.finish().unwrap();
        let mut b2 = GraphBuilder::new();
        b2.add_relation("c", "r", "d");
        b2.add_attribute("c", "size", "s");
        b2.add_attribute("d", "size", "m");
        let (g2, _) = b2.finish().unwrap();

        let vocab = ColumnVocabulary::attributes(&[&g1, &g2], 10);
        assert_eq!(vocab.names(), &["size", "color"]);
        let x1 = attribute_features(&g1, &vocab);
        let x2 = attribute_features(&g2, &vocab);
        let size = vocab.position("size").unwrap();
        assert_eq!(x1[(1, size)], 1.0);
        assert_eq!(x2[(0, size)], 1.0);
        assert_eq!(x2[(1, size)], 1.0);
    }

    #[test]
    fn cap_keeps_most_frequent_with_first_seen_ties() {
        let mut b = GraphBuilder::new();
        // Frequencies: r0:1, r1:3, r2:1, r3:3, r4:2
        let rows = [
            ("a", "r0", "b"),
            ("a", "r1", "b"),
            ("b", "r1", "c"),
            ("c", "r1", "a"),
            ("a", "r2", "c"),
            ("a", "r3", "b"),
            ("b", "r3", "c"),
            ("c", "r3", "a"),
            ("a", "r4", "b"),
            ("b", "r4", "a"),
        ];
        for (h, r, t) in rows {
            b.add_relation(h, r, t);
        }
        let (g, _) = b.finish().unwrap();
        let full = ColumnVocabulary::relations(&[&g], 100);
        assert_eq!(full.names(), &["r1", "r3", "r4", "r0", "r2"]);
        for k in 1..=5 {
            let capped = ColumnVocabulary::relations(&[&g], 2 * k);
            assert_eq!(capped.names(), &full.names()[..k]);
            // Features restricted to the cap equal the uncapped features'
            // leading columns, renormalized.
            let xc = relation_features(&g, &capped);
            let mut raw = Matrix::zeros(3, 2 * k);
            for t in g.relation_triples() {
                if let Some(p) = capped.position(g.relations().label(t.rel.0)) {
                    raw[(t.head.index(), 2 * p)] += 1.0;
                    raw[(t.tail.index(), 2 * p + 1)] += 1.0;
                }
            }
            normalize_rows(&mut raw);
            assert_eq!(xc, raw);
        }
    }

    #[test]
    fn feature_rows_are_zero_or_unit() {
        let mut b = GraphBuilder::new();
        for i in 0..20u32 {
            let h = alloc::format!("e{i}");
            let t = alloc::format!("e{}", (i * 7 + 3) % 23);
            let r = alloc::format!("r{}", i % 4);
            b.add_relation(&h, &r, &t);
            if i % 3 == 0 {
                b.add_attribute(&h, &alloc::format!("k{}", i % 5), "v");
            }
        }
        let (g, _) = b.finish().unwrap();
        let xr = relation_features(&g, &ColumnVocabulary::relations(&[&g], 1000));
        let xa = attribute_features(&g, &ColumnVocabulary::attributes(&[&g], 1000));
        for x in [&xr, &xa] {
            for r in 0..x.rows() {
                let norm = l2_norm(x.row(r));
                assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-6);
                assert!(x.row(r).iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn init_is_bounded_deterministic_and_centred() {
        let d = 16;
        let h = init_features(625, d, 3);
        let bound = 2.0 / libm::sqrt(d as f64);
        assert!(h.as_slice().iter().all(|&x| x.abs() <= bound));
        assert_eq!(h, init_features(625, d, 3));
        assert_ne!(h, init_features(625, d, 4));

        // 10^4 draws: the sample mean must lie within 3 standard errors of 0.
        let n = h.as_slice().len() as f64;
        let mean = h.as_slice().iter().sum::<f64>() / n;
        let var = h.as_slice().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        let se = libm::sqrt(var / n);
        assert!(mean.abs() < 3.0 * se, "mean {mean} vs se {se}");
    }
}
