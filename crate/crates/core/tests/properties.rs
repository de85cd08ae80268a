//! Property tests against independent oracles.

use kgalign_core::align::{
    candidate_pool, fuse, hits_at_k, rank_candidates, Candidate, FusionMode, RankedList,
};
use kgalign_core::encoder::{encode, Ablation, EncoderDims, EncoderParams, GraphInputs};
use kgalign_core::graph::{EntityId, SeedPair};
use kgalign_core::linalg::{normalize_rows, Matrix};
use kgalign_core::sparse::NormalizedAdjacency;
use kgalign_core::train::{
    sample_negatives, structural_loss, Metric, NegativeBatch, NegativePair,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `D^-1/2 (A + I) D^-1/2` by dense matrix products.
fn dense_normalized(n: usize, edges: &[(u32, u32)]) -> Matrix {
    let mut a = Matrix::identity(n);
    for &(x, y) in edges {
        a[(x as usize, y as usize)] = 1.0;
        a[(y as usize, x as usize)] = 1.0;
    }
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        let degree: f64 = a.row(i).iter().sum();
        d[(i, i)] = 1.0 / degree.sqrt();
    }
    d.matmul(&a).matmul(&d)
}

fn edge_lists() -> impl Strategy<Value = (usize, Vec<(u32, u32)>)> {
    (1usize..=50).prop_flat_map(|n| {
        let e = (0..n as u32, 0..n as u32);
        (Just(n), proptest::collection::vec(e, 0..=3 * n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn adjacency_matches_dense_oracle((n, edges) in edge_lists()) {
        let adj = NormalizedAdjacency::from_edges(n, edges.iter().copied());
        let sparse = adj.to_dense();
        let oracle = dense_normalized(n, &edges);
        prop_assert!(sparse.max_abs_diff(&oracle) <= 1e-12);
        for (i, j, v) in adj.coo() {
            prop_assert_eq!(v, adj.get(j, i));
        }
        for i in 0..n {
            prop_assert!(adj.get(i, i) > 0.0);
        }
    }
}

fn random_profile(rng: &mut ChaCha8Rng, n: usize, cols: usize) -> Matrix {
    let mut m = Matrix::from_vec(
        n,
        cols,
        (0..n * cols)
            .map(|_| if rng.random_bool(0.4) { rng.random_range(0.0..3.0) } else { 0.0 })
            .collect(),
    );
    normalize_rows(&mut m);
    m
}

fn permute_rows(m: &Matrix, perm: &[usize]) -> Matrix {
    // Row i of the input becomes row perm[i].
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for (i, &p) in perm.iter().enumerate() {
        out.row_mut(p).copy_from_slice(m.row(i));
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn encoder_is_permutation_equivariant(n in 4usize..=30, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edges: Vec<(u32, u32)> = (0..2 * n)
            .map(|_| (rng.random_range(0..n as u32), rng.random_range(0..n as u32)))
            .collect();
        let rel = random_profile(&mut rng, n, 6);
        let attr = random_profile(&mut rng, n, 5);
        let dims = EncoderDims { entities: [n, n], d: 8, h: 8, k_rel: 6, k_attr: 5 };
        let mut params = EncoderParams::init(dims, seed);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);

        let p_edges: Vec<(u32, u32)> = edges
            .iter()
            .map(|&(a, b)| (perm[a as usize] as u32, perm[b as usize] as u32))
            .collect();
        // g2 is the relabeled copy of g1.
        params.h0[1] = permute_rows(&params.h0[0], &perm);
        let adj = [
            NormalizedAdjacency::from_edges(n, edges),
            NormalizedAdjacency::from_edges(n, p_edges),
        ];
        let rels = [rel.clone(), permute_rows(&rel, &perm)];
        let attrs = [attr.clone(), permute_rows(&attr, &perm)];
        let inputs: [GraphInputs<'_>; 2] = std::array::from_fn(|i| GraphInputs {
            adjacency: &adj[i],
            relation: &rels[i],
            attribute: &attrs[i],
        });
        for ablation in Ablation::ALL {
            let [o1, o2] = encode(&params, inputs, ablation);
            let expected = permute_rows(&o1.hybrid, &perm);
            prop_assert!(o2.hybrid.max_abs_diff(&expected) <= 1e-10);
        }
    }
}

/// Small-integer coordinates: every cosine is computed from exact dot
/// products, and equal scores are common.
fn integer_table(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-2i32..=2) as f64).collect(),
    )
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

/// Every target scored and fully sorted: descending score, ascending id.
fn brute_ranking(query: &[f64], targets: &Matrix, subset: Option<&[EntityId]>) -> Vec<(u32, f64)> {
    let ids: Vec<u32> = match subset {
        Some(s) => s.iter().map(|e| e.0).collect(),
        None => (0..targets.rows() as u32).collect(),
    };
    let mut all: Vec<(u32, f64)> = ids
        .into_iter()
        .map(|t| (t, brute_cosine(query, targets.row(t as usize))))
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all
}

fn pairs(c: &[Candidate]) -> Vec<(u32, f64)> {
    c.iter().map(|c| (c.target.0, c.score)).collect()
}

#[test]
fn pools_and_rankings_match_full_sort_on_200_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let ns = rng.random_range(1..15);
        let nt = rng.random_range(1..25);
        let dim = rng.random_range(1..6);
        let structural = [integer_table(&mut rng, ns, dim), integer_table(&mut rng, nt, dim)];
        let fused = [integer_table(&mut rng, ns, dim), integer_table(&mut rng, nt, dim)];
        let q = rng.random_range(1..nt + 4);
        let sources: Vec<EntityId> = (0..ns as u32).map(EntityId).collect();

        let pools = candidate_pool([&structural[0], &structural[1]], &sources, q).unwrap();
        let lists = rank_candidates([&fused[0], &fused[1]], &sources, &pools);
        for (s, (pool, list)) in sources.iter().zip(pools.iter().zip(&lists)) {
            let full = brute_ranking(structural[0].row(s.index()), &structural[1], None);
            let expected_pool: Vec<u32> = full.iter().take(q).map(|p| p.0).collect();
            assert_eq!(pool.iter().map(|e| e.0).collect::<Vec<_>>(), expected_pool);

            let reranked = brute_ranking(fused[0].row(s.index()), &fused[1], Some(pool));
            assert_eq!(list.source, *s);
            assert_eq!(pairs(&list.candidates), reranked);
        }
    }
}

#[test]
fn gold_within_q_of_the_full_ranking_is_always_pooled() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let (ns, nt, q) = (8, 20, rng.random_range(1..10));
        let s = integer_table(&mut rng, ns, 4);
        let t = integer_table(&mut rng, nt, 4);
        let sources: Vec<EntityId> = (0..ns as u32).map(EntityId).collect();
        let pools = candidate_pool([&s, &t], &sources, q).unwrap();
        for (i, pool) in pools.iter().enumerate() {
            let full = brute_ranking(s.row(i), &t, None);
            for (rank, (target, _)) in full.iter().enumerate() {
                let pooled = pool.contains(&EntityId(*target));
                assert_eq!(pooled, rank < q);
            }
        }
    }
}

fn unit_table(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    );
    normalize_rows(&mut m);
    m
}

fn order(list: &RankedList) -> Vec<u32> {
    list.candidates.iter().map(|c| c.target.0).collect()
}

#[test]
fn fusion_extremes_reproduce_each_side_ordering() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for mode in [FusionMode::Sum, FusionMode::Concat] {
        for _ in 0..20 {
            let (ns, nt, w) = (30, 40, 12);
            let g = [unit_table(&mut rng, ns, w), unit_table(&mut rng, nt, w)];
            let b = [unit_table(&mut rng, ns, w), unit_table(&mut rng, nt, w)];
            let sources: Vec<EntityId> = (0..ns as u32).map(EntityId).collect();
            let pools = candidate_pool([&g[0], &g[1]], &sources, nt).unwrap();
            let by_g = rank_candidates([&g[0], &g[1]], &sources, &pools);
            let by_b = rank_candidates([&b[0], &b[1]], &sources, &pools);
            for (tau, reference) in [(1.0, &by_g), (0.0, &by_b)] {
                let f: Vec<Matrix> = (0..2).map(|i| fuse(&g[i], &b[i], tau, mode).unwrap()).collect();
                let fused = rank_candidates([&f[0], &f[1]], &sources, &pools);
                for (x, y) in fused.iter().zip(reference.iter()) {
                    assert_eq!(order(x), order(y), "mode {mode:?} tau {tau}");
                }
            }
        }
    }
}

#[test]
fn hits_is_monotone_in_k_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let (ns, nt) = (rng.random_range(1..20), rng.random_range(2..30));
        let s = unit_table(&mut rng, ns, 6);
        let t = unit_table(&mut rng, nt, 6);
        let sources: Vec<EntityId> = (0..ns as u32).map(EntityId).collect();
        let pools = candidate_pool([&s, &t], &sources, rng.random_range(1..nt + 1)).unwrap();
        let lists = rank_candidates([&s, &t], &sources, &pools);
        let gold: Vec<SeedPair> = (0..ns as u32)
            .map(|i| SeedPair::new(i, rng.random_range(0..nt as u32)))
            .collect();
        let ks: Vec<usize> = (1..=nt + 2).collect();
        let hits = hits_at_k(&lists, &gold, &ks).unwrap();
        for w in hits.windows(2) {
            assert!(w[0].value <= w[1].value);
        }
        for h in &hits {
            assert!((0.0..=1.0).contains(&h.value));
            // Count directly.
            let direct = gold
                .iter()
                .filter(|g| {
                    lists[g.left.index()]
                        .candidates
                        .iter()
                        .take(h.k)
                        .any(|c| c.target == g.right)
                })
                .count() as f64
                / ns as f64;
            assert_eq!(h.value, direct);
        }
    }
}

fn brute_distance(metric: Metric, a: &[f64], b: &[f64]) -> f64 {
    match metric {
        Metric::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        Metric::L2 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        Metric::Cosine => 1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>(),
    }
}

#[test]
fn structural_loss_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for metric in [Metric::L1, Metric::L2, Metric::Cosine] {
        for _ in 0..30 {
            let e1 = unit_table(&mut rng, 12, 5);
            let e2 = unit_table(&mut rng, 14, 5);
            let seeds: Vec<SeedPair> = (0..4).map(|i| SeedPair::new(i, 13 - i)).collect();
            let negatives = sample_negatives(&seeds, [12, 14], 3, rng.random(), 0).unwrap();
            let margin = rng.random_range(0.0..2.0);
            let loss = structural_loss([&e1, &e2], &seeds, &negatives, margin, metric).unwrap();

            // Sum over I × I′(e1, e2), then divide by the number of terms.
            let mut total = 0.0;
            let mut terms = 0;
            for (i, s) in seeds.iter().enumerate() {
                let pos = brute_distance(metric, e1.row(s.left.index()), e2.row(s.right.index()));
                for n in negatives.pairs.iter().filter(|n| n.seed == i) {
                    let neg = brute_distance(metric, e1.row(n.left.index()), e2.row(n.right.index()));
                    total += (pos + margin - neg).max(0.0);
                    terms += 1;
                }
            }
            assert_eq!(terms, 24);
            assert!((loss.value - total / terms as f64).abs() < 1e-12);
            assert!(loss.value >= 0.0);
        }
    }
}

#[test]
fn satisfied_margins_give_zero_loss() {
    let e1 = Matrix::from_rows(&[&[0.0], &[10.0]]);
    let e2 = Matrix::from_rows(&[&[0.0], &[20.0]]);
    let seeds = [SeedPair::new(0, 0)];
    let negatives = NegativeBatch {
        pairs: vec![
            NegativePair { seed: 0, left: EntityId(1), right: EntityId(0) },
            NegativePair { seed: 0, left: EntityId(0), right: EntityId(1) },
        ],
    };
    let loss = structural_loss([&e1, &e2], &seeds, &negatives, 3.0, Metric::L1).unwrap();
    assert_eq!((loss.value, loss.active), (0.0, 0));
}
