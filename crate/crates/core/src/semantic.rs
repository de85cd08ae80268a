//! Semantic head: a two-layer MLP over fixed text embeddings trained with a
//! cosine triplet margin loss.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adam::{Adam, AdamConfig, ParamSet};
use crate::error::{Error, Result, Side};
use crate::features::truncated_normal_matrix;
use crate::graph::{EntityId, KnowledgeGraph, SeedPair};
use crate::linalg::{dot, normalize_rows, normalize_rows_backward, relu, Matrix};
use crate::train::{central_difference_check, epoch_rng, GradCheckReport, GRAD_CHECK_STEP};

/// Where a text-embedding table came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Provenance {
    RealEncoder,
    HashFixture,
    #[default]
    Unspecified,
}

impl Provenance {
    pub fn tag(self) -> &'static str {
        match self {
            Provenance::RealEncoder => "real-encoder",
            Provenance::HashFixture => "hash-fixture",
            Provenance::Unspecified => "unspecified",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        [Self::RealEncoder, Self::HashFixture, Self::Unspecified]
            .into_iter()
            .find(|p| p.tag() == tag)
    }
}

/// One fixed-width vector per entity, row `i` belonging to entity id `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddingTable {
    pub vectors: Matrix,
    pub provenance: Provenance,
}

impl TextEmbeddingTable {
    /// Aligns labelled vectors to the entity ids of `graph`. Labels the graph
    /// does not know are ignored; every graph entity needs a row.
    pub fn from_labelled<'a>(
        graph: &KnowledgeGraph,
        side: Side,
        width: usize,
        entries: impl IntoIterator<Item = (&'a str, &'a [f64])>,
        provenance: Provenance,
    ) -> Result<Self> {
        let n = graph.entity_count();
        let mut vectors = Matrix::zeros(n, width);
        let mut present = alloc::vec![false; n];
        for (label, v) in entries {
            if v.len() != width {
                return Err(Error::Width(format!(
                    "embedding for `{label}` has {} values, expected {width}",
                    v.len()
                )));
            }
            if let Some(id) = graph.entity(label) {
                vectors.row_mut(id.index()).copy_from_slice(v);
                present[id.index()] = true;
            }
        }
        let missing: Vec<usize> = (0..n).filter(|&i| !present[i]).collect();
        if !missing.is_empty() {
            return Err(Error::MissingEmbeddings {
                side,
                count: missing.len(),
                labels: missing
                    .iter()
                    .take(20)
                    .map(|&i| graph.entity_label(EntityId(i as u32)).to_string())
                    .collect(),
            });
        }
        if !vectors.is_finite() {
            return Err(Error::Width("text embeddings contain non-finite values".into()));
        }
        Ok(Self {
            vectors,
            provenance,
        })
    }

    pub fn width(&self) -> usize {
        self.vectors.cols()
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }
}

/// `d_text → hidden` (ReLU) `→ d_sem` (linear).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

pub const MLP_TENSOR_NAMES: [&str; 4] = ["mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2"];

impl MlpParams {
    pub fn init(d_text: usize, hidden: usize, d_sem: usize, rng_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        Self {
            w1: truncated_normal_matrix(d_text, hidden, 1.0 / libm::sqrt(d_text as f64), &mut rng),
            b1: Matrix::zeros(1, hidden),
            w2: truncated_normal_matrix(hidden, d_sem, 1.0 / libm::sqrt(hidden as f64), &mut rng),
            b2: Matrix::zeros(1, d_sem),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
            b1: Matrix::zeros(1, self.b1.cols()),
            w2: Matrix::zeros(self.w2.rows(), self.w2.cols()),
            b2: Matrix::zeros(1, self.b2.cols()),
        }
    }

    pub fn input_width(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_width(&self) -> usize {
        self.w1.cols()
    }

    pub fn output_width(&self) -> usize {
        self.w2.cols()
    }

    /// Rebuilds from `[w1, b1, w2, b2]`, checking shapes.
    pub fn from_tensors(tensors: Vec<Matrix>) -> Option<Self> {
        let [w1, b1, w2, b2]: [Matrix; 4] = tensors.try_into().ok()?;
        let ok = b1.shape() == (1, w1.cols())
            && w2.rows() == w1.cols()
            && b2.shape() == (1, w2.cols());
        ok.then_some(Self { w1, b1, w2, b2 })
    }
}

impl ParamSet for MlpParams {
    fn tensor_count(&self) -> usize {
        4
    }

    fn tensor(&self, slot: usize) -> (&'static str, &Matrix) {
        let m = match slot {
            0 => &self.w1,
            1 => &self.b1,
            2 => &self.w2,
            3 => &self.b2,
            _ => panic!("tensor slot out of range"),
        };
        (MLP_TENSOR_NAMES[slot], m)
    }

    fn tensor_mut(&mut self, slot: usize) -> &mut Matrix {
        match slot {
            0 => &mut self.w1,
            1 => &mut self.b1,
            2 => &mut self.w2,
            3 => &mut self.b2,
            _ => panic!("tensor slot out of range"),
        }
    }
}

struct MlpTrace {
    pre: Matrix,
    hidden: Matrix,
    norms: Vec<f64>,
    output: Matrix,
}

fn mlp_forward(input: &Matrix, params: &MlpParams) -> MlpTrace {
    assert_eq!(
        input.cols(),
        params.input_width(),
        "mlp shape mismatch: input width {} vs {}",
        input.cols(),
        params.input_width()
    );
    let mut pre = input.matmul(&params.w1);
    pre.add_row_broadcast(&params.b1);
    let hidden = pre.map(relu);
    let mut output = hidden.matmul(&params.w2);
    output.add_row_broadcast(&params.b2);
    let norms = normalize_rows(&mut output);
    MlpTrace {
        pre,
        hidden,
        norms,
        output,
    }
}

fn mlp_backward(
    input: &Matrix,
    params: &MlpParams,
    trace: &MlpTrace,
    grad_output: &Matrix,
    grads: &mut MlpParams,
) {
    let grad_raw = normalize_rows_backward(&trace.output, &trace.norms, grad_output);
    grads.w2.add_assign(&trace.hidden.tr_matmul(&grad_raw));
    grads.b2.add_assign(&grad_raw.column_sums());
    let grad_hidden = grad_raw.matmul_tr(&params.w2);
    let grad_pre = grad_hidden.zip_with(&trace.pre, |g, z| if z > 0.0 { g } else { 0.0 });
    grads.w1.add_assign(&input.tr_matmul(&grad_pre));
    grads.b1.add_assign(&grad_pre.column_sums());
}

/// Projects every row and L2-normalizes the result; all-zero outputs stay zero.
pub fn mlp_project(table: &Matrix, params: &MlpParams) -> Matrix {
    mlp_forward(table, params).output
}

/// `(query in g1, gold target in g2, sampled negative in g2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub query: EntityId,
    pub positive: EntityId,
    pub negative: EntityId,
}

/// `per_positive` negatives per seed, uniform over g2 minus the gold target.
pub fn sample_triplets(
    seeds: &[SeedPair],
    target_count: usize,
    per_positive: usize,
    rng_seed: u64,
    epoch: u64,
) -> Result<Vec<Triplet>> {
    if target_count < 2 {
        return Err(Error::Config(
            "triplet sampling needs at least 2 target entities".into(),
        ));
    }
    let mut rng = epoch_rng(rng_seed, epoch);
    let mut out = Vec::with_capacity(seeds.len() * per_positive);
    for s in seeds {
        for _ in 0..per_positive {
            // Uniform over the other target_count - 1 entities.
            let mut e = rng.random_range(0..target_count as u32 - 1);
            if e >= s.right.0 {
                e += 1;
            }
            out.push(Triplet {
                query: s.left,
                positive: s.right,
                negative: EntityId(e),
            });
        }
    }
    Ok(out)
}

/// `g(a, b)`: cosine similarity of two projected rows, 0 if either is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = crate::linalg::l2_norm(a);
    let nb = crate::linalg::l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletLoss {
    pub value: f64,
    /// Gradients with respect to the projected g1 and g2 tables.
    pub grad: [Matrix; 2],
    pub active: usize,
}

/// `Σ max(0, g(e, e⁻) − g(e, e⁺) + margin)` over unit-row projections.
pub fn triplet_loss(projected: [&Matrix; 2], triplets: &[Triplet], margin: f64) -> Result<TripletLoss> {
    if triplets.is_empty() {
        return Err(Error::Config("triplet loss needs at least one triplet".into()));
    }
    let [p1, p2] = projected;
    let mut grad = [
        Matrix::zeros(p1.rows(), p1.cols()),
        Matrix::zeros(p2.rows(), p2.cols()),
    ];
    let mut value = 0.0;
    let mut active = 0;
    for t in triplets {
        let q = p1.row(t.query.index());
        let pos = p2.row(t.positive.index());
        let neg = p2.row(t.negative.index());
        let term = dot(q, neg) - dot(q, pos) + margin;
        if term > 0.0 {
            value += term;
            active += 1;
            let [g1, g2] = &mut grad;
            for (i, g) in g1.row_mut(t.query.index()).iter_mut().enumerate() {
                *g += neg[i] - pos[i];
            }
            for (g, &x) in g2.row_mut(t.negative.index()).iter_mut().zip(q) {
                *g += x;
            }
            for (g, &x) in g2.row_mut(t.positive.index()).iter_mut().zip(q) {
                *g -= x;
            }
        }
    }
    Ok(TripletLoss {
        value,
        grad,
        active,
    })
}

/// Fixed data of a semantic training step.
#[derive(Debug, Clone, Copy)]
pub struct SemanticProblem<'a> {
    pub tables: [&'a Matrix; 2],
    pub triplets: &'a [Triplet],
    pub margin: f64,
}

impl SemanticProblem<'_> {
    pub fn loss(&self, params: &MlpParams) -> Result<f64> {
        let p1 = mlp_project(self.tables[0], params);
        let p2 = mlp_project(self.tables[1], params);
        Ok(triplet_loss([&p1, &p2], self.triplets, self.margin)?.value)
    }

    /// Loss and gradients; the text tables are constants.
    pub fn evaluate(&self, params: &MlpParams) -> Result<(f64, MlpParams)> {
        let traces = [
            mlp_forward(self.tables[0], params),
            mlp_forward(self.tables[1], params),
        ];
        let loss = triplet_loss(
            [&traces[0].output, &traces[1].output],
            self.triplets,
            self.margin,
        )?;
        let mut grads = params.zeros_like();
        for i in 0..2 {
            mlp_backward(self.tables[i], params, &traces[i], &loss.grad[i], &mut grads);
        }
        Ok((loss.value, grads))
    }
}

pub fn grad_check_semantic(
    problem: &SemanticProblem<'_>,
    params: &MlpParams,
    rng_seed: u64,
) -> Result<GradCheckReport> {
    let (_, analytic) = problem.evaluate(params)?;
    central_difference_check(params, &analytic, |p| problem.loss(p), 16, GRAD_CHECK_STEP, rng_seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticConfig {
    pub hidden: usize,
    pub d_sem: usize,
    pub margin: f64,
    pub epochs: usize,
    pub lr: f64,
    pub negatives_per_positive: usize,
    pub rng_seed: u64,
}

impl Default for SemanticConfig {
    fn default() -> Self {
        Self {
            hidden: 300,
            d_sem: 600,
            margin: 0.5,
            epochs: 100,
            lr: 0.005,
            negatives_per_positive: 1,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedMlp {
    pub params: MlpParams,
    pub losses: Vec<f64>,
}

impl TrainedMlp {
    /// Projected tables for both graphs.
    pub fn project(&self, tables: [&Matrix; 2]) -> [Matrix; 2] {
        tables.map(|t| mlp_project(t, &self.params))
    }
}

pub fn train_semantic(
    tables: [&TextEmbeddingTable; 2],
    seeds: &[SeedPair],
    config: &SemanticConfig,
) -> Result<TrainedMlp> {
    if tables[0].width() != tables[1].width() {
        return Err(Error::Width(format!(
            "text embedding widths differ: {} vs {}",
            tables[0].width(),
            tables[1].width()
        )));
    }
    if seeds.is_empty() {
        return Err(Error::Config("no training seeds".into()));
    }
    let mut params = MlpParams::init(tables[0].width(), config.hidden, config.d_sem, config.rng_seed);
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), params.tensor_sizes());
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let triplets = sample_triplets(
            seeds,
            tables[1].len(),
            config.negatives_per_positive,
            config.rng_seed,
            epoch as u64,
        )?;
        let problem = SemanticProblem {
            tables: [&tables[0].vectors, &tables[1].vectors],
            triplets: &triplets,
            margin: config.margin,
        };
        let (loss, grads) = problem.evaluate(&params)?;
        if !loss.is_finite() {
            let tensor = (0..params.tensor_count())
                .map(|i| params.tensor(i))
                .find(|(_, m)| !m.is_finite())
                .map_or_else(|| String::from("semantic loss"), |(n, _)| String::from(n));
            return Err(Error::NonFinite { tensor, epoch });
        }
        losses.push(loss);
        adam.step(&mut params, &grads, |_| false);
    }
    Ok(TrainedMlp { params, losses })
}
