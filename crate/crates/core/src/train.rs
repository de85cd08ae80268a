//! Structural training: hinge margin loss over seed pairs and corrupted
//! pairs, negative sampling, the Adam training loop and a finite-difference
//! gradient check.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adam::{Adam, AdamConfig, ParamSet};
use crate::encoder::{
    backward_graph, encode_graph_traced, Ablation, EncoderDims, EncoderParams, GraphInputs,
};
use crate::error::{Error, Result, Side};
use crate::graph::{EntityId, SeedPair};
use crate::linalg::{dot, Matrix};
use crate::sparse::NormalizedAdjacency;

/// Distance `ρ` between two embedding rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Metric {
    #[default]
    L1,
    L2,
    /// `1 − a·b`; equals cosine distance on unit rows.
    Cosine,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::L1, Metric::L2, Metric::Cosine];

    pub fn tag(self) -> &'static str {
        match self {
            Metric::L1 => "l1",
            Metric::L2 => "l2",
            Metric::Cosine => "cos",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.tag() == tag)
    }

    pub fn code(self) -> u8 {
        match self {
            Metric::L1 => 0,
            Metric::L2 => 1,
            Metric::Cosine => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.code() == code)
    }

    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::L1 => a.iter().zip(b).map(|(x, y)| libm::fabs(x - y)).sum(),
            Metric::L2 => libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()),
            Metric::Cosine => 1.0 - dot(a, b),
        }
    }

    /// Adds `scale · ∂ρ/∂a` to `grad_a` and `scale · ∂ρ/∂b` to `grad_b`.
    /// Non-differentiable points take the zero subgradient.
    fn accumulate_grad(self, a: &[f64], b: &[f64], scale: f64, grad_a: &mut [f64], grad_b: &mut [f64]) {
        match self {
            Metric::L1 => {
                for i in 0..a.len() {
                    let diff = a[i] - b[i];
                    let s = if diff > 0.0 {
                        scale
                    } else if diff < 0.0 {
                        -scale
                    } else {
                        0.0
                    };
                    grad_a[i] += s;
                    grad_b[i] -= s;
                }
            }
            Metric::L2 => {
                let dist = self.distance(a, b);
                if dist == 0.0 {
                    return;
                }
                for i in 0..a.len() {
                    let g = scale * (a[i] - b[i]) / dist;
                    grad_a[i] += g;
                    grad_b[i] -= g;
                }
            }
            Metric::Cosine => {
                for i in 0..a.len() {
                    grad_a[i] -= scale * b[i];
                    grad_b[i] -= scale * a[i];
                }
            }
        }
    }
}

/// One corrupted pair, tied to the seed it was derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NegativePair {
    /// Index into the training seed list.
    pub seed: usize,
    pub left: EntityId,
    pub right: EntityId,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NegativeBatch {
    pub pairs: Vec<NegativePair>,
}

impl NegativeBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// RNG for `(rng_seed, epoch)`: the epoch selects the ChaCha stream.
pub fn epoch_rng(rng_seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rng.set_stream(epoch);
    rng
}

/// For every seed, `k_neg` corruptions of the left entity followed by
/// `k_neg` corruptions of the right entity, drawn uniformly from the same
/// graph. Draws that reproduce a seed pair are rejected and redrawn.
pub fn sample_negatives(
    seeds: &[SeedPair],
    entity_counts: [usize; 2],
    k_neg: usize,
    rng_seed: u64,
    epoch: u64,
) -> Result<NegativeBatch> {
    if entity_counts.iter().any(|&n| n <= k_neg) {
        return Err(Error::Config(format!(
            "negative sampling needs more than {k_neg} entities per graph, got {entity_counts:?}"
        )));
    }
    let seed_set: BTreeSet<SeedPair> = seeds.iter().copied().collect();
    let mut rng = epoch_rng(rng_seed, epoch);
    let mut pairs = Vec::with_capacity(seeds.len() * 2 * k_neg);
    for (i, s) in seeds.iter().enumerate() {
        for side in [Side::Left, Side::Right] {
            for _ in 0..k_neg {
                let pair = loop {
                    let e = EntityId(rng.random_range(0..entity_counts[side.index()] as u32));
                    let candidate = match side {
                        Side::Left => SeedPair { left: e, right: s.right },
                        Side::Right => SeedPair { left: s.left, right: e },
                    };
                    if !seed_set.contains(&candidate) {
                        break candidate;
                    }
                };
                pairs.push(NegativePair {
                    seed: i,
                    left: pair.left,
                    right: pair.right,
                });
            }
        }
    }
    Ok(NegativeBatch { pairs })
}

/// Loss value and its gradient with respect to both embedding tables.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginLoss {
    pub value: f64,
    pub grad: [Matrix; 2],
    pub terms: usize,
    pub active: usize,
}

/// Mean over negatives of `max(0, ρ(pos) + margin − ρ(neg))`, where each
/// negative is compared against the seed it corrupts.
pub fn structural_loss(
    embeddings: [&Matrix; 2],
    seeds: &[SeedPair],
    negatives: &NegativeBatch,
    margin: f64,
    metric: Metric,
) -> Result<MarginLoss> {
    if seeds.is_empty() {
        return Err(Error::Config("structural loss needs at least one seed pair".into()));
    }
    let [e1, e2] = embeddings;
    let mut grad = [
        Matrix::zeros(e1.rows(), e1.cols()),
        Matrix::zeros(e2.rows(), e2.cols()),
    ];
    let terms = negatives.len();
    if terms == 0 {
        return Ok(MarginLoss {
            value: 0.0,
            grad,
            terms,
            active: 0,
        });
    }
    let scale = 1.0 / terms as f64;
    let pos_dist: Vec<f64> = seeds
        .iter()
        .map(|s| metric.distance(e1.row(s.left.index()), e2.row(s.right.index())))
        .collect();

    let mut total = 0.0;
    let mut active = 0;
    for neg in &negatives.pairs {
        let seed = seeds[neg.seed];
        let neg_dist = metric.distance(e1.row(neg.left.index()), e2.row(neg.right.index()));
        let term = pos_dist[neg.seed] + margin - neg_dist;
        if term > 0.0 {
            total += term;
            active += 1;
            let [g1, g2] = &mut grad;
            let (pl, pr) = (seed.left.index(), seed.right.index());
            let (nl, nr) = (neg.left.index(), neg.right.index());
            metric.accumulate_grad(e1.row(pl), e2.row(pr), scale, g1.row_mut(pl), g2.row_mut(pr));
            metric.accumulate_grad(e1.row(nl), e2.row(nr), -scale, g1.row_mut(nl), g2.row_mut(nr));
        }
    }
    Ok(MarginLoss {
        value: total * scale,
        grad,
        terms,
        active,
    })
}

/// Everything besides the parameters that the structural loss depends on.
#[derive(Debug, Clone, Copy)]
pub struct StructuralProblem<'a> {
    pub inputs: [GraphInputs<'a>; 2],
    pub seeds: &'a [SeedPair],
    pub negatives: &'a NegativeBatch,
    pub margin: f64,
    pub metric: Metric,
    pub ablation: Ablation,
}

/// A forward/backward evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub grads: EncoderParams,
    /// Name of the first non-finite forward tensor, if any.
    pub non_finite: Option<String>,
}

impl StructuralProblem<'_> {
    pub fn loss(&self, params: &EncoderParams) -> Result<f64> {
        let h1 = encode_graph_traced(params, Side::Left, self.inputs[0], self.ablation);
        let h2 = encode_graph_traced(params, Side::Right, self.inputs[1], self.ablation);
        Ok(structural_loss(
            [&h1.output.hybrid, &h2.output.hybrid],
            self.seeds,
            self.negatives,
            self.margin,
            self.metric,
        )?
        .value)
    }

    pub fn evaluate(&self, params: &EncoderParams) -> Result<Evaluation> {
        let caches = [
            encode_graph_traced(params, Side::Left, self.inputs[0], self.ablation),
            encode_graph_traced(params, Side::Right, self.inputs[1], self.ablation),
        ];
        let non_finite = caches.iter().zip(["g1", "g2"]).find_map(|(c, g)| {
            let o = &c.output;
            let named = [
                ("topology", Some(&o.topology)),
                ("relation", o.relation.as_ref()),
                ("attribute", o.attribute.as_ref()),
                ("hybrid", Some(&o.hybrid)),
            ];
            named
                .into_iter()
                .find(|(_, m)| m.is_some_and(|m| !m.is_finite()))
                .map(|(n, _)| format!("{g}.{n}"))
        });
        let loss = structural_loss(
            [&caches[0].output.hybrid, &caches[1].output.hybrid],
            self.seeds,
            self.negatives,
            self.margin,
            self.metric,
        )?;
        let mut grads = params.zeros_like();
        for (side, cache) in [Side::Left, Side::Right].into_iter().zip(&caches) {
            backward_graph(
                params,
                side,
                self.inputs[side.index()],
                self.ablation,
                cache,
                &loss.grad[side.index()],
                &mut grads,
            );
        }
        Ok(Evaluation {
            loss: loss.value,
            grads,
            non_finite,
        })
    }
}

/// Structural training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuralConfig {
    pub d: usize,
    pub h: usize,
    pub margin: f64,
    pub k_neg: usize,
    pub epochs: usize,
    pub lr: f64,
    pub rng_seed: u64,
    pub metric: Metric,
    pub ablation: Ablation,
    /// When false the initial features stay at their random initialization.
    pub train_initial_features: bool,
}

impl Default for StructuralConfig {
    fn default() -> Self {
        Self {
            d: 200,
            h: 200,
            margin: 3.0,
            k_neg: 5,
            epochs: 300,
            lr: 0.005,
            rng_seed: 0,
            metric: Metric::L1,
            ablation: Ablation::Full,
            train_initial_features: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedEncoder {
    pub params: EncoderParams,
    /// Loss at each epoch, evaluated before that epoch's update.
    pub losses: Vec<f64>,
}

/// Full-batch Adam on the structural loss with negatives resampled each epoch.
pub fn train_structural(
    inputs: [GraphInputs<'_>; 2],
    seeds: &[SeedPair],
    config: &StructuralConfig,
) -> Result<TrainedEncoder> {
    let dims = EncoderDims {
        entities: [inputs[0].adjacency.n(), inputs[1].adjacency.n()],
        d: config.d,
        h: config.h,
        k_rel: inputs[0].relation.cols(),
        k_attr: inputs[0].attribute.cols(),
    };
    if inputs[1].relation.cols() != dims.k_rel || inputs[1].attribute.cols() != dims.k_attr {
        return Err(Error::Width(
            "both graphs must use the same feature columns".into(),
        ));
    }
    let params = EncoderParams::init(dims, config.rng_seed);
    train_structural_from(params, inputs, seeds, config)
}

/// As [`train_structural`], starting from the given parameters.
pub fn train_structural_from(
    mut params: EncoderParams,
    inputs: [GraphInputs<'_>; 2],
    seeds: &[SeedPair],
    config: &StructuralConfig,
) -> Result<TrainedEncoder> {
    if seeds.is_empty() {
        return Err(Error::Config("no training seeds".into()));
    }
    if !(config.margin > 0.0) {
        return Err(Error::Config(format!("margin must be > 0, got {}", config.margin)));
    }
    let counts = [inputs[0].adjacency.n(), inputs[1].adjacency.n()];
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), params.tensor_sizes());
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let negatives = sample_negatives(seeds, counts, config.k_neg, config.rng_seed, epoch as u64)?;
        let problem = StructuralProblem {
            inputs,
            seeds,
            negatives: &negatives,
            margin: config.margin,
            metric: config.metric,
            ablation: config.ablation,
        };
        let eval = problem.evaluate(&params)?;
        if !eval.loss.is_finite() {
            let tensor = params
                .first_non_finite()
                .map(String::from)
                .or(eval.non_finite)
                .unwrap_or_else(|| "loss".into());
            return Err(Error::NonFinite { tensor, epoch });
        }
        losses.push(eval.loss);

        adam.step(&mut params, &eval.grads, |name| {
            !config.train_initial_features && name.starts_with("h0")
        });
    }
    Ok(TrainedEncoder { params, losses })
}

/// Result of comparing analytic gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst entry.
    pub worst: (&'static str, usize),
    pub checked: usize,
}

/// Denominator floor for the relative error, so that entries whose true
/// gradient is ~0 are judged on absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = libm::fmax(libm::fmax(libm::fabs(analytic), libm::fabs(numeric)), REL_ERROR_FLOOR);
    libm::fabs(analytic - numeric) / denom
}

/// Central-difference check of `analytic` against `loss` on `per_tensor`
/// random entries of every tensor (all entries if the tensor is smaller).
pub fn central_difference_check<P: ParamSet + Clone>(
    params: &P,
    analytic: &P,
    loss: impl Fn(&P) -> Result<f64>,
    per_tensor: usize,
    step: f64,
    rng_seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: ("", 0),
        checked: 0,
    };
    for slot in 0..analytic.tensor_count() {
        let (name, grad) = analytic.tensor(slot);
        let len = grad.as_slice().len();
        let picks: Vec<usize> = if len <= per_tensor {
            (0..len).collect()
        } else {
            rand::seq::index::sample(&mut rng, len, per_tensor).into_vec()
        };
        for idx in picks {
            let original = params.tensor(slot).1.as_slice()[idx];
            probe.tensor_mut(slot).as_mut_slice()[idx] = original + step;
            let plus = loss(&probe)?;
            probe.tensor_mut(slot).as_mut_slice()[idx] = original - step;
            let minus = loss(&probe)?;
            probe.tensor_mut(slot).as_mut_slice()[idx] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(grad.as_slice()[idx], numeric);
            report.checked += 1;
            if report.worst.0.is_empty() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (name, idx);
            }
        }
    }
    Ok(report)
}

/// [`central_difference_check`] on the structural loss.
pub fn finite_difference_check(
    problem: &StructuralProblem<'_>,
    params: &EncoderParams,
    analytic: &EncoderParams,
    per_tensor: usize,
    step: f64,
    rng_seed: u64,
) -> Result<GradCheckReport> {
    central_difference_check(params, analytic, |p| problem.loss(p), per_tensor, step, rng_seed)
}

/// Finite-difference step used by [`grad_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Checks the analytic gradient of `problem` at `params` against central
/// differences on at least four entries per tensor.
pub fn grad_check(
    problem: &StructuralProblem<'_>,
    params: &EncoderParams,
    rng_seed: u64,
) -> Result<GradCheckReport> {
    let analytic = problem.evaluate(params)?.grads;
    finite_difference_check(problem, params, &analytic, 4, GRAD_CHECK_STEP, rng_seed)
}

/// A small random two-graph instance for gradient checking.
#[derive(Debug, Clone)]
pub struct TinyInstance {
    pub adjacency: [NormalizedAdjacency; 2],
    pub relation: [Matrix; 2],
    pub attribute: [Matrix; 2],
    pub seeds: Vec<SeedPair>,
    pub negatives: NegativeBatch,
    pub params: EncoderParams,
    pub margin: f64,
}

impl TinyInstance {
    /// `n` nodes per graph, `d = h = 6`, three seeds, two negatives per side.
    /// Feature rows are nonnegative and unit-norm like real count profiles.
    pub fn random(n: usize, rng_seed: u64) -> Self {
        assert!(n >= 4, "tiny instance needs at least 4 nodes");
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let adjacency = |rng: &mut ChaCha8Rng| {
            let edges: Vec<(u32, u32)> = (0..n + n / 2)
                .map(|_| (rng.random_range(0..n as u32), rng.random_range(0..n as u32)))
                .collect();
            NormalizedAdjacency::from_edges(n, edges)
        };
        let adjacency = [adjacency(&mut rng), adjacency(&mut rng)];
        let profile = |cols: usize, rng: &mut ChaCha8Rng| {
            let mut m = Matrix::from_vec(
                n,
                cols,
                (0..n * cols).map(|_| rng.random_range(0.0..1.0)).collect(),
            );
            crate::linalg::normalize_rows(&mut m);
            m
        };
        let relation = [profile(4, &mut rng), profile(4, &mut rng)];
        let attribute = [profile(3, &mut rng), profile(3, &mut rng)];
        let seeds: Vec<SeedPair> = (0..3).map(|i| SeedPair::new(i, (i + 2) % n as u32)).collect();
        let negatives = sample_negatives(&seeds, [n, n], 2, rng_seed, 0).expect("n > k_neg");
        let dims = EncoderDims {
            entities: [n, n],
            d: 6,
            h: 6,
            k_rel: 4,
            k_attr: 3,
        };
        let mut params = EncoderParams::init(dims, rng_seed);
        // Nonzero biases so every bias gradient path is exercised.
        for (name, m) in params.tensors_mut() {
            if name.contains(".b_") {
                m.as_mut_slice()
                    .iter_mut()
                    .for_each(|b| *b = rng.random_range(-0.3..0.3));
            }
        }
        Self {
            adjacency,
            relation,
            attribute,
            seeds,
            negatives,
            params,
            margin: 3.0,
        }
    }

    pub fn inputs(&self) -> [GraphInputs<'_>; 2] {
        core::array::from_fn(|i| GraphInputs {
            adjacency: &self.adjacency[i],
            relation: &self.relation[i],
            attribute: &self.attribute[i],
        })
    }

    pub fn problem(&self, metric: Metric, ablation: Ablation) -> StructuralProblem<'_> {
        StructuralProblem {
            inputs: self.inputs(),
            seeds: &self.seeds,
            negatives: &self.negatives,
            margin: self.margin,
            metric,
            ablation,
        }
    }
}
