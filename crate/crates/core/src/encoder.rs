//! Structural encoder.
//!
//! Each graph is encoded by the same parameters:
//!
//! ```text
//! H1  = relu(Â · H0 · W_s1)
//! Ht  = Â · H1 · W_s2
//! S   = relu(X · W_in + b_in)              per channel f ∈ {relation, attribute}
//! T   = sigmoid(S · W_gate + b_gate)
//! G   = relu(S · W_out + b_out) ⊙ T + S ⊙ (1 − T)
//! Hy  = rownorm([Ht | G_rel | G_attr])
//! ```
//!
//! Only `H0` is per-graph. The backward pass is written out by hand and is
//! checked against central differences in [`crate::train::grad_check`].

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Side;
use crate::features::{init_features, truncated_normal_matrix};
use crate::linalg::{normalize_rows, normalize_rows_backward, relu, sigmoid, Matrix};
use crate::sparse::NormalizedAdjacency;

/// Which parts of the structural encoder are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Ablation {
    /// Topology, both channels, highway gating.
    #[default]
    Full,
    /// Relation channel removed.
    NoRelation,
    /// Attribute channel removed.
    NoAttribute,
    /// Both channels kept, each reduced to `relu(S · W_out + b_out)`.
    NoHighway,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::NoRelation,
        Ablation::NoAttribute,
        Ablation::NoHighway,
    ];

    pub fn uses_relation(self) -> bool {
        self != Ablation::NoRelation
    }

    pub fn uses_attribute(self) -> bool {
        self != Ablation::NoAttribute
    }

    pub fn gated(self) -> bool {
        self != Ablation::NoHighway
    }

    pub fn channels(self) -> usize {
        usize::from(self.uses_relation()) + usize::from(self.uses_attribute())
    }

    /// Width of the hybrid embedding for topology width `d` and channel width `h`.
    pub fn output_width(self, d: usize, h: usize) -> usize {
        d + h * self.channels()
    }

    pub fn tag(self) -> &'static str {
        match self {
            Ablation::Full => "none",
            Ablation::NoRelation => "no-rel",
            Ablation::NoAttribute => "no-attr",
            Ablation::NoHighway => "no-highway",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.tag() == tag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// Shapes of every trainable tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderDims {
    /// Entity counts of g1 and g2.
    pub entities: [usize; 2],
    /// Topology width.
    pub d: usize,
    /// Channel width.
    pub h: usize,
    /// Relation feature columns.
    pub k_rel: usize,
    /// Attribute feature columns.
    pub k_attr: usize,
}

/// Parameters of one highway channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    pub w_in: Matrix,
    pub b_in: Matrix,
    pub w_gate: Matrix,
    pub b_gate: Matrix,
    pub w_out: Matrix,
    pub b_out: Matrix,
}

impl ChannelParams {
    fn init(k: usize, h: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = |n: usize| 1.0 / libm::sqrt(n.max(1) as f64);
        Self {
            w_in: truncated_normal_matrix(k, h, fan_in(k), rng),
            b_in: Matrix::zeros(1, h),
            w_gate: truncated_normal_matrix(h, h, fan_in(h), rng),
            b_gate: Matrix::zeros(1, h),
            w_out: truncated_normal_matrix(h, h, fan_in(h), rng),
            b_out: Matrix::zeros(1, h),
        }
    }

    fn zeros(k: usize, h: usize) -> Self {
        Self {
            w_in: Matrix::zeros(k, h),
            b_in: Matrix::zeros(1, h),
            w_gate: Matrix::zeros(h, h),
            b_gate: Matrix::zeros(1, h),
            w_out: Matrix::zeros(h, h),
            b_out: Matrix::zeros(1, h),
        }
    }
}

/// All trainable structural tensors. `h0[0]`/`h0[1]` are the initial
/// features of g1/g2; everything else is shared between the graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub h0: [Matrix; 2],
    pub w_s1: Matrix,
    pub w_s2: Matrix,
    pub relation: ChannelParams,
    pub attribute: ChannelParams,
}

/// Tensor names in serialization order.
pub const TENSOR_NAMES: [&str; 16] = [
    "h0.g1",
    "h0.g2",
    "w_s1",
    "w_s2",
    "rel.w_in",
    "rel.b_in",
    "rel.w_gate",
    "rel.b_gate",
    "rel.w_out",
    "rel.b_out",
    "attr.w_in",
    "attr.b_in",
    "attr.w_gate",
    "attr.b_gate",
    "attr.w_out",
    "attr.b_out",
];

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl EncoderParams {
    pub fn init(dims: EncoderDims, rng_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(rng_seed, 3));
        let std_d = 1.0 / libm::sqrt(dims.d as f64);
        Self {
            h0: [
                init_features(dims.entities[0], dims.d, mix_seed(rng_seed, 1)),
                init_features(dims.entities[1], dims.d, mix_seed(rng_seed, 2)),
            ],
            w_s1: truncated_normal_matrix(dims.d, dims.d, std_d, &mut rng),
            w_s2: truncated_normal_matrix(dims.d, dims.d, std_d, &mut rng),
            relation: ChannelParams::init(dims.k_rel, dims.h, &mut rng),
            attribute: ChannelParams::init(dims.k_attr, dims.h, &mut rng),
        }
    }

    pub fn zeros(dims: EncoderDims) -> Self {
        Self {
            h0: [
                Matrix::zeros(dims.entities[0], dims.d),
                Matrix::zeros(dims.entities[1], dims.d),
            ],
            w_s1: Matrix::zeros(dims.d, dims.d),
            w_s2: Matrix::zeros(dims.d, dims.d),
            relation: ChannelParams::zeros(dims.k_rel, dims.h),
            attribute: ChannelParams::zeros(dims.k_attr, dims.h),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims())
    }

    pub fn dims(&self) -> EncoderDims {
        EncoderDims {
            entities: [self.h0[0].rows(), self.h0[1].rows()],
            d: self.w_s1.rows(),
            h: self.relation.w_in.cols(),
            k_rel: self.relation.w_in.rows(),
            k_attr: self.attribute.w_in.rows(),
        }
    }

    /// Expected shape of every tensor, in [`TENSOR_NAMES`] order.
    pub fn shapes(dims: EncoderDims) -> [(usize, usize); 16] {
        let EncoderDims {
            entities: [n1, n2],
            d,
            h,
            k_rel,
            k_attr,
        } = dims;
        [
            (n1, d),
            (n2, d),
            (d, d),
            (d, d),
            (k_rel, h),
            (1, h),
            (h, h),
            (1, h),
            (h, h),
            (1, h),
            (k_attr, h),
            (1, h),
            (h, h),
            (1, h),
            (h, h),
            (1, h),
        ]
    }

    /// Rebuilds parameters from tensors in [`TENSOR_NAMES`] order.
    pub fn from_tensors(tensors: Vec<Matrix>) -> Option<Self> {
        let t: [Matrix; 16] = tensors.try_into().ok()?;
        let [h0_1, h0_2, w_s1, w_s2, r0, r1, r2, r3, r4, r5, a0, a1, a2, a3, a4, a5] = t;
        let params = Self {
            h0: [h0_1, h0_2],
            w_s1,
            w_s2,
            relation: ChannelParams {
                w_in: r0,
                b_in: r1,
                w_gate: r2,
                b_gate: r3,
                w_out: r4,
                b_out: r5,
            },
            attribute: ChannelParams {
                w_in: a0,
                b_in: a1,
                w_gate: a2,
                b_gate: a3,
                w_out: a4,
                b_out: a5,
            },
        };
        let ok = params
            .tensors()
            .iter()
            .zip(Self::shapes(params.dims()))
            .all(|((_, m), s)| m.shape() == s);
        ok.then_some(params)
    }

    pub fn tensors(&self) -> [(&'static str, &Matrix); 16] {
        let r = &self.relation;
        let a = &self.attribute;
        let refs = [
            &self.h0[0],
            &self.h0[1],
            &self.w_s1,
            &self.w_s2,
            &r.w_in,
            &r.b_in,
            &r.w_gate,
            &r.b_gate,
            &r.w_out,
            &r.b_out,
            &a.w_in,
            &a.b_in,
            &a.w_gate,
            &a.b_gate,
            &a.w_out,
            &a.b_out,
        ];
        core::array::from_fn(|i| (TENSOR_NAMES[i], refs[i]))
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Matrix); 16] {
        let [h0_1, h0_2] = &mut self.h0;
        let r = &mut self.relation;
        let a = &mut self.attribute;
        let refs = [
            h0_1,
            h0_2,
            &mut self.w_s1,
            &mut self.w_s2,
            &mut r.w_in,
            &mut r.b_in,
            &mut r.w_gate,
            &mut r.b_gate,
            &mut r.w_out,
            &mut r.b_out,
            &mut a.w_in,
            &mut a.b_in,
            &mut a.w_gate,
            &mut a.b_gate,
            &mut a.w_out,
            &mut a.b_out,
        ];
        let mut i = 0;
        refs.map(|m| {
            let name = TENSOR_NAMES[i];
            i += 1;
            (name, m)
        })
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.tensors()
            .into_iter()
            .find(|(_, m)| !m.is_finite())
            .map(|(n, _)| n)
    }
}

impl crate::adam::ParamSet for EncoderParams {
    fn tensor_count(&self) -> usize {
        TENSOR_NAMES.len()
    }

    fn tensor(&self, slot: usize) -> (&'static str, &Matrix) {
        self.tensors()[slot]
    }

    fn tensor_mut(&mut self, slot: usize) -> &mut Matrix {
        self.tensors_mut()
            .into_iter()
            .nth(slot)
            .expect("tensor slot out of range")
            .1
    }
}

/// Inputs of one graph.
#[derive(Debug, Clone, Copy)]
pub struct GraphInputs<'a> {
    pub adjacency: &'a NormalizedAdjacency,
    pub relation: &'a Matrix,
    pub attribute: &'a Matrix,
}

/// `σ(Â · H · W)`.
pub fn gcn_layer(
    adjacency: &NormalizedAdjacency,
    h: &Matrix,
    w: &Matrix,
    activation: Activation,
) -> Matrix {
    let z = adjacency.spmm(h).matmul(w);
    match activation {
        Activation::Relu => z.map(relu),
        Activation::Identity => z,
    }
}

/// Intermediate values of one highway channel.
#[derive(Debug, Clone)]
pub struct ChannelTrace {
    pub s_pre: Matrix,
    pub s: Matrix,
    /// Gate values; absent when the channel runs ungated.
    pub gate: Option<Matrix>,
    pub p_pre: Matrix,
    pub p: Matrix,
    pub output: Matrix,
}

fn affine(x: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
    let mut z = x.matmul(w);
    z.add_row_broadcast(b);
    z
}

/// Forward pass of a channel with all intermediates kept.
pub fn highway_trace(x: &Matrix, params: &ChannelParams, gated: bool) -> ChannelTrace {
    let s_pre = affine(x, &params.w_in, &params.b_in);
    let s = s_pre.map(relu);
    let p_pre = affine(&s, &params.w_out, &params.b_out);
    let p = p_pre.map(relu);
    if gated {
        let gate = affine(&s, &params.w_gate, &params.b_gate).map(sigmoid);
        let mut output = p.hadamard(&gate);
        for ((o, &sv), &tv) in output
            .as_mut_slice()
            .iter_mut()
            .zip(s.as_slice())
            .zip(gate.as_slice())
        {
            *o += sv * (1.0 - tv);
        }
        ChannelTrace {
            s_pre,
            s,
            gate: Some(gate),
            p_pre,
            p,
            output,
        }
    } else {
        let output = p.clone();
        ChannelTrace {
            s_pre,
            s,
            gate: None,
            p_pre,
            p,
            output,
        }
    }
}

/// Channel output `G` for raw aspect features `x`.
pub fn highway_channel(x: &Matrix, params: &ChannelParams, gated: bool) -> Matrix {
    highway_trace(x, params, gated).output
}

fn highway_backward(
    x: &Matrix,
    params: &ChannelParams,
    trace: &ChannelTrace,
    grad_out: &Matrix,
    grads: &mut ChannelParams,
) {
    let relu_mask = |g: &Matrix, pre: &Matrix| g.zip_with(pre, |g, z| if z > 0.0 { g } else { 0.0 });

    let (grad_p, mut grad_s) = match &trace.gate {
        Some(gate) => {
            let grad_p = grad_out.hadamard(gate);
            let grad_s_skip = grad_out.zip_with(gate, |g, t| g * (1.0 - t));
            // dT = dG ⊙ (P − S), then through the sigmoid.
            let mut grad_gate_pre = Matrix::zeros(gate.rows(), gate.cols());
            for (i, o) in grad_gate_pre.as_mut_slice().iter_mut().enumerate() {
                let t = gate.as_slice()[i];
                let diff = trace.p.as_slice()[i] - trace.s.as_slice()[i];
                *o = grad_out.as_slice()[i] * diff * t * (1.0 - t);
            }
            grads.w_gate.add_assign(&trace.s.tr_matmul(&grad_gate_pre));
            grads.b_gate.add_assign(&grad_gate_pre.column_sums());
            let mut grad_s = grad_s_skip;
            grad_s.add_assign(&grad_gate_pre.matmul_tr(&params.w_gate));
            (grad_p, grad_s)
        }
        None => (grad_out.clone(), Matrix::zeros(trace.s.rows(), trace.s.cols())),
    };

    let grad_p_pre = relu_mask(&grad_p, &trace.p_pre);
    grads.w_out.add_assign(&trace.s.tr_matmul(&grad_p_pre));
    grads.b_out.add_assign(&grad_p_pre.column_sums());
    grad_s.add_assign(&grad_p_pre.matmul_tr(&params.w_out));

    let grad_s_pre = relu_mask(&grad_s, &trace.s_pre);
    grads.w_in.add_assign(&x.tr_matmul(&grad_s_pre));
    grads.b_in.add_assign(&grad_s_pre.column_sums());
}

/// Encoder output for one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// `n × d` topology embedding from the second GCN layer.
    pub topology: Matrix,
    pub relation: Option<Matrix>,
    pub attribute: Option<Matrix>,
    /// Row-normalized concatenation.
    pub hybrid: Matrix,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    ah0: Matrix,
    z1: Matrix,
    ah1: Matrix,
    relation: Option<ChannelTrace>,
    attribute: Option<ChannelTrace>,
    norms: Vec<f64>,
    pub output: EncoderOutput,
}

pub fn encode_graph_traced(
    params: &EncoderParams,
    side: Side,
    inputs: GraphInputs<'_>,
    ablation: Ablation,
) -> ForwardCache {
    let adj = inputs.adjacency;
    let ah0 = adj.spmm(&params.h0[side.index()]);
    let z1 = ah0.matmul(&params.w_s1);
    let h1 = z1.map(relu);
    let ah1 = adj.spmm(&h1);
    let topology = ah1.matmul(&params.w_s2);

    let relation = ablation
        .uses_relation()
        .then(|| highway_trace(inputs.relation, &params.relation, ablation.gated()));
    let attribute = ablation
        .uses_attribute()
        .then(|| highway_trace(inputs.attribute, &params.attribute, ablation.gated()));

    let mut parts = alloc::vec![&topology];
    parts.extend(relation.iter().map(|t| &t.output));
    parts.extend(attribute.iter().map(|t| &t.output));
    let mut hybrid = Matrix::hconcat(&parts);
    let norms = normalize_rows(&mut hybrid);

    let output = EncoderOutput {
        relation: relation.as_ref().map(|t| t.output.clone()),
        attribute: attribute.as_ref().map(|t| t.output.clone()),
        topology,
        hybrid,
    };
    ForwardCache {
        ah0,
        z1,
        ah1,
        relation,
        attribute,
        norms,
        output,
    }
}

pub fn encode_graph(
    params: &EncoderParams,
    side: Side,
    inputs: GraphInputs<'_>,
    ablation: Ablation,
) -> EncoderOutput {
    encode_graph_traced(params, side, inputs, ablation).output
}

/// Encodes both graphs with the same parameters.
pub fn encode(
    params: &EncoderParams,
    inputs: [GraphInputs<'_>; 2],
    ablation: Ablation,
) -> [EncoderOutput; 2] {
    [
        encode_graph(params, Side::Left, inputs[0], ablation),
        encode_graph(params, Side::Right, inputs[1], ablation),
    ]
}

/// Accumulates `dL/dθ` into `grads` given `dL/dHy` for one graph.
pub fn backward_graph(
    params: &EncoderParams,
    side: Side,
    inputs: GraphInputs<'_>,
    ablation: Ablation,
    cache: &ForwardCache,
    grad_hybrid: &Matrix,
    grads: &mut EncoderParams,
) {
    let adj = inputs.adjacency;
    let grad_concat = normalize_rows_backward(&cache.output.hybrid, &cache.norms, grad_hybrid);
    let d = params.w_s1.rows();
    let h = params.relation.w_in.cols();

    let grad_topology = grad_concat.column_block(0, d);
    let mut offset = d;
    if let Some(trace) = &cache.relation {
        let g = grad_concat.column_block(offset, h);
        highway_backward(inputs.relation, &params.relation, trace, &g, &mut grads.relation);
        offset += h;
    }
    if let Some(trace) = &cache.attribute {
        let g = grad_concat.column_block(offset, h);
        highway_backward(inputs.attribute, &params.attribute, trace, &g, &mut grads.attribute);
    }
    debug_assert_eq!(ablation.output_width(d, h), grad_concat.cols());

    // Ht = (Â H1) W2, H1 = relu((Â H0) W1); Â is symmetric.
    grads.w_s2.add_assign(&cache.ah1.tr_matmul(&grad_topology));
    let grad_h1 = adj.spmm(&grad_topology.matmul_tr(&params.w_s2));
    let grad_z1 = grad_h1.zip_with(&cache.z1, |g, z| if z > 0.0 { g } else { 0.0 });
    grads.w_s1.add_assign(&cache.ah0.tr_matmul(&grad_z1));
    let grad_h0 = adj.spmm(&grad_z1.matmul_tr(&params.w_s1));
    grads.h0[side.index()].add_assign(&grad_h0);
}
