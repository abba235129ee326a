//! Forecaster assembly: the fused spatio-temporal model, its ablation
//! variants, and six reference baselines behind one interface.
//!
//! The full model embeds each interval's flow graph with a per-platform
//! GCN → dropout → linear-FC stack, runs an LSTM over the sequence
//! [auxiliary at T−P, taxi at T−k .. T−1], and decodes the final hidden
//! state through relu FC layers into a 2×M inflow/outflow prediction.
//! Variants remove one stage at a time; baselines swap in simpler blocks.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::autodiff::{ParamStore, Tape, TensorId};
use crate::derive_seed;
use crate::graphbuild::{normalize_adjacency, FeatureTransform, FlowGraph, Sample};
use crate::ingest::{IntervalIndex, Platform};
use crate::layers::{
    attention_mask, Activation, ChebConv, Dense, GraphAttention, GraphConv, GruCell, LstmCell,
    RnnCell,
};
use crate::mat::Mat;
use crate::{Error, Result};

/// Ablation variants of the fused model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    /// Graph embedding removed; flattened node features feed the LSTM.
    NoSpatial,
    /// LSTM removed; per-interval embeddings are concatenated for the head.
    NoTemporal,
    /// Auxiliary platform dropped; sequence is the k taxi intervals only.
    NoFusion,
}

impl Variant {
    pub const ALL: [Variant; 4] =
        [Variant::Full, Variant::NoSpatial, Variant::NoTemporal, Variant::NoFusion];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSpatial => "no_spatial",
            Variant::NoTemporal => "no_temporal",
            Variant::NoFusion => "no_fusion",
        }
    }
}

/// Reference models compared against the fused forecaster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Baseline {
    /// Graph convolution per interval, concatenated, no recurrence.
    Gcn,
    /// Flattened node features through an LSTM, no graph layer.
    Lstm,
    Gru,
    Rnn,
    /// Single-head graph attention per interval, concatenated.
    Gat,
    /// Chebyshev graph convolution per interval, concatenated.
    Cgcn,
}

impl Baseline {
    pub const ALL: [Baseline; 6] = [
        Baseline::Gcn,
        Baseline::Lstm,
        Baseline::Gru,
        Baseline::Rnn,
        Baseline::Gat,
        Baseline::Cgcn,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Baseline::Gcn => "gcn",
            Baseline::Lstm => "lstm",
            Baseline::Gru => "gru",
            Baseline::Rnn => "rnn",
            Baseline::Gat => "gat",
            Baseline::Cgcn => "cgcn",
        }
    }
}

/// What to build: an ablation variant of the fused model, or a baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Variant(Variant),
    Baseline(Baseline),
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Variant(v) => v.as_str(),
            ModelKind::Baseline(b) => b.as_str(),
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<ModelKind> {
        for v in Variant::ALL {
            if v.as_str() == s {
                return Ok(ModelKind::Variant(v));
            }
        }
        for b in Baseline::ALL {
            if b.as_str() == s {
                return Ok(ModelKind::Baseline(b));
            }
        }
        Err(Error::Config(format!(
            "unknown model kind {s:?} (variants: full, no_spatial, no_temporal, no_fusion; \
             baselines: gcn, lstm, gru, rnn, gat, cgcn)"
        )))
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Architecture hyperparameters. Width defaults follow the reference
/// experiment: GCN 32, embedding 16, LSTM 32, head 32/128, output 2·M.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub m: usize,
    pub k: usize,
    pub p: usize,
    pub gcn_width: usize,
    pub embed_width: usize,
    pub lstm_width: usize,
    pub fc1_width: usize,
    pub fc2_width: usize,
    pub dropout_p: f64,
    pub cheb_order: usize,
    /// Place the auxiliary interval first in the sequence (default) or last.
    pub aux_first: bool,
    pub kind: ModelKind,
}

impl ModelConfig {
    pub fn new(m: usize, k: usize, p: usize, kind: ModelKind) -> ModelConfig {
        ModelConfig {
            m,
            k,
            p,
            gcn_width: 32,
            embed_width: 16,
            lstm_width: 32,
            fc1_width: 32,
            fc2_width: 128,
            dropout_p: 0.1,
            cheb_order: 3,
            aux_first: true,
            kind,
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.m
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m", self.m),
            ("k", self.k),
            ("p", self.p),
            ("gcn_width", self.gcn_width),
            ("embed_width", self.embed_width),
            ("lstm_width", self.lstm_width),
            ("fc1_width", self.fc1_width),
            ("fc2_width", self.fc2_width),
            ("cheb_order", self.cheb_order),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "model.dropout_p must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        Ok(())
    }

    /// Canonical text form of every architecture-relevant field; two
    /// configs hash equal exactly when checkpoints are interchangeable.
    pub fn canonical_string(&self) -> String {
        format!(
            "m={};k={};p={};gcn={};embed={};lstm={};fc1={};fc2={};dropout={};cheb={};aux_first={};kind={}",
            self.m,
            self.k,
            self.p,
            self.gcn_width,
            self.embed_width,
            self.lstm_width,
            self.fc1_width,
            self.fc2_width,
            self.dropout_p,
            self.cheb_order,
            self.aux_first,
            self.kind.as_str(),
        )
    }

    pub fn config_hash(&self) -> u64 {
        fnv1a64(self.canonical_string().as_bytes())
    }
}

/// FNV-1a 64-bit hash; stable across platforms and releases, which is all
/// the checkpoint header needs.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Prediction in raw-count space (after the inverse feature transform):
/// row 0 inflow, row 1 outflow per zone.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPrediction {
    pub features: Mat,
}

impl FlowPrediction {
    pub fn is_finite(&self) -> bool {
        self.features.all_finite()
    }

    /// Raw counts cannot be negative; reporting clamps at zero. The
    /// unclamped values stay available for round-trip checks.
    pub fn clamped(&self) -> Mat {
        self.features.map(|x| x.max(0.0))
    }
}

/// One interval preprocessed into the exact matrices the models consume.
/// Shared via `Arc` because history windows overlap heavily.
#[derive(Debug, Clone)]
pub struct PreparedInterval {
    pub platform: Platform,
    pub interval: IntervalIndex,
    /// Symmetric propagation operator Â from the raw adjacency.
    pub norm_adj: Mat,
    /// Connectivity mask for the attention baseline.
    pub gat_mask: Mat,
    /// Transformed node features in node-major M×2 layout.
    pub feat_nodes: Mat,
    /// The same features flattened row-major to 1×2M (inflow then outflow).
    pub feat_flat: Mat,
}

impl PreparedInterval {
    pub fn new(graph: &FlowGraph, features: &Mat, transform: &FeatureTransform) -> PreparedInterval {
        let transformed = transform.apply(features);
        let m = graph.adjacency.rows();
        PreparedInterval {
            platform: graph.platform,
            interval: graph.interval,
            norm_adj: normalize_adjacency(&graph.adjacency),
            gat_mask: attention_mask(&graph.adjacency),
            feat_nodes: transformed.transpose(),
            feat_flat: transformed.reshaped(1, 2 * m),
        }
    }
}

/// A [`Sample`] with transforms applied and operators precomputed, ready
/// for training or inference.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub history: Vec<Arc<PreparedInterval>>,
    pub auxiliary: Arc<PreparedInterval>,
    /// Transformed taxi target, flattened 1×2M, for the training loss.
    pub target_flat: Mat,
    /// Raw-count taxi target 2×M, for metrics.
    pub target_raw: Mat,
    pub target_index: IntervalIndex,
}

/// Apply per-platform transforms and precompute propagation operators.
/// Intervals shared between samples are prepared once.
pub fn prepare_samples(
    samples: &[Sample],
    taxi_transform: &FeatureTransform,
    aux_transform: &FeatureTransform,
) -> Vec<PreparedSample> {
    let mut cache: HashMap<(Platform, usize), Arc<PreparedInterval>> = HashMap::new();
    let mut get = |data: &crate::graphbuild::IntervalData, transform: &FeatureTransform| {
        cache
            .entry((data.graph.platform, data.graph.interval.0))
            .or_insert_with(|| {
                Arc::new(PreparedInterval::new(&data.graph, &data.features.features, transform))
            })
            .clone()
    };

    samples
        .iter()
        .map(|s| {
            let history = s.history.iter().map(|h| get(h, taxi_transform)).collect();
            let auxiliary = get(&s.auxiliary, aux_transform);
            let target_transformed = taxi_transform.apply(&s.target.features);
            let m = s.target.features.cols();
            PreparedSample {
                history,
                auxiliary,
                target_flat: target_transformed.reshaped(1, 2 * m),
                target_raw: s.target.features.clone(),
                target_index: s.target_index,
            }
        })
        .collect()
}

/// Per-platform spatial embedding stack: GCN → dropout → linear FC.
#[derive(Debug, Clone)]
struct EmbedStack {
    gcn: GraphConv,
    fc: Dense,
}

impl EmbedStack {
    fn new(store: &mut ParamStore, rng: &mut ChaCha12Rng, prefix: &str, cfg: &ModelConfig) -> EmbedStack {
        EmbedStack {
            gcn: GraphConv::new(store, rng, &format!("{prefix}.gcn"), 2, cfg.gcn_width),
            fc: Dense::new(
                store,
                rng,
                &format!("{prefix}.fc"),
                cfg.gcn_width,
                cfg.embed_width,
                Activation::Linear,
            ),
        }
    }

    /// M×embed_width spatial embedding for one interval.
    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        interval: &PreparedInterval,
        dropout_p: f64,
        dropout_seed: u64,
    ) -> TensorId {
        let adj = tape.constant(interval.norm_adj.clone());
        let h = tape.constant(interval.feat_nodes.clone());
        let g = self.gcn.forward(tape, store, adj, h);
        let d = tape.dropout(g, dropout_p, dropout_seed);
        self.fc.forward(tape, store, d)
    }
}

#[derive(Debug, Clone)]
enum SpatialPart {
    /// Full embedding stacks, one per platform (auxiliary only when fused).
    PerPlatform { taxi: EmbedStack, aux: Option<EmbedStack> },
    /// One graph layer shared by every sequence element (graph baselines).
    SharedGraph(GraphConv),
    SharedCheb(ChebConv),
    SharedGat(GraphAttention),
    /// Flattened transformed node features pass through unchanged.
    Identity,
}

#[derive(Debug, Clone)]
enum TemporalPart {
    Lstm(LstmCell),
    Gru(GruCell),
    Rnn(RnnCell),
    /// No recurrence; element embeddings are concatenated in order.
    Concat,
}

/// Decoder head: FC(fc1, relu) → FC(fc2, relu) → FC(2·M, linear).
#[derive(Debug, Clone)]
struct FcHead {
    fc1: Dense,
    fc2: Dense,
    out: Dense,
}

impl FcHead {
    fn new(store: &mut ParamStore, rng: &mut ChaCha12Rng, in_dim: usize, cfg: &ModelConfig) -> FcHead {
        FcHead {
            fc1: Dense::new(store, rng, "head.fc1", in_dim, cfg.fc1_width, Activation::Relu),
            fc2: Dense::new(store, rng, "head.fc2", cfg.fc1_width, cfg.fc2_width, Activation::Relu),
            out: Dense::new(store, rng, "head.out", cfg.fc2_width, cfg.output_dim(), Activation::Linear),
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: TensorId) -> TensorId {
        let a = self.fc1.forward(tape, store, x);
        let b = self.fc2.forward(tape, store, a);
        self.out.forward(tape, store, b)
    }
}

/// A constructed model: parameter store plus the wiring for its kind.
pub struct Forecaster {
    pub config: ModelConfig,
    pub store: ParamStore,
    spatial: SpatialPart,
    temporal: TemporalPart,
    head: FcHead,
}

impl Forecaster {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Forecaster> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);

        let spatial = match config.kind {
            ModelKind::Variant(Variant::Full) | ModelKind::Variant(Variant::NoTemporal) => {
                SpatialPart::PerPlatform {
                    taxi: EmbedStack::new(&mut store, &mut rng, "taxi_embed", &config),
                    aux: Some(EmbedStack::new(&mut store, &mut rng, "aux_embed", &config)),
                }
            }
            ModelKind::Variant(Variant::NoFusion) => SpatialPart::PerPlatform {
                taxi: EmbedStack::new(&mut store, &mut rng, "taxi_embed", &config),
                aux: None,
            },
            ModelKind::Variant(Variant::NoSpatial)
            | ModelKind::Baseline(Baseline::Lstm)
            | ModelKind::Baseline(Baseline::Gru)
            | ModelKind::Baseline(Baseline::Rnn) => SpatialPart::Identity,
            ModelKind::Baseline(Baseline::Gcn) => {
                SpatialPart::SharedGraph(GraphConv::new(&mut store, &mut rng, "graph", 2, config.gcn_width))
            }
            ModelKind::Baseline(Baseline::Gat) => {
                SpatialPart::SharedGat(GraphAttention::new(&mut store, &mut rng, "gat", 2, config.gcn_width))
            }
            ModelKind::Baseline(Baseline::Cgcn) => SpatialPart::SharedCheb(ChebConv::new(
                &mut store,
                &mut rng,
                "cheb",
                2,
                config.gcn_width,
                config.cheb_order,
            )),
        };

        let elem_width = Self::element_width(&config);
        let seq_len = Self::seq_len(&config);

        let (temporal, head_in) = match config.kind {
            ModelKind::Variant(Variant::Full)
            | ModelKind::Variant(Variant::NoSpatial)
            | ModelKind::Variant(Variant::NoFusion)
            | ModelKind::Baseline(Baseline::Lstm) => (
                TemporalPart::Lstm(LstmCell::new(&mut store, &mut rng, "lstm", elem_width, config.lstm_width)),
                config.lstm_width,
            ),
            ModelKind::Baseline(Baseline::Gru) => (
                TemporalPart::Gru(GruCell::new(&mut store, &mut rng, "gru", elem_width, config.lstm_width)),
                config.lstm_width,
            ),
            ModelKind::Baseline(Baseline::Rnn) => (
                TemporalPart::Rnn(RnnCell::new(&mut store, &mut rng, "rnn", elem_width, config.lstm_width)),
                config.lstm_width,
            ),
            ModelKind::Variant(Variant::NoTemporal)
            | ModelKind::Baseline(Baseline::Gcn)
            | ModelKind::Baseline(Baseline::Gat)
            | ModelKind::Baseline(Baseline::Cgcn) => (TemporalPart::Concat, seq_len * elem_width),
        };

        let head = FcHead::new(&mut store, &mut rng, head_in, &config);
        Ok(Forecaster { config, store, spatial, temporal, head })
    }

    /// Width of one flattened sequence element for this architecture.
    fn element_width(config: &ModelConfig) -> usize {
        match config.kind {
            ModelKind::Variant(Variant::Full)
            | ModelKind::Variant(Variant::NoTemporal)
            | ModelKind::Variant(Variant::NoFusion) => config.m * config.embed_width,
            ModelKind::Variant(Variant::NoSpatial)
            | ModelKind::Baseline(Baseline::Lstm)
            | ModelKind::Baseline(Baseline::Gru)
            | ModelKind::Baseline(Baseline::Rnn) => 2 * config.m,
            ModelKind::Baseline(Baseline::Gcn)
            | ModelKind::Baseline(Baseline::Gat)
            | ModelKind::Baseline(Baseline::Cgcn) => config.m * config.gcn_width,
        }
    }

    fn seq_len(config: &ModelConfig) -> usize {
        if matches!(config.kind, ModelKind::Variant(Variant::NoFusion)) {
            config.k
        } else {
            config.k + 1
        }
    }

    pub fn includes_auxiliary(&self) -> bool {
        !matches!(self.config.kind, ModelKind::Variant(Variant::NoFusion))
    }

    pub fn sequence_length(&self) -> usize {
        Self::seq_len(&self.config)
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Closed-form parameter count; the constructor's registry must agree.
    pub fn expected_param_count(config: &ModelConfig) -> usize {
        let dense = |i: usize, o: usize| i * o + o;
        let embed = dense(2, config.gcn_width) + dense(config.gcn_width, config.embed_width);
        let cell = |gates: usize, in_dim: usize| {
            gates * (in_dim * config.lstm_width
                + config.lstm_width * config.lstm_width
                + config.lstm_width)
        };
        let elem_width = Self::element_width(config);
        let seq_len = Self::seq_len(config);

        let spatial = match config.kind {
            ModelKind::Variant(Variant::Full) | ModelKind::Variant(Variant::NoTemporal) => 2 * embed,
            ModelKind::Variant(Variant::NoFusion) => embed,
            ModelKind::Variant(Variant::NoSpatial)
            | ModelKind::Baseline(Baseline::Lstm)
            | ModelKind::Baseline(Baseline::Gru)
            | ModelKind::Baseline(Baseline::Rnn) => 0,
            ModelKind::Baseline(Baseline::Gcn) => dense(2, config.gcn_width),
            // Weight 2×g plus the two attention vectors, no bias.
            ModelKind::Baseline(Baseline::Gat) => 2 * config.gcn_width + 2 * config.gcn_width,
            ModelKind::Baseline(Baseline::Cgcn) => {
                config.cheb_order * 2 * config.gcn_width + config.gcn_width
            }
        };

        let (temporal, head_in) = match config.kind {
            ModelKind::Variant(Variant::Full)
            | ModelKind::Variant(Variant::NoSpatial)
            | ModelKind::Variant(Variant::NoFusion)
            | ModelKind::Baseline(Baseline::Lstm) => (cell(4, elem_width), config.lstm_width),
            ModelKind::Baseline(Baseline::Gru) => (cell(3, elem_width), config.lstm_width),
            ModelKind::Baseline(Baseline::Rnn) => (cell(1, elem_width), config.lstm_width),
            ModelKind::Variant(Variant::NoTemporal)
            | ModelKind::Baseline(Baseline::Gcn)
            | ModelKind::Baseline(Baseline::Gat)
            | ModelKind::Baseline(Baseline::Cgcn) => (0, seq_len * elem_width),
        };

        let head = dense(head_in, config.fc1_width)
            + dense(config.fc1_width, config.fc2_width)
            + dense(config.fc2_width, config.output_dim());
        spatial + temporal + head
    }

    /// Sequence elements in model order. The auxiliary interval leads by
    /// default (`aux_first`), mirroring how the fused sequence is written.
    fn ordered_elements<'s>(&self, sample: &'s PreparedSample) -> Vec<&'s PreparedInterval> {
        let mut elems: Vec<&PreparedInterval> = Vec::with_capacity(self.sequence_length());
        if self.includes_auxiliary() && self.config.aux_first {
            elems.push(&sample.auxiliary);
        }
        elems.extend(sample.history.iter().map(|h| h.as_ref()));
        if self.includes_auxiliary() && !self.config.aux_first {
            elems.push(&sample.auxiliary);
        }
        elems
    }

    /// The M×embed_width spatial embedding of one interval, when this
    /// architecture has an embedding stack for its platform.
    pub fn spatial_embedding(
        &self,
        tape: &mut Tape,
        interval: &PreparedInterval,
        dropout_seed: u64,
    ) -> Option<TensorId> {
        self.spatial_embedding_with(&self.store, tape, interval, dropout_seed)
    }

    fn spatial_embedding_with(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        interval: &PreparedInterval,
        dropout_seed: u64,
    ) -> Option<TensorId> {
        match &self.spatial {
            SpatialPart::PerPlatform { taxi, aux } => {
                let stack = match interval.platform {
                    Platform::Taxi => Some(taxi),
                    Platform::Aux => aux.as_ref(),
                };
                stack.map(|s| {
                    s.forward(tape, store, interval, self.config.dropout_p, dropout_seed)
                })
            }
            _ => None,
        }
    }

    /// One flattened 1×w sequence element.
    fn embed_element(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        interval: &PreparedInterval,
        dropout_seed: u64,
    ) -> TensorId {
        match &self.spatial {
            SpatialPart::Identity => tape.constant(interval.feat_flat.clone()),
            SpatialPart::PerPlatform { .. } => {
                let e = self
                    .spatial_embedding_with(store, tape, interval, dropout_seed)
                    .expect("per-platform architecture is missing an embedding stack");
                let (rows, cols) = tape.value(e).shape();
                tape.reshape(e, 1, rows * cols)
            }
            SpatialPart::SharedGraph(gcn) => {
                let adj = tape.constant(interval.norm_adj.clone());
                let h = tape.constant(interval.feat_nodes.clone());
                let y = gcn.forward(tape, store, adj, h);
                let (rows, cols) = tape.value(y).shape();
                tape.reshape(y, 1, rows * cols)
            }
            SpatialPart::SharedCheb(cheb) => {
                // L̃ = L − I = −Â under the λ_max ≈ 2 simplification.
                let lap = tape.constant(interval.norm_adj.scale(-1.0));
                let h = tape.constant(interval.feat_nodes.clone());
                let y = cheb.forward(tape, store, lap, h);
                let (rows, cols) = tape.value(y).shape();
                tape.reshape(y, 1, rows * cols)
            }
            SpatialPart::SharedGat(gat) => {
                let h = tape.constant(interval.feat_nodes.clone());
                let y = gat.forward(tape, store, &interval.gat_mask, h);
                let (rows, cols) = tape.value(y).shape();
                tape.reshape(y, 1, rows * cols)
            }
        }
    }

    /// Record the forward pass on `tape` and return the 1×2M prediction in
    /// transformed feature space. `dropout_seed` fixes the dropout masks;
    /// it is ignored on eval tapes.
    pub fn forward(
        &self,
        tape: &mut Tape,
        sample: &PreparedSample,
        dropout_seed: u64,
    ) -> TensorId {
        self.forward_with(&self.store, tape, sample, dropout_seed)
    }

    /// [`Forecaster::forward`] reading parameter values from an external
    /// store with the same layout as `self.store` (e.g. a clone). This is
    /// what lets gradient checks perturb parameters without rebuilding the
    /// model.
    pub fn forward_with(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        sample: &PreparedSample,
        dropout_seed: u64,
    ) -> TensorId {
        let elems = self.ordered_elements(sample);
        let embedded: Vec<TensorId> = elems
            .iter()
            .enumerate()
            .map(|(i, iv)| {
                self.embed_element(store, tape, iv, derive_seed(dropout_seed, &[i as u64]))
            })
            .collect();

        let features = match &self.temporal {
            TemporalPart::Lstm(cell) => {
                let mut state = cell.zero_state(tape);
                for &x in &embedded {
                    state = cell.step(tape, store, x, state);
                }
                state.h
            }
            TemporalPart::Gru(cell) => {
                let mut h = tape.constant(Mat::zeros(1, self.config.lstm_width));
                for &x in &embedded {
                    h = cell.step(tape, store, x, h);
                }
                h
            }
            TemporalPart::Rnn(cell) => {
                let mut h = tape.constant(Mat::zeros(1, self.config.lstm_width));
                for &x in &embedded {
                    h = cell.step(tape, store, x, h);
                }
                h
            }
            TemporalPart::Concat => {
                let stacked = tape.concat_rows(&embedded);
                let (rows, cols) = tape.value(stacked).shape();
                tape.reshape(stacked, 1, rows * cols)
            }
        };
        self.head.forward(tape, store, features)
    }

    /// Deterministic eval-mode prediction, mapped back to raw counts.
    pub fn predict(&self, sample: &PreparedSample, taxi_transform: &FeatureTransform) -> FlowPrediction {
        let mut tape = Tape::eval();
        let out = self.forward(&mut tape, sample, 0);
        let transformed = tape.value(out).reshaped(2, self.config.m);
        FlowPrediction { features: taxi_transform.invert(&transformed) }
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"FLOWCKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// Binary checkpoint: magic, format version (u32), config hash (u64),
/// parameter count (u32), then per parameter: name length (u32), UTF-8
/// name, rows (u32), cols (u32), row-major f64 values. All little-endian.
pub fn save_checkpoint(path: &Path, model: &Forecaster) -> Result<()> {
    let store = &model.store;
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&model.config.config_hash().to_le_bytes())?;
    out.write_all(&(store.len() as u32).to_le_bytes())?;
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        let value = store.value(id);
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name)?;
        out.write_all(&(value.rows() as u32).to_le_bytes())?;
        out.write_all(&(value.cols() as u32).to_le_bytes())?;
        for &v in value.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Rebuild a model for `config` and load parameter values from `path`.
/// The stored config hash must match and every parameter of the rebuilt
/// model must be present with its exact shape.
pub fn load_checkpoint(path: &Path, config: &ModelConfig) -> Result<Forecaster> {
    let file = std::fs::File::open(path)?;
    let mut input = std::io::BufReader::new(file);
    let corrupt = |what: &str| Error::Checkpoint(format!("{}: {what}", path.display()));

    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|_| corrupt("file too short for header"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic header (not a checkpoint file)"));
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    input.read_exact(&mut u32buf).map_err(|_| corrupt("truncated version"))?;
    let version = u32::from_le_bytes(u32buf);
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(&format!(
            "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    input.read_exact(&mut u64buf).map_err(|_| corrupt("truncated config hash"))?;
    let stored_hash = u64::from_le_bytes(u64buf);
    if stored_hash != config.config_hash() {
        return Err(Error::Checkpoint(format!(
            "{}: config mismatch: checkpoint hash {stored_hash:#018x} vs current {:#018x} \
             (config: {})",
            path.display(),
            config.config_hash(),
            config.canonical_string()
        )));
    }
    input.read_exact(&mut u32buf).map_err(|_| corrupt("truncated parameter count"))?;
    let count = u32::from_le_bytes(u32buf) as usize;

    let mut model = Forecaster::new(config.clone(), 0)?;
    if count != model.store.len() {
        return Err(corrupt(&format!(
            "parameter count {count} does not match the rebuilt model's {}",
            model.store.len()
        )));
    }
    for _ in 0..count {
        input.read_exact(&mut u32buf).map_err(|_| corrupt("truncated name length"))?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name_buf = vec![0u8; name_len];
        input.read_exact(&mut name_buf).map_err(|_| corrupt("truncated name"))?;
        let name = String::from_utf8(name_buf).map_err(|_| corrupt("non-UTF-8 name"))?;
        input.read_exact(&mut u32buf).map_err(|_| corrupt("truncated rows"))?;
        let rows = u32::from_le_bytes(u32buf) as usize;
        input.read_exact(&mut u32buf).map_err(|_| corrupt("truncated cols"))?;
        let cols = u32::from_le_bytes(u32buf) as usize;

        let id = model
            .store
            .lookup(&name)
            .ok_or_else(|| corrupt(&format!("unknown parameter {name:?}")))?;
        if model.store.value(id).shape() != (rows, cols) {
            let (er, ec) = model.store.value(id).shape();
            return Err(corrupt(&format!(
                "parameter {name:?} has shape {rows}x{cols}, model expects {er}x{ec}"
            )));
        }
        let mut data = vec![0.0f64; rows * cols];
        for v in &mut data {
            input.read_exact(&mut u64buf).map_err(|_| corrupt("truncated values"))?;
            *v = f64::from_le_bytes(u64buf);
        }
        *model.store.value_mut(id) = Mat::from_vec(rows, cols, data);
    }
    Ok(model)
}
