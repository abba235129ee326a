//! Per-interval flow graphs, node features, and supervised samples.
//!
//! An edge list becomes one dense M×M adjacency per interval (entry (i, j)
//! = trips from zone i to zone j) with a 2×M feature matrix of per-zone
//! inflow and outflow. Samples pair k consecutive taxi intervals with the
//! auxiliary platform's interval from exactly one day earlier, targeting
//! the taxi features one step ahead.

use std::sync::Arc;

use crate::ingest::{EdgeRow, IntervalIndex, Platform, ZoneRegistry};
use crate::mat::Mat;
use crate::{Error, Result};

/// Directed trip counts between zones for one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGraph {
    pub interval: IntervalIndex,
    pub platform: Platform,
    /// M×M, entry (i, j) = trips from zone i to zone j.
    pub adjacency: Mat,
}

/// Per-zone inflow (row 0) and outflow (row 1) for one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatureMatrix {
    pub interval: IntervalIndex,
    pub platform: Platform,
    /// 2×M: row 0 = inflow (column sums), row 1 = outflow (row sums).
    pub features: Mat,
}

/// Build the dense adjacency for a single interval's rows. The rows must
/// already be aggregated: a repeated (origin, dest) pair is a data error,
/// as is an index outside the registry.
pub fn build_flow_graph(
    rows: &[EdgeRow],
    interval: IntervalIndex,
    platform: Platform,
    registry: &ZoneRegistry,
) -> Result<FlowGraph> {
    let m = registry.len();
    let mut adjacency = Mat::zeros(m, m);
    for row in rows {
        if row.interval != interval {
            return Err(Error::Data(format!(
                "row for interval {} passed to builder for interval {}",
                row.interval.0, interval.0
            )));
        }
        if row.origin >= m || row.dest >= m {
            return Err(Error::Data(format!(
                "zone index ({}, {}) outside registry of size {m}",
                row.origin, row.dest
            )));
        }
        if adjacency.get(row.origin, row.dest) != 0.0 {
            return Err(Error::Data(format!(
                "duplicate edge ({} -> {}) in interval {}",
                row.origin, row.dest, interval.0
            )));
        }
        adjacency.set(row.origin, row.dest, row.count as f64);
    }
    Ok(FlowGraph { interval, platform, adjacency })
}

/// Inflow/outflow per zone: inflow j = column sum j, outflow i = row sum i.
pub fn node_features(g: &FlowGraph) -> NodeFeatureMatrix {
    let m = g.adjacency.rows();
    let inflow = g.adjacency.col_sums();
    let outflow = g.adjacency.row_sums();
    let mut features = Mat::zeros(2, m);
    for j in 0..m {
        features.set(0, j, inflow[j]);
        features.set(1, j, outflow[j]);
    }
    NodeFeatureMatrix { interval: g.interval, platform: g.platform, features }
}

/// Symmetric graph-convolution operator: Â = D̃^{-1/2} (A + Aᵀ + I) D̃^{-1/2}
/// where D̃ is the degree diagonal of A + Aᵀ + I. The added self-loops keep
/// every degree positive, so isolated zones reduce to weight 1 on the
/// diagonal. Direction is not lost overall: it lives in the inflow/outflow
/// feature channels rather than the propagation operator.
pub fn normalize_adjacency(adjacency: &Mat) -> Mat {
    let m = adjacency.rows();
    assert_eq!(m, adjacency.cols(), "adjacency must be square, got {m}x{}", adjacency.cols());
    let mut sym = adjacency.add(&adjacency.transpose());
    for i in 0..m {
        sym.set(i, i, sym.get(i, i) + 1.0);
    }
    let inv_sqrt_deg: Vec<f64> = sym.row_sums().iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut out = Mat::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            out.set(i, j, inv_sqrt_deg[i] * sym.get(i, j) * inv_sqrt_deg[j]);
        }
    }
    out
}

/// Per-channel standardization of log-compressed counts, fitted on training
/// data only: x ↦ (log(1+x) − μ_c) / σ_c with one (μ, σ) per feature row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTransform {
    pub shift: [f64; 2],
    pub scale: [f64; 2],
}

/// Floor for σ so constant channels map to 0 instead of dividing by 0.
const SCALE_FLOOR: f64 = 1e-8;

pub fn fit_feature_transform(train: &[&NodeFeatureMatrix]) -> Result<FeatureTransform> {
    if train.is_empty() {
        return Err(Error::Data("cannot fit a feature transform on no data".to_string()));
    }
    let mut shift = [0.0; 2];
    let mut scale = [0.0; 2];
    for ch in 0..2 {
        let mut n = 0usize;
        let mut sum = 0.0;
        for f in train {
            for &x in f.features.row(ch) {
                sum += x.ln_1p();
                n += 1;
            }
        }
        let mean = sum / n as f64;
        let mut var = 0.0;
        for f in train {
            for &x in f.features.row(ch) {
                let d = x.ln_1p() - mean;
                var += d * d;
            }
        }
        shift[ch] = mean;
        scale[ch] = (var / n as f64).sqrt().max(SCALE_FLOOR);
    }
    Ok(FeatureTransform { shift, scale })
}

impl FeatureTransform {
    /// Transform a 2×M raw-count feature matrix into model space.
    pub fn apply(&self, features: &Mat) -> Mat {
        self.per_channel(features, |ch, x| (x.ln_1p() - self.shift[ch]) / self.scale[ch])
    }

    /// Map model-space values back to raw counts. Inverse of [`apply`]
    /// exactly; predictions can come out slightly negative and are clamped
    /// by the evaluation code, not here, so the round trip stays exact.
    ///
    /// [`apply`]: FeatureTransform::apply
    pub fn invert(&self, features: &Mat) -> Mat {
        self.per_channel(features, |ch, x| (x * self.scale[ch] + self.shift[ch]).exp_m1())
    }

    fn per_channel(&self, features: &Mat, f: impl Fn(usize, f64) -> f64) -> Mat {
        assert_eq!(
            features.rows(),
            2,
            "feature matrix must have 2 channel rows, got {}",
            features.rows()
        );
        let mut out = features.clone();
        for ch in 0..2 {
            for j in 0..out.cols() {
                out.set(ch, j, f(ch, features.get(ch, j)));
            }
        }
        out
    }
}

/// One interval's graph and features, shared cheaply between samples.
#[derive(Debug, Clone)]
pub struct IntervalData {
    pub graph: Arc<FlowGraph>,
    pub features: Arc<NodeFeatureMatrix>,
}

/// All intervals of one platform over the global timeline, dense: entry i
/// is global interval i, with a zero graph where no trips occurred.
#[derive(Debug, Clone)]
pub struct IntervalSeries {
    pub platform: Platform,
    pub intervals: Vec<IntervalData>,
}

/// Expand edge-list rows into a dense series of `num_intervals` graphs.
pub fn build_series(
    rows: &[EdgeRow],
    registry: &ZoneRegistry,
    platform: Platform,
    num_intervals: usize,
) -> Result<IntervalSeries> {
    let mut by_interval: Vec<Vec<EdgeRow>> = vec![Vec::new(); num_intervals];
    for row in rows {
        if row.interval.0 >= num_intervals {
            return Err(Error::Data(format!(
                "edge row interval {} outside horizon of {num_intervals} intervals",
                row.interval.0
            )));
        }
        by_interval[row.interval.0].push(*row);
    }
    let mut intervals = Vec::with_capacity(num_intervals);
    for (i, group) in by_interval.iter().enumerate() {
        let graph = build_flow_graph(group, IntervalIndex(i), platform, registry)?;
        let features = node_features(&graph);
        intervals.push(IntervalData { graph: Arc::new(graph), features: Arc::new(features) });
    }
    Ok(IntervalSeries { platform, intervals })
}

/// Supervised example: predict taxi features at `target_index` from the k
/// preceding taxi intervals plus the auxiliary platform one day earlier.
#[derive(Debug, Clone)]
pub struct Sample {
    /// Taxi intervals T−k..T−1, oldest first.
    pub history: Vec<IntervalData>,
    /// Auxiliary platform at T−P (the same slot one day earlier).
    pub auxiliary: IntervalData,
    /// Taxi features at T, the prediction target.
    pub target: Arc<NodeFeatureMatrix>,
    pub target_index: IntervalIndex,
}

/// One sample per target index T ≥ max(k, P); history windows run on the
/// global timeline and may cross midnight. Both series must cover the same
/// index range.
pub fn make_samples(
    taxi: &IntervalSeries,
    aux: &IntervalSeries,
    k: usize,
    p: usize,
) -> Result<Vec<Sample>> {
    if taxi.intervals.len() != aux.intervals.len() {
        return Err(Error::Data(format!(
            "platform series lengths differ: taxi {} vs auxiliary {}",
            taxi.intervals.len(),
            aux.intervals.len()
        )));
    }
    if k == 0 {
        return Err(Error::Config("history length k must be at least 1".to_string()));
    }
    let start = k.max(p);
    let mut samples = Vec::new();
    for t in start..taxi.intervals.len() {
        samples.push(Sample {
            history: taxi.intervals[t - k..t].to_vec(),
            auxiliary: aux.intervals[t - p].clone(),
            target: taxi.intervals[t].features.clone(),
            target_index: IntervalIndex(t),
        });
    }
    Ok(samples)
}
