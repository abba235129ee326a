//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Tape`] records every operation of a forward pass as a node. Calling
//! [`Tape::backward`] on a scalar loss walks the nodes in reverse, filling
//! gradients. Parameters live outside the tape in a [`ParamStore`]; a tape
//! creates at most one leaf per parameter, and [`Tape::accumulate_grads`]
//! adds the leaf gradients back into the store so several tapes (one per
//! training sample) can contribute to a single optimizer step.
//!
//! Gradients of interior nodes are freed as soon as the reverse sweep has
//! consumed them; only leaves keep theirs.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::mat::Mat;

/// Handle to a node on a specific tape. Only valid for the tape that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

/// Handle to a parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named trainable parameters together with their gradient and optimizer
/// state. Gradients accumulate across tapes until [`ParamStore::zero_grads`].
#[derive(Clone)]
pub struct ParamStore {
    pub(crate) names: Vec<String>,
    pub(crate) values: Vec<Mat>,
    pub(crate) grads: Vec<Mat>,
    /// Adam first-moment estimates, one per parameter.
    pub(crate) moment1: Vec<Mat>,
    /// Adam second-moment estimates, one per parameter.
    pub(crate) moment2: Vec<Mat>,
    /// Number of optimizer steps taken, shared across all parameters.
    pub(crate) step: u64,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            moment1: Vec::new(),
            moment2: Vec::new(),
            step: 0,
            index: HashMap::new(),
        }
    }

    /// Register a parameter; panics if the name is already taken.
    pub fn add(&mut self, name: &str, value: Mat) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {:?}",
            name
        );
        let id = self.values.len();
        let (r, c) = value.shape();
        self.names.push(name.to_string());
        self.grads.push(Mat::zeros(r, c));
        self.moment1.push(Mat::zeros(r, c));
        self.moment2.push(Mat::zeros(r, c));
        self.values.push(value);
        self.index.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|m| m.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Mat {
        &self.grads[id.0]
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            *g = Mat::zeros(g.rows(), g.cols());
        }
    }

    /// Scale all gradients in place (used to average over a batch).
    pub fn scale_grads(&mut self, factor: f64) {
        for g in &mut self.grads {
            *g = g.scale(factor);
        }
    }

    /// Copy of all parameter values, in registration order.
    pub fn snapshot(&self) -> Vec<Mat> {
        self.values.clone()
    }

    /// Restore values from a [`ParamStore::snapshot`]; optimizer state is
    /// left untouched.
    pub fn restore(&mut self, snapshot: &[Mat]) {
        assert_eq!(
            snapshot.len(),
            self.values.len(),
            "snapshot has {} params, store has {}",
            snapshot.len(),
            self.values.len()
        );
        for (v, s) in self.values.iter_mut().zip(snapshot) {
            assert_eq!(v.shape(), s.shape(), "snapshot shape mismatch");
            *v = s.clone();
        }
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        ParamStore::new()
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(TensorId, TensorId),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    /// Add a 1xC bias row to every row of the left operand.
    AddRowBroadcast(TensorId, TensorId),
    Hadamard(TensorId, TensorId),
    Scale(TensorId, f64),
    AddScalar(TensorId),
    ConcatRows(Vec<TensorId>),
    SliceRows(TensorId, usize),
    Relu(TensorId),
    LeakyRelu(TensorId, f64),
    Sigmoid(TensorId),
    Tanh(TensorId),
    Transpose(TensorId),
    Reshape(TensorId),
    Sum(TensorId),
    /// Mask entries are pre-scaled by 1/keep (inverted dropout).
    Dropout(TensorId, Mat),
    /// Row-wise softmax over unmasked entries; masked entries output 0.
    MaskedSoftmaxRows(TensorId),
}

struct Node {
    value: Mat,
    grad: Option<Mat>,
    op: Op,
}

/// Records one forward pass. Build a fresh tape per forward; tapes are cheap.
pub struct Tape {
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, TensorId>,
    /// In eval mode dropout is the identity.
    eval: bool,
}

impl Tape {
    /// Tape for a training pass: dropout is active.
    pub fn train() -> Tape {
        Tape { nodes: Vec::new(), param_leaves: HashMap::new(), eval: false }
    }

    /// Tape for an inference pass: dropout is the identity.
    pub fn eval() -> Tape {
        Tape { nodes: Vec::new(), param_leaves: HashMap::new(), eval: true }
    }

    pub fn is_eval(&self) -> bool {
        self.eval
    }

    fn push(&mut self, value: Mat, op: Op) -> TensorId {
        self.nodes.push(Node { value, grad: None, op });
        TensorId(self.nodes.len() - 1)
    }

    /// Leaf with no parameter attached; receives a gradient but it is not
    /// accumulated anywhere.
    pub fn constant(&mut self, value: Mat) -> TensorId {
        self.push(value, Op::Leaf)
    }

    /// Leaf bound to a store parameter. Repeated calls with the same id
    /// return the same node so the gradient accumulates once.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> TensorId {
        if let Some(&t) = self.param_leaves.get(&id) {
            return t;
        }
        let t = self.push(store.value(id).clone(), Op::Param(id));
        self.param_leaves.insert(id, t);
        t
    }

    pub fn value(&self, t: TensorId) -> &Mat {
        &self.nodes[t.0].value
    }

    /// Gradient of a node, if backward has run and the node is a leaf
    /// (interior gradients are freed during the sweep).
    pub fn grad(&self, t: TensorId) -> Option<&Mat> {
        self.nodes[t.0].grad.as_ref()
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let v = self.nodes[a.0].value.matmul(&self.nodes[b.0].value);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let v = self.nodes[a.0].value.add(&self.nodes[b.0].value);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let v = self.nodes[a.0].value.sub(&self.nodes[b.0].value);
        self.push(v, Op::Sub(a, b))
    }

    /// `a + bias` where `bias` is a 1xC row added to every row of `a`.
    pub fn add_row(&mut self, a: TensorId, bias: TensorId) -> TensorId {
        let m = &self.nodes[a.0].value;
        let b = &self.nodes[bias.0].value;
        assert_eq!(
            (1, m.cols()),
            b.shape(),
            "add_row bias must be 1x{}, got {}x{}",
            m.cols(),
            b.rows(),
            b.cols()
        );
        let mut v = m.clone();
        for i in 0..v.rows() {
            for j in 0..v.cols() {
                v.set(i, j, v.get(i, j) + b.get(0, j));
            }
        }
        self.push(v, Op::AddRowBroadcast(a, bias))
    }

    pub fn hadamard(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let v = self.nodes[a.0].value.hadamard(&self.nodes[b.0].value);
        self.push(v, Op::Hadamard(a, b))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let v = self.nodes[a.0].value.scale(c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: TensorId, c: f64) -> TensorId {
        let v = self.nodes[a.0].value.map(|x| x + c);
        self.push(v, Op::AddScalar(a))
    }

    /// Stack inputs vertically; all must share a column count.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> TensorId {
        assert!(!parts.is_empty(), "concat_rows needs at least one input");
        let cols = self.nodes[parts[0].0].value.cols();
        let rows: usize = parts.iter().map(|p| self.nodes[p.0].value.rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            let m = &self.nodes[p.0].value;
            assert_eq!(
                m.cols(),
                cols,
                "concat_rows column mismatch: {} vs {}",
                cols,
                m.cols()
            );
            data.extend_from_slice(m.data());
        }
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    /// Rows `[start, end)` of the input.
    pub fn slice_rows(&mut self, a: TensorId, start: usize, end: usize) -> TensorId {
        let m = &self.nodes[a.0].value;
        assert!(
            start <= end && end <= m.rows(),
            "slice_rows [{start}, {end}) out of range for {} rows",
            m.rows()
        );
        let cols = m.cols();
        let data = m.data()[start * cols..end * cols].to_vec();
        self.push(Mat::from_vec(end - start, cols, data), Op::SliceRows(a, start))
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let v = self.nodes[a.0].value.map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: TensorId, slope: f64) -> TensorId {
        let v = self.nodes[a.0].value.map(|x| if x > 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let v = self.nodes[a.0].value.map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        let v = self.nodes[a.0].value.map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn transpose(&mut self, a: TensorId) -> TensorId {
        let v = self.nodes[a.0].value.transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: TensorId, rows: usize, cols: usize) -> TensorId {
        let v = self.nodes[a.0].value.reshaped(rows, cols);
        self.push(v, Op::Reshape(a))
    }

    /// Sum of all entries as a 1x1 tensor.
    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let v = Mat::scalar(self.nodes[a.0].value.sum());
        self.push(v, Op::Sum(a))
    }

    /// Mean of all entries as a 1x1 tensor.
    pub fn mean(&mut self, a: TensorId) -> TensorId {
        let n = self.nodes[a.0].value.len();
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Inverted dropout: keeps each entry with probability `1 - p` and
    /// rescales by `1/(1 - p)`, so the expected value is unchanged. The mask
    /// is drawn from `seed` alone, which keeps a repeated forward pass (and
    /// therefore numeric gradient checks) deterministic. Identity in eval
    /// mode or when `p == 0`.
    pub fn dropout(&mut self, a: TensorId, p: f64, seed: u64) -> TensorId {
        assert!((0.0..1.0).contains(&p), "dropout rate must be in [0, 1), got {p}");
        if self.eval || p == 0.0 {
            return a;
        }
        let (r, c) = self.nodes[a.0].value.shape();
        let keep = 1.0 - p;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut mask = Mat::zeros(r, c);
        for v in mask.data_mut() {
            if rng.random::<f64>() < keep {
                *v = 1.0 / keep;
            }
        }
        let v = self.nodes[a.0].value.hadamard(&mask);
        self.push(v, Op::Dropout(a, mask))
    }

    /// Row-wise softmax restricted to entries where `mask` is nonzero;
    /// masked entries come out as exactly 0. A fully masked row is all
    /// zeros. The mask is data, not a differentiable input.
    pub fn masked_softmax_rows(&mut self, a: TensorId, mask: &Mat) -> TensorId {
        let m = &self.nodes[a.0].value;
        assert_eq!(
            m.shape(),
            mask.shape(),
            "mask shape {}x{} does not match input {}x{}",
            mask.rows(),
            mask.cols(),
            m.rows(),
            m.cols()
        );
        let mut out = Mat::zeros(m.rows(), m.cols());
        for i in 0..m.rows() {
            let mut max = f64::NEG_INFINITY;
            for j in 0..m.cols() {
                if mask.get(i, j) != 0.0 {
                    max = max.max(m.get(i, j));
                }
            }
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut denom = 0.0;
            for j in 0..m.cols() {
                if mask.get(i, j) != 0.0 {
                    let e = (m.get(i, j) - max).exp();
                    out.set(i, j, e);
                    denom += e;
                }
            }
            for j in 0..m.cols() {
                out.set(i, j, out.get(i, j) / denom);
            }
        }
        self.push(out, Op::MaskedSoftmaxRows(a))
    }

    fn add_grad(&mut self, t: TensorId, g: &Mat) {
        let node = &mut self.nodes[t.0];
        match &mut node.grad {
            Some(existing) => existing.add_assign(g),
            None => node.grad = Some(g.clone()),
        }
    }

    /// Backpropagate from a scalar loss. Panics if `loss` is not 1x1 or if
    /// its value is non-finite; a non-finite loss means the forward pass has
    /// already diverged and gradients would be meaningless.
    pub fn backward(&mut self, loss: TensorId) {
        let lv = &self.nodes[loss.0].value;
        assert_eq!(
            lv.shape(),
            (1, 1),
            "backward requires a scalar loss, got {}x{}",
            lv.rows(),
            lv.cols()
        );
        assert!(lv.get(0, 0).is_finite(), "backward on non-finite loss {}", lv.get(0, 0));
        self.nodes[loss.0].grad = Some(Mat::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            // Values owned by the node are only read here, so a raw pointer
            // dance is avoided by cloning the small pieces we need.
            match &self.nodes[i].op {
                Op::Leaf | Op::Param(_) => {
                    self.nodes[i].grad = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let bt = self.nodes[b.0].value.transpose();
                    let at = self.nodes[a.0].value.transpose();
                    let ga = g.matmul(&bt);
                    let gb = at.matmul(&g);
                    self.add_grad(a, &ga);
                    self.add_grad(b, &gb);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.add_grad(a, &g);
                    self.add_grad(b, &g);
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    self.add_grad(a, &g);
                    let neg = g.scale(-1.0);
                    self.add_grad(b, &neg);
                }
                Op::AddRowBroadcast(a, bias) => {
                    let (a, bias) = (*a, *bias);
                    let col_sums = Mat::from_vec(1, g.cols(), g.col_sums());
                    self.add_grad(a, &g);
                    self.add_grad(bias, &col_sums);
                }
                Op::Hadamard(a, b) => {
                    let (a, b) = (*a, *b);
                    let ga = g.hadamard(&self.nodes[b.0].value);
                    let gb = g.hadamard(&self.nodes[a.0].value);
                    self.add_grad(a, &ga);
                    self.add_grad(b, &gb);
                }
                Op::Scale(a, c) => {
                    let (a, c) = (*a, *c);
                    let ga = g.scale(c);
                    self.add_grad(a, &ga);
                }
                Op::AddScalar(a) => {
                    let a = *a;
                    self.add_grad(a, &g);
                }
                Op::ConcatRows(parts) => {
                    let parts = parts.clone();
                    let cols = g.cols();
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.nodes[p.0].value.rows();
                        let slice = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        let gp = Mat::from_vec(rows, cols, slice);
                        self.add_grad(p, &gp);
                        offset += rows;
                    }
                }
                Op::SliceRows(a, start) => {
                    let (a, start) = (*a, *start);
                    let (r, c) = self.nodes[a.0].value.shape();
                    let mut ga = Mat::zeros(r, c);
                    ga.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    self.add_grad(a, &ga);
                }
                Op::Relu(a) => {
                    let a = *a;
                    let ga = g.zip(&self.nodes[a.0].value, |gv, x| if x > 0.0 { gv } else { 0.0 });
                    self.add_grad(a, &ga);
                }
                Op::LeakyRelu(a, slope) => {
                    let (a, slope) = (*a, *slope);
                    let ga = g
                        .zip(&self.nodes[a.0].value, |gv, x| if x > 0.0 { gv } else { slope * gv });
                    self.add_grad(a, &ga);
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    let ga = g.zip(&self.nodes[i].value, |gv, y| gv * y * (1.0 - y));
                    self.add_grad(a, &ga);
                }
                Op::Tanh(a) => {
                    let a = *a;
                    let ga = g.zip(&self.nodes[i].value, |gv, y| gv * (1.0 - y * y));
                    self.add_grad(a, &ga);
                }
                Op::Transpose(a) => {
                    let a = *a;
                    let ga = g.transpose();
                    self.add_grad(a, &ga);
                }
                Op::Reshape(a) => {
                    let a = *a;
                    let (r, c) = self.nodes[a.0].value.shape();
                    let ga = g.reshaped(r, c);
                    self.add_grad(a, &ga);
                }
                Op::Sum(a) => {
                    let a = *a;
                    let (r, c) = self.nodes[a.0].value.shape();
                    let ga = Mat::filled(r, c, g.get(0, 0));
                    self.add_grad(a, &ga);
                }
                Op::Dropout(a, mask) => {
                    let a = *a;
                    let ga = g.hadamard(mask);
                    self.add_grad(a, &ga);
                }
                Op::MaskedSoftmaxRows(a) => {
                    // d/dx_j = p_j * (g_j - sum_k g_k p_k), rows independent.
                    // Masked entries have p = 0, so no gradient leaks there.
                    let a = *a;
                    let p = &self.nodes[i].value;
                    let mut ga = Mat::zeros(p.rows(), p.cols());
                    for r in 0..p.rows() {
                        let dot: f64 =
                            (0..p.cols()).map(|c| g.get(r, c) * p.get(r, c)).sum();
                        for c in 0..p.cols() {
                            ga.set(r, c, p.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    self.add_grad(a, &ga);
                }
            }
            // Interior gradients are no longer needed once propagated.
        }
    }

    /// Add the gradients of this tape's parameter leaves into the store.
    /// Call after [`Tape::backward`].
    pub fn accumulate_grads(&self, store: &mut ParamStore) {
        for (&pid, &tid) in &self.param_leaves {
            if let Some(g) = &self.nodes[tid.0].grad {
                store.grads[pid.0].add_assign(g);
            }
        }
    }

    /// One line per node, for debugging forward graphs.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let name = match &n.op {
                Op::Leaf => "leaf".to_string(),
                Op::Param(p) => format!("param#{}", p.0),
                Op::MatMul(a, b) => format!("matmul({}, {})", a.0, b.0),
                Op::Add(a, b) => format!("add({}, {})", a.0, b.0),
                Op::Sub(a, b) => format!("sub({}, {})", a.0, b.0),
                Op::AddRowBroadcast(a, b) => format!("add_row({}, {})", a.0, b.0),
                Op::Hadamard(a, b) => format!("hadamard({}, {})", a.0, b.0),
                Op::Scale(a, c) => format!("scale({}, {})", a.0, c),
                Op::AddScalar(a) => format!("add_scalar({})", a.0),
                Op::ConcatRows(p) => {
                    format!("concat_rows({:?})", p.iter().map(|t| t.0).collect::<Vec<_>>())
                }
                Op::SliceRows(a, s) => format!("slice_rows({}, start={})", a.0, s),
                Op::Relu(a) => format!("relu({})", a.0),
                Op::LeakyRelu(a, s) => format!("leaky_relu({}, {})", a.0, s),
                Op::Sigmoid(a) => format!("sigmoid({})", a.0),
                Op::Tanh(a) => format!("tanh({})", a.0),
                Op::Transpose(a) => format!("transpose({})", a.0),
                Op::Reshape(a) => format!("reshape({})", a.0),
                Op::Sum(a) => format!("sum({})", a.0),
                Op::Dropout(a, _) => format!("dropout({})", a.0),
                Op::MaskedSoftmaxRows(a) => format!("masked_softmax_rows({})", a.0),
            };
            let (r, c) = n.value.shape();
            let _ = writeln!(out, "[{i:>4}] {name:<28} {r}x{c}");
        }
        out
    }
}

/// Result of comparing analytic gradients against central differences.
#[derive(Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat entry index where the worst error occurred.
    pub worst: String,
}

/// Run `build` once on a fresh training tape and return the scalar loss value.
pub fn eval_loss(
    store: &ParamStore,
    build: &mut impl FnMut(&mut Tape, &ParamStore) -> TensorId,
) -> f64 {
    let mut tape = Tape::train();
    let loss = build(&mut tape, store);
    let v = tape.value(loss);
    assert_eq!(v.shape(), (1, 1), "loss must be scalar");
    v.get(0, 0)
}

/// Compare backward-pass gradients against central differences with step
/// `1e-5` for every parameter entry in the store. `build` must be
/// deterministic given the store (fixed dropout seeds), since it runs once
/// per perturbed entry. Relative error is `|a - n| / max(1, |n|)`.
pub fn grad_check(
    store: &mut ParamStore,
    mut build: impl FnMut(&mut Tape, &ParamStore) -> TensorId,
) -> GradCheckReport {
    store.zero_grads();
    {
        let mut tape = Tape::train();
        let loss = build(&mut tape, store);
        tape.backward(loss);
        tape.accumulate_grads(store);
    }

    let h = 1e-5;
    let mut max_rel_err = 0.0;
    let mut worst = String::from("(no parameters)");
    for pid in 0..store.len() {
        for k in 0..store.values[pid].len() {
            let orig = store.values[pid].data()[k];
            store.values[pid].data_mut()[k] = orig + h;
            let up = eval_loss(store, &mut build);
            store.values[pid].data_mut()[k] = orig - h;
            let down = eval_loss(store, &mut build);
            store.values[pid].data_mut()[k] = orig;

            let numeric = (up - down) / (2.0 * h);
            let analytic = store.grads[pid].data()[k];
            let rel = (analytic - numeric).abs() / numeric.abs().max(1.0);
            if rel > max_rel_err {
                max_rel_err = rel;
                worst = format!(
                    "{}[{}]: analytic {:.6e}, numeric {:.6e}",
                    store.names[pid], k, analytic, numeric
                );
            }
        }
    }
    GradCheckReport { max_rel_err, worst }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, m: Mat) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add(name, m);
        (store, id)
    }

    #[test]
    fn grad_of_sum_of_squares_is_two_w() {
        let w = Mat::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]);
        let (mut store, id) = store_with("w", w.clone());

        let mut tape = Tape::train();
        let wt = tape.param(&store, id);
        let sq = tape.hadamard(wt, wt);
        let loss = tape.sum(sq);
        tape.backward(loss);
        tape.accumulate_grads(&mut store);

        assert_eq!(*store.grad(id), w.scale(2.0));
    }

    #[test]
    fn grad_of_sum_of_matmul_is_ones_times_b_transposed() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = Mat::from_rows(&[vec![5.0, 6.0, 7.0], vec![8.0, 9.0, 10.0]]);

        let mut tape = Tape::train();
        let at = tape.constant(a);
        let bt = tape.constant(b.clone());
        let prod = tape.matmul(at, bt);
        let loss = tape.sum(prod);
        tape.backward(loss);

        let expected = Mat::filled(2, 3, 1.0).matmul(&b.transpose());
        assert_eq!(tape.grad(at).unwrap(), &expected);
    }

    #[test]
    fn param_leaf_is_deduplicated() {
        let (mut store, id) = store_with("w", Mat::from_rows(&[vec![1.0, 2.0]]));

        let mut tape = Tape::train();
        let w1 = tape.param(&store, id);
        let w2 = tape.param(&store, id);
        assert_eq!(w1, w2);

        // loss = sum(w + w) so dL/dw = 2 for every entry.
        let doubled = tape.add(w1, w2);
        let loss = tape.sum(doubled);
        tape.backward(loss);
        tape.accumulate_grads(&mut store);
        assert_eq!(*store.grad(id), Mat::filled(1, 2, 2.0));
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let (mut store, id) = store_with(
            "w",
            Mat::from_rows(&[vec![0.3, -1.2], vec![2.0, 0.7]]),
        );

        let run = |store: &mut ParamStore, factor: f64| {
            store.zero_grads();
            let mut tape = Tape::train();
            let w = tape.param(store, id);
            let t = tape.tanh(w);
            let s = tape.sum(t);
            let loss = tape.scale(s, factor);
            tape.backward(loss);
            tape.accumulate_grads(store);
            store.grad(id).clone()
        };

        let g1 = run(&mut store, 1.0);
        let g3 = run(&mut store, 3.0);
        assert!(g3.max_abs_diff(&g1.scale(3.0)) < 1e-12);
    }

    #[test]
    fn smooth_ops_pass_grad_check() {
        let mut store = ParamStore::new();
        let w = store.add("w", Mat::from_rows(&[vec![0.4, -0.9], vec![1.3, 0.2]]));
        let b = store.add("b", Mat::from_rows(&[vec![0.1, -0.2]]));

        let report = grad_check(&mut store, |tape, store| {
            let wt = tape.param(store, w);
            let bt = tape.param(store, b);
            let x = tape.constant(Mat::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.3]]));
            let wx = tape.matmul(x, wt);
            let shifted = tape.add_row(wx, bt);
            let s = tape.sigmoid(shifted);
            let t = tape.tanh(s);
            let trans = tape.transpose(t);
            let sq = tape.hadamard(trans, trans);
            let flat = tape.reshape(sq, 1, 4);
            let scaled = tape.scale(flat, 0.7);
            let shifted2 = tape.add_scalar(scaled, 0.25);
            tape.mean(shifted2)
        });
        assert!(report.max_rel_err < 1e-6, "worst: {}", report.worst);
    }

    #[test]
    fn structural_ops_pass_grad_check() {
        let mut store = ParamStore::new();
        let a = store.add("a", Mat::from_rows(&[vec![0.5, -0.3], vec![0.9, 1.1]]));
        let b = store.add("b", Mat::from_rows(&[vec![-0.8, 0.6]]));

        let report = grad_check(&mut store, |tape, store| {
            let at = tape.param(store, a);
            let bt = tape.param(store, b);
            let stacked = tape.concat_rows(&[at, bt, at]);
            let mid = tape.slice_rows(stacked, 1, 4);
            let diff = {
                let top = tape.slice_rows(mid, 0, 1);
                let rest = tape.slice_rows(mid, 1, 2);
                tape.sub(top, rest)
            };
            let sq = tape.hadamard(diff, diff);
            let s1 = tape.sum(sq);
            let s2 = tape.sum(mid);
            let total = tape.add(s1, s2);
            tape.scale(total, 0.5)
        });
        assert!(report.max_rel_err < 1e-6, "worst: {}", report.worst);
    }

    #[test]
    fn piecewise_ops_pass_grad_check_away_from_kinks() {
        let mut store = ParamStore::new();
        // Entries chosen well away from 0 so the central difference never
        // straddles the relu kink.
        let w = store.add("w", Mat::from_rows(&[vec![0.7, -0.6], vec![-1.4, 2.0]]));

        let report = grad_check(&mut store, |tape, store| {
            let wt = tape.param(store, w);
            let r = tape.relu(wt);
            let l = tape.leaky_relu(wt, 0.2);
            let d = tape.dropout(wt, 0.4, 77);
            let combined = tape.add(r, l);
            let combined = tape.add(combined, d);
            tape.sum(combined)
        });
        assert!(report.max_rel_err < 1e-4, "worst: {}", report.worst);
    }

    #[test]
    fn masked_softmax_passes_grad_check() {
        let mut store = ParamStore::new();
        let w = store.add(
            "scores",
            Mat::from_rows(&[vec![0.3, -0.7, 1.2], vec![0.9, 0.1, -0.4]]),
        );
        let mask = Mat::from_rows(&[vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 1.0]]);
        let weights = Mat::from_rows(&[vec![0.5, 1.5, -0.3], vec![1.0, -0.7, 0.2]]);

        let report = grad_check(&mut store, move |tape, store| {
            let wt = tape.param(store, w);
            let p = tape.masked_softmax_rows(wt, &mask);
            let c = tape.constant(weights.clone());
            let weighted = tape.hadamard(p, c);
            tape.sum(weighted)
        });
        assert!(report.max_rel_err < 1e-6, "worst: {}", report.worst);
    }

    #[test]
    fn masked_softmax_rows_sum_to_one_over_allowed_entries() {
        let mut tape = Tape::train();
        let x = tape.constant(Mat::from_rows(&[
            vec![10.0, 0.0, -5.0],
            vec![1.0, 2.0, 3.0],
        ]));
        let mask = Mat::from_rows(&[vec![1.0, 0.0, 1.0], vec![0.0, 0.0, 0.0]]);
        let p = tape.masked_softmax_rows(x, &mask);
        let v = tape.value(p);
        assert!((v.get(0, 0) + v.get(0, 2) - 1.0).abs() < 1e-12);
        assert_eq!(v.get(0, 1), 0.0);
        // A fully masked row stays all-zero rather than producing NaNs.
        assert_eq!(v.row(1), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn grad_check_detects_a_missing_gradient_path() {
        // The loss is w ⊙ c where c is a plain constant holding a copy of
        // w's current value. Analytically only the w path contributes, but
        // the numeric probe re-evaluates the closure and sees both copies
        // move, so the check must report a large error.
        let (mut store, id) = store_with("w", Mat::from_rows(&[vec![1.0, -1.5]]));
        let report = grad_check(&mut store, |tape, store| {
            let w = tape.param(store, id);
            let c = tape.constant(store.value(id).clone());
            let prod = tape.hadamard(w, c);
            tape.sum(prod)
        });
        assert!(report.max_rel_err > 1e-2, "worst: {}", report.worst);
    }

    #[test]
    fn dropout_is_seed_deterministic() {
        let x = Mat::filled(4, 5, 1.0);
        let run = |seed: u64| {
            let mut tape = Tape::train();
            let xt = tape.constant(x.clone());
            let d = tape.dropout(xt, 0.5, seed);
            tape.value(d).clone()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
        // Inverted dropout at p = 0.5: survivors are scaled to exactly 2.
        for &v in run(42).data() {
            assert!(v == 0.0 || v == 2.0, "unexpected dropout output {v}");
        }
    }

    #[test]
    fn dropout_is_identity_in_eval_mode() {
        let x = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let mut tape = Tape::eval();
        let xt = tape.constant(x.clone());
        let d = tape.dropout(xt, 0.9, 7);
        assert_eq!(d, xt);
        assert_eq!(tape.value(d), &x);
    }

    #[test]
    #[should_panic(expected = "backward requires a scalar loss")]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::train();
        let x = tape.constant(Mat::zeros(2, 2));
        tape.backward(x);
    }

    #[test]
    #[should_panic(expected = "matmul shape mismatch")]
    fn tape_matmul_rejects_mismatched_shapes() {
        let mut tape = Tape::train();
        let a = tape.constant(Mat::zeros(2, 3));
        let b = tape.constant(Mat::zeros(2, 3));
        let _ = tape.matmul(a, b);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn param_store_rejects_duplicate_names() {
        let mut store = ParamStore::new();
        store.add("w", Mat::zeros(1, 1));
        store.add("w", Mat::zeros(1, 1));
    }

    #[test]
    fn snapshot_and_restore_round_trip() {
        let (mut store, id) = store_with("w", Mat::from_rows(&[vec![1.0, 2.0]]));
        let snap = store.snapshot();
        store.value_mut(id).data_mut()[0] = 99.0;
        store.restore(&snap);
        assert_eq!(store.value(id).get(0, 0), 1.0);
    }
}
