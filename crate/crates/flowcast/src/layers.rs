//! Neural building blocks on top of the autodiff tape: dense layers, three
//! graph-convolution flavors, and three recurrent cells.
//!
//! A layer owns [`ParamId`] handles into a shared [`ParamStore`] plus its
//! dimensions; `forward`/`step` record the computation on a caller-provided
//! [`Tape`]. Weights are Glorot-uniform, biases zero.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, TensorId};
use crate::mat::Mat;

/// Negative-slope constant for the attention layer's score nonlinearity.
const ATTENTION_LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

/// Glorot-uniform initialization: U[-limit, limit] with
/// limit = sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut ChaCha12Rng) -> Mat {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = Mat::zeros(rows, cols);
    for v in m.data_mut() {
        *v = rng.random_range(-limit..limit);
    }
    m
}

/// Fully connected layer: activation(X·W + b), bias broadcast over rows.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
    ) -> Dense {
        let w = store.add(&format!("{name}.w"), glorot_uniform(in_dim, out_dim, rng));
        let b = store.add(&format!("{name}.b"), Mat::zeros(1, out_dim));
        Dense { w, b, in_dim, out_dim, activation }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: TensorId) -> TensorId {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let xw = tape.matmul(x, w);
        let z = tape.add_row(xw, b);
        match self.activation {
            Activation::Relu => tape.relu(z),
            Activation::Linear => z,
        }
    }
}

/// Graph convolution: relu(Â·H·W + b), where Â comes from
/// [`crate::graphbuild::normalize_adjacency`].
#[derive(Debug, Clone)]
pub struct GraphConv {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl GraphConv {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> GraphConv {
        let w = store.add(&format!("{name}.w"), glorot_uniform(in_dim, out_dim, rng));
        let b = store.add(&format!("{name}.b"), Mat::zeros(1, out_dim));
        GraphConv { w, b, in_dim, out_dim }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        norm_adj: TensorId,
        h: TensorId,
    ) -> TensorId {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let ah = tape.matmul(norm_adj, h);
        let ahw = tape.matmul(ah, w);
        let z = tape.add_row(ahw, b);
        tape.relu(z)
    }
}

/// Chebyshev-polynomial graph convolution of order K:
/// relu(Σ_{k=0}^{K-1} T_k(L̃)·H·W_k + b) with T_0 = I, T_1 = L̃ and
/// T_k = 2·L̃·T_{k-1} − T_{k-2}. The k = 0 term skips the identity product,
/// so K = 1 is bit-for-bit a relu [`Dense`] layer on H.
#[derive(Debug, Clone)]
pub struct ChebConv {
    pub ws: Vec<ParamId>,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl ChebConv {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        order: usize,
    ) -> ChebConv {
        assert!(order >= 1, "Chebyshev order must be at least 1");
        let ws = (0..order)
            .map(|k| store.add(&format!("{name}.w{k}"), glorot_uniform(in_dim, out_dim, rng)))
            .collect();
        let b = store.add(&format!("{name}.b"), Mat::zeros(1, out_dim));
        ChebConv { ws, b, in_dim, out_dim }
    }

    pub fn order(&self) -> usize {
        self.ws.len()
    }

    /// `scaled_lap` is L̃ = L − I = −Â for normalized L with λ_max ≈ 2.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        scaled_lap: TensorId,
        h: TensorId,
    ) -> TensorId {
        let b = tape.param(store, self.b);

        let w0 = tape.param(store, self.ws[0]);
        let mut acc = tape.matmul(h, w0);
        if self.ws.len() > 1 {
            // t_prev/t_curr track T_{k-1}·H and T_k·H directly; carrying the
            // H product through the recurrence avoids M×M polynomial terms.
            let mut t_prev = h;
            let mut t_curr = tape.matmul(scaled_lap, h);
            for (k, &wk) in self.ws.iter().enumerate().skip(1) {
                let w = tape.param(store, wk);
                let term = tape.matmul(t_curr, w);
                acc = tape.add(acc, term);
                if k + 1 < self.ws.len() {
                    let lt = tape.matmul(scaled_lap, t_curr);
                    let two_lt = tape.scale(lt, 2.0);
                    let t_next = tape.sub(two_lt, t_prev);
                    t_prev = t_curr;
                    t_curr = t_next;
                }
            }
        }
        let z = tape.add_row(acc, b);
        tape.relu(z)
    }
}

/// Single-head graph attention: scores e_ij = leaky_relu((W h_i)·a_src +
/// (W h_j)·a_dst), masked to the symmetrized edge set plus self-loops,
/// normalized by a row softmax, output relu(α·H·W). Attention uses
/// connectivity only; edge weights do not enter the scores.
#[derive(Debug, Clone)]
pub struct GraphAttention {
    pub w: ParamId,
    pub a_src: ParamId,
    pub a_dst: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl GraphAttention {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> GraphAttention {
        let w = store.add(&format!("{name}.w"), glorot_uniform(in_dim, out_dim, rng));
        let a_src = store.add(&format!("{name}.a_src"), glorot_uniform(out_dim, 1, rng));
        let a_dst = store.add(&format!("{name}.a_dst"), glorot_uniform(out_dim, 1, rng));
        GraphAttention { w, a_src, a_dst, in_dim, out_dim }
    }

    /// `mask` from [`attention_mask`]: nonzero where attention is allowed.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mask: &Mat,
        h: TensorId,
    ) -> TensorId {
        let m = tape.value(h).rows();
        let w = tape.param(store, self.w);
        let a_src = tape.param(store, self.a_src);
        let a_dst = tape.param(store, self.a_dst);

        let wh = tape.matmul(h, w);
        let src = tape.matmul(wh, a_src);
        let dst = tape.matmul(wh, a_dst);

        // e_ij = src_i + dst_j via two rank-one products against ones.
        let ones_row = tape.constant(Mat::filled(1, m, 1.0));
        let ones_col = tape.constant(Mat::filled(m, 1, 1.0));
        let src_grid = tape.matmul(src, ones_row);
        let dst_t = tape.transpose(dst);
        let dst_grid = tape.matmul(ones_col, dst_t);
        let scores = tape.add(src_grid, dst_grid);
        let scores = tape.leaky_relu(scores, ATTENTION_LEAKY_SLOPE);

        let alpha = tape.masked_softmax_rows(scores, mask);
        let out = tape.matmul(alpha, wh);
        tape.relu(out)
    }
}

/// Attention mask from a raw directed adjacency: entry (i, j) is 1 where
/// A(i,j) + A(j,i) > 0 or i = j, else 0.
pub fn attention_mask(adjacency: &Mat) -> Mat {
    let m = adjacency.rows();
    assert_eq!(m, adjacency.cols(), "adjacency must be square");
    let mut mask = Mat::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            if i == j || adjacency.get(i, j) + adjacency.get(j, i) > 0.0 {
                mask.set(i, j, 1.0);
            }
        }
    }
    mask
}

/// Elman cell: h' = tanh(x·W_x + h·W_h + b).
#[derive(Debug, Clone)]
pub struct RnnCell {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl RnnCell {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        in_dim: usize,
        hidden: usize,
    ) -> RnnCell {
        RnnCell {
            w_x: store.add(&format!("{name}.w_x"), glorot_uniform(in_dim, hidden, rng)),
            w_h: store.add(&format!("{name}.w_h"), glorot_uniform(hidden, hidden, rng)),
            b: store.add(&format!("{name}.b"), Mat::zeros(1, hidden)),
            in_dim,
            hidden,
        }
    }

    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: TensorId,
        h: TensorId,
    ) -> TensorId {
        assert_eq!(tape.value(h).cols(), self.hidden, "hidden state width mismatch");
        let w_x = tape.param(store, self.w_x);
        let w_h = tape.param(store, self.w_h);
        let b = tape.param(store, self.b);
        let xp = tape.matmul(x, w_x);
        let hp = tape.matmul(h, w_h);
        let s = tape.add(xp, hp);
        let z = tape.add_row(s, b);
        tape.tanh(z)
    }
}

/// Gated recurrent unit:
/// z = σ(x·W_xz + h·W_hz + b_z), r = σ(x·W_xr + h·W_hr + b_r),
/// h̃ = tanh(x·W_xh + (r ⊙ h)·W_hh + b_h), h' = (1 − z) ⊙ h + z ⊙ h̃.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_xz: ParamId,
    pub w_hz: ParamId,
    pub b_z: ParamId,
    pub w_xr: ParamId,
    pub w_hr: ParamId,
    pub b_r: ParamId,
    pub w_xh: ParamId,
    pub w_hh: ParamId,
    pub b_h: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        in_dim: usize,
        hidden: usize,
    ) -> GruCell {
        let mut gate = |gate_name: &str, rows: usize| {
            store.add(&format!("{name}.{gate_name}"), glorot_uniform(rows, hidden, rng))
        };
        let w_xz = gate("w_xz", in_dim);
        let w_hz = gate("w_hz", hidden);
        let w_xr = gate("w_xr", in_dim);
        let w_hr = gate("w_hr", hidden);
        let w_xh = gate("w_xh", in_dim);
        let w_hh = gate("w_hh", hidden);
        let b_z = store.add(&format!("{name}.b_z"), Mat::zeros(1, hidden));
        let b_r = store.add(&format!("{name}.b_r"), Mat::zeros(1, hidden));
        let b_h = store.add(&format!("{name}.b_h"), Mat::zeros(1, hidden));
        GruCell { w_xz, w_hz, b_z, w_xr, w_hr, b_r, w_xh, w_hh, b_h, in_dim, hidden }
    }

    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: TensorId,
        h: TensorId,
    ) -> TensorId {
        assert_eq!(tape.value(h).cols(), self.hidden, "hidden state width mismatch");
        let gate = |tape: &mut Tape, w_x, w_h, b, x, h| {
            let wx = tape.param(store, w_x);
            let wh = tape.param(store, w_h);
            let bb = tape.param(store, b);
            let xp = tape.matmul(x, wx);
            let hp = tape.matmul(h, wh);
            let s = tape.add(xp, hp);
            tape.add_row(s, bb)
        };
        let z = gate(tape, self.w_xz, self.w_hz, self.b_z, x, h);
        let z = tape.sigmoid(z);
        let r = gate(tape, self.w_xr, self.w_hr, self.b_r, x, h);
        let r = tape.sigmoid(r);
        let rh = tape.hadamard(r, h);
        let cand = gate(tape, self.w_xh, self.w_hh, self.b_h, x, rh);
        let cand = tape.tanh(cand);

        // h' = (1 - z) ⊙ h + z ⊙ h̃
        let neg_z = tape.scale(z, -1.0);
        let one_minus_z = tape.add_scalar(neg_z, 1.0);
        let keep = tape.hadamard(one_minus_z, h);
        let update = tape.hadamard(z, cand);
        tape.add(keep, update)
    }
}

/// Long short-term memory cell:
/// i/f/o = σ(x·W_x· + h·W_h· + b·), c̃ = tanh(x·W_xc + h·W_hc + b_c),
/// c' = f ⊙ c + i ⊙ c̃, h' = o ⊙ tanh(c').
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w_xi: ParamId,
    pub w_hi: ParamId,
    pub b_i: ParamId,
    pub w_xf: ParamId,
    pub w_hf: ParamId,
    pub b_f: ParamId,
    pub w_xo: ParamId,
    pub w_ho: ParamId,
    pub b_o: ParamId,
    pub w_xc: ParamId,
    pub w_hc: ParamId,
    pub b_c: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

/// Hidden and cell state carried between [`LstmCell::step`]s.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: TensorId,
    pub c: TensorId,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        in_dim: usize,
        hidden: usize,
    ) -> LstmCell {
        let mut weight = |suffix: &str, rows: usize| {
            store.add(&format!("{name}.{suffix}"), glorot_uniform(rows, hidden, rng))
        };
        let w_xi = weight("w_xi", in_dim);
        let w_hi = weight("w_hi", hidden);
        let w_xf = weight("w_xf", in_dim);
        let w_hf = weight("w_hf", hidden);
        let w_xo = weight("w_xo", in_dim);
        let w_ho = weight("w_ho", hidden);
        let w_xc = weight("w_xc", in_dim);
        let w_hc = weight("w_hc", hidden);
        let b_i = store.add(&format!("{name}.b_i"), Mat::zeros(1, hidden));
        let b_f = store.add(&format!("{name}.b_f"), Mat::zeros(1, hidden));
        let b_o = store.add(&format!("{name}.b_o"), Mat::zeros(1, hidden));
        let b_c = store.add(&format!("{name}.b_c"), Mat::zeros(1, hidden));
        LstmCell {
            w_xi, w_hi, b_i,
            w_xf, w_hf, b_f,
            w_xo, w_ho, b_o,
            w_xc, w_hc, b_c,
            in_dim,
            hidden,
        }
    }

    pub fn zero_state(&self, tape: &mut Tape) -> LstmState {
        LstmState {
            h: tape.constant(Mat::zeros(1, self.hidden)),
            c: tape.constant(Mat::zeros(1, self.hidden)),
        }
    }

    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: TensorId,
        state: LstmState,
    ) -> LstmState {
        assert_eq!(tape.value(state.h).cols(), self.hidden, "hidden state width mismatch");
        assert_eq!(tape.value(state.c).cols(), self.hidden, "cell state width mismatch");
        let gate = |tape: &mut Tape, w_x, w_h, b| {
            let wx = tape.param(store, w_x);
            let wh = tape.param(store, w_h);
            let bb = tape.param(store, b);
            let xp = tape.matmul(x, wx);
            let hp = tape.matmul(state.h, wh);
            let s = tape.add(xp, hp);
            tape.add_row(s, bb)
        };
        let i = gate(tape, self.w_xi, self.w_hi, self.b_i);
        let i = tape.sigmoid(i);
        let f = gate(tape, self.w_xf, self.w_hf, self.b_f);
        let f = tape.sigmoid(f);
        let o = gate(tape, self.w_xo, self.w_ho, self.b_o);
        let o = tape.sigmoid(o);
        let cand = gate(tape, self.w_xc, self.w_hc, self.b_c);
        let cand = tape.tanh(cand);

        let keep = tape.hadamard(f, state.c);
        let write = tape.hadamard(i, cand);
        let c = tape.add(keep, write);
        let ct = tape.tanh(c);
        let h = tape.hadamard(o, ct);
        LstmState { h, c }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use rand::SeedableRng;

    fn rng() -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(99)
    }

    fn random_mat(rows: usize, cols: usize, rng: &mut ChaCha12Rng) -> Mat {
        let mut m = Mat::zeros(rows, cols);
        for v in m.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        m
    }

    #[test]
    fn dense_identity_weights_pass_input_through() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let fc = Dense::new(&mut store, &mut r, "fc", 3, 3, Activation::Linear);
        *store.value_mut(fc.w) = Mat::eye(3);

        let mut tape = Tape::eval();
        let x = tape.constant(Mat::from_rows(&[vec![1.0, -2.0, 3.0]]));
        let y = fc.forward(&mut tape, &store, x);
        assert_eq!(tape.value(y), &Mat::from_rows(&[vec![1.0, -2.0, 3.0]]));
    }

    #[test]
    fn dense_relu_matches_hand_arithmetic() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let fc = Dense::new(&mut store, &mut r, "fc", 2, 2, Activation::Relu);
        *store.value_mut(fc.w) = Mat::eye(2);
        *store.value_mut(fc.b) = Mat::from_rows(&[vec![1.0, 1.0]]);

        let mut tape = Tape::eval();
        let x = tape.constant(Mat::from_rows(&[vec![1.0, 2.0]]));
        let y = fc.forward(&mut tape, &store, x);
        assert_eq!(tape.value(y), &Mat::from_rows(&[vec![2.0, 3.0]]));
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let fc = Dense::new(&mut store, &mut r, "fc", 3, 2, Activation::Linear);
        let x = random_mat(4, 3, &mut r);

        let report = grad_check(&mut store, move |tape, store| {
            let xt = tape.constant(x.clone());
            let y = fc.forward(tape, store, xt);
            let sq = tape.hadamard(y, y);
            tape.mean(sq)
        });
        assert!(report.max_rel_err < 1e-6, "worst: {}", report.worst);
    }

    #[test]
    fn gcn_identity_propagation_is_a_noop_for_nonnegative_input() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let gcn = GraphConv::new(&mut store, &mut r, "gcn", 2, 2);
        *store.value_mut(gcn.w) = Mat::eye(2);

        let h = Mat::from_rows(&[vec![1.0, 0.5], vec![2.0, 3.0]]);
        let mut tape = Tape::eval();
        let adj = tape.constant(Mat::eye(2));
        let ht = tape.constant(h.clone());
        let y = gcn.forward(&mut tape, &store, adj, ht);
        assert_eq!(tape.value(y), &h);
    }

    #[test]
    fn gcn_matches_hand_computation_on_two_nodes() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let gcn = GraphConv::new(&mut store, &mut r, "gcn", 1, 1);
        *store.value_mut(gcn.w) = Mat::scalar(1.0);

        let mut tape = Tape::eval();
        let adj = tape.constant(Mat::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]));
        let h = tape.constant(Mat::from_rows(&[vec![2.0], vec![4.0]]));
        let y = gcn.forward(&mut tape, &store, adj, h);
        assert_eq!(tape.value(y), &Mat::from_rows(&[vec![3.0], vec![3.0]]));
    }

    #[test]
    fn gcn_is_permutation_equivariant() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let gcn = GraphConv::new(&mut store, &mut r, "gcn", 2, 3);
        let m = 5;
        let adj = {
            let raw = random_mat(m, m, &mut r).map(|x| if x > 0.3 { 1.0 } else { 0.0 });
            crate::graphbuild::normalize_adjacency(&raw)
        };
        let h = random_mat(m, 2, &mut r);
        let perm = [3usize, 0, 4, 1, 2];

        let permuted = |mat: &Mat, rows: bool, cols: bool| {
            let mut out = Mat::zeros(mat.rows(), mat.cols());
            for i in 0..mat.rows() {
                for j in 0..mat.cols() {
                    let pi = if rows { perm[i] } else { i };
                    let pj = if cols { perm[j] } else { j };
                    out.set(pi, pj, mat.get(i, j));
                }
            }
            out
        };

        let run = |adj: Mat, h: Mat| {
            let mut tape = Tape::eval();
            let a = tape.constant(adj);
            let x = tape.constant(h);
            let y = gcn.forward(&mut tape, &store, a, x);
            tape.value(y).clone()
        };

        let base = run(adj.clone(), h.clone());
        let shuffled = run(permuted(&adj, true, true), permuted(&h, true, false));
        assert!(permuted(&base, true, false).max_abs_diff(&shuffled) < 1e-12);
    }

    #[test]
    fn cheb_order_one_equals_a_relu_dense_layer_exactly() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let cheb = ChebConv::new(&mut store, &mut r, "cheb", 2, 3, 1);
        let fc = Dense::new(&mut store, &mut r, "fc", 2, 3, Activation::Relu);
        let shared_w = random_mat(2, 3, &mut r);
        let shared_b = random_mat(1, 3, &mut r);
        *store.value_mut(cheb.ws[0]) = shared_w.clone();
        *store.value_mut(fc.w) = shared_w;
        *store.value_mut(cheb.b) = shared_b.clone();
        *store.value_mut(fc.b) = shared_b;

        let h = random_mat(4, 2, &mut r);
        let lap = random_mat(4, 4, &mut r);
        let mut tape = Tape::eval();
        let ht = tape.constant(h);
        let lt = tape.constant(lap);
        let via_cheb = cheb.forward(&mut tape, &store, lt, ht);
        let via_fc = fc.forward(&mut tape, &store, ht);
        assert_eq!(tape.value(via_cheb), tape.value(via_fc));
    }

    #[test]
    fn cheb_zero_laplacian_drops_the_odd_terms() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let cheb = ChebConv::new(&mut store, &mut r, "cheb", 2, 2, 2);
        let h = random_mat(3, 2, &mut r);

        // With L̃ = 0 the T_1 term vanishes, leaving only H·W_0 + b.
        let mut tape = Tape::eval();
        let lap = tape.constant(Mat::zeros(3, 3));
        let ht = tape.constant(h.clone());
        let y = cheb.forward(&mut tape, &store, lap, ht);

        let expected = {
            let z = h.matmul(store.value(cheb.ws[0]));
            let mut with_bias = z.clone();
            for i in 0..with_bias.rows() {
                for j in 0..with_bias.cols() {
                    with_bias.set(i, j, z.get(i, j) + store.value(cheb.b).get(0, j));
                }
            }
            with_bias.map(|x| x.max(0.0))
        };
        assert!(tape.value(y).max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn cheb_recurrence_matches_explicit_second_order_polynomial() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let cheb = ChebConv::new(&mut store, &mut r, "cheb", 2, 2, 3);
        let h = random_mat(4, 2, &mut r);
        let lap = random_mat(4, 4, &mut r);

        let mut tape = Tape::eval();
        let lt = tape.constant(lap.clone());
        let ht = tape.constant(h.clone());
        let y = cheb.forward(&mut tape, &store, lt, ht);

        // Oracle: T_0 = I, T_1 = L̃, T_2 = 2·L̃² − I evaluated directly.
        let t2 = lap.matmul(&lap).scale(2.0).sub(&Mat::eye(4));
        let mut z = h.matmul(store.value(cheb.ws[0]));
        z.add_assign(&lap.matmul(&h).matmul(store.value(cheb.ws[1])));
        z.add_assign(&t2.matmul(&h).matmul(store.value(cheb.ws[2])));
        for i in 0..z.rows() {
            for j in 0..z.cols() {
                z.set(i, j, (z.get(i, j) + store.value(cheb.b).get(0, j)).max(0.0));
            }
        }
        assert!(tape.value(y).max_abs_diff(&z) < 1e-12);
    }

    #[test]
    fn cheb_gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let cheb = ChebConv::new(&mut store, &mut r, "cheb", 2, 2, 3);
        let h = random_mat(4, 2, &mut r);
        let lap = random_mat(4, 4, &mut r);

        let report = grad_check(&mut store, move |tape, store| {
            let lt = tape.constant(lap.clone());
            let ht = tape.constant(h.clone());
            let y = cheb.forward(tape, store, lt, ht);
            let sq = tape.hadamard(y, y);
            tape.mean(sq)
        });
        assert!(report.max_rel_err < 1e-4, "worst: {}", report.worst);
    }

    #[test]
    fn isolated_node_attends_only_to_itself() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let gat = GraphAttention::new(&mut store, &mut r, "gat", 2, 3);
        let h = random_mat(1, 2, &mut r);

        let mut tape = Tape::eval();
        let ht = tape.constant(h.clone());
        let mask = attention_mask(&Mat::zeros(1, 1));
        let y = gat.forward(&mut tape, &store, &mask, ht);

        let expected = h.matmul(store.value(gat.w)).map(|x| x.max(0.0));
        assert!(tape.value(y).max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn identical_nodes_with_mutual_edges_split_attention_evenly() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let gat = GraphAttention::new(&mut store, &mut r, "gat", 2, 3);
        let row = vec![0.7, -0.4];
        let h = Mat::from_rows(&[row.clone(), row]);

        let adjacency = Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let mask = attention_mask(&adjacency);

        let mut tape = Tape::eval();
        let ht = tape.constant(h.clone());
        let y = gat.forward(&mut tape, &store, &mask, ht);

        // Uniform 0.5/0.5 attention over two identical rows reproduces
        // what a single row would produce on its own.
        let expected = h.matmul(store.value(gat.w)).map(|x| x.max(0.0));
        assert!(tape.value(y).max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn gat_gradients_match_finite_differences_on_three_nodes() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let gat = GraphAttention::new(&mut store, &mut r, "gat", 2, 2);
        let h = random_mat(3, 2, &mut r);
        let adjacency = Mat::from_rows(&[
            vec![0.0, 2.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0],
        ]);
        let mask = attention_mask(&adjacency);

        let report = grad_check(&mut store, move |tape, store| {
            let ht = tape.constant(h.clone());
            let y = gat.forward(tape, store, &mask, ht);
            let sq = tape.hadamard(y, y);
            tape.mean(sq)
        });
        assert!(report.max_rel_err < 1e-5, "worst: {}", report.worst);
    }

    #[test]
    fn gat_is_permutation_equivariant() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let gat = GraphAttention::new(&mut store, &mut r, "gat", 2, 3);
        let m = 5;
        let adjacency = random_mat(m, m, &mut r).map(|x| if x > 0.2 { 1.0 } else { 0.0 });
        let h = random_mat(m, 2, &mut r);
        let perm = [2usize, 4, 0, 3, 1];

        let permute = |mat: &Mat, rows: bool, cols: bool| {
            let mut out = Mat::zeros(mat.rows(), mat.cols());
            for i in 0..mat.rows() {
                for j in 0..mat.cols() {
                    out.set(
                        if rows { perm[i] } else { i },
                        if cols { perm[j] } else { j },
                        mat.get(i, j),
                    );
                }
            }
            out
        };

        let run = |adj: &Mat, h: Mat| {
            let mut tape = Tape::eval();
            let ht = tape.constant(h);
            let mask = attention_mask(adj);
            let y = gat.forward(&mut tape, &store, &mask, ht);
            tape.value(y).clone()
        };

        let base = run(&adjacency, h.clone());
        let shuffled = run(&permute(&adjacency, true, true), permute(&h, true, false));
        assert!(permute(&base, true, false).max_abs_diff(&shuffled) < 1e-12);
    }

    #[test]
    fn one_step_rnn_with_identity_input_weights_is_tanh() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let cell = RnnCell::new(&mut store, &mut r, "rnn", 3, 3);
        *store.value_mut(cell.w_x) = Mat::eye(3);
        *store.value_mut(cell.w_h) = Mat::zeros(3, 3);

        let x = Mat::from_rows(&[vec![0.5, -1.0, 2.0]]);
        let mut tape = Tape::eval();
        let xt = tape.constant(x.clone());
        let h0 = tape.constant(Mat::zeros(1, 3));
        let h1 = cell.step(&mut tape, &store, xt, h0);
        assert!(tape.value(h1).max_abs_diff(&x.map(f64::tanh)) < 1e-15);
    }

    #[test]
    fn zeroed_lstm_stays_at_zero() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let cell = LstmCell::new(&mut store, &mut r, "lstm", 2, 3);
        for id in store.ids().collect::<Vec<_>>() {
            let (rows, cols) = store.value(id).shape();
            *store.value_mut(id) = Mat::zeros(rows, cols);
        }

        let mut tape = Tape::eval();
        let x = tape.constant(Mat::from_rows(&[vec![5.0, -3.0]]));
        let mut state = cell.zero_state(&mut tape);
        for _ in 0..3 {
            state = cell.step(&mut tape, &store, x, state);
        }
        assert_eq!(tape.value(state.h), &Mat::zeros(1, 3));
        assert_eq!(tape.value(state.c), &Mat::zeros(1, 3));
    }

    #[test]
    fn lstm_gradients_match_finite_differences_over_four_steps() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let cell = LstmCell::new(&mut store, &mut r, "lstm", 2, 3);
        let xs: Vec<Mat> = (0..4).map(|_| random_mat(1, 2, &mut r)).collect();

        let report = grad_check(&mut store, move |tape, store| {
            let mut state = cell.zero_state(tape);
            for x in &xs {
                let xt = tape.constant(x.clone());
                state = cell.step(tape, store, xt, state);
            }
            let sq = tape.hadamard(state.h, state.h);
            tape.mean(sq)
        });
        assert!(report.max_rel_err < 1e-5, "worst: {}", report.worst);
    }

    #[test]
    fn gru_gradients_match_finite_differences_over_three_steps() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let cell = GruCell::new(&mut store, &mut r, "gru", 2, 3);
        let xs: Vec<Mat> = (0..3).map(|_| random_mat(1, 2, &mut r)).collect();

        let report = grad_check(&mut store, move |tape, store| {
            let mut h = tape.constant(Mat::zeros(1, 3));
            for x in &xs {
                let xt = tape.constant(x.clone());
                h = cell.step(tape, store, xt, h);
            }
            let sq = tape.hadamard(h, h);
            tape.mean(sq)
        });
        assert!(report.max_rel_err < 1e-5, "worst: {}", report.worst);
    }

    #[test]
    fn rnn_gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let cell = RnnCell::new(&mut store, &mut r, "rnn", 2, 3);
        let xs: Vec<Mat> = (0..3).map(|_| random_mat(1, 2, &mut r)).collect();

        let report = grad_check(&mut store, move |tape, store| {
            let mut h = tape.constant(Mat::zeros(1, 3));
            for x in &xs {
                let xt = tape.constant(x.clone());
                h = cell.step(tape, store, xt, h);
            }
            let sq = tape.hadamard(h, h);
            tape.mean(sq)
        });
        assert!(report.max_rel_err < 1e-6, "worst: {}", report.worst);
    }

    #[test]
    fn hidden_width_is_constant_across_sequence_lengths() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let cell = LstmCell::new(&mut store, &mut r, "lstm", 2, 4);
        for steps in [1, 3, 7] {
            let mut tape = Tape::eval();
            let mut state = cell.zero_state(&mut tape);
            for _ in 0..steps {
                let x = tape.constant(Mat::filled(1, 2, 0.3));
                state = cell.step(&mut tape, &store, x, state);
            }
            assert_eq!(tape.value(state.h).shape(), (1, 4));
        }
    }

    #[test]
    #[should_panic(expected = "hidden state width mismatch")]
    fn mismatched_state_width_is_fatal() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let cell = RnnCell::new(&mut store, &mut r, "rnn", 2, 3);
        let mut tape = Tape::eval();
        let x = tape.constant(Mat::zeros(1, 2));
        let bad_h = tape.constant(Mat::zeros(1, 5));
        let _ = cell.step(&mut tape, &store, x, bad_h);
    }

    #[test]
    fn glorot_limit_scales_with_fan() {
        let mut r = rng();
        let w = glorot_uniform(10, 14, &mut r);
        let limit = (6.0f64 / (10.0 + 14.0)).sqrt();
        assert!(w.max_abs() <= limit);
        // Not degenerate: some spread across entries.
        assert!(w.max_abs() > limit * 0.5);
    }
}
