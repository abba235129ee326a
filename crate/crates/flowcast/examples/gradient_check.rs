//! Usage: cargo run --example gradient_check
//!
//! Verify analytic gradients against central finite differences: first a
//! single dense layer, then an unrolled LSTM, then the whole fused
//! forecaster through its training loss.

use flowcast::autodiff::{grad_check, ParamStore};
use flowcast::graphbuild::{node_features, FeatureTransform, FlowGraph};
use flowcast::ingest::{IntervalIndex, Platform};
use flowcast::layers::{Activation, Dense, LstmCell};
use flowcast::mat::Mat;
use flowcast::models::{Forecaster, ModelConfig, ModelKind, PreparedInterval, PreparedSample, Variant};
use flowcast::training::mse_loss;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn rand_mat(rng: &mut ChaCha12Rng, r: usize, c: usize) -> Mat {
    let mut m = Mat::zeros(r, c);
    for v in m.data_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    m
}

fn main() -> flowcast::Result<()> {
    let mut rng = ChaCha12Rng::seed_from_u64(1);

    let mut store = ParamStore::new();
    let dense = Dense::new(&mut store, &mut rng, "fc", 4, 3, Activation::Relu);
    let x = rand_mat(&mut rng, 2, 4);
    let target = rand_mat(&mut rng, 2, 3);
    let report = grad_check(&mut store, |tape, store| {
        let xt = tape.constant(x.clone());
        let y = dense.forward(tape, store, xt);
        let t = tape.constant(target.clone());
        mse_loss(tape, y, t)
    });
    println!("dense layer        max rel err {:.3e}  ({})", report.max_rel_err, report.worst);

    let mut store = ParamStore::new();
    let lstm = LstmCell::new(&mut store, &mut rng, "lstm", 4, 5);
    let xs: Vec<Mat> = (0..3).map(|_| rand_mat(&mut rng, 1, 4)).collect();
    let target = rand_mat(&mut rng, 1, 5);
    let report = grad_check(&mut store, |tape, store| {
        let mut state = lstm.zero_state(tape);
        for x in &xs {
            let xt = tape.constant(x.clone());
            state = lstm.step(tape, store, xt, state);
        }
        let t = tape.constant(target.clone());
        mse_loss(tape, state.h, t)
    });
    println!("lstm, 3 steps      max rel err {:.3e}  ({})", report.max_rel_err, report.worst);

    // The fused model end to end. The dropout seed is fixed, so the masks
    // stay put while every parameter is perturbed twice.
    let mut cfg = ModelConfig::new(4, 2, 4, ModelKind::Variant(Variant::Full));
    cfg.gcn_width = 6;
    cfg.embed_width = 4;
    cfg.lstm_width = 6;
    cfg.fc1_width = 6;
    cfg.fc2_width = 8;
    let model = Forecaster::new(cfg.clone(), 2)?;
    let sample = toy_sample(&cfg, 3);
    let mut store = model.store.clone();
    let report = grad_check(&mut store, |tape, store| {
        let pred = model.forward_with(store, tape, &sample, 7);
        let target = tape.constant(sample.target_flat.clone());
        mse_loss(tape, pred, target)
    });
    println!("fused forecaster   max rel err {:.3e}  ({})", report.max_rel_err, report.worst);
    println!("\nanything below 1e-4 means the tape's backward pass matches finite differences");
    Ok(())
}

/// Random but shape-correct sample for the model under `cfg`.
fn toy_sample(cfg: &ModelConfig, seed: u64) -> PreparedSample {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let transform = FeatureTransform { shift: [1.0, 1.0], scale: [2.0, 2.0] };
    let mut interval = |idx: usize, platform| {
        let mut adjacency = Mat::zeros(cfg.m, cfg.m);
        for v in adjacency.data_mut() {
            if rng.random::<f64>() < 0.6 {
                *v = rng.random_range(1..9) as f64;
            }
        }
        let graph = FlowGraph { interval: IntervalIndex(idx), platform, adjacency };
        let features = node_features(&graph).features;
        (PreparedInterval::new(&graph, &features, &transform), features)
    };
    let history = (0..cfg.k)
        .map(|i| std::sync::Arc::new(interval(i, Platform::Taxi).0))
        .collect();
    let auxiliary = std::sync::Arc::new(interval(0, Platform::Aux).0);
    let (_, target) = interval(cfg.k, Platform::Taxi);
    PreparedSample {
        history,
        auxiliary,
        target_flat: transform.apply(&target).reshaped(1, 2 * cfg.m),
        target_raw: target,
        target_index: IntervalIndex(cfg.k.max(cfg.p)),
    }
}
