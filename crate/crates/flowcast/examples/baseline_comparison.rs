//! Usage: cargo run --example baseline_comparison
//!
//! Train the fused forecaster and the six reference architectures on the
//! same synthetic dataset and line up their test scores. Equivalent to
//! `flowcast baselines` with the library API.

use flowcast::cli::model_seed;
use flowcast::graphbuild::build_series;
use flowcast::ingest::{Platform, ZoneRegistry};
use flowcast::models::{Baseline, Forecaster, ModelConfig, ModelKind, Variant};
use flowcast::synth::{self, SynthConfig};
use flowcast::training::{self, mean_predictor_baseline, TrainConfig};

fn main() -> flowcast::Result<()> {
    let scfg = SynthConfig { seed: 42, ..SynthConfig::default() };
    let out = synth::generate(&scfg)?;
    let registry = ZoneRegistry::contiguous(scfg.m);
    let n = scfg.num_intervals();
    let taxi = build_series(&out.taxi, &registry, Platform::Taxi, n)?;
    let aux = build_series(&out.aux, &registry, Platform::Aux, n)?;
    let (k, p) = (3, scfg.p);
    let data = training::prepare(&taxi, &aux, k, p, 0.7, None)?;

    let mut kinds = vec![ModelKind::Variant(Variant::Full)];
    kinds.extend(Baseline::ALL.iter().map(|&b| ModelKind::Baseline(b)));

    println!("{:<12} {:>9} {:>7} {:>9} {:>11}", "model", "params", "epochs", "test_mae", "test_mse");
    for kind in kinds {
        let mcfg = ModelConfig::new(scfg.m, k, p, kind);
        let mut model = Forecaster::new(mcfg, model_seed(3, kind, 0))?;
        let tcfg = TrainConfig { epochs: 60, patience: 12, seed: 3, ..TrainConfig::default() };
        let summary = training::train(&mut model, &data.train, &data.taxi_transform, &tcfg)?;
        let report = training::evaluate(&model, &data.test, &data.taxi_transform);
        println!(
            "{:<12} {:>9} {:>7} {:>9.3} {:>11.2}",
            kind.to_string(),
            model.param_count(),
            summary.epochs_run,
            report.mae,
            report.mse
        );
    }

    let floor = mean_predictor_baseline(&data.train, &data.test, p);
    println!("\nper-slot mean predictor, for scale: test_mae {:.3}", floor.mae);
    Ok(())
}
