//! Usage: cargo run --example train_fused
//!
//! Train the fused forecaster on a synthetic two-platform trace and score
//! it on the held-out tail against the per-slot mean predictor.

use flowcast::graphbuild::build_series;
use flowcast::ingest::{Platform, ZoneRegistry};
use flowcast::models::{Forecaster, ModelConfig, ModelKind, Variant};
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
    println!(
        "{} zones, {} intervals -> {} train / {} test samples",
        scfg.m,
        n,
        data.train.len(),
        data.test.len()
    );

    let mcfg = ModelConfig::new(scfg.m, k, p, ModelKind::Variant(Variant::Full));
    let mut model = Forecaster::new(mcfg, 1)?;
    println!("fused model: {} parameters", model.param_count());

    let tcfg = TrainConfig { epochs: 60, patience: 12, seed: 1, ..TrainConfig::default() };
    let summary = training::train(&mut model, &data.train, &data.taxi_transform, &tcfg)?;
    println!(
        "trained {} epochs, best validation epoch {}",
        summary.epochs_run, summary.best_epoch
    );
    for e in (0..summary.loss_curve.len()).step_by(10) {
        println!(
            "  epoch {e:>3}: train mse {:>8.4}  val mae {:>7.3}",
            summary.loss_curve[e], summary.val_curve[e]
        );
    }

    let report = training::evaluate(&model, &data.test, &data.taxi_transform);
    let floor = mean_predictor_baseline(&data.train, &data.test, p);
    println!("\ntest metrics over {} samples:", report.sample_count);
    println!("  fused model     mae {:>7.3}  mse {:>9.2}", report.mae, report.mse);
    println!("  per-slot means  mae {:>7.3}  mse {:>9.2}", floor.mae, floor.mse);

    let mut worst: Vec<(usize, f64)> = report.per_zone_abs_err.iter().copied().enumerate().collect();
    worst.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("\nhardest zones by mean absolute error:");
    for (zone, err) in worst.iter().take(3) {
        println!("  zone {zone:>2}: {err:.3}");
    }
    Ok(())
}
