//! Usage: cargo run --example predict_zones
//!
//! Train briefly, round-trip the model through a checkpoint file, and
//! compare predicted against actual per-zone inflow/outflow for the last
//! held-out interval.

use flowcast::graphbuild::build_series;
use flowcast::ingest::{Platform, ZoneRegistry};
use flowcast::models::{load_checkpoint, save_checkpoint, Forecaster, ModelConfig, ModelKind, Variant};
use flowcast::synth::{self, SynthConfig};
use flowcast::training::{self, TrainConfig};

fn main() -> flowcast::Result<()> {
    let scfg = SynthConfig { seed: 42, ..SynthConfig::default() };
    let out = synth::generate(&scfg)?;
    let registry = ZoneRegistry::contiguous(scfg.m);
    let n = scfg.num_intervals();
    let taxi = build_series(&out.taxi, &registry, Platform::Taxi, n)?;
    let aux = build_series(&out.aux, &registry, Platform::Aux, n)?;
    let (k, p) = (3, scfg.p);
    let data = training::prepare(&taxi, &aux, k, p, 0.7, None)?;

    let mcfg = ModelConfig::new(scfg.m, k, p, ModelKind::Variant(Variant::Full));
    let mut model = Forecaster::new(mcfg.clone(), 1)?;
    let tcfg = TrainConfig { epochs: 60, patience: 12, seed: 1, ..TrainConfig::default() };
    training::train(&mut model, &data.train, &data.taxi_transform, &tcfg)?;

    // Persist and reload: predictions must come from the file copy.
    let ckpt = std::env::temp_dir().join("flowcast-predict-demo.ckpt");
    save_checkpoint(&ckpt, &model)?;
    let reloaded = load_checkpoint(&ckpt, &mcfg)?;
    println!("checkpoint round trip through {}", ckpt.display());

    let sample = data.test.last().expect("test split is non-empty");
    let predicted = reloaded.predict(sample, &data.taxi_transform).clamped();
    let actual = &sample.target_raw;

    println!(
        "\ninterval {} (day {}, slot {}), first 10 of {} zones:",
        sample.target_index.0,
        sample.target_index.day(p),
        sample.target_index.slot(p),
        scfg.m
    );
    println!("{:>6} {:>12} {:>12} {:>14} {:>14}", "zone", "pred_in", "pred_out", "actual_in", "actual_out");
    for z in 0..10 {
        println!(
            "{:>6} {:>12.1} {:>12.1} {:>14.0} {:>14.0}",
            registry.ids()[z],
            predicted.get(0, z),
            predicted.get(1, z),
            actual.get(0, z),
            actual.get(1, z)
        );
    }

    let mae: f64 = (0..2)
        .flat_map(|r| (0..scfg.m).map(move |z| (r, z)))
        .map(|(r, z)| (predicted.get(r, z) - actual.get(r, z)).abs())
        .sum::<f64>()
        / (2 * scfg.m) as f64;
    println!("\nmean absolute error on this interval: {mae:.3} trips per zone-direction");
    Ok(())
}
