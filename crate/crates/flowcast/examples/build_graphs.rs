//! Usage: cargo run --example build_graphs
//!
//! From edge rows to model inputs: per-interval flow graphs, the 2xM
//! inflow/outflow node features, the normalized propagation matrix, and
//! finally supervised samples pairing k recent taxi intervals with the
//! auxiliary platform's previous-day interval.

use flowcast::graphbuild::{build_series, make_samples, node_features, normalize_adjacency};
use flowcast::ingest::{Platform, ZoneRegistry};
use flowcast::synth::{self, SynthConfig};

fn main() -> flowcast::Result<()> {
    let cfg = SynthConfig { m: 5, days: 3, seed: 11, ..SynthConfig::default() };
    let out = synth::generate(&cfg)?;
    let registry = ZoneRegistry::contiguous(cfg.m);
    let n = cfg.num_intervals();

    let taxi = build_series(&out.taxi, &registry, Platform::Taxi, n)?;
    let aux = build_series(&out.aux, &registry, Platform::Aux, n)?;
    println!("built {} taxi and {} auxiliary interval graphs", n, aux.intervals.len());

    let graph = &taxi.intervals[9].graph;
    println!("\ntaxi flow matrix for interval 9 (row = origin, col = destination):");
    for i in 0..cfg.m {
        let row: Vec<String> = (0..cfg.m).map(|j| format!("{:4.0}", graph.adjacency.get(i, j))).collect();
        println!("  {}", row.join(" "));
    }

    let feats = node_features(graph);
    println!("\nper-zone features (column sums then row sums of the matrix above):");
    let row = |r: usize| -> String {
        (0..cfg.m).map(|z| format!("{:4.0}", feats.features.get(r, z))).collect::<Vec<_>>().join(" ")
    };
    println!("  inflow : {}", row(0));
    println!("  outflow: {}", row(1));

    // Symmetric normalization over A + At + I, so direction survives only
    // in the feature channels while propagation weights stay bounded.
    let norm = normalize_adjacency(&graph.adjacency);
    println!("\nnormalized propagation matrix, first row:");
    let row: Vec<String> = (0..cfg.m).map(|j| format!("{:5.2}", norm.get(0, j))).collect();
    println!("  {}", row.join(" "));

    let (k, p) = (3, cfg.p);
    let samples = make_samples(&taxi, &aux, k, p)?;
    println!(
        "\n{} samples from {} intervals (first predictable target is interval {}):",
        samples.len(),
        n,
        p.max(k)
    );
    let s = &samples[0];
    println!(
        "  sample 0 predicts interval {} from taxi intervals {:?} and auxiliary interval {}",
        s.target_index.0,
        s.history.iter().map(|h| h.graph.interval.0).collect::<Vec<_>>(),
        s.auxiliary.graph.interval.0
    );
    Ok(())
}
