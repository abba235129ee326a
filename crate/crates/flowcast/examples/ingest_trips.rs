//! Usage: cargo run --example ingest_trips
//!
//! Parse a small trip CSV, bucket the trips into intervals, and write the
//! edge-list file the rest of the pipeline consumes. Rows that cannot be
//! used are counted per reason instead of aborting the run.

use chrono::NaiveDate;
use flowcast::ingest::{self, ColumnSchema, Platform, ZoneRegistry};

fn main() -> flowcast::Result<()> {
    let dir = std::env::temp_dir().join("flowcast-ingest-demo");
    std::fs::create_dir_all(&dir)?;

    // Two clean days of trips plus one row per failure mode: a broken
    // timestamp, a zone the registry does not know, and a trip outside the
    // requested window.
    let trips_path = dir.join("trips.csv");
    std::fs::write(
        &trips_path,
        "\
tpep_pickup_datetime,tpep_dropoff_datetime,PULocationID,DOLocationID
2021-01-01 00:10:00,2021-01-01 00:25:00,1,2
2021-01-01 00:40:00,2021-01-01 00:55:00,1,2
2021-01-01 13:05:00,2021-01-01 13:30:00,2,3
2021-01-02 07:45:00,2021-01-02 08:00:00,3,1
2021-01-02 20:15:00,2021-01-02 20:40:00,2,2
garbled,2021-01-01 01:00:00,1,2
2021-01-01 02:00:00,2021-01-01 02:10:00,999,1
2021-02-15 12:00:00,2021-02-15 12:20:00,1,3
",
    )?;

    let registry = ZoneRegistry::new(vec![1, 2, 3])?;
    let schema = ColumnSchema::default();
    let (records, parse_skips) =
        ingest::parse_trips(&trips_path, Platform::Taxi, &schema, &registry)?;
    println!(
        "parsed {} records ({} malformed, {} unknown zone)",
        records.len(),
        parse_skips.malformed,
        parse_skips.unknown_zone
    );

    let epoch = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
    let (days, slots) = (2, 4);
    let (rows, window_skips) = ingest::discretize(&records, &registry, epoch, days, slots)?;
    println!(
        "{} trips fell outside the {days}-day window starting {epoch}",
        window_skips.out_of_range
    );

    println!("\nedge rows ({days} days x {slots} slots, zones positions 0..3):");
    println!("  interval  origin -> dest  count");
    for row in &rows {
        println!(
            "  {:>8}  {:>6} -> {:<4}  {:>5}",
            row.interval.0, row.origin, row.dest, row.count
        );
    }

    let out_path = dir.join("taxi.edges");
    ingest::write_edge_list(&out_path, &rows)?;
    println!("\nwrote {}", out_path.display());
    Ok(())
}
