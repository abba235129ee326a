//! Trip-record parsing and time discretization.
//!
//! Raw trip files (CSV with a header row) are parsed into [`TripRecord`]s,
//! bucketed by pickup time into equal intervals over a contiguous global
//! timeline, and aggregated into per-interval origin/destination counts.
//! The aggregated counts are exchanged on disk as "edge list" files, the
//! format consumed by [`crate::graphbuild`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};

use crate::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Which ride platform a trip or series belongs to. The auxiliary platform
/// provides the cross-platform signal observed one day ahead of the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Platform {
    Taxi,
    Aux,
}

impl Platform {
    pub fn as_str(&self) -> &'static str {
        match self {
            Platform::Taxi => "taxi",
            Platform::Aux => "aux",
        }
    }
}

impl std::str::FromStr for Platform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Platform> {
        match s {
            "taxi" => Ok(Platform::Taxi),
            "aux" => Ok(Platform::Aux),
            other => Err(Error::Config(format!(
                "unknown platform {other:?} (expected \"taxi\" or \"aux\")"
            ))),
        }
    }
}

/// One trip, with times in UTC epoch seconds and zones as raw registry ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripRecord {
    pub pickup_time: i64,
    pub dropoff_time: i64,
    pub pickup_zone: u32,
    pub dropoff_zone: u32,
    pub platform: Platform,
}

/// Position on the global timeline: day `d`, within-day slot `t`, at `P`
/// intervals per day, packed as `global = d * P + t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IntervalIndex(pub usize);

impl IntervalIndex {
    pub fn from_day_slot(day: usize, slot: usize, p: usize) -> IntervalIndex {
        assert!(slot < p, "slot {slot} out of range for {p} intervals per day");
        IntervalIndex(day * p + slot)
    }

    pub fn day(&self, p: usize) -> usize {
        self.0 / p
    }

    pub fn slot(&self, p: usize) -> usize {
        self.0 % p
    }
}

/// Ordered set of zone ids with a dense index `0..M`. All matrices in the
/// pipeline are indexed by registry position, not by raw zone id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZoneRegistry {
    ids: Vec<u32>,
    index: HashMap<u32, usize>,
}

impl ZoneRegistry {
    pub fn new(ids: Vec<u32>) -> Result<ZoneRegistry> {
        let mut seen = HashSet::new();
        for &id in &ids {
            if !seen.insert(id) {
                return Err(Error::Data(format!("duplicate zone id {id} in registry")));
            }
        }
        let index = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        Ok(ZoneRegistry { ids, index })
    }

    /// Registry whose raw ids are already the dense indices `0..m`.
    pub fn contiguous(m: usize) -> ZoneRegistry {
        ZoneRegistry::new((0..m as u32).collect()).expect("contiguous ids are distinct")
    }

    /// The 265 NYC taxi zones, raw ids 1..=265.
    pub fn nyc_default() -> ZoneRegistry {
        ZoneRegistry::new((1..=265).collect()).expect("1..=265 are distinct")
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn position(&self, zone_id: u32) -> Option<usize> {
        self.index.get(&zone_id).copied()
    }
}

/// Maps the semantic trip fields to header names in the input file.
/// Defaults follow the NYC TLC yellow-taxi schema.
#[derive(Debug, Clone)]
pub struct ColumnSchema {
    pub pickup_time: String,
    pub dropoff_time: String,
    pub pickup_zone: String,
    pub dropoff_zone: String,
}

impl Default for ColumnSchema {
    fn default() -> ColumnSchema {
        ColumnSchema {
            pickup_time: "tpep_pickup_datetime".to_string(),
            dropoff_time: "tpep_dropoff_datetime".to_string(),
            pickup_zone: "PULocationID".to_string(),
            dropoff_zone: "DOLocationID".to_string(),
        }
    }
}

/// Why rows were dropped during parsing or discretization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SkipCounts {
    /// Unparseable fields, or dropoff before pickup.
    pub malformed: usize,
    /// Zone id not present in the registry.
    pub unknown_zone: usize,
    /// Pickup outside the configured `[epoch, epoch + days)` window.
    pub out_of_range: usize,
}

impl SkipCounts {
    pub fn total(&self) -> usize {
        self.malformed + self.unknown_zone + self.out_of_range
    }
}

/// Accepts `YYYY-MM-DD HH:MM:SS` with either a space or `T` separator;
/// returns UTC epoch seconds.
pub fn parse_datetime(s: &str) -> Option<i64> {
    let s = s.trim();
    let parsed = NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S"))
        .ok()?;
    Some(parsed.and_utc().timestamp())
}

/// Parse a trip file into records, skipping (and counting) rows that fail
/// to parse or reference zones outside the registry. A header missing one
/// of the schema columns is a configuration error, not a skip.
pub fn parse_trips(
    path: &Path,
    platform: Platform,
    schema: &ColumnSchema,
    registry: &ZoneRegistry,
) -> Result<(Vec<TripRecord>, SkipCounts)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: cannot read header: {e}", path.display())))?;
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Config(format!(
                "{}: header is missing column {name:?} (found: {})",
                path.display(),
                headers.iter().collect::<Vec<_>>().join(", ")
            ))
        })
    };
    let pickup_time_col = col(&schema.pickup_time)?;
    let dropoff_time_col = col(&schema.dropoff_time)?;
    let pickup_zone_col = col(&schema.pickup_zone)?;
    let dropoff_zone_col = col(&schema.dropoff_zone)?;

    let mut records = Vec::new();
    let mut skips = SkipCounts::default();
    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(_) => {
                skips.malformed += 1;
                continue;
            }
        };
        let field = |i: usize| row.get(i).unwrap_or("");
        let parsed = (|| {
            let pickup_time = parse_datetime(field(pickup_time_col))?;
            let dropoff_time = parse_datetime(field(dropoff_time_col))?;
            let pickup_zone: u32 = field(pickup_zone_col).parse().ok()?;
            let dropoff_zone: u32 = field(dropoff_zone_col).parse().ok()?;
            if pickup_time > dropoff_time {
                return None;
            }
            Some((pickup_time, dropoff_time, pickup_zone, dropoff_zone))
        })();
        let Some((pickup_time, dropoff_time, pickup_zone, dropoff_zone)) = parsed else {
            skips.malformed += 1;
            continue;
        };
        if registry.position(pickup_zone).is_none() || registry.position(dropoff_zone).is_none() {
            skips.unknown_zone += 1;
            continue;
        }
        records.push(TripRecord {
            pickup_time,
            dropoff_time,
            pickup_zone,
            dropoff_zone,
            platform,
        });
    }
    Ok((records, skips))
}

/// One aggregated origin/destination count. `origin` and `dest` are dense
/// registry indices, not raw zone ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeRow {
    pub interval: IntervalIndex,
    pub origin: usize,
    pub dest: usize,
    pub count: u64,
}

/// Bucket records into `p` equal intervals per day over `[epoch, epoch +
/// days)` by pickup time, aggregate per (interval, origin, dest), and
/// return the counts sorted ascending. Intervals are half-open, so a pickup
/// exactly on a boundary belongs to the later interval. Records outside the
/// window are skipped and counted.
pub fn discretize(
    records: &[TripRecord],
    registry: &ZoneRegistry,
    epoch: NaiveDate,
    days: usize,
    p: usize,
) -> Result<(Vec<EdgeRow>, SkipCounts)> {
    if p == 0 || SECONDS_PER_DAY % p as i64 != 0 {
        return Err(Error::Config(format!(
            "intervals per day must divide {SECONDS_PER_DAY} seconds, got {p}"
        )));
    }
    let interval_secs = SECONDS_PER_DAY / p as i64;
    let epoch_secs = epoch
        .and_hms_opt(0, 0, 0)
        .expect("midnight is always valid")
        .and_utc()
        .timestamp();
    let horizon = days as i64 * SECONDS_PER_DAY;

    let mut counts: BTreeMap<(usize, usize, usize), u64> = BTreeMap::new();
    let mut skips = SkipCounts::default();
    for r in records {
        let offset = r.pickup_time - epoch_secs;
        if offset < 0 || offset >= horizon {
            skips.out_of_range += 1;
            continue;
        }
        let origin = registry.position(r.pickup_zone).ok_or_else(|| {
            Error::Data(format!("zone {} not in registry", r.pickup_zone))
        })?;
        let dest = registry.position(r.dropoff_zone).ok_or_else(|| {
            Error::Data(format!("zone {} not in registry", r.dropoff_zone))
        })?;
        let global = (offset / interval_secs) as usize;
        *counts.entry((global, origin, dest)).or_insert(0) += 1;
    }

    let rows = counts
        .into_iter()
        .map(|((global, origin, dest), count)| EdgeRow {
            interval: IntervalIndex(global),
            origin,
            dest,
            count,
        })
        .collect();
    Ok((rows, skips))
}

/// Write rows as `interval,origin,dest,count` with a header line.
pub fn write_edge_list(path: &Path, rows: &[EdgeRow]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "interval,origin,dest,count")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.interval.0, r.origin, r.dest, r.count)?;
    }
    out.flush()?;
    Ok(())
}

/// Read an edge-list file written by [`write_edge_list`]. Any malformed
/// line is a data error; edge lists are machine-written interchange files,
/// so unlike raw trip input nothing is skipped silently.
pub fn read_edge_list(path: &Path) -> Result<Vec<EdgeRow>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut rows = Vec::new();
    let mut lines = reader.lines();

    let header = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty edge-list file", path.display())))??;
    if header.trim() != "interval,origin,dest,count" {
        return Err(Error::Data(format!(
            "{}: unexpected edge-list header {header:?}",
            path.display()
        )));
    }

    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let mut next = |what: &str| -> Result<&str> {
            parts.next().ok_or_else(|| {
                Error::Data(format!(
                    "{}:{}: missing {what} field",
                    path.display(),
                    lineno + 2
                ))
            })
        };
        let parse = |s: &str, what: &str| -> Result<u64> {
            s.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "{}:{}: invalid {what} {s:?}",
                    path.display(),
                    lineno + 2
                ))
            })
        };
        let interval = parse(next("interval")?, "interval")?;
        let origin = parse(next("origin")?, "origin")?;
        let dest = parse(next("dest")?, "dest")?;
        let count = parse(next("count")?, "count")?;
        rows.push(EdgeRow {
            interval: IntervalIndex(interval as usize),
            origin: origin as usize,
            dest: dest as usize,
            count,
        });
    }
    Ok(rows)
}
