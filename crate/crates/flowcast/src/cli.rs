//! Run configuration and the commands behind the `flowcast` binary.
//!
//! Configuration is a flat `key=value` namespace (see [`RunConfig`]) layered
//! from defaults, an optional config file, `FLOWCAST_*` environment
//! variables for paths, and `--set` overrides, in that order. Every command
//! writes its artifacts plus a `config.resolved` snapshot into its own run
//! directory, so a run can be reproduced by pointing `--config` at the
//! snapshot.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::derive_seed;
use crate::graphbuild::build_series;
use crate::ingest::{self, ColumnSchema, Platform, ZoneRegistry};
use crate::models::{
    load_checkpoint, save_checkpoint, Baseline, Forecaster, ModelConfig, ModelKind, Variant,
};
use crate::synth::{self, SynthConfig};
use crate::training::{
    self, mean_predictor_baseline, MetricsReport, PreparedData, TrainConfig, TrainSummary,
};
use crate::{Error, Result};

/// The subcommands of the `flowcast` binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandName {
    Synth,
    Ingest,
    Train,
    Evaluate,
    Baselines,
    Ablate,
    Predict,
}

impl CommandName {
    pub fn as_str(&self) -> &'static str {
        match self {
            CommandName::Synth => "synth",
            CommandName::Ingest => "ingest",
            CommandName::Train => "train",
            CommandName::Evaluate => "evaluate",
            CommandName::Baselines => "baselines",
            CommandName::Ablate => "ablate",
            CommandName::Predict => "predict",
        }
    }
}

/// A parsed command invocation, decoupled from the argument parser so the
/// same entry point serves the binary, examples, and tests.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub config_file: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Raw `key=value` overrides, applied last.
    pub overrides: Vec<String>,
}

/// Every config key with its default. Grouped by dotted prefix:
/// `data.*` dataset geometry, `model.*` architecture, `train.*`
/// optimization, `synth.*` generator, `ingest.*` raw-file schema,
/// `paths.*` artifact locations, `predict.*` prediction target.
/// An empty path default is resolved relative to `paths.out_dir` at load.
const KNOWN_KEYS: &[(&str, &str)] = &[
    ("seed", "42"),
    ("data.k", "3"),
    ("data.p", "8"),
    ("data.days", "14"),
    ("data.epoch", "2021-01-01"),
    ("data.zones", "contiguous:20"),
    ("model.kind", "full"),
    ("model.gcn_width", "32"),
    ("model.embed_width", "16"),
    ("model.lstm_width", "32"),
    ("model.fc1_width", "32"),
    ("model.fc2_width", "128"),
    ("model.dropout_p", "0.1"),
    ("model.cheb_order", "3"),
    ("model.aux_first", "true"),
    ("train.learning_rate", "0.001"),
    ("train.batch_size", "16"),
    ("train.epochs", "200"),
    ("train.patience", "20"),
    ("train.split_fraction", "0.7"),
    ("train.validation_fraction", "0.1"),
    ("train.shuffle_split", "false"),
    ("synth.m", "20"),
    ("synth.days", "14"),
    ("synth.p", "8"),
    ("synth.base_intensity", "2.0"),
    ("synth.profile_amplitude", "0.6"),
    ("synth.rho", "0.9"),
    ("synth.lag", "0.5"),
    ("synth.noise", "0.3"),
    ("ingest.taxi_file", ""),
    ("ingest.aux_file", ""),
    ("ingest.pickup_time_col", "tpep_pickup_datetime"),
    ("ingest.dropoff_time_col", "tpep_dropoff_datetime"),
    ("ingest.pickup_zone_col", "PULocationID"),
    ("ingest.dropoff_zone_col", "DOLocationID"),
    ("paths.out_dir", "runs"),
    ("paths.taxi_edges", ""),
    ("paths.aux_edges", ""),
    ("paths.checkpoint", ""),
    ("predict.target", ""),
];

/// Environment variables that override path keys (and only path keys).
const ENV_PATH_KEYS: &[(&str, &str)] = &[
    ("FLOWCAST_OUT_DIR", "paths.out_dir"),
    ("FLOWCAST_TAXI_EDGES", "paths.taxi_edges"),
    ("FLOWCAST_AUX_EDGES", "paths.aux_edges"),
    ("FLOWCAST_CHECKPOINT", "paths.checkpoint"),
];

/// Fully resolved flat configuration. Unknown keys are rejected at load
/// time with the key name and where it came from.
#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn defaults() -> RunConfig {
        RunConfig {
            values: KNOWN_KEYS
                .iter()
                .map(|&(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    /// Layer defaults, config file, `FLOWCAST_*` env paths, and overrides.
    pub fn resolve(inv: &Invocation) -> Result<RunConfig> {
        let mut cfg = RunConfig::defaults();
        if let Some(path) = &inv.config_file {
            cfg.load_file(path)?;
        }
        for &(var, key) in ENV_PATH_KEYS {
            if let Ok(value) = std::env::var(var) {
                cfg.set(key, &value, &format!("environment variable {var}"))?;
            }
        }
        for raw in &inv.overrides {
            let (key, value) = raw
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got {raw:?}")))?;
            cfg.set(key.trim(), value.trim(), "--set override")?;
        }
        if let Some(seed) = inv.seed {
            cfg.set("seed", &seed.to_string(), "--seed flag")?;
        }
        cfg.resolve_path_defaults();
        Ok(cfg)
    }

    fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(
                key.trim(),
                value.trim(),
                &format!("{}:{}", path.display(), lineno + 1),
            )?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str, source: &str) -> Result<()> {
        if !self.values.contains_key(key) {
            return Err(Error::Config(format!(
                "unknown config key `{key}` ({source})"
            )));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Fill empty path keys from `paths.out_dir` so the default synth →
    /// train → evaluate pipeline connects without any configuration.
    fn resolve_path_defaults(&mut self) {
        let base = self.values["paths.out_dir"].clone();
        let fill = |values: &mut BTreeMap<String, String>, key: &str, rel: &str| {
            if values[key].is_empty() {
                values.insert(key.to_string(), format!("{base}/{rel}"));
            }
        };
        fill(&mut self.values, "paths.taxi_edges", "synth/taxi.edges");
        fill(&mut self.values, "paths.aux_edges", "synth/aux.edges");
        fill(&mut self.values, "paths.checkpoint", "train/model.ckpt");
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("config key {key:?} is not in the known set"))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key).parse().map_err(|_| {
            Error::Config(format!(
                "config key `{key}`: cannot parse {:?} as {}",
                self.get(key),
                std::any::type_name::<T>()
            ))
        })
    }

    /// Sorted `key=value` lines; parses back through a config file.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn seed(&self) -> Result<u64> {
        self.parsed("seed")
    }

    pub fn registry(&self) -> Result<ZoneRegistry> {
        let spec = self.get("data.zones");
        if spec == "nyc" {
            return Ok(ZoneRegistry::nyc_default());
        }
        if let Some(count) = spec.strip_prefix("contiguous:") {
            let m: usize = count.parse().map_err(|_| {
                Error::Config(format!("data.zones: invalid zone count {count:?}"))
            })?;
            if m == 0 {
                return Err(Error::Config("data.zones: zone count must be positive".to_string()));
            }
            return Ok(ZoneRegistry::contiguous(m));
        }
        Err(Error::Config(format!(
            "data.zones must be `nyc` or `contiguous:<count>`, got {spec:?}"
        )))
    }

    pub fn model_config(&self, m: usize) -> Result<ModelConfig> {
        let kind: ModelKind = self.get("model.kind").parse()?;
        let mut cfg = ModelConfig::new(m, self.parsed("data.k")?, self.parsed("data.p")?, kind);
        cfg.gcn_width = self.parsed("model.gcn_width")?;
        cfg.embed_width = self.parsed("model.embed_width")?;
        cfg.lstm_width = self.parsed("model.lstm_width")?;
        cfg.fc1_width = self.parsed("model.fc1_width")?;
        cfg.fc2_width = self.parsed("model.fc2_width")?;
        cfg.dropout_p = self.parsed("model.dropout_p")?;
        cfg.cheb_order = self.parsed("model.cheb_order")?;
        cfg.aux_first = self.parsed("model.aux_first")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            learning_rate: self.parsed("train.learning_rate")?,
            batch_size: self.parsed("train.batch_size")?,
            epochs: self.parsed("train.epochs")?,
            patience: self.parsed("train.patience")?,
            split_fraction: self.parsed("train.split_fraction")?,
            validation_fraction: self.parsed("train.validation_fraction")?,
            shuffle_split: self.parsed("train.shuffle_split")?,
            seed: derive_seed(self.seed()?, &[SEED_TRAIN]),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        let p: usize = self.parsed("synth.p")?;
        let cfg = SynthConfig {
            m: self.parsed("synth.m")?,
            days: self.parsed("synth.days")?,
            p,
            base_intensity: self.parsed("synth.base_intensity")?,
            profile: synth::sine_profile(p.max(1), self.parsed("synth.profile_amplitude")?),
            rho: self.parsed("synth.rho")?,
            lag: self.parsed("synth.lag")?,
            noise: self.parsed("synth.noise")?,
            seed: derive_seed(self.seed()?, &[SEED_SYNTH]),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn column_schema(&self) -> ColumnSchema {
        ColumnSchema {
            pickup_time: self.get("ingest.pickup_time_col").to_string(),
            dropoff_time: self.get("ingest.dropoff_time_col").to_string(),
            pickup_zone: self.get("ingest.pickup_zone_col").to_string(),
            dropoff_zone: self.get("ingest.dropoff_zone_col").to_string(),
        }
    }

    pub fn epoch_date(&self) -> Result<NaiveDate> {
        NaiveDate::parse_from_str(self.get("data.epoch"), "%Y-%m-%d").map_err(|e| {
            Error::Config(format!("data.epoch: {e} (expected YYYY-MM-DD)"))
        })
    }

    fn path(&self, key: &str) -> PathBuf {
        PathBuf::from(self.get(key))
    }
}

// Stream tags under the master seed. Model initialization additionally
// folds in the model kind and repeat index so runs stay independent.
const SEED_TRAIN: u64 = 1;
const SEED_SYNTH: u64 = 2;
const SEED_MODEL: u64 = 3;

fn kind_ordinal(kind: ModelKind) -> u64 {
    match kind {
        ModelKind::Variant(Variant::Full) => 0,
        ModelKind::Variant(Variant::NoSpatial) => 1,
        ModelKind::Variant(Variant::NoTemporal) => 2,
        ModelKind::Variant(Variant::NoFusion) => 3,
        ModelKind::Baseline(Baseline::Gcn) => 4,
        ModelKind::Baseline(Baseline::Lstm) => 5,
        ModelKind::Baseline(Baseline::Gru) => 6,
        ModelKind::Baseline(Baseline::Rnn) => 7,
        ModelKind::Baseline(Baseline::Gat) => 8,
        ModelKind::Baseline(Baseline::Cgcn) => 9,
    }
}

/// Seed for initializing one model, independent across kinds and repeats.
pub fn model_seed(master: u64, kind: ModelKind, repeat: u64) -> u64 {
    derive_seed(master, &[SEED_MODEL, kind_ordinal(kind), repeat])
}

/// Entry point shared by the binary and the examples: resolve config,
/// create the run directory, snapshot the config, run the command.
pub fn run(command: CommandName, inv: &Invocation) -> Result<()> {
    let cfg = RunConfig::resolve(inv)?;
    let out_dir = match &inv.out {
        Some(dir) => dir.clone(),
        None => cfg.path("paths.out_dir").join(command.as_str()),
    };
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("config.resolved"), cfg.snapshot())?;

    match command {
        CommandName::Synth => cmd_synth(&cfg, &out_dir),
        CommandName::Ingest => cmd_ingest(&cfg, &out_dir),
        CommandName::Train => cmd_train(&cfg, &out_dir),
        CommandName::Evaluate => cmd_evaluate(&cfg, &out_dir),
        CommandName::Baselines => cmd_baselines(&cfg, &out_dir),
        CommandName::Ablate => cmd_ablate(&cfg, &out_dir),
        CommandName::Predict => cmd_predict(&cfg, &out_dir),
    }
}

/// Plain-text table with aligned columns plus a CSV twin.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Table {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn row(&mut self, cells: Vec<String>) {
        assert_eq!(cells.len(), self.header.len(), "row width mismatch");
        self.rows.push(cells);
    }

    fn text(&self) -> String {
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.len()).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let emit = |cells: &[String], out: &mut String| {
            let line: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<width$}", width = *w))
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        };
        emit(&self.header, &mut out);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        let _ = writeln!(out, "{}", rule.join("  "));
        for row in &self.rows {
            emit(row, &mut out);
        }
        out
    }

    fn csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.header.join(","));
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    /// Write `<stem>.txt` and `<stem>.csv` under `dir` and echo the text
    /// form to stdout.
    fn publish(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::write(dir.join(format!("{stem}.txt")), self.text())?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.csv())?;
        print!("{}", self.text());
        Ok(())
    }
}

fn fmt_metric(x: f64) -> String {
    format!("{x:.6}")
}

fn cmd_synth(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let scfg = cfg.synth_config()?;
    let taxi_path = out_dir.join("taxi.edges");
    let aux_path = out_dir.join("aux.edges");
    let out = synth::generate_to_files(&scfg, &taxi_path, &aux_path)?;

    let n = scfg.num_intervals();
    let taxi_totals = synth::per_interval_totals(&out.taxi, n);
    let aux_totals = synth::per_interval_totals(&out.aux, n);
    let corr = synth::cross_platform_correlation(&taxi_totals, &aux_totals, scfg.p);
    println!(
        "wrote {} taxi rows to {} and {} auxiliary rows to {}",
        out.taxi.len(),
        taxi_path.display(),
        out.aux.len(),
        aux_path.display()
    );
    println!(
        "{} zones, {} intervals ({} days x {} slots), residual cross-platform correlation {corr:.3}",
        scfg.m, n, scfg.days, scfg.p
    );
    Ok(())
}

fn cmd_ingest(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let registry = cfg.registry()?;
    let schema = cfg.column_schema();
    let epoch = cfg.epoch_date()?;
    let days: usize = cfg.parsed("data.days")?;
    let p: usize = cfg.parsed("data.p")?;

    for (key, platform, out_name) in [
        ("ingest.taxi_file", Platform::Taxi, "taxi.edges"),
        ("ingest.aux_file", Platform::Aux, "aux.edges"),
    ] {
        let input = cfg.get(key);
        if input.is_empty() {
            return Err(Error::Config(format!(
                "{key} is required for ingest (path to a trip CSV)"
            )));
        }
        let (records, parse_skips) =
            ingest::parse_trips(Path::new(input), platform, &schema, &registry)?;
        let (rows, window_skips) = ingest::discretize(&records, &registry, epoch, days, p)?;
        let out_path = out_dir.join(out_name);
        ingest::write_edge_list(&out_path, &rows)?;
        println!(
            "{}: {} trips kept, {} skipped ({} malformed, {} unknown zone, {} out of window) -> {}",
            platform.as_str(),
            records.len() - window_skips.total(),
            parse_skips.total() + window_skips.total(),
            parse_skips.malformed,
            parse_skips.unknown_zone,
            window_skips.out_of_range,
            out_path.display()
        );
    }
    Ok(())
}

/// Read both edge lists and prepare train/test samples per the config.
fn load_dataset(cfg: &RunConfig) -> Result<(PreparedData, usize)> {
    let registry = cfg.registry()?;
    let days: usize = cfg.parsed("data.days")?;
    let p: usize = cfg.parsed("data.p")?;
    let k: usize = cfg.parsed("data.k")?;
    let n = days * p;

    let taxi_rows = ingest::read_edge_list(&cfg.path("paths.taxi_edges"))?;
    let aux_rows = ingest::read_edge_list(&cfg.path("paths.aux_edges"))?;
    let taxi = build_series(&taxi_rows, &registry, Platform::Taxi, n)?;
    let aux = build_series(&aux_rows, &registry, Platform::Aux, n)?;

    let tcfg = cfg.train_config()?;
    let shuffle_seed = tcfg.shuffle_split.then_some(tcfg.seed);
    let data = training::prepare(&taxi, &aux, k, p, tcfg.split_fraction, shuffle_seed)?;
    Ok((data, registry.len()))
}

/// Train one model kind on already-prepared data and score it on the test
/// split.
fn train_and_score(
    cfg: &RunConfig,
    data: &PreparedData,
    m: usize,
    kind: ModelKind,
) -> Result<(Forecaster, TrainSummary, MetricsReport)> {
    let mut mcfg = cfg.model_config(m)?;
    mcfg.kind = kind;
    mcfg.validate()?;
    let mut model = Forecaster::new(mcfg, model_seed(cfg.seed()?, kind, 0))?;
    let summary = training::train(&mut model, &data.train, &data.taxi_transform, &cfg.train_config()?)?;
    let report = training::evaluate(&model, &data.test, &data.taxi_transform);
    Ok((model, summary, report))
}

fn write_loss_curve(path: &Path, summary: &TrainSummary) -> Result<()> {
    let mut out = String::from("epoch,train_mse,val_mae\n");
    for (i, loss) in summary.loss_curve.iter().enumerate() {
        let val = summary
            .val_curve
            .get(i)
            .map(|v| fmt_metric(*v))
            .unwrap_or_default();
        let _ = writeln!(out, "{i},{},{val}", fmt_metric(*loss));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn metrics_table(rows: &[(&str, &MetricsReport)]) -> Table {
    let mut table = Table::new(&["split", "samples", "mae", "mse"]);
    for (name, report) in rows {
        table.row(vec![
            name.to_string(),
            report.sample_count.to_string(),
            fmt_metric(report.mae),
            fmt_metric(report.mse),
        ]);
    }
    table
}

fn cmd_train(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let (data, m) = load_dataset(cfg)?;
    let kind: ModelKind = cfg.get("model.kind").parse()?;
    let (model, summary, test_report) = train_and_score(cfg, &data, m, kind)?;
    let train_report = training::evaluate(&model, &data.train, &data.taxi_transform);

    let ckpt = cfg.path("paths.checkpoint");
    if let Some(parent) = ckpt.parent() {
        std::fs::create_dir_all(parent)?;
    }
    save_checkpoint(&ckpt, &model)?;
    write_loss_curve(&out_dir.join("loss_curve.csv"), &summary)?;

    println!(
        "trained {} for {} epochs (best validation epoch {}), {} parameters",
        kind,
        summary.epochs_run,
        summary.best_epoch,
        model.store.scalar_count()
    );
    metrics_table(&[("train", &train_report), ("test", &test_report)])
        .publish(out_dir, "metrics")?;
    println!("checkpoint written to {}", ckpt.display());
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let (data, m) = load_dataset(cfg)?;
    let mcfg = cfg.model_config(m)?;
    let model = load_checkpoint(&cfg.path("paths.checkpoint"), &mcfg)?;
    let report = training::evaluate(&model, &data.test, &data.taxi_transform);
    let floor = mean_predictor_baseline(&data.train, &data.test, cfg.parsed("data.p")?);

    metrics_table(&[("test", &report), ("mean-predictor", &floor)])
        .publish(out_dir, "metrics")?;

    let mut per_zone = String::from("zone,mean_abs_err\n");
    for (z, err) in report.per_zone_abs_err.iter().enumerate() {
        let _ = writeln!(per_zone, "{z},{}", fmt_metric(*err));
    }
    std::fs::write(out_dir.join("per_zone_error.csv"), per_zone)?;
    Ok(())
}

/// Shared implementation for the two comparison tables.
fn comparison(
    cfg: &RunConfig,
    out_dir: &Path,
    stem: &str,
    kinds: &[ModelKind],
) -> Result<()> {
    let (data, m) = load_dataset(cfg)?;
    let mut table = Table::new(&["model", "params", "epochs", "test_mae", "test_mse"]);
    for &kind in kinds {
        let (model, summary, report) = train_and_score(cfg, &data, m, kind)?;
        table.row(vec![
            kind.to_string(),
            model.store.scalar_count().to_string(),
            summary.epochs_run.to_string(),
            fmt_metric(report.mae),
            fmt_metric(report.mse),
        ]);
    }
    table.publish(out_dir, stem)?;

    let floor = mean_predictor_baseline(&data.train, &data.test, cfg.parsed("data.p")?);
    println!("mean-predictor floor: test_mae {}", fmt_metric(floor.mae));
    Ok(())
}

fn cmd_baselines(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let mut kinds = vec![ModelKind::Variant(Variant::Full)];
    kinds.extend(Baseline::ALL.iter().map(|&b| ModelKind::Baseline(b)));
    comparison(cfg, out_dir, "baselines", &kinds)
}

fn cmd_ablate(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let kinds: Vec<ModelKind> = Variant::ALL.iter().map(|&v| ModelKind::Variant(v)).collect();
    comparison(cfg, out_dir, "ablation", &kinds)
}

fn cmd_predict(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let (data, m) = load_dataset(cfg)?;
    let mcfg = cfg.model_config(m)?;
    let model = load_checkpoint(&cfg.path("paths.checkpoint"), &mcfg)?;

    let spec = cfg.get("predict.target");
    let sample = if spec.is_empty() {
        data.test
            .last()
            .ok_or_else(|| Error::Data("no test samples to predict".to_string()))?
    } else {
        let target: usize = cfg.parsed("predict.target")?;
        data.train
            .iter()
            .chain(data.test.iter())
            .find(|s| s.target_index.0 == target)
            .ok_or_else(|| {
                Error::Data(format!("no sample has target interval {target}"))
            })?
    };

    let predicted = model.predict(sample, &data.taxi_transform).clamped();
    let mut table = Table::new(&["zone", "pred_inflow", "pred_outflow", "actual_inflow", "actual_outflow"]);
    for z in 0..m {
        table.row(vec![
            z.to_string(),
            fmt_metric(predicted.get(0, z)),
            fmt_metric(predicted.get(1, z)),
            fmt_metric(sample.target_raw.get(0, z)),
            fmt_metric(sample.target_raw.get(1, z)),
        ]);
    }
    println!("predicted flows for target interval {}", sample.target_index.0);
    table.publish(out_dir, "predictions")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inv(overrides: &[&str]) -> Invocation {
        Invocation {
            overrides: overrides.iter().map(|s| s.to_string()).collect(),
            ..Invocation::default()
        }
    }

    #[test]
    fn defaults_cover_every_known_key() {
        let cfg = RunConfig::resolve(&Invocation::default()).unwrap();
        for (key, _) in KNOWN_KEYS {
            let _ = cfg.get(key);
        }
        assert_eq!(cfg.get("train.epochs"), "200");
        assert_eq!(cfg.get("data.p"), "8");
        assert_eq!(cfg.get("data.k"), "3");
        assert_eq!(cfg.get("train.learning_rate"), "0.001");
    }

    #[test]
    fn unknown_keys_are_fatal_and_named() {
        let err = RunConfig::resolve(&inv(&["train.epoch=5"])).unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("train.epoch"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn config_file_applies_before_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# comment\n\ntrain.epochs = 7\nsynth.rho=0.5\n").unwrap();
        let invocation = Invocation {
            config_file: Some(path),
            overrides: vec!["train.epochs=9".to_string()],
            ..Invocation::default()
        };
        let cfg = RunConfig::resolve(&invocation).unwrap();
        assert_eq!(cfg.get("train.epochs"), "9");
        assert_eq!(cfg.get("synth.rho"), "0.5");
    }

    #[test]
    fn malformed_config_lines_name_the_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "train.epochs=5\nnot a key value pair\n").unwrap();
        let invocation = Invocation {
            config_file: Some(path.clone()),
            ..Invocation::default()
        };
        let err = RunConfig::resolve(&invocation).unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains(":2"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn snapshot_round_trips_through_the_file_parser() {
        let cfg = RunConfig::resolve(&inv(&["train.epochs=5", "synth.m=6"])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.resolved");
        std::fs::write(&path, cfg.snapshot()).unwrap();
        let reloaded = RunConfig::resolve(&Invocation {
            config_file: Some(path),
            ..Invocation::default()
        })
        .unwrap();
        assert_eq!(cfg.snapshot(), reloaded.snapshot());
    }

    #[test]
    fn path_defaults_follow_the_out_dir() {
        let cfg = RunConfig::resolve(&inv(&["paths.out_dir=elsewhere"])).unwrap();
        assert_eq!(cfg.get("paths.taxi_edges"), "elsewhere/synth/taxi.edges");
        assert_eq!(cfg.get("paths.checkpoint"), "elsewhere/train/model.ckpt");
        let explicit =
            RunConfig::resolve(&inv(&["paths.taxi_edges=custom.edges"])).unwrap();
        assert_eq!(explicit.get("paths.taxi_edges"), "custom.edges");
    }

    #[test]
    fn typed_getters_report_the_key_on_parse_failure() {
        let cfg = RunConfig::resolve(&inv(&["train.epochs=soon"])).unwrap();
        let err = cfg.train_config().unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("train.epochs"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn model_config_reflects_overrides() {
        let cfg = RunConfig::resolve(&inv(&["model.kind=gru", "model.dropout_p=0.0"])).unwrap();
        let mcfg = cfg.model_config(6).unwrap();
        assert_eq!(mcfg.kind, ModelKind::Baseline(Baseline::Gru));
        assert_eq!(mcfg.dropout_p, 0.0);
        assert_eq!(mcfg.m, 6);
        let expected = Forecaster::expected_param_count(&mcfg);
        let model = Forecaster::new(mcfg, 0).unwrap();
        assert_eq!(model.store.scalar_count(), expected);
    }

    #[test]
    fn zone_registry_specs_parse() {
        let nyc = RunConfig::resolve(&inv(&["data.zones=nyc"])).unwrap();
        assert_eq!(nyc.registry().unwrap().len(), 265);
        let small = RunConfig::resolve(&inv(&["data.zones=contiguous:7"])).unwrap();
        assert_eq!(small.registry().unwrap().len(), 7);
        let bad = RunConfig::resolve(&inv(&["data.zones=hexgrid"])).unwrap();
        assert!(bad.registry().is_err());
    }

    #[test]
    fn table_text_aligns_and_csv_is_raw() {
        let mut t = Table::new(&["model", "mae"]);
        t.row(vec!["full".to_string(), "1.25".to_string()]);
        t.row(vec!["no_fusion".to_string(), "2".to_string()]);
        let text = t.text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("model      "), "{:?}", lines[0]);
        assert_eq!(t.csv(), "model,mae\nfull,1.25\nno_fusion,2\n");
    }

    #[test]
    fn seed_flag_wins_over_file_and_set() {
        let invocation = Invocation {
            seed: Some(99),
            overrides: vec!["seed=5".to_string()],
            ..Invocation::default()
        };
        let cfg = RunConfig::resolve(&invocation).unwrap();
        assert_eq!(cfg.seed().unwrap(), 99);
    }

    #[test]
    fn model_seeds_differ_across_kinds_and_repeats() {
        let a = model_seed(1, ModelKind::Variant(Variant::Full), 0);
        let b = model_seed(1, ModelKind::Variant(Variant::NoFusion), 0);
        let c = model_seed(1, ModelKind::Variant(Variant::Full), 1);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }
}
