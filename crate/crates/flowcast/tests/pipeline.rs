//! End-to-end runs of the `flowcast` binary: the synth -> train ->
//! evaluate -> predict chain, CSV ingest, exit-code classes, and run
//! reproducibility, all inside temp directories.

use std::path::Path;
use std::process::{Command, Output};

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flowcast"))
}

/// Settings shared by every tiny pipeline run: 5 zones, 5 days of 8
/// slots, and a 2-epoch training budget.
fn tiny_args(base: &Path) -> Vec<String> {
    [
        "synth.m=5",
        "synth.days=5",
        "data.zones=contiguous:5",
        "data.days=5",
        "train.epochs=2",
        "train.batch_size=8",
    ]
    .iter()
    .flat_map(|kv| ["--set".to_string(), kv.to_string()])
    .chain([
        "--set".to_string(),
        format!("paths.out_dir={}", base.display()),
        "--seed".to_string(),
        "7".to_string(),
    ])
    .collect()
}

fn run_ok(cmd: &str, extra: &[String]) -> Output {
    let output = binary().arg(cmd).args(extra).output().expect("binary runs");
    assert!(
        output.status.success(),
        "flowcast {cmd} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("missing artifact {}: {e}", path.display()))
}

#[test]
fn synth_train_evaluate_predict_produces_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();
    let args = tiny_args(base);

    run_ok("synth", &args);
    assert!(base.join("synth/taxi.edges").exists());
    assert!(base.join("synth/aux.edges").exists());
    assert!(base.join("synth/config.resolved").exists());

    let train_out = run_ok("train", &args);
    let stdout = String::from_utf8_lossy(&train_out.stdout);
    assert!(stdout.contains("trained"), "unexpected train output: {stdout}");
    assert!(base.join("train/model.ckpt").exists());
    let curve = read(&base.join("train/loss_curve.csv"));
    assert_eq!(curve.lines().next().unwrap(), "epoch,train_mse,val_mae");
    assert_eq!(curve.lines().count(), 3, "2 epochs -> header + 2 rows");
    let metrics = read(&base.join("train/metrics.csv"));
    assert!(metrics.contains("train"));
    assert!(metrics.contains("test"));

    run_ok("evaluate", &args);
    let eval_metrics = read(&base.join("evaluate/metrics.csv"));
    assert!(eval_metrics.contains("mean-predictor"));
    let per_zone = read(&base.join("evaluate/per_zone_error.csv"));
    assert_eq!(per_zone.lines().count(), 6, "header + one row per zone");

    run_ok("predict", &args);
    let predictions = read(&base.join("predict/predictions.csv"));
    assert_eq!(
        predictions.lines().next().unwrap(),
        "zone,pred_inflow,pred_outflow,actual_inflow,actual_outflow"
    );
    assert_eq!(predictions.lines().count(), 6);
}

#[test]
fn ingest_builds_edge_lists_from_trip_csv() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();

    // Four rows land in the 2-day window; one is malformed, one names an
    // unregistered zone, one falls outside the window.
    let trips = "\
tpep_pickup_datetime,tpep_dropoff_datetime,PULocationID,DOLocationID
2021-01-01 06:00:00,2021-01-01 06:20:00,0,1
2021-01-01 06:30:00,2021-01-01 06:45:00,0,1
2021-01-01 18:00:00,2021-01-01 18:10:00,1,2
2021-01-02 03:00:00,2021-01-02 03:30:00,2,0
not-a-date,2021-01-01 07:00:00,0,1
2021-01-01 09:00:00,2021-01-01 09:05:00,99,1
2021-03-01 00:00:00,2021-03-01 00:10:00,1,1
";
    let trips_path = base.join("trips.csv");
    std::fs::write(&trips_path, trips).unwrap();

    let mut args: Vec<String> = [
        "data.zones=contiguous:3",
        "data.days=2",
        "data.p=4",
        "data.epoch=2021-01-01",
    ]
    .iter()
    .flat_map(|kv| ["--set".to_string(), kv.to_string()])
    .collect();
    args.extend([
        "--set".to_string(),
        format!("ingest.taxi_file={}", trips_path.display()),
        "--set".to_string(),
        format!("ingest.aux_file={}", trips_path.display()),
        "--set".to_string(),
        format!("paths.out_dir={}", base.display()),
    ]);

    let output = run_ok("ingest", &args);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("4 trips kept"), "unexpected ingest output: {stdout}");

    let edges = read(&base.join("ingest/taxi.edges"));
    assert_eq!(edges.lines().next().unwrap(), "interval,origin,dest,count");
    let total: u64 = edges
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, 4, "kept trips must equal summed edge counts");
    // 06:00 and 06:30 share the 6h slot of day 0: one edge row of count 2.
    assert!(edges.lines().any(|l| l == "1,0,1,2"), "edges:\n{edges}");
}

#[test]
fn exit_codes_distinguish_usage_data_and_numerical_errors() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();

    // Unknown configuration key: usage class.
    let out = binary()
        .args(["synth", "--set", "nope.key=1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.key"));

    // Unknown subcommand and bad flags are usage errors through clap.
    let out = binary().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    // Help and version are successes.
    assert_eq!(binary().arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(binary().arg("--version").output().unwrap().status.code(), Some(0));

    // Missing edge-list file: data class.
    let mut args = tiny_args(base);
    args.extend([
        "--set".to_string(),
        format!("paths.taxi_edges={}", base.join("absent.edges").display()),
    ]);
    let out = binary().arg("train").args(&args).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    // Diverging training: numerical class. The learning rate is so large
    // that the second batch's forward pass overflows to infinity.
    let args = tiny_args(base);
    run_ok("synth", &args);
    let mut args = tiny_args(base);
    args.extend(["--set".to_string(), "train.learning_rate=1e200".to_string()]);
    let out = binary().arg("train").args(&args).output().unwrap();
    assert_eq!(
        out.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn identical_seeds_give_byte_identical_runs() {
    let run = |dir: &Path| {
        let args = tiny_args(dir);
        run_ok("synth", &args);
        run_ok("train", &args);
        run_ok("evaluate", &args);
        (
            read(&dir.join("synth/taxi.edges")),
            read(&dir.join("train/loss_curve.csv")),
            read(&dir.join("evaluate/metrics.csv")),
        )
    };
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let (edges_a, curve_a, metrics_a) = run(dir_a.path());
    let (edges_b, curve_b, metrics_b) = run(dir_b.path());
    assert_eq!(edges_a, edges_b);
    assert_eq!(curve_a, curve_b);
    assert_eq!(metrics_a, metrics_b);
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();
    let mut args = tiny_args(base);
    args.extend(["--set".to_string(), "synth.rho=0.4".to_string()]);
    run_ok("synth", &args);

    // Feeding the recorded snapshot back as the config file must re-create
    // the exact dataset, even without the original flags.
    let second = base.join("again");
    let out = binary()
        .arg("synth")
        .args([
            "--config".to_string(),
            base.join("synth/config.resolved").display().to_string(),
            "--out".to_string(),
            second.display().to_string(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        read(&base.join("synth/taxi.edges")),
        read(&second.join("taxi.edges"))
    );
}

#[test]
fn out_dir_env_var_relocates_runs() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();
    let output = binary()
        .args(["synth", "--set", "synth.m=4", "--set", "synth.days=2"])
        .env("FLOWCAST_OUT_DIR", base)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(base.join("synth/taxi.edges").exists());
}
