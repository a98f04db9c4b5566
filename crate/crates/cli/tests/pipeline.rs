//! End-to-end checks of the `liqdet` binary: full pipeline on a synthetic
//! session, exit-code contract, and byte-level reproducibility.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use liqdet_core::hawkes::HawkesParams;
use liqdet_core::lob::{synth_book, write_book_csv, write_trades_csv, SynthConfig};
use tempfile::TempDir;

fn liqdet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_liqdet"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn liqdet")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_synth_session(dir: &Path, seed: u64, duration_s: f64) {
    let (snapshots, prints) = synth_book(seed, duration_s, &SynthConfig::default()).unwrap();
    let book = fs::File::create(dir.join("book.csv")).unwrap();
    write_book_csv(book, &snapshots).unwrap();
    let trades = fs::File::create(dir.join("trades.csv")).unwrap();
    write_trades_csv(trades, &prints).unwrap();
}

#[test]
fn full_pipeline_on_synthetic_session() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_synth_session(dir, 11, 1_800.0);

    let out = liqdet(
        dir,
        &["ingest", "--book", "book.csv", "--trades", "trades.csv", "--session", "09:30:00-17:00:00"],
    );
    assert_ok(&out, "ingest");
    assert!(dir.join("liqdet-manifest.json").exists());

    let out = liqdet(
        dir,
        &[
            "extract", "--book", "book.csv", "--trades", "trades.csv", "--depth", "4",
            "--out", "tt.csv", "--streams", "streams.csv", "--multiplicity", "per-limit",
        ],
    );
    assert_ok(&out, "extract");
    let tt = fs::read_to_string(dir.join("tt.csv")).unwrap();
    assert!(tt.starts_with("ts_ns,side,depth,volume\n"));
    assert!(tt.lines().count() > 10, "too few trade-throughs:\n{tt}");
    assert!(fs::read_to_string(dir.join("streams.csv"))
        .unwrap()
        .starts_with("ts_ns,side,jump,mark\n"));
    assert!(dir.join("tt.csv.manifest.json").exists());

    let out = liqdet(
        dir,
        &[
            "fit", "--events", "tt.csv", "--horizon", "1800", "--bins", "2",
            "--eta-grid", "0", "--no-polish-eta", "--max-iters", "80",
            "--out", "params.json",
        ],
    );
    assert_ok(&out, "fit");
    let params = HawkesParams::from_json(&fs::read_to_string(dir.join("params.json")).unwrap())
        .expect("fitted params parse and validate");
    assert_eq!(params.baseline_a.len(), 2);

    let out = liqdet(
        dir,
        &[
            "diagnose", "--events", "tt.csv", "--params", "params.json",
            "--out", "report.json", "--qq", "qq.csv",
        ],
    );
    assert_ok(&out, "diagnose");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    let p = report["pooled"]["ks_p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert!(fs::read_to_string(dir.join("qq.csv")).unwrap().starts_with("stream,theoretical,sample\n"));

    let out = liqdet(
        dir,
        &[
            "detect", "--events", "tt.csv", "--ref", "params.json",
            "--rho-up", "1.5", "--rho-down", "0.5", "--m", "5",
            "--out", "regimes.csv",
        ],
    );
    assert_ok(&out, "detect");
    validate_regimes_schema(&fs::read_to_string(dir.join("regimes.csv")).unwrap());
}

fn validate_regimes_schema(text: &str) {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("ts_ns,U,U_tilde,U_hat,alarm,regime"));
    let mut last_ts = i64::MIN;
    let mut rows = 0usize;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 6, "bad row: {line}");
        let ts: i64 = fields[0].parse().expect("ts_ns integer");
        assert!(ts >= last_ts, "timestamps regress at {line}");
        last_ts = ts;
        for value in &fields[1..4] {
            let x: f64 = value.parse().expect("numeric statistic");
            assert!(x.is_finite());
        }
        assert!(["0", "UP", "DOWN"].contains(&fields[4]), "bad alarm: {line}");
        assert!(["NEUTRAL", "UP", "DOWN"].contains(&fields[5]), "bad regime: {line}");
        rows += 1;
    }
    assert!(rows > 0, "empty regimes file");
}

#[test]
fn exit_codes_follow_the_contract() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();

    // No arguments: usage, exit 2.
    let out = liqdet(dir, &[]);
    assert_eq!(out.status.code(), Some(2));
    // Unknown flag: exit 2.
    let out = liqdet(dir, &["arl", "--bogus", "1"]);
    assert_eq!(out.status.code(), Some(2));
    // Incomplete combination detected past clap: exit 2.
    let out = liqdet(dir, &["arl", "--rho-grid", "0.5", "--out", "s.csv"]);
    assert_eq!(out.status.code(), Some(2));
    // Missing input file: data error, exit 1.
    let out = liqdet(dir, &["detect", "--events", "nope.csv", "--ref", "nope.json", "--out", "r.csv"]);
    assert_eq!(out.status.code(), Some(1));
    // Malformed CSV: data error, exit 1, message names the line.
    fs::write(dir.join("bad.csv"), "ts_ns,side,depth,volume\n1,weird,1,5\n").unwrap();
    fs::write(
        dir.join("params.json"),
        HawkesParams::constant([0.4, 0.4], [[0.5, 0.0], [0.0, 0.5]], [[1.0; 2]; 2], [0.0, 0.0], [1.0, 1.0], 100.0)
            .to_json(),
    )
    .unwrap();
    let out = liqdet(dir, &["detect", "--events", "bad.csv", "--ref", "params.json", "--out", "r.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(stderr.contains('2'), "error should locate line 2: {stderr}");
    // Successful single-value run: exit 0, value on stdout.
    let out = liqdet(dir, &["arl", "--rho", "0.5", "--m", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let value: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!((value - 184.186163).abs() < 1e-4);
}

#[test]
fn reruns_are_byte_identical_per_seed() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let params = HawkesParams::constant(
        [0.4, 0.4],
        [[0.5, 0.0], [0.0, 0.5]],
        [[1.0; 2]; 2],
        [0.0, 0.0],
        [1.0, 1.0],
        300.0,
    );
    fs::write(dir.join("params.json"), params.to_json()).unwrap();

    let run = |out: &str, seed: &str| {
        let res = liqdet(
            dir,
            &["simulate", "--params", "params.json", "--seed", seed, "--out", out],
        );
        assert_ok(&res, "simulate");
        (
            fs::read(dir.join(out)).unwrap(),
            fs::read(dir.join(format!("{out}.manifest.json"))).unwrap(),
        )
    };
    let (events_a, manifest_a) = run("a.csv", "7");
    let (events_b, manifest_b) = run("b.csv", "7");
    assert_eq!(events_a, events_b, "same seed must reproduce bytes");
    // Manifests differ only in the output path; normalize and compare.
    let normalize = |bytes: &[u8], name: &str| String::from_utf8(bytes.to_vec()).unwrap().replace(name, "OUT");
    assert_eq!(normalize(&manifest_a, "a.csv"), normalize(&manifest_b, "b.csv"));

    let (events_c, _) = run("c.csv", "8");
    assert_ne!(events_a, events_c, "different seed must change the draw");

    // Seed is mandatory for stochastic subcommands.
    let out = liqdet(dir, &["simulate", "--params", "params.json", "--out", "d.csv"]);
    assert_eq!(out.status.code(), Some(2));
}
