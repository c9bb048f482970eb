use std::path::Path;
use std::process::Command;

use kv_runahead::cli::{cmd_noise, cmd_search, cmd_sweep, main_with_args, ExperimentConfig, ResultRow};
use kv_runahead::PartitionLookupTable;

const HEADER: &str = "strategy,C,p,partition,ttft_sim,speedup,ttft_star,ttft_lower,dot_max,pairs,rows,barriers,max_dev";

fn kvr(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("kvr").chain(args.iter().copied());
    let code = main_with_args(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn verify_passes_and_reports_figure_counts() {
    let (code, out, _) = kvr(&["verify"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("[16, 21, 18] (max 21)"));
    assert!(out.contains("[27, 27, 27] (max 27)"));
    assert!(out.contains("KV rows on the wire 22"));
    assert!(out.contains("KV rows on the wire 36"));
    assert!(out.trim_end().ends_with(r#""passed":true}"#));
}

#[test]
fn verify_surfaces_injected_faults() {
    for kind in ["drop", "duplicate", "mislabel"] {
        let (code, out, _) = kvr(&["verify", "--inject-fault", kind, "--fault-layer", "1"]);
        assert_eq!(code, 1, "{kind}");
        assert!(out.contains("protocol error"), "{kind}: {out}");
    }
}

#[test]
fn bad_config_exits_two_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", "{\n  \"seed\": 1,\n  \"context_lengths\": [1, 2,\n}\n");
    let (code, _, err) = kvr(&["--config", &cfg, "sweep"]);
    assert_eq!(code, 2);
    assert!(err.contains("line 4"), "{err}");

    let cfg = write(dir.path(), "unknown.json", r#"{"contxt_lengths": [8]}"#);
    assert_eq!(kvr(&["--config", &cfg, "sweep"]).0, 2);
    assert_eq!(kvr(&["sweep", "--format", "xml"]).0, 2);
    assert_eq!(kvr(&["--config", "/nonexistent.json", "verify"]).0, 2);
}

#[test]
fn sweep_csv_is_stable_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sweep.json",
        r#"{"context_lengths": [64, 2048], "process_counts": [1, 2, 4, 128],
            "strategies": ["serial", "tsp", "kvr-e", "kvr-s"]}"#,
    );
    let (code, first, _) = kvr(&["--config", &cfg, "sweep"]);
    assert_eq!(code, 0);
    let (_, second, _) = kvr(&["--config", &cfg, "sweep"]);
    assert_eq!(first, second);
    assert_eq!(first.lines().next().unwrap(), HEADER);

    let rows: Vec<ResultRow> = csv::Reader::from_reader(first.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap();
    assert_eq!(rows.len(), 2 * 4 * 4);
    let skipped: Vec<_> = rows.iter().filter(|r| r.ttft_sim.is_none()).collect();
    // p=128 > C=64 is infeasible for every strategy; a 127-axis grid is refused.
    assert_eq!(skipped.len(), 5);
    assert!(skipped.iter().all(|r| r.partition.starts_with("skipped")));
    assert!(skipped.iter().all(|r| r.p == 128));
    assert_eq!(skipped.iter().filter(|r| r.context_length == 2048).count(), 1);

    for r in rows.iter().filter(|r| r.p == 1 && r.ttft_sim.is_some()) {
        assert_eq!(r.speedup, Some(1.0));
    }
    for r in rows.iter().filter(|r| r.context_length == 64 && r.ttft_sim.is_some()) {
        assert!(r.max_dev.unwrap() <= 1e-10);
    }
    let find = |s: &str, c: usize, p: usize| {
        rows.iter()
            .find(|r| r.strategy == s && r.context_length == c && r.p == p)
            .and_then(|r| r.ttft_sim)
            .unwrap()
    };
    for c in [64, 2048] {
        for p in [2, 4] {
            assert!(find("KVR-S", c, p) <= find("KVR-E", c, p));
        }
    }
}

#[test]
fn zero_comm_sweep_is_super_linear_at_two_ranks() {
    let config = ExperimentConfig::from_json(
        r#"{"context_lengths": [2048], "process_counts": [1, 2, 4, 8],
            "model": {"n_layers": 1},
            "strategies": ["serial", "kvr-s"],
            "network": {"bandwidth": null, "latency": 0.0},
            "cost": {"alpha": 1e-9, "proj_coeff": 0.0, "softmax_coeff": 0.0, "fixed_overhead": 0.0}}"#,
    )
    .unwrap();
    let rows = cmd_sweep(&config).unwrap();
    let speedup = |p: usize| {
        rows.iter()
            .find(|r| r.strategy == "KVR-S" && r.p == p)
            .and_then(|r| r.speedup)
            .unwrap()
    };
    assert_eq!(speedup(1), 1.0);
    assert!(speedup(2) > 2.0, "{}", speedup(2));
    assert!(speedup(4) > speedup(2) && speedup(8) > speedup(4));
}

#[test]
fn search_builds_a_front_loaded_table_and_predict_reads_it() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("table.json");
    let config = ExperimentConfig {
        context_lengths: vec![8192, 12288, 16384],
        table_processes: 4,
        table: Some(table.clone()),
        ..ExperimentConfig::default()
    };
    let report = cmd_search(&config).unwrap();
    assert!(report.entries.iter().all(|e| e.error.is_none()));
    let saved = std::fs::read_to_string(&table).unwrap();
    let loaded = PartitionLookupTable::load(&table).unwrap();
    assert_eq!(loaded.len(), 3);
    for (_, ratios) in loaded.entries() {
        assert!((ratios.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert!(ratios[0] >= ratios[3]);
    }
    cmd_search(&config).unwrap();
    assert_eq!(std::fs::read_to_string(&table).unwrap(), saved);

    let t = table.to_str().unwrap();
    let (code, out, _) = kvr(&["--table", t, "predict", "--context", "12288"]);
    assert_eq!(code, 0);
    assert!(out.contains("gap 0.000%"), "{out}");
    let (code, out, _) = kvr(&["--table", t, "predict", "--context", "10240", "--format", "json"]);
    assert_eq!(code, 0);
    let json: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(json["gap_pct"].as_f64().unwrap() <= 5.0);
    assert_eq!(json["clamped"], false);
    let (code, out, _) = kvr(&["--table", t, "predict", "--context", "4096"]);
    assert_eq!(code, 0);
    assert!(out.contains("(clamped)"));
}

#[test]
fn predict_rejects_empty_or_missing_tables() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(dir.path(), "empty.json", r#"{"p": 4, "entries": []}"#);
    let (code, _, err) = kvr(&["--table", &empty, "predict", "--context", "100"]);
    assert_eq!(code, 2);
    assert!(err.contains("no entries"), "{err}");
    assert_eq!(kvr(&["predict", "--context", "100"]).0, 2);
}

#[test]
fn noise_reports_ordering_and_zero_without_slowdown() {
    let rows = cmd_noise(&ExperimentConfig::default()).unwrap();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.verdict == "KVR more robust"));

    let quiet = ExperimentConfig::from_json(r#"{"noise": {"slowdown_factor": 1.0, "trials": 3}}"#).unwrap();
    for r in cmd_noise(&quiet).unwrap() {
        assert_eq!((r.mean_pct, r.max_pct), (0.0, 0.0));
    }

    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert_eq!(kvr(&["--seed", "3", "--out", a.to_str().unwrap(), "noise"]).0, 0);
    assert_eq!(kvr(&["--seed", "3", "--out", b.to_str().unwrap(), "noise"]).0, 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn binary_maps_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_kvr");
    let ok = Command::new(bin).arg("verify").output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let fault = Command::new(bin)
        .args(["verify", "--inject-fault", "drop"])
        .output()
        .unwrap();
    assert_eq!(fault.status.code(), Some(1));
    let usage = Command::new(bin).arg("frobnicate").output().unwrap();
    assert_eq!(usage.status.code(), Some(2));
}
