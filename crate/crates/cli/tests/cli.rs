use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn consentry(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_consentry"));
    cmd.args(args).env_remove("CONSENTRY_OUT");
    cmd
}

fn run_config(name: &str, out: &Path) -> Output {
    let cfg = configs().join(name);
    consentry(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
    .output()
    .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, cfg: Value) -> PathBuf {
    let path = dir.join("scenario.json");
    fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn ring_average_decides_mean() {
    let out = TempDir::new().unwrap();
    let o = run_config("ring4_avg.json", out.path());
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let report = read_json(&out.path().join("report.json"));
    assert_eq!(report["schema_version"], 1);
    let trial = &report["trials"][0];
    for d in trial["decided_values"].as_array().unwrap() {
        assert_eq!(d["value"], 2.5);
    }
    let csv = fs::read_to_string(out.path().join("summary.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        consentry_cli::SUMMARY_COLUMNS.join(",")
    );
    assert!(lines.next().unwrap().contains(",decided,4,2.5,"));
}

#[test]
fn five_ballot_election_elects_zero() {
    let out = TempDir::new().unwrap();
    let o = run_config("election_five.json", out.path());
    assert_eq!(o.status.code(), Some(0));
    let report = read_json(&out.path().join("report.json"));
    for d in report["trials"][0]["decided_values"].as_array().unwrap() {
        assert_eq!(d["kind"], "leader");
        assert_eq!(d["value"], 0);
    }
}

#[test]
fn malformed_config_exits_2() {
    let out = TempDir::new().unwrap();
    let o = run_config("bad.json", out.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.path().join("report.json").exists());

    let missing = consentry(&["run", "--config", "/nonexistent/x.json"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn outputs_are_reproducible() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for dir in [&a, &b] {
        assert_eq!(
            run_config("sweep_avg.json", dir.path()).status.code(),
            Some(0)
        );
    }
    for file in ["report.json", "summary.csv"] {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap(),
            "{file} differs between runs"
        );
    }
}

#[test]
fn seed_flag_changes_inputs() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let cfg = configs().join("sweep_avg.json");
    let cfg = cfg.to_str().unwrap();
    for (dir, seed) in [(&a, "1"), (&b, "2")] {
        let o = consentry(&["run", "--config", cfg, "--seed", seed, "--out"])
            .arg(dir.path())
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0));
    }
    let ra = read_json(&a.path().join("report.json"));
    let rb = read_json(&b.path().join("report.json"));
    assert_eq!(ra["trials"][0]["seed"], 1);
    assert_ne!(ra["trials"][0]["inputs"], rb["trials"][0]["inputs"]);
}

#[test]
fn env_var_sets_output_dir() {
    let out = TempDir::new().unwrap();
    let cfg = configs().join("ring4_avg.json");
    let o = consentry(&["run", "--config", cfg.to_str().unwrap()])
        .env("CONSENTRY_OUT", out.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(out.path().join("report.json").exists());
    assert!(out.path().join("summary.csv").exists());
}

#[test]
fn empty_sweep_grid_exits_2() {
    let out = TempDir::new().unwrap();
    let cfg = configs().join("sweep_avg.json");
    let o = consentry(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--vary",
        "topology.n=",
    ])
    .arg("--out")
    .arg(out.path())
    .output()
    .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_sweep_cell_exits_2() {
    let out = TempDir::new().unwrap();
    let cfg = configs().join("sweep_avg.json");
    let o = consentry(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--vary",
        "topology.n=4,0",
    ])
    .arg("--out")
    .arg(out.path())
    .output()
    .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn star_centre_is_non_viable_in_every_cell() {
    let out = TempDir::new().unwrap();
    let cfg = configs().join("star_untrusted_center.json");
    let o = consentry(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--vary",
        "topology.n=4,6,9",
    ])
    .arg("--out")
    .arg(out.path())
    .output()
    .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let report = read_json(&out.path().join("report.json"));
    let cells = report["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 3);
    for cell in cells {
        for t in cell["trials"].as_array().unwrap() {
            assert_eq!(t["termination"], "non_viable");
        }
    }
}

#[test]
fn ring_sweep_rounds_track_diameter() {
    let out = TempDir::new().unwrap();
    let cfg = configs().join("sweep_avg.json");
    let o = consentry(&["sweep", "--config", cfg.to_str().unwrap()])
        .args([
            "--vary",
            "topology.n=4,8,16",
            "--vary",
            "topology.family=ring,path",
        ])
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let mut rdr = csv::Reader::from_path(out.path().join("sweep.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (slack, d, r) = (
        col("rounds_minus_diameter_max"),
        col("diameter_max"),
        col("rounds_max"),
    );
    let rows: Vec<_> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 6);
    for row in rows {
        assert_eq!(&row[slack], "0");
        assert_eq!(row[d], row[r]);
    }
}

#[test]
fn leak_mutation_exits_3() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        json!({
            "protocol": "avg-trusted",
            "topology": {"family": "ring", "n": 4},
            "inputs": [1, 2, 3, 4],
            "mutation": {"leak_plaintext": true},
        }),
    );
    let o = consentry(&["run", "--config", cfg.to_str().unwrap(), "--out"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    let report = read_json(&dir.path().join("out/report.json"));
    let v = report["trials"][0]["privacy_violations"]
        .as_array()
        .unwrap();
    assert!(!v.is_empty());
}

#[test]
fn relative_topology_file_resolves_against_config() {
    let dir = TempDir::new().unwrap();
    fs::copy(
        configs().join("five_ring.json"),
        dir.path().join("five_ring.json"),
    )
    .unwrap();
    let mut cfg = read_json(&configs().join("election_five.json"));
    cfg["seed"] = json!(3);
    let path = write_config(dir.path(), cfg);
    let o = consentry(&["run", "--config", path.to_str().unwrap(), "--out"])
        .arg(dir.path().join("out"))
        .current_dir("/")
        .output()
        .unwrap();
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}
