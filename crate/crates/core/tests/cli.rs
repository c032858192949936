use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const BIN: &str = env!("CARGO_BIN_EXE_loss-tunnel");

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--out")
        .arg(out)
        .args(args)
        .env("LOSS_TUNNEL_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = run(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("cfg.json");
    std::fs::write(
        &p,
        r#"{
  "schema_version": 1,
  "name": "small",
  "seed": 11,
  "model": {"hidden": [6, 6]},
  "path": {"degree": 2, "train": {"epochs": 300}},
  "sampling": {
    "prior": {"kind": "tunnel_s", "sigma": 1.0},
    "temperature_grid": [1.0, 10.0],
    "sampler": {"chains": 2, "warmup": 40, "draws": 40}
  },
  "polymer": {"steps": 2000, "repetitions": 5}
}"#,
    )
    .unwrap();
    p.display().to_string()
}

fn csv_rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn gen_data_is_deterministic_with_default_split_sizes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = a.path().join("d");
    let db = b.path().join("d");
    ok(&da, &["--seed", "7", "gen-data"]);
    ok(&db, &["--seed", "7", "gen-data"]);
    for (split, rows) in [("train", 70), ("val", 18), ("test", 33)] {
        let fa = da.join("data").join(format!("{split}.csv"));
        let fb = db.join("data").join(format!("{split}.csv"));
        assert_eq!(std::fs::read(&fa).unwrap(), std::fs::read(&fb).unwrap());
        assert_eq!(csv_rows(&fa), rows, "{split}");
    }
    ok(&da, &["--seed", "8", "--force", "gen-data"]);
    assert_ne!(
        std::fs::read(da.join("data/train.csv")).unwrap(),
        std::fs::read(db.join("data/train.csv")).unwrap()
    );
}

#[test]
fn unwritable_output_is_exit_3() {
    let d = tempfile::tempdir().unwrap();
    let file = d.path().join("plain");
    std::fs::write(&file, "x").unwrap();
    let o = run(&file.join("sub"), &["gen-data"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bad_config_is_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bad.json");
    std::fs::write(&cfg, r#"{"schema_version": 1, "no_such_field": 3}"#).unwrap();
    let o = run(d.path(), &["--config", cfg.to_str().unwrap(), "gen-data"]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(&cfg, r#"{"polymer": {"reps": 5}}"#).unwrap();
    let o = run(d.path(), &["--config", cfg.to_str().unwrap(), "gen-data"]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(&cfg, r#"{"schema_version": 99}"#).unwrap();
    let o = run(d.path(), &["--config", cfg.to_str().unwrap(), "gen-data"]);
    assert_eq!(o.status.code(), Some(2));
    // downstream command without its inputs
    let o = run(d.path(), &["build-tunnel"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stale_upstream_is_exit_4_with_both_hashes() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path());
    ok(d.path(), &["--config", &cfg, "gen-data"]);
    let ds = d.path().join("data/dataset.json");
    let mut text = std::fs::read_to_string(&ds).unwrap();
    text.push(' ');
    std::fs::write(&ds, text).unwrap();
    let o = run(d.path(), &["--config", &cfg, "train-path"]);
    assert_eq!(o.status.code(), Some(4));
    let err = String::from_utf8_lossy(&o.stderr);
    let hex64 = err
        .split(|c: char| !c.is_ascii_hexdigit())
        .filter(|w| w.len() == 64)
        .count();
    assert_eq!(hex64, 2, "{err}");
}

#[test]
fn reruns_are_idempotent_and_force_rewrites() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path());
    ok(d.path(), &["--config", &cfg, "gen-data"]);
    let m = d.path().join("data/manifest.json");
    let before = std::fs::read(&m).unwrap();
    let o = run(d.path(), &["--config", &cfg, "gen-data"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("up to date"));
    assert_eq!(std::fs::read(&m).unwrap(), before);

    // a damaged output is not current any more
    std::fs::write(d.path().join("data/val.csv"), "junk").unwrap();
    ok(d.path(), &["--config", &cfg, "gen-data"]);
    assert_eq!(csv_rows(&d.path().join("data/val.csv")), 18);

    ok(d.path(), &["--config", &cfg, "--force", "gen-data"]);
    assert_eq!(csv_rows(&d.path().join("data/val.csv")), 18);
}

fn pipeline(dir: &Path) -> String {
    let cfg = small_config(dir);
    ok(dir, &["--config", &cfg, "gen-data"]);
    ok(dir, &["--config", &cfg, "train-path"]);
    ok(dir, &["--config", &cfg, "build-tunnel"]);
    ok(dir, &["--config", &cfg, "sample"]);
    ok(dir, &["--config", &cfg, "sample", "--prior", "volume"]);
    let table = ok(dir, &["--config", &cfg, "evaluate", "--format", "both"]);
    assert!(table.contains("LPPD test") && table.contains("R-hat avg"));
    ok(
        dir,
        &["--config", &cfg, "evaluate", "--sweep", "--format", "json"],
    );
    std::fs::read_to_string(dir.join("eval/tunnel-s-sweep/metrics.json")).unwrap()
}

#[test]
fn full_pipeline_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = pipeline(a.path());
    let mb = pipeline(b.path());
    assert_eq!(ma, mb);
    let m: serde_json::Value = serde_json::from_str(&ma).unwrap();
    assert_eq!(m["evaluations"].as_array().unwrap().len(), 2);
    assert_eq!(
        std::fs::read(a.path().join("eval/tunnel-s/metrics.json")).unwrap(),
        std::fs::read(b.path().join("eval/tunnel-s/metrics.json")).unwrap()
    );

    // both priors leave diagnostics for a side-by-side comparison
    for tag in ["tunnel-s", "volume"] {
        let s: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(a.path().join(format!("samples/{tag}/summary.json"))).unwrap(),
        )
        .unwrap();
        assert!(s["mean_ess"].as_f64().unwrap() > 0.0, "{tag}");
        assert!(s["mean_rhat"].as_f64().is_some(), "{tag}");
        assert!(!s["ess"].as_array().unwrap().is_empty());
    }
    let vol: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(a.path().join("samples/volume/run.json")).unwrap(),
    )
    .unwrap();
    let tun: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(a.path().join("samples/tunnel-s/run.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(vol["tunnel_sha256"], tun["tunnel_sha256"]);
}

#[test]
fn diagnose_iid_fixture() {
    let d = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (chains, draws) = (2, 10_000);
    let mut text = String::new();
    for m in 0..chains {
        for u in 0..draws {
            let x: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            let line = serde_json::json!({
                "chain": m, "draw": u, "coord": x, "log_posterior": 0.0
            });
            text.push_str(&line.to_string());
            text.push('\n');
        }
    }
    std::fs::write(d.path().join("iid.jsonl"), text).unwrap();
    let out = ok(d.path(), &["diagnose", "--samples", "iid.jsonl"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let n = (chains * draws) as f64;
    assert_eq!(v["ess"].as_array().unwrap().len(), 3);
    let ess = v["mean_ess"].as_f64().unwrap();
    assert!((ess / n - 1.0).abs() < 0.1, "{ess}");
    for r in v["rhat"].as_array().unwrap() {
        assert!(r["value"].as_f64().unwrap() < 1.01);
    }
}

#[test]
fn polymer_command_writes_trace_and_fits() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path());
    ok(d.path(), &["--config", &cfg, "simulate-polymer"]);
    let trace = std::fs::read_to_string(d.path().join("polymer/trace.csv")).unwrap();
    assert!(trace.lines().count() > 2);
    let fits: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("polymer/fits.json")).unwrap())
            .unwrap();
    assert!(fits["fits_last_decade"]["com"]["slope"].as_f64().is_some());
}
