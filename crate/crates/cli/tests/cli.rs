use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mdiqkd::model::{dark_only_gain, DetectorSpec, ProtocolParams, SystemSpec};
use mdiqkd::simkit::simulate;
use serde_json::Value;
use tempfile::TempDir;

const CONFIG_102: &str = r#"
[system.channel]
total_length = 102.0
attenuation = 0.18987138263665593

[protocol]
mu_x = 0.049
mu_y = 0.189
mu_z = 0.891
p_x = 0.128
p_y = 0.025
p_z = 0.827
"#;

fn mdiqkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdiqkd"))
        .args(args)
        .env_remove("MDIQKD_CONFIG")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> String {
        let p = self.path(name);
        fs::write(&p, text).unwrap();
        p.to_string_lossy().into_owned()
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn model_gains(cfg: &str, distance: &str) -> Vec<f64> {
    let o = mdiqkd(&["model", "--json", "-c", cfg, "--distance", distance]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let rows = v["observables"].as_array().unwrap();
    assert_eq!(rows.len(), 8);
    rows.iter().map(|r| r["s"].as_f64().unwrap()).collect()
}

#[test]
fn model_prints_eight_rows() {
    let ws = Workspace::new();
    let cfg = ws.write("c.toml", CONFIG_102);
    let o = mdiqkd(&["model", "-c", &cfg]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(rows.len(), 8);
    for (row, pair) in rows
        .iter()
        .zip(["oo", "ox", "xo", "oy", "yo", "xx", "yy", "zz"])
    {
        assert!(row.starts_with(pair), "{row}");
    }
}

#[test]
fn vacuum_row_is_dark_only() {
    let ws = Workspace::new();
    let cfg = ws.write("c.toml", CONFIG_102);
    let s = model_gains(&cfg, "102");
    let dark = dark_only_gain(&DetectorSpec::default());
    assert!((s[0] - dark).abs() <= 1e-12 * dark, "{} vs {dark}", s[0]);
}

#[test]
fn longer_link_lowers_every_gain() {
    let ws = Workspace::new();
    let cfg = ws.write("c.toml", CONFIG_102);
    let near = model_gains(&cfg, "102");
    let far = model_gains(&cfg, "404");
    for (i, (n, f)) in near.iter().zip(&far).enumerate().skip(1) {
        assert!(f < n, "row {i}: {f} !< {n}");
    }
}

#[test]
fn config_from_environment() {
    let ws = Workspace::new();
    let cfg = ws.write(
        "c.toml",
        "[system.channel]\ntotal_length = 7.0\nattenuation = 0.2\n",
    );
    let o = Command::new(env!("CARGO_BIN_EXE_mdiqkd"))
        .args(["model", "--json"])
        .env("MDIQKD_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["system"]["channel"]["total_length"], 7.0);
}

#[test]
fn config_errors_exit_2() {
    let ws = Workspace::new();
    let o = mdiqkd(&["model", "-c", &ws.s("absent.toml")]);
    assert_eq!(code(&o), 2);
    let bad = ws.write(
        "bad.toml",
        "[system.channel]\ntotal_length = -1.0\nattenuation = 0.2\n",
    );
    let o = mdiqkd(&["model", "-c", &bad]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("total_length"), "{}", stderr(&o));
    let typo = ws.write("typo.toml", "[run]\nn_pair = 5\n");
    let o = mdiqkd(&["model", "-c", &typo]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("n_pair"), "{}", stderr(&o));
    let o = mdiqkd(&["model", "--out", &ws.s("nowhere/x.json")]);
    assert_eq!(code(&o), 2);
}

#[test]
fn empty_run_rejected() {
    let ws = Workspace::new();
    let o = mdiqkd(&["simulate", "--pairs", "0", "--out", &ws.s("c.json")]);
    assert_eq!(code(&o), 2);
    let o = mdiqkd(&["simulate", "--pairs", "10.5", "--out", &ws.s("c.json")]);
    assert_eq!(code(&o), 2);
    assert!(!ws.path("c.json").exists());
}

#[test]
fn simulate_is_byte_reproducible_and_lossless() {
    let ws = Workspace::new();
    let cfg = ws.write("c.toml", CONFIG_102);
    let run = |name: &str, seed: &str| {
        let o = mdiqkd(&[
            "simulate",
            "-c",
            &cfg,
            "--pairs",
            "300000",
            "--seed",
            seed,
            "--out",
            &ws.s(name),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read(ws.path(name)).unwrap()
    };
    let a = run("a.json", "5");
    let b = run("b.json", "5");
    let c = run("c.json", "6");
    assert_eq!(a, b);
    assert_ne!(a, c);

    let v = json(ws.path("a.json"));
    let meta = &v["meta"];
    assert_eq!(meta["seed"], 5);
    assert_eq!(meta["n_pairs"], 300000);
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
    assert!(meta["tool_version"]
        .as_str()
        .unwrap()
        .starts_with("mdiqkd "));

    let system = SystemSpec::standard_fiber(102.0);
    let params = ProtocolParams::new(0.049, 0.189, 0.891, 0.128, 0.025, 0.827).unwrap();
    let direct = simulate(&system, &params, 300_000, 5).unwrap();
    for l in mdiqkd::model::Label::ALL {
        let rec = &v["stats"][l.as_str()];
        let c = direct.get(l);
        assert_eq!(rec["sent"].as_u64().unwrap(), c.sent);
        assert_eq!(rec["coincidences"].as_u64().unwrap(), c.coincidences);
        assert_eq!(rec["errors"].as_u64().unwrap(), c.errors);
    }
    assert_eq!(v["discarded"].as_u64().unwrap(), direct.discarded);
}

#[test]
fn analyze_round_trip_is_deterministic() {
    let ws = Workspace::new();
    let cfg = ws.write("c.toml", CONFIG_102);
    let counts = ws.s("counts.json");
    let o = mdiqkd(&[
        "simulate", "-c", &cfg, "--pairs", "200000", "--out", &counts,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = mdiqkd(&["analyze", &counts, "-c", &cfg, "--pairs", "200000"]);
    let b = mdiqkd(&["analyze", &counts, "-c", &cfg, "--pairs", "200000"]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    let r = &v["report"];
    for field in [
        "s11_lower",
        "e11_upper",
        "key_length",
        "rate_bps",
        "rate_per_pulse",
    ] {
        assert!(r[field].is_number(), "{field}");
    }
    assert_eq!(r["budget"]["total"].as_f64().unwrap(), 1e-10);
    assert_eq!(v["input"]["kind"], "counts");
    assert_eq!(v["input"]["config_hash"], v["meta"]["config_hash"]);
}

#[test]
fn expected_counts_round_trip() {
    let ws = Workspace::new();
    let cfg = ws.write("c.toml", CONFIG_102);
    let counts = ws.s("e.json");
    let o = mdiqkd(&[
        "simulate",
        "-c",
        &cfg,
        "--expected-mode",
        "--pairs",
        "2.05e12",
        "--out",
        &counts,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let from_file = mdiqkd(&["analyze", &counts, "-c", &cfg, "--asymptotic"]);
    let direct = mdiqkd(&[
        "analyze",
        "-c",
        &cfg,
        "--expected-mode",
        "--pairs",
        "2.05e12",
        "--asymptotic",
    ]);
    assert_eq!(code(&from_file), 0, "{}", stderr(&from_file));
    assert_eq!(code(&direct), 0, "{}", stderr(&direct));
    let a: Value = serde_json::from_slice(&from_file.stdout).unwrap();
    let b: Value = serde_json::from_slice(&direct.stdout).unwrap();
    assert_eq!(a["report"], b["report"]);
    let bps = a["report"]["rate_bps"].as_f64().unwrap();
    assert!((1500.0..=6000.0).contains(&bps), "{bps}");
}

#[test]
fn provenance_mismatch_needs_override() {
    let ws = Workspace::new();
    let cfg = ws.write("c.toml", CONFIG_102);
    let counts = ws.s("counts.json");
    let o = mdiqkd(&[
        "simulate", "-c", &cfg, "--pairs", "100000", "--out", &counts,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = mdiqkd(&["analyze", &counts, "-c", &cfg, "--distance", "150"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("override-provenance"), "{}", stderr(&o));
    let o = mdiqkd(&[
        "analyze",
        &counts,
        "-c",
        &cfg,
        "--distance",
        "150",
        "--override-provenance",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let other = ws.write("p.toml", &CONFIG_102.replace("mu_z = 0.891", "mu_z = 0.5"));
    let o = mdiqkd(&["analyze", &counts, "-c", &other]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("protocol"), "{}", stderr(&o));
}

fn simulated(ws: &Workspace) -> (String, Value) {
    let cfg = ws.write("c.toml", CONFIG_102);
    let counts = ws.s("counts.json");
    let o = mdiqkd(&[
        "simulate", "-c", &cfg, "--pairs", "100000", "--out", &counts,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    (cfg, json(&counts))
}

#[test]
fn malformed_counts_name_the_field() {
    let ws = Workspace::new();
    let (cfg, mut v) = simulated(&ws);
    v["stats"]["xx"]["errors"] = Value::String("many".into());
    let bad = ws.write("bad.json", &v.to_string());
    let o = mdiqkd(&["analyze", &bad, "-c", &cfg]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("stats.xx.errors"), "{}", stderr(&o));

    let (_, mut v) = simulated(&ws);
    v["meta"].as_object_mut().unwrap().remove("seed");
    let bad = ws.write("bad2.json", &v.to_string());
    let o = mdiqkd(&["analyze", &bad, "-c", &cfg]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));

    let o = mdiqkd(&["analyze", &ws.write("junk.json", "{"), "-c", &cfg]);
    assert_eq!(code(&o), 3);
}

#[test]
fn zero_coincidences_give_no_key() {
    let ws = Workspace::new();
    let (cfg, mut v) = simulated(&ws);
    for rec in v["stats"].as_object_mut().unwrap().values_mut() {
        rec["coincidences"] = 0.into();
        rec["errors"] = 0.into();
    }
    let zero = ws.write("zero.json", &v.to_string());
    let o = mdiqkd(&["analyze", &zero, "-c", &cfg]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["report"]["key_length"], 0.0);
}

#[test]
fn contradictory_counts_are_infeasible() {
    let ws = Workspace::new();
    let cfg = ws.write("c.toml", CONFIG_102);
    let counts = ws.s("e.json");
    let o = mdiqkd(&[
        "simulate",
        "-c",
        &cfg,
        "--expected-mode",
        "--pairs",
        "1e12",
        "--out",
        &counts,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut v = json(&counts);
    v["stats"]["yy"]["coincidences"] = 0.0.into();
    v["stats"]["yy"]["errors"] = 0.0.into();
    let bad = ws.write("bad.json", &v.to_string());
    let o = mdiqkd(&["analyze", &bad, "-c", &cfg, "--asymptotic"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

fn sweep_rows(args: &[&str]) -> Vec<Vec<f64>> {
    let o = mdiqkd(args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "distance_km,mdi_finite_bps,mdi_asymptotic_bps,bb84_ideal_sp,bb84_practical_sp,bb84_wcs_decoy"
    );
    lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect()
}

#[test]
fn sweep_single_distance_one_row() {
    let rows = sweep_rows(&["sweep", "--distances", "50"]);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], 50.0);
}

#[test]
fn sweep_curves_ordered_at_every_row() {
    let rows = sweep_rows(&[
        "sweep",
        "--distances",
        "0,25,50,100,150,200,250,300,350",
        "--pairs",
        "1e13",
    ]);
    for r in &rows {
        assert!(
            r[1] <= r[2] * (1.0 + 1e-9),
            "finite above asymptotic: {r:?}"
        );
        assert!(r[4] <= r[3], "practical above ideal: {r:?}");
        assert!(r[5] <= r[3], "decoy WCS above ideal: {r:?}");
        assert!(r.iter().all(|x| *x >= 0.0), "{r:?}");
    }
    for w in rows.windows(2) {
        for col in 2..6 {
            assert!(w[1][col] <= w[0][col], "column {col} rises: {w:?}");
        }
    }
}

#[test]
fn sweep_ultralow_loss_reaches_404_km() {
    let ws = Workspace::new();
    let cfg = ws.write(
        "c.toml",
        "[system.channel]\ntotal_length = 404.0\nattenuation = 0.16\n\n[protocol]\n\
         mu_x = 0.073\nmu_y = 0.302\nmu_z = 0.413\np_x = 0.529\np_y = 0.110\np_z = 0.315\n",
    );
    let rows = sweep_rows(&["sweep", "-c", &cfg, "--distances", "404"]);
    assert!(rows[0][2] > 0.0, "{:?}", rows[0]);
}

#[test]
fn sweep_rejects_empty_distance_list() {
    let o = mdiqkd(&["sweep"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("distance"), "{}", stderr(&o));
}

#[test]
fn optimize_is_deterministic_and_validates_budget() {
    let ws = Workspace::new();
    let cfg = ws.write("c.toml", &format!("{CONFIG_102}\n[run]\nn_pairs = 1e12\n"));
    let run = |name: &str| {
        let o = mdiqkd(&[
            "optimize",
            "-c",
            &cfg,
            "--budget",
            "400",
            "--starts",
            "4",
            "--out",
            &ws.s(name),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read(ws.path(name)).unwrap()
    };
    assert_eq!(run("a.json"), run("b.json"));
    let v = json(ws.path("a.json"));
    let best = v["result"]["best_rate_per_pulse"].as_f64().unwrap();
    assert!(best > 0.0);
    let o = mdiqkd(&["optimize", "-c", &cfg, "--budget", "10"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("budget"), "{}", stderr(&o));
}
