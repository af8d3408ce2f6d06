use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use curbside::georef::{project, CameraExtrinsics, CameraIntrinsics};

fn curbside(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curbside"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = curbside(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SHORT: &str = "warmup = 300.0\nhorizon = 900.0\n";

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let overlay = dir.path().join("short.toml");
    fs::write(&overlay, SHORT).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "simulate", "--config", "preset:april25", "--overlay", s(&overlay), "--demand", "700", "--runs", "3",
            "--seed", "9", "--out", s(out),
        ]);
    }
    for f in ["summary.tsv", "runs.tsv", "convergence.tsv", "forced_stops.tsv", "events.jsonl", "observations.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let runs = fs::read_to_string(a.join("runs.tsv")).unwrap();
    assert_eq!(runs.lines().count(), 4);
    let first = fs::read_to_string(a.join("events.jsonl")).unwrap();
    let ev: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(ev["kind"], "enter");
    // the echoed scenario loads back
    let echoed = curbside::ScenarioConfig::load(&a.join("scenario.toml"), &[]).unwrap();
    assert_eq!(echoed.demand_rate, 700.0);
}

#[test]
fn json_lines_output_parses() {
    let dir = tempfile::tempdir().unwrap();
    let overlay = dir.path().join("short.toml");
    fs::write(&overlay, SHORT).unwrap();
    let o = ok(&[
        "simulate", "--config", "preset:july13", "--overlay", s(&overlay), "--policy", "no_wait:L0=30", "--runs", "2",
        "--out", s(&dir.path().join("o")), "--format", "json-lines",
    ]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(!text.trim().is_empty());
    for line in text.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
}

#[test]
fn missing_config_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = curbside(&["simulate", "--config", s(&dir.path().join("nope.toml")), "--out", s(&out)]);
    assert!(!o.status.success());
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
    assert!(!out.exists());

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "schema_version = 1\ndemand_rate = -3\n").unwrap();
    assert!(!curbside(&["simulate", "--config", s(&bad), "--out", s(&out)]).status.success());
    assert!(!curbside(&["simulate", "--config", "preset:april25", "--policy", "teleport", "--out", s(&out)])
        .status
        .success());
    assert!(!out.exists());
}

#[test]
fn sweep_grids() {
    let dir = tempfile::tempdir().unwrap();
    let overlay = dir.path().join("short.toml");
    fs::write(&overlay, SHORT).unwrap();
    let base = ["sweep", "--config", "preset:april25", "--overlay", s(&overlay), "--runs", "2"];
    let empty = curbside(&[&base[..], &["--policy", "no_wait:L0=0", "--sweep", "L0=100:10:50"]].concat());
    assert!(!empty.status.success());
    let no_policy = curbside(&[&base[..], &["--sweep", "L0=0:30:60"]].concat());
    assert!(!no_policy.status.success());

    let o = ok(&[
        &base[..],
        &["--policy", "downstream:L0=0,L_H=210", "--sweep", "L_H=150,210", "--fixed", "L0=0,30", "--out", s(dir.path())],
    ]
    .concat());
    let table = String::from_utf8(o.stdout).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert_eq!(table, fs::read_to_string(dir.path().join("sweep.tsv")).unwrap());
    assert!(table.contains("downstream\t30.0000\t150.0000\t2\t"));
}

/// Forced stops with long waits upstream of 120 m and short ones
/// downstream: exponential quantiles, every third stop censored.
fn two_regime_observations() -> String {
    let mut csv = String::from("location,wait,discharged,instance\n");
    let n = 300;
    for i in 0..n {
        let q = -((1.0 - (i as f64 + 0.5) / n as f64) as f64).ln();
        let flag = u8::from(i % 3 != 0);
        let up = 2.0 + 117.0 * ((i * 37) % n) as f64 / n as f64;
        let down = 121.0 + 117.0 * ((i * 53) % n) as f64 / n as f64;
        csv += &format!("{up:.2},{:.3},{flag},1\n", 25.0 * q);
        csv += &format!("{down:.2},{:.3},{flag},1\n", 4.0 * q);
        csv += &format!("{:.2},{:.3},{flag},2\n", (up + down) / 2.0, 10.0 * q);
    }
    csv
}

#[test]
fn estimate_then_simulate_with_the_fit() {
    let dir = tempfile::tempdir().unwrap();
    let obs = dir.path().join("obs.csv");
    fs::write(&obs, two_regime_observations()).unwrap();
    let fit = dir.path().join("fit");
    ok(&["estimate", "--observations", s(&obs), "--k", "2", "--out", s(&fit)]);
    let partition = fs::read_to_string(fit.join("partition.tsv")).unwrap();
    assert!(partition.starts_with("segment\tfrom_m\tto_m\tcount\tmean_wait_s\n"));
    let rows: Vec<Vec<&str>> = partition
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split('\t').collect())
        .collect();
    assert_eq!(rows.len(), 2);
    let boundary: f64 = rows[0][2].parse().unwrap();
    assert!((100.0..=125.0).contains(&boundary), "{boundary}");

    let overlay = dir.path().join("short.toml");
    fs::write(&overlay, SHORT).unwrap();
    let again = dir.path().join("again");
    ok(&[
        "simulate", "--config", "preset:april25", "--overlay", s(&overlay), "--overlay",
        s(&fit.join("patience.toml")), "--runs", "2", "--out", s(&again),
    ]);
    let used = curbside::ScenarioConfig::load(&again.join("scenario.toml"), &[]).unwrap();
    let p = &used.behavior.patience;
    assert_eq!(p.first_instance.len(), 2);
    assert!(p.first_instance[0].mean() > p.first_instance[1].mean());
    assert_eq!(used.horizon, 900.0);

    // the simulator's own forced stops feed straight back in
    let sim_obs = again.join("observations.csv");
    let parsed = curbside::estimation::read_observations(&sim_obs).unwrap();
    assert!(!parsed.is_empty());

    // more segments than stops
    let tiny = dir.path().join("tiny.csv");
    fs::write(&tiny, "location,wait,discharged,instance\n10,3,1,1\n50,4,0,1\n").unwrap();
    let o = curbside(&["estimate", "--observations", s(&tiny), "--k", "3", "--out", s(&dir.path().join("x"))]);
    assert!(!o.status.success());
}

#[test]
fn georef_recovers_a_known_camera() {
    let dir = tempfile::tempdir().unwrap();
    let a = CameraIntrinsics::new(1200.0, 1180.0, 960.0, 540.0).unwrap();
    // 5 m up, looking down the lane, pitched 0.25 rad toward the road
    let (sn, cs) = 0.25f64.sin_cos();
    let truth = CameraExtrinsics {
        theta: -0.25,
        psi: 0.0,
        omega: std::f64::consts::PI,
        translation: [0.0, 5.0 * cs, 5.0 * sn],
    };
    let mut csv = String::from("x,y,X,Y,Z\n");
    for (x, z) in [(-3.0, 10.0), (3.0, 12.0), (-2.0, 25.0), (2.5, 30.0), (0.0, 45.0), (-3.0, 60.0), (3.0, 80.0)] {
        let p = project(&a, &truth, [x, 0.0, z]).unwrap();
        csv += &format!("{},{},{x},0,{z}\n", p[0], p[1]);
    }
    let corr = dir.path().join("corr.csv");
    fs::write(&corr, csv).unwrap();
    let intr = dir.path().join("intr.toml");
    fs::write(&intr, "fx = 1200.0\nfy = 1180.0\nx0 = 960.0\ny0 = 540.0\n").unwrap();
    let out = dir.path().join("g");
    ok(&["georef", "--correspondences", s(&corr), "--intrinsics", s(&intr), "--out", s(&out)]);
    let doc: toml::Table = fs::read_to_string(out.join("extrinsics.toml")).unwrap().parse().unwrap();
    let e: CameraExtrinsics = doc["extrinsics"].clone().try_into().unwrap();
    assert!((e.theta - truth.theta).abs() < 1e-8);
    assert!(e.psi.abs() < 1e-8);
    assert!((e.omega.abs() - std::f64::consts::PI).abs() < 1e-8);
    let c = e.camera_center();
    assert!((c[1] - 5.0).abs() < 1e-6 && c[0].abs() < 1e-6 && c[2].abs() < 1e-6);
    let report = fs::read_to_string(out.join("range_error.tsv")).unwrap();
    assert_eq!(report.lines().count(), 8);

    let line = dir.path().join("line.csv");
    fs::write(&line, "x,y,X,Y,Z\n1,2,0,0,10\n1,3,0,0,20\n1,4,0,0,30\n").unwrap();
    assert!(!curbside(&["georef", "--correspondences", s(&line), "--intrinsics", s(&intr), "--out", s(&out)])
        .status
        .success());
}
