use std::path::Path;
use std::process::{Command, Output};

fn loopdet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loopdet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn rows(csv_text: &str) -> Vec<Vec<String>> {
    csv_text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn config_path() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs/lab_device.toml")
        .display()
        .to_string()
}

#[test]
fn shipped_config_loads() {
    let o = loopdet(&["--config", &config_path(), "channels"]);
    assert!(stdout(&o).starts_with("k,h_k,H_k\n"));
}

#[test]
fn lossless_sweep_has_increasing_first_share() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("lossless.toml");
    std::fs::write(&cfg, "[device]\nt0 = 1\ntheta = 1\ntl = 1\neta = 1\n").unwrap();
    let out = stdout(&loopdet(&[
        "--config",
        cfg.to_str().unwrap(),
        "channels",
        "--sweep",
        "--r-step",
        "0.05",
    ]));
    assert!(out.starts_with("r,H_1,H_2,H_3,H_4,H_5,H_6,H_rest\n"));
    let h1: Vec<f64> = rows(&out).iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(h1.len(), 21);
    assert!(h1.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn single_ratio_shares_close() {
    let out = stdout(&loopdet(&["channels", "--r", "0.45"]));
    let total: f64 = rows(&out).iter().map(|r| r[2].parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert_eq!(rows(&out).last().unwrap()[0], "rest");
}

#[test]
fn sweep_contains_the_reported_three_channel_split() {
    let out = stdout(&loopdet(&["channels", "--sweep", "--r-step", "0.001"]));
    let hit = rows(&out).iter().any(|r| {
        let h: Vec<f64> = r[1..4].iter().map(|v| v.parse().unwrap()).collect();
        (h[0] - 0.39).abs() < 0.005 && (h[1] - 0.42).abs() < 0.005 && (h[2] - 0.13).abs() < 0.005
    });
    assert!(hit);
}

#[test]
fn optimize_writes_one_row_per_grid_point() {
    let o = loopdet(&["optimize", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 1001);
    let r_star = v["metadata"]["r_star"].as_f64().unwrap();
    assert!((r_star - 0.446).abs() <= 0.010);
    assert!(String::from_utf8_lossy(&o.stderr).contains("r* = 0.446"));
}

#[test]
fn cm_curve_ratio_is_monotone_and_tends_to_one() {
    let out = stdout(&loopdet(&["cm-curve", "--reference-plane", "detected"]));
    let ratio: Vec<f64> = rows(&out).iter().map(|r| r[3].parse().unwrap()).collect();
    assert_eq!(ratio.len(), 31);
    assert!(ratio.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    let far = stdout(&loopdet(&["cm-curve", "--mu", "40"]));
    assert!(rows(&far)[0][3].parse::<f64>().unwrap() > 0.999);
}

#[test]
fn calibrate_reproduces_lab_numbers() {
    let out = stdout(&loopdet(&["calibrate", "--ratio-stat", "0.80", "--t-over-eta", "0.78"]));
    let get = |q: &str| -> f64 { rows(&out).iter().find(|r| r[0] == q).unwrap()[1].parse().unwrap() };
    assert!((get("tl_hat") - 0.94).abs() < 0.01);
    assert!((get("t0_hat") - 0.92).abs() < 0.01);
}

#[test]
fn calibrate_reads_channel_csv() {
    let dir = tempfile::tempdir().unwrap();
    let channels = stdout(&loopdet(&["channels", "--channels", "8"]));
    let mut csv_text = String::from("k,H_k,sigma_k\n");
    for r in rows(&channels).iter().filter(|r| r[0] != "rest") {
        csv_text.push_str(&format!("{},{},0.001\n", r[0], r[2]));
    }
    let input = dir.path().join("shares.csv");
    std::fs::write(&input, csv_text).unwrap();
    let meta: serde_json::Value = serde_json::from_str(&stdout(&loopdet(&["channels", "--format", "json"]))).unwrap();
    let te = (meta["metadata"]["total_transmission"].as_f64().unwrap() / 0.6).to_string();
    let o = loopdet(&["calibrate", "--input", input.to_str().unwrap(), "--t-over-eta", &te]);
    let out = stdout(&o);
    let get = |q: &str| -> f64 { rows(&out).iter().find(|r| r[0] == q).unwrap()[1].parse().unwrap() };
    assert!((get("tl_exact") - 0.94).abs() < 0.002);
    assert!((get("t0_exact") - 0.92).abs() < 0.002);
}

#[test]
fn too_few_channels_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("short.csv");
    std::fs::write(&input, "k,H_k,sigma_k\n1,0.5,0.01\n2,0.3,0.01\n").unwrap();
    let o = loopdet(&["calibrate", "--input", input.to_str().unwrap(), "--t-over-eta", "0.78"]);
    assert_eq!(o.status.code(), Some(5));
}

#[test]
fn exit_codes_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[device]\neta = 0.6\nwavelength = 800\n").unwrap();
    let o = loopdet(&["--config", bad.to_str().unwrap(), "channels"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    let empty = dir.path().join("empty_grid.toml");
    std::fs::write(&empty, "[scan]\nmu = []\n").unwrap();
    assert_eq!(
        loopdet(&["--config", empty.to_str().unwrap(), "postselect"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(loopdet(&["channels", "--bogus"]).status.code(), Some(2));
    assert_eq!(loopdet(&["simulate-tof"]).status.code(), Some(3));

    let diverge = dir.path().join("diverge.toml");
    std::fs::write(
        &diverge,
        "[device]\nt0 = 1\ntheta = 1\ntl = 1\neta = 1\nr = 1\nt13 = 0\n",
    )
    .unwrap();
    assert_eq!(
        loopdet(&["--config", diverge.to_str().unwrap(), "channels"])
            .status
            .code(),
        Some(3)
    );

    let flat = dir.path().join("dark.toml");
    std::fs::write(&flat, "[device]\neta = 0\n").unwrap();
    assert_eq!(
        loopdet(&["--config", flat.to_str().unwrap(), "optimize"]).status.code(),
        Some(4)
    );
}

#[test]
fn postselect_rows_all_carry_herald_rate() {
    let out = stdout(&loopdet(&["postselect", "--mu", "0.5,1,2,5"]));
    for r in rows(&out) {
        assert_eq!(r.len(), 5);
        assert!(!r[4].is_empty());
    }
}

#[test]
fn simulation_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let o = loopdet(&[
            "simulate-tof",
            "--seed",
            "12",
            "--trials",
            "20000",
            "--out",
            p.to_str().unwrap(),
        ]);
        assert!(o.status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let meta: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 12);
    assert_eq!(meta["n_trials"], 20000);
    assert!(meta["simulation"].get("workers").is_none());
}
