use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn mregger(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mregger"))
        .args(args)
        .env_remove("MREGGER_THREADS")
        .output()
        .expect("spawn mregger")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

// 10 variants, 3 risk factors; three rows have negative beta_x1.
fn write_k3(dir: &Path) -> PathBuf {
    let mut s = String::from(
        "variant_id,effect_allele,other_allele,beta_x1,se_x1,beta_x2,se_x2,beta_x3,se_x3,beta_y,se_y\n",
    );
    for j in 0..10 {
        let f = j as f64;
        let sign = if j % 4 == 1 { -1.0 } else { 1.0 };
        let b1 = sign * (0.05 + 0.011 * f);
        let b2 = 0.02 + 0.007 * ((j * 3) % 10) as f64;
        let b3 = -0.01 + 0.005 * ((j * 7) % 10) as f64;
        let noise = 0.004 * ((j * 5 % 7) as f64 - 3.0);
        let by = 0.01 * sign + 0.3 * b1 + 0.1 * b2 - 0.2 * b3 + noise;
        s.push_str(&format!(
            "rs{j},A,G,{b1:.5},0.01,{b2:.5},0.01,{b3:.5},0.01,{by:.5},{:.4}\n",
            0.01 + 0.001 * f
        ));
    }
    let p = dir.join("k3.csv");
    fs::write(&p, s).unwrap();
    p
}

fn write_k1(dir: &Path) -> PathBuf {
    let mut s = String::from("variant_id,effect_allele,other_allele,beta_bmi,se_bmi,beta_y,se_y\n");
    for j in 0..8 {
        let b = 0.04 + 0.01 * j as f64;
        let by = 0.02 + 0.25 * b + 0.003 * ((j * 3 % 5) as f64 - 2.0);
        s.push_str(&format!("v{j},C,T,{b:.4},0.01,{by:.5},0.02\n"));
    }
    let p = dir.join("k1.csv");
    fs::write(&p, s).unwrap();
    p
}

#[test]
fn analyze_k3_mi_me_report() {
    let dir = TempDir::new().unwrap();
    let data = write_k3(dir.path());
    let out = mregger(&["analyze", "--data", data.to_str().unwrap(), "--k", "3", "--methods", "MI,ME", "--ref", "x1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    for rf in ["x1", "x2", "x3"] {
        assert!(text.contains(rf), "{text}");
    }
    assert!(text.contains("(intercept)"), "{text}");
    assert!(text.contains('3'), "{text}");

    let csv = mregger(&[
        "analyze", "--data", data.to_str().unwrap(), "--k", "3", "--methods", "MI,ME", "--ref", "x1", "--format", "csv",
    ]);
    assert!(csv.status.success(), "{}", stderr(&csv));
    let body = stdout(&csv);
    let rows: Vec<&str> = body.lines().filter(|l| !l.starts_with('#')).skip(1).filter(|l| !l.is_empty()).collect();
    let mi = rows.iter().filter(|r| r.split(',').any(|c| c == "MI")).count();
    let me = rows.iter().filter(|r| r.split(',').any(|c| c == "ME")).count();
    let icpt = rows.iter().filter(|r| r.contains("(intercept)")).count();
    assert_eq!(mi, 3, "{body}");
    assert_eq!(me, 4, "{body}");
    assert_eq!(icpt, 1, "{body}");
}

#[test]
fn jsonl_lines_parse() {
    let dir = TempDir::new().unwrap();
    let data = write_k3(dir.path());
    let out = mregger(&[
        "analyze", "--data", data.to_str().unwrap(), "--k", "3", "--ref", "x1", "--format", "jsonl",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let lines: Vec<serde_json::Value> =
        stdout(&out).lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).unwrap()).collect();
    let count = |kind: &str| lines.iter().filter(|v| v["record"] == kind).count();
    assert_eq!(count("dataset"), 1);
    assert_eq!(count("estimate"), 7);
    let orient = lines.iter().find(|v| v["record"] == "orientation").expect("orientation record");
    assert_eq!(orient["flipped"], 3);
}

#[test]
fn egger_without_reference_exits_2() {
    let dir = TempDir::new().unwrap();
    let data = write_k3(dir.path());
    let out = mregger(&["analyze", "--data", data.to_str().unwrap(), "--k", "3", "--methods", "UE"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--ref"), "{}", stderr(&out));
}

#[test]
fn me_on_one_factor_reports_ue() {
    let dir = TempDir::new().unwrap();
    let data = write_k1(dir.path());
    let out = mregger(&["analyze", "--data", data.to_str().unwrap(), "--k", "1", "--methods", "ME", "--ref", "bmi"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("UE"), "{}", stdout(&out));
}

#[test]
fn strict_turns_warnings_into_exit_1() {
    let dir = TempDir::new().unwrap();
    let data = write_k3(dir.path());
    let j: usize = 10;
    let mut corr = String::new();
    for s in 0..j {
        let row: Vec<String> = (0..j)
            .map(|t| if s == t { "1".into() } else if s.abs_diff(t) == 1 { "0.2".into() } else { "0".into() })
            .collect();
        corr.push_str(&row.join(","));
        corr.push('\n');
    }
    let cpath = dir.path().join("corr.csv");
    fs::write(&cpath, corr).unwrap();
    let args = ["analyze", "--data", data.to_str().unwrap(), "--k", "3", "--ref", "x1", "--corr", cpath.to_str().unwrap()];
    let relaxed = mregger(&args);
    assert_eq!(relaxed.status.code(), Some(0), "{}", stderr(&relaxed));
    let mut strict_args = args.to_vec();
    strict_args.push("--strict");
    let strict = mregger(&strict_args);
    assert_eq!(strict.status.code(), Some(1), "{}", stderr(&strict));
}

#[test]
fn grid_csv_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (p, threads) in [(&a, "1"), (&b, "4")] {
        let out = mregger(&["--threads", threads, "grid", "--reps", "10", "--seed", "7", "--mediation", "--out", p.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let ca = fs::read(&a).unwrap();
    assert_eq!(ca, fs::read(&b).unwrap());
    let text = String::from_utf8(ca).unwrap();
    assert!(text.lines().take_while(|l| l.starts_with('#')).any(|l| l.contains("seed=7")), "{text}");
    let data_rows = text.lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(data_rows, 64);
    assert!(a.with_extension("txt").exists());
}

#[test]
fn simulate_scenario_3() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("s3.toml");
    fs::write(&cfg, "scenario = 3\nmu = 0.05\n").unwrap();
    let out = mregger(&["simulate", "--config", cfg.to_str().unwrap(), "--reps", "200", "--format", "csv"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let body = stdout(&out);
    assert!(body.lines().any(|l| l.starts_with('#') && l.contains("seed")), "{body}");
    let mut table = body.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = table.next().unwrap().split(',').collect();
    let row: Vec<&str> = table.next().unwrap().split(',').collect();
    let col = |name: &str| -> f64 { row[header.iter().position(|h| *h == name).unwrap()].parse().unwrap() };
    // MI absorbs the directional pleiotropy, ME does not
    assert!((col("mi_mean_theta1") - 0.21).abs() < 0.04, "{body}");
    assert!(col("me_mean_theta1").abs() < 0.05, "{body}");

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "scenario = 3\nmu = 0.05\nbogus = 1\n").unwrap();
    let out = mregger(&["simulate", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
