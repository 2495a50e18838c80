use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hdffm::bench::{BenchRow, CSV_HEADER};
use hdffm::io::{FitFile, ForecastFile, PanelFile, TraceFile};
use hdffm::select::lower_median;

fn hdffm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdffm")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = hdffm(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_is_deterministic_and_shaped() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", r#"{"dgp": 1, "N": 100, "T": 200, "seed": 4}"#);
    let (a, b, truth) = (dir.path().join("a.json"), dir.path().join("b.json"), dir.path().join("t.json"));
    ok(&["simulate", "--config", &cfg, "--out", p(&a), "--truth", p(&truth)]);
    ok(&["simulate", "--config", &cfg, "--out", p(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let file: PanelFile = serde_json::from_slice(&fs::read(&a).unwrap()).unwrap();
    assert_eq!((file.n, file.t), (100, 200));
    assert!(file.coeffs.iter().all(|s| s.len() == 200 && s.iter().all(|c| c.len() == 7)));
    assert_eq!(file.manifest.unwrap().params["config"]["seed"], 4);
    let t: serde_json::Value = serde_json::from_slice(&fs::read(&truth).unwrap()).unwrap();
    assert_eq!(t["u"].as_array().unwrap().len(), 3);
    assert_eq!(t["b_tilde"].as_array().unwrap().len(), 100);
}

#[test]
fn estimate_round_trip_and_rank_errors() {
    let dir = tempfile::tempdir().unwrap();
    // Rank-one scalar panel.
    let csv: String = (1..=5)
        .map(|i| (0..8).map(|t| format!("{}", i as f64 * ((t as f64) * 0.7).sin())).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    let panel_csv = dir.path().join("r1.csv");
    fs::write(&panel_csv, csv).unwrap();
    let stdout = ok(&["estimate", "--panel", p(&panel_csv), "--k", "1"]);
    let v: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("V(k) = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(v.abs() < 1e-12, "{stdout}");

    let out = hdffm(&["estimate", "--panel", p(&panel_csv), "--k", "2"]);
    assert_eq!(out.status.code(), Some(3));

    let out = hdffm(&["estimate", "--panel", "/nonexistent.json", "--k", "1"]);
    assert_eq!(out.status.code(), Some(4));

    // Reload equivalence and manifest carried through.
    let cfg = write_config(dir.path(), "cfg.json", r#"{"N": 20, "T": 50, "seed": 9}"#);
    let panel = dir.path().join("p.json");
    let fit_path = dir.path().join("fit.json");
    ok(&["simulate", "--config", &cfg, "--out", p(&panel)]);
    ok(&["estimate", "--panel", p(&panel), "--k", "3", "--out", p(&fit_path)]);
    let fit: FitFile = serde_json::from_slice(&fs::read(&fit_path).unwrap()).unwrap();
    let fresh = hdffm::fit_factors(&hdffm::io::read_panel(&panel).unwrap(), 3).unwrap();
    for (a, b) in fit.lambda_hat.iter().zip(&fresh.lambda_hat) {
        assert!((a - b).abs() <= 1e-12 * b);
    }
    assert_eq!(fit.e_hat.len(), 20);
    assert_eq!(fit.manifest.params["input_manifest"]["params"]["config"]["seed"], 9);
}

#[test]
fn select_r_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", r#"{"dgp": 1, "N": 50, "T": 100, "seed": 1}"#);
    let panel = dir.path().join("p.json");
    ok(&["simulate", "--config", &cfg, "--out", p(&panel)]);

    assert_eq!(ok(&["select-r", "--panel", p(&panel), "--c", "0"]).trim(), "10");

    let trace_path = dir.path().join("trace.json");
    let var_path = dir.path().join("var.csv");
    let r = ok(&[
        "select-r",
        "--panel",
        p(&panel),
        "--trace",
        p(&trace_path),
        "--variance-csv",
        p(&var_path),
    ]);
    assert_eq!(r.trim(), "3");
    let trace: TraceFile = serde_json::from_slice(&fs::read(&trace_path).unwrap()).unwrap();
    assert_eq!(trace.r_hat, 3);
    assert_eq!(lower_median(&trace.trace.r_hat_per_permutation), 3);
    let var = fs::read_to_string(&var_path).unwrap();
    let mut lines = var.lines();
    assert!(lines.next().unwrap().starts_with("# manifest: "));
    assert_eq!(lines.next().unwrap(), "permutation,c_index,c,variance,r_hat_full");
    assert_eq!(lines.count(), 5 * 201);

    let out = hdffm(&["select-r", "--panel", p(&panel), "--penalty", "IC9"]);
    assert_eq!(out.status.code(), Some(2));
}

fn bench_spec(dir: &Path, reps: usize, out: &str) -> String {
    write_config(
        dir,
        &format!("spec{reps}.json"),
        &format!(
            r#"{{"dgp": [1, 2], "N": [10, 20], "T": [30], "replications": {reps}, "k": [2, 3],
                "seed": 100, "output": "{out}"}}"#
        ),
    )
}

#[test]
fn bench_rows_resume_and_aggregation() {
    let dir = tempfile::tempdir().unwrap();
    let spec = bench_spec(dir.path(), 2, "full.csv");
    ok(&["bench", "--spec", &spec]);
    let full = fs::read_to_string(dir.path().join("full.csv")).unwrap();
    let mut lines = full.lines();
    assert!(lines.next().unwrap().starts_with("# manifest: "));
    assert_eq!(lines.next().unwrap(), CSV_HEADER);
    assert_eq!(lines.count(), 2 * 2 * 2 * 2);

    // Resume a one-replication run to two replications.
    let partial = bench_spec(dir.path(), 1, "part.csv");
    ok(&["bench", "--spec", &partial]);
    let grown = write_config(
        dir.path(),
        "grown.json",
        &fs::read_to_string(&partial).unwrap().replace("\"replications\": 1", "\"replications\": 2"),
    );
    ok(&["bench", "--spec", &grown, "--resume"]);
    let rows = |name: &str| -> Vec<BenchRow> {
        let mut r: Vec<BenchRow> = hdffm::bench::read_rows(&dir.path().join(name)).unwrap();
        r.sort_by_key(|r| (r.dgp, r.n, r.t, r.replication, r.k));
        r
    };
    assert_eq!(rows("full.csv"), rows("part.csv"));

    // Independent aggregation of the raw text matches typed aggregation.
    let mut by_cell: BTreeMap<(String, String, String), (f64, usize)> = BTreeMap::new();
    for line in full.lines().skip(2) {
        let f: Vec<&str> = line.split(',').collect();
        let e = by_cell.entry((f[0].into(), f[1].into(), f[3].into())).or_insert((0.0, 0));
        e.0 += f[7].parse::<f64>().unwrap();
        e.1 += 1;
    }
    for ((d, n, k), (sum, count)) in by_cell {
        let typed: Vec<f64> = rows("full.csv")
            .iter()
            .filter(|r| r.dgp.to_string() == d && r.n.to_string() == n && r.k.to_string() == k)
            .map(|r| r.phi)
            .collect();
        let mean = typed.iter().sum::<f64>() / typed.len() as f64;
        assert!((mean - sum / count as f64).abs() < 1e-12);
    }
}

fn synthetic_mortality_csv(n_pref: usize, years: usize) -> String {
    let mut s = String::from("prefecture_id,year,sex,age,rate\n");
    for sex in ["F", "M"] {
        for p in 0..n_pref {
            for y in 0..years {
                let common = 0.15 * ((y as f64) * 0.4).sin();
                for age in 0..=110 {
                    let age_label = if age == 110 { "110+".to_string() } else { age.to_string() };
                    let level = -8.5 + 0.085 * age as f64 - 0.015 * y as f64
                        + common * (1.0 + 0.1 * p as f64)
                        + 0.02 * ((p * 7 + y * 3 + age) as f64).sin();
                    // A few missing values exercise the forward fill.
                    let rate = if age == 40 && (p + y) % 5 == 0 { String::new() } else { format!("{:.6e}", level.exp().min(0.95)) };
                    s.push_str(&format!("{},{},{},{},{}\n", p + 1, 1975 + y, sex, age_label, rate));
                }
            }
        }
    }
    s
}

#[test]
fn forecast_mortality_smoke_and_methods() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("mort.csv");
    fs::write(&csv, synthetic_mortality_csv(6, 30)).unwrap();
    let mut outputs = Vec::new();
    for method in ["tnh", "cf"] {
        let table = dir.path().join(format!("{method}.csv"));
        let out = dir.path().join(format!("{method}.json"));
        let stdout = ok(&[
            "forecast",
            "--mortality",
            p(&csv),
            "--method",
            method,
            "--horizon",
            "1,2",
            "--first-origin",
            "24",
            "--table",
            p(&table),
            "--out",
            p(&out),
        ]);
        assert!(stdout.starts_with("label,method,h,origins,mafe,msfe"));
        let text = fs::read_to_string(&table).unwrap();
        let rows: Vec<&str> = text.lines().skip(2).collect();
        assert_eq!(rows.len(), 4);
        for row in &rows {
            let f: Vec<&str> = row.split(',').collect();
            let h: usize = f[2].parse().unwrap();
            assert_eq!(f[3].parse::<usize>().unwrap(), 30 - 24 - h + 1);
            let (mafe, msfe): (f64, f64) = (f[4].parse().unwrap(), f[5].parse().unwrap());
            assert!(mafe > 0.0 && msfe > 0.0 && mafe.is_finite() && msfe.is_finite());
        }
        let files: Vec<ForecastFile> = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
        assert_eq!(files.len(), 4);
        assert_eq!(files[0].forecasts[0].grid_values.as_ref().unwrap().len(), 90);
        outputs.push(files);
    }
    let diff = outputs[0][0].forecasts[0]
        .coefficients
        .iter()
        .zip(&outputs[1][0].forecasts[0].coefficients)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff > 1e-8);
}

#[test]
fn forecast_validation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", r#"{"N": 10, "T": 40}"#);
    let panel = dir.path().join("p.json");
    ok(&["simulate", "--config", &cfg, "--out", p(&panel)]);
    assert_eq!(hdffm(&["forecast", "--panel", p(&panel), "--horizon", "0"]).status.code(), Some(2));
    assert_eq!(hdffm(&["forecast"]).status.code(), Some(2));
    let stdout = ok(&["forecast", "--panel", p(&panel), "--r", "3", "--first-origin", "35"]);
    assert!(stdout.contains("panel,tnh,1,5,"));
}
