use std::path::Path;
use std::process::{Command, Output};

fn icl_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icl-lab")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

const TINY: &[&str] = &["--d", "2", "--iterations", "30", "--restarts", "2", "--eval-trials", "300", "--batch-size", "16"];

fn run_to(preset: &str, extra: &[&str], out: &Path) -> Output {
    let mut args = vec![preset, "--out", out.to_str().unwrap()];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    icl_lab(&args)
}

#[test]
fn theory_table_matches_isotropic_closed_form() {
    let o = icl_lab(&["theory-table", "--design", "iid", "--d", "20", "--n", "1..80"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    let header = rows.headers().unwrap().clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let recs: Vec<csv::StringRecord> = rows.records().map(Result::unwrap).collect();
    assert_eq!(recs.len(), 80);
    for r in &recs {
        let n: f64 = r[col("n")].parse().unwrap();
        let theory: f64 = r[col("theory_risk")].parse().unwrap();
        assert!((theory - (20.0 - 20.0 * n / (n + 21.0))).abs() < 1e-12);
        let c: f64 = r[col("theory_c")].parse().unwrap();
        assert!((c - 1.0 / (n + 21.0)).abs() < 1e-15);
        let norm: f64 = r[col("normalized_risk")].parse().unwrap();
        assert_eq!(norm, r[col("risk")].parse::<f64>().unwrap() / 20.0);
    }
    assert!(!text.contains('\r'));
}

#[test]
fn same_seed_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a.csv"), dir.path().join("b.csv"), dir.path().join("c.csv"));
    let extra = ["--n", "2,3", "--models", "attn,h3,pgd_theory", "--seed", "11"];
    assert!(run_to("fig-iid", &extra, &a).status.success());
    assert!(run_to("fig-iid", &extra, &b).status.success());
    let other = ["--n", "2,3", "--models", "attn,h3,pgd_theory", "--seed", "12"];
    assert!(run_to("fig-iid", &other, &c).status.success());
    let (a, b, c) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap(), std::fs::read(c).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 1 + 2 * 3);
}

#[test]
fn worker_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let extra = ["--n", "2", "--alpha", "0,0.5"];
    let mut args = vec!["fig-rag", "--out", a.to_str().unwrap()];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&extra);
    let one = Command::new(env!("CARGO_BIN_EXE_icl-lab")).args(&args).env("ICL_WORKERS", "1").output().unwrap();
    assert!(one.status.success());
    args[2] = b.to_str().unwrap();
    let two = Command::new(env!("CARGO_BIN_EXE_icl-lab")).args(&args).env("ICL_WORKERS", "3").output().unwrap();
    assert!(two.status.success());
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "[train]\niterations = 10\nmomentum = 0.9\n").unwrap();
    let o = icl_lab(&["fig-iid", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.momentum"));
}

#[test]
fn malformed_value_names_the_key() {
    let o = icl_lab(&["theory-table", "--n", "4,x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sweep.n"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "[design]\nkind = \"iid\"\nd = 3\n\n[sweep]\nn = [1, 2, 3]\n\n[output]\nseed = 5\n").unwrap();
    let o = icl_lab(&["theory-table", "--config", cfg.to_str().unwrap(), "--d", "4"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("theory-table,pgd_theory,4,1,"));
    assert!(lines[1].contains(",5,"));
}

#[test]
fn unwritable_output_fails_before_running() {
    let o = icl_lab(&["theory-table", "--out", "/nonexistent-dir/x.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent-dir/x.csv"));
}

#[test]
fn octic_oracle_agrees() {
    let o = icl_lab(&["oracle-moments", "--kind", "octic", "--d", "2", "--samples", "1e6"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("formula=384 "));
}

#[test]
fn cross_quartic_reports_discrepancy_and_exits_zero() {
    let o = icl_lab(&["oracle-moments", "--kind", "cross_quartic", "--d", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("formula=20 "));
    assert!(text.contains("conditioning=24 "));
    assert!(text.lines().any(|l| l.starts_with("DISCREPANCY")));
}

#[test]
fn random_moment_draws_agree() {
    for kind in ["quartic", "sextic"] {
        let o = icl_lab(&["oracle-moments", "--kind", kind, "--d", "3", "--w", "random", "--draws", "3", "--samples", "2e5"]);
        assert!(o.status.success(), "{kind}: {}", stderr(&o));
        assert_eq!(stdout(&o).lines().count(), 3);
    }
}

#[test]
fn convexity_oracle_for_each_design() {
    for design in ["iid", "rag", "task"] {
        let o = icl_lab(&["oracle-convexity", "--design", design, "--alpha", if design == "iid" { "0" } else { "0.5" }]);
        assert!(o.status.success(), "{design}: {}", stderr(&o));
        assert!(stdout(&o).contains("min_eigenvalue="));
    }
}

#[test]
fn lora_preset_rows_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lora.csv");
    let o = run_to("fig-lora", &["--n", "4", "--rank", "1,2"], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let models: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(models, ["attn", "lora", "pgd_theory", "lora", "pgd_theory"]);
    let bad = run_to("fig-lora", &["--n", "4", "--sigma", "0.5"], &out);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("design.sigma"));
}

#[test]
fn averaged_preset_emits_every_context_length() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("avg.csv");
    let o = run_to("fig-avg", &["--n", "3"], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let ns: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(ns, ["1", "2", "3", "1", "2", "3"]);
    assert!(text.lines().skip(1).all(|l| l.starts_with("fig-avg-n3,")));
}

#[test]
fn evolving_rows_have_no_theory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("evolve.csv");
    let o = run_to("fig-evolve", &["--n", "3", "--models", "attn"], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[10], "");
    assert_eq!(row[12], "");
    let o = icl_lab(&["theory-table", "--design", "evolve"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn low_rank_sweep_uses_ranks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lr.csv");
    let o = run_to("fig-lowrank", &["--n", "3", "--rank", "1,2"], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let theory: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(10).unwrap().parse().unwrap()).collect();
    assert_eq!(theory.len(), 2);
    assert!(theory[1] <= theory[0]);
}
