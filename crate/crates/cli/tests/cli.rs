use std::path::Path;
use std::process::{Command, Output};

fn robfactor(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robfactor")).args(args).current_dir(cwd).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate(cwd: &Path, n: &str, t: &str, out: &str) {
    let o = robfactor(&["simulate", "--scenario", "A", "--case", "1", "--n", n, "--t", t, "--seed", "7", "--out", out], cwd);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn fit_happy_path_writes_three_files_quietly() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "100", "100", "sim");
    let o = robfactor(&["fit", "--input", "sim/panel.csv", "--method", "hpca", "--r", "3", "--out", "fit"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(o.stderr.is_empty());
    for f in ["loadings.csv", "factors.csv", "meta.json", "run.json"] {
        assert!(dir.path().join("fit").join(f).exists(), "{f}");
    }
    let run: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("fit/run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "fit");
    assert_eq!(run["estimator"]["tau_rule"]["kind"], "median_residual_norm");
}

#[test]
fn fit_usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "10", "12", "sim");
    let o = robfactor(&["fit", "--input", "sim/panel.csv", "--method", "ihr", "--r", "0"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--r"));
    let o = robfactor(&["fit", "--input", "sim/panel.csv", "--method", "ihr", "--r", "11"], dir.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = robfactor(&["fit", "--input", "sim/panel.csv", "--method", "pca", "--r", "2", "--tau", "1"], dir.path());
    assert_eq!(code(&o), 2);
    let o = robfactor(&["fit", "--input", "sim/panel.csv", "--method", "svd", "--r", "2"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn malformed_csv_exits_3_with_row() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "time,a,b,c\n1,1,2,3\n2,2,1,0\n3,0,1,1\n4,1,oops,2\n").unwrap();
    let o = robfactor(&["fit", "--input", "bad.csv", "--method", "pca", "--r", "1"], dir.path());
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("row 5"), "{}", stderr(&o));
    let o = robfactor(&["fit", "--input", "missing.csv", "--method", "pca", "--r", "1"], dir.path());
    assert_eq!(code(&o), 3);
}

#[test]
fn degenerate_fit_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    // rank-one panel: a second factor has identically zero scores
    std::fs::write(dir.path().join("flat.csv"), "time,a,b,c\n1,1,2,3\n2,2,4,6\n3,3,6,9\n").unwrap();
    let o = robfactor(&["fit", "--input", "flat.csv", "--method", "ihr", "--r", "2"], dir.path());
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn rank_on_noiseless_panel() {
    let dir = tempfile::tempdir().unwrap();
    // exactly rank three: truth loadings times truth factors
    let sim = robfactor(&["simulate", "--scenario", "A", "--case", "1", "--n", "40", "--t", "40", "--seed", "3", "--out", "sim"], dir.path());
    assert_eq!(code(&sim), 0);
    let truth_l = std::fs::read_to_string(dir.path().join("sim/truth_loadings.csv")).unwrap();
    let truth_f = std::fs::read_to_string(dir.path().join("sim/truth_factors.csv")).unwrap();
    let parse = |s: &str| -> Vec<Vec<f64>> {
        s.lines().skip(1).map(|l| l.split(',').skip(1).map(|x| x.parse().unwrap()).collect()).collect()
    };
    let (l, f) = (parse(&truth_l), parse(&truth_f));
    let mut clean = String::from("time");
    for i in 0..40 {
        clean += &format!(",s{i}");
    }
    clean.push('\n');
    for (s, fs) in f.iter().enumerate() {
        clean += &s.to_string();
        for li in &l {
            let v: f64 = li.iter().zip(fs).map(|(a, b)| a * b).sum();
            clean += &format!(",{v}");
        }
        clean.push('\n');
    }
    std::fs::write(dir.path().join("clean.csv"), clean).unwrap();

    let o = robfactor(&["rank", "--input", "clean.csv", "--method", "rm-hpca", "--k", "8", "--out", "rk"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["r_hat"], 3);
    assert_eq!(std::fs::read(dir.path().join("rk/rank.json")).unwrap(), o.stdout);

    let o = robfactor(&["rank", "--input", "clean.csv", "--method", "rm-hpca", "--P", "-1"], dir.path());
    assert_eq!(code(&o), 2);
    let o = robfactor(&["rank", "--input", "clean.csv", "--method", "rm-hpca", "--k", "9999"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn simulate_resolves_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let o = robfactor(&["simulate", "--scenario", "B", "--case", "3", "--n", "50", "--t", "50", "--seed", "1", "--out", "b"], dir.path());
    assert_eq!(code(&o), 0);
    let cfg: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("b/config.json")).unwrap()).unwrap();
    assert_eq!(cfg["j"], 10);
    assert_eq!(cfg["rho"], 0.5);
    let o = robfactor(&["simulate", "--scenario", "A", "--case", "9", "--n", "5", "--t", "5"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn mc_single_replication_and_method_validation() {
    let dir = tempfile::tempdir().unwrap();
    let o = robfactor(&["mc", "--scenario", "A", "--case", "1", "--n", "20", "--t", "20", "--methods", "pca,ihr", "--reps", "1", "--out", "mc"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = std::fs::read_to_string(dir.path().join("mc/table.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "method,mee_cc,mee_cc_iqr,ave_fl,ave_fl_sd,ave_fs,ave_fs_sd");
    for row in &rows[1..] {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!((cells[2], cells[4], cells[6]), ("0", "0", "0"));
    }
    let o = robfactor(&["mc", "--scenario", "A", "--case", "1", "--n", "20", "--t", "20", "--methods", "pca,qfa", "--reps", "1"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("pca, hpca, ihr"));

    let o = robfactor(&["mc", "--scenario", "C", "--case", "1", "--n", "30", "--t", "30", "--methods", "rm-hpca,er", "--reps", "2", "--out", "rk"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(std::fs::read_to_string(dir.path().join("rk/table.csv")).unwrap().starts_with("method,mean_rhat,under,over\n"));
}

#[test]
fn backtest_window_arithmetic_and_guards() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "100", "84", "sim");
    let o = robfactor(&["backtest", "--input", "sim/panel.csv", "--method", "pca", "--r", "2", "--window", "72", "--out", "bt"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let oos = std::fs::read_to_string(dir.path().join("bt/oos_returns.csv")).unwrap();
    assert_eq!(oos.lines().count(), 13);
    assert!(oos.starts_with("time,return\n73,"));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("bt/report.json")).unwrap()).unwrap();
    assert_eq!(report["oos_returns"].as_array().unwrap().len(), 12);
    assert!(!dir.path().join("bt/weights.csv").exists());

    let o = robfactor(&["backtest", "--input", "sim/panel.csv", "--window", "100"], dir.path());
    assert_eq!(code(&o), 2);
    let o = robfactor(&["backtest", "--window", "72"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn replay_reproduces_and_threads_do_not_matter() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "30", "30", "sim");
    let base = ["fit", "--input", "sim/panel.csv", "--method", "ihr", "--r", "2"];
    let mut a = base.to_vec();
    a.extend(["--out", "a", "--threads", "1"]);
    let mut b = base.to_vec();
    b.extend(["--out", "b", "--threads", "3"]);
    assert_eq!(code(&robfactor(&a, dir.path())), 0);
    assert_eq!(code(&robfactor(&b, dir.path())), 0);
    assert_eq!(code(&robfactor(&["replay", "a/run.json", "--out", "c"], dir.path())), 0);
    for f in ["loadings.csv", "factors.csv", "meta.json", "run.json"] {
        let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(x, std::fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
        assert_eq!(x, std::fs::read(dir.path().join("c").join(f)).unwrap(), "{f}");
    }
    std::fs::write(dir.path().join("junk.json"), "{").unwrap();
    assert_eq!(code(&robfactor(&["replay", "junk.json"], dir.path())), 3);
}
