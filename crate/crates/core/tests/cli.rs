use std::process::Command;

fn exe() -> Command {
    Command::new(env!("CARGO_BIN_EXE_jsm2-lab"))
}

#[test]
fn config_errors_exit_with_two() {
    let out = exe().args(["bounds", "--n", "20", "--k", "10", "--m", "8", "--s", "1", "--snr", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("requires M > K"));
    let out = exe().args(["simulate", "--frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn budget_exit_code() {
    let out = exe()
        .args(["sweep", "--axis", "m", "--values", "12", "--n", "40", "--k", "10", "--s", "1", "--snr", "1", "--cap", "1000"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn verify_passes_on_healthy_build() {
    let dir = tempfile::tempdir().unwrap();
    let out = exe().args(["verify", "--seed", "7", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = std::fs::read_to_string(dir.path().join("verify.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let pass_col = rdr.headers().unwrap().iter().position(|h| h == "pass").unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert!(rows.len() >= 20);
    assert!(rows.iter().all(|r| &r[pass_col] == "true"));
}

#[test]
fn sweep_prints_four_rows_and_trend() {
    let out = exe()
        .args(["sweep", "--axis", "s", "--values", "1,2,4,8", "--m", "3", "--k", "2", "--n", "8", "--snr", "100", "--trials", "500"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let csv_lines: Vec<&str> = text.lines().filter(|l| l.starts_with("8,2,3,")).collect();
    assert_eq!(csv_lines.len(), 4);
    assert!(text.contains("trend: non-increasing = true"));
}

#[test]
fn find_m_with_unit_target_returns_k_plus_one() {
    let out = exe()
        .args(["find-m", "--n", "8", "--k", "2", "--s", "2", "--snr", "10", "--target", "1", "--trials", "50"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("M* = 3"));
}

#[test]
fn help_exits_cleanly() {
    let out = exe().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("find-m"));
}
