//! End-to-end checks of the binary: subcommand wiring, output files, and
//! the documented exit codes (0 success, 2 input error, 3 integration
//! failure, 4 verification failure).

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stochrk"))
}

#[test]
fn verify_tableaus_passes_with_exit_zero() {
    let out = bin().arg("verify-tableaus").output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    for name in ["SRA1", "SOSRA", "SOSRA2", "LSRA", "SKenCarp", "SOSRI", "SOSRI2"] {
        assert!(stdout.contains(name), "missing {name} in report:\n{stdout}");
    }
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn verify_tableaus_rejects_broken_tableau_with_exit_four() {
    let dir = std::env::temp_dir().join("stochrk_cli_test_tabs");
    std::fs::create_dir_all(&dir).unwrap();
    let status = bin().args(["verify-tableaus", "--out"]).arg(&dir).output().unwrap();
    assert_eq!(status.status.code(), Some(0));
    // corrupt one coefficient and verify the gate trips
    let path = dir.join("sra1.json");
    let body = std::fs::read_to_string(&path).unwrap().replace("0.75", "0.7501");
    let broken = dir.join("broken.json");
    std::fs::write(&broken, body).unwrap();
    let out = bin().args(["verify-tableaus", "--input"]).arg(&broken).output().unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn solve_emits_step_records() {
    let out = bin()
        .args([
            "solve",
            "--problem",
            "diagonal_test",
            "--method",
            "SOSRI",
            "--tol",
            "1e-3",
            "--seed",
            "5",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("t,h,err,stiff,method,newton_iters,rejections\n"));
    assert!(stdout.contains("# final,"));
}

#[test]
fn solve_is_deterministic_for_fixed_seed() {
    let run = || {
        bin()
            .args(["solve", "--problem", "lotka_additive", "--method", "SOSRA", "--tol", "1e-2", "--seed", "9"])
            .output()
            .unwrap()
            .stdout
    };
    assert_eq!(run(), run());
}

#[test]
fn unknown_problem_is_exit_two() {
    let out = bin().args(["solve", "--problem", "no_such_thing"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown problem"));
}

#[test]
fn incompatible_method_is_exit_two() {
    // SRA methods reject diagonal multiplicative noise
    let out = bin()
        .args(["solve", "--problem", "diagonal_test", "--method", "SOSRA"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn converge_reports_slope() {
    let out = bin()
        .args([
            "converge",
            "--problem",
            "additive_test",
            "--method",
            "SOSRA",
            "--k-lo",
            "2",
            "--k-hi",
            "5",
            "--traj",
            "20",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("dt,error\n"));
    let slope: f64 = stdout
        .lines()
        .find(|l| l.starts_with("# slope,"))
        .and_then(|l| l.strip_prefix("# slope,"))
        .unwrap()
        .parse()
        .unwrap();
    assert!(slope > 1.5, "slope {slope}");
}

#[test]
fn stabregion_writes_three_files() {
    let dir = std::env::temp_dir().join("stochrk_cli_test_region");
    std::fs::create_dir_all(&dir).unwrap();
    let stem = dir.join("sra1");
    let out = bin()
        .args(["stabregion", "--method", "SRA1", "--n", "3", "--m", "2", "--dx", "0.1", "--out"])
        .arg(&stem)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    for ext in ["pgm", "csv", "json"] {
        let p = dir.join(format!("sra1.{ext}"));
        assert!(p.exists(), "{p:?} missing");
    }
    let pgm = std::fs::read_to_string(dir.join("sra1.pgm")).unwrap();
    assert!(pgm.starts_with("P2\n"));
}

#[test]
fn stiffness_trace_csv() {
    let out = bin()
        .args([
            "stiffness",
            "--problem",
            "additive_test",
            "--method",
            "SOSRA2",
            "--tol",
            "1e-3",
            "--omega",
            "5",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("t,stiff\n"));
    assert!(stdout.lines().skip(1).all(|l| l.ends_with(",0")));
}

#[test]
fn workprec_json_schema() {
    let out = bin()
        .args([
            "workprec",
            "--problem",
            "diagonal_test",
            "--methods",
            "SOSRI",
            "--tols",
            "1e-2",
            "--traj",
            "8",
            "--format",
            "json",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("workprec emits valid JSON");
    assert_eq!(v["schema"], "stochrk.workprec/1");
    assert!(v["rows"].as_array().unwrap().len() == 1);
}
