//! Black-box tests of the installed binary: exit codes and artifact layout.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pavemind"))
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("pavemind.conf");
    let text = format!(
        "input.detection = {d}\n\
         input.maintenance = {m}\n\
         input.routes = {r}\n\
         out_dir = {o}\n\
         lstm.epochs = 40\n\
         lstm.hidden_candidates = 8\n\
         dqn.epochs = 120\n\
         seed = 7\n",
        d = dir.join("detection.csv").display(),
        m = dir.join("maintenance.csv").display(),
        r = dir.join("routes.csv").display(),
        o = dir.join("out").display(),
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn synth_then_plan_respects_the_budget_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["synth", "--routes", "2", "--segments", "3", "--years", "7"])
        .args(["--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("detection.csv").exists());
    assert!(dir.path().join("maintenance.csv").exists());
    assert!(dir.path().join("routes.csv").exists());

    let cfg = write_config(dir.path());
    let out = bin()
        .args(["plan", "--config", cfg.to_str().unwrap(), "--budget", "2"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("plan:"), "{stdout}");

    let priority =
        std::fs::read_to_string(dir.path().join("out/priority.csv")).unwrap();
    let mut spent = 0.0f64;
    for line in priority.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols[7] == "true" {
            spent += cols[5].parse::<f64>().unwrap();
        }
    }
    assert!(spent <= 2.0, "selected cost {spent} exceeds the budget");
    assert!(dir.path().join("out/plan.csv").exists());
    assert!(dir.path().join("out/report.txt").exists());
}

#[test]
fn missing_inputs_and_bad_config_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .current_dir(dir.path())
        .arg("predict")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "lstm.depth = 3\n").unwrap();
    let out = bin()
        .args(["plan", "--config", bad.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("lstm.depth"), "{stderr}");
}

#[test]
fn stage_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    bin()
        .args(["synth", "--routes", "2", "--segments", "2", "--years", "6"])
        .args(["--out", dir.path().to_str().unwrap()])
        .status()
        .unwrap();
    // Keep surveys but erase the maintenance history: the recommendation
    // stage has no treatments to learn from.
    let maintenance = dir.path().join("maintenance.csv");
    let header = std::fs::read_to_string(&maintenance)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    std::fs::write(&maintenance, header + "\n").unwrap();

    let cfg = write_config(dir.path());
    let out = bin()
        .args(["recommend", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn help_exits_zero() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("synth"));
}
