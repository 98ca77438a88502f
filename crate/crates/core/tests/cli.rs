use std::path::Path;
use std::process::{Command, Output};

use nvmc::RunConfig;

fn nvmc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nvmc"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn nvmc")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn nodal_prints_verdicts_and_writes_moments() {
    let dir = tempfile::tempdir().unwrap();
    let o = nvmc(
        &["nodal", "--beta", "1", "--gamma", "1", "--k", "1", "--p", "4", "--sizes", "1000,10000", "--replicates", "3"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("verdict diverges"), "{}", stdout(&o));
    let csv = std::fs::read_to_string(dir.path().join("nodal_moments.csv")).unwrap();
    assert!(csv.starts_with("n,raw_moment,central_moment\n"));
    assert_eq!(csv.lines().count(), 3);

    let o = nvmc(&["nodal", "--beta", "1", "--gamma", "1", "--k", "1", "--p", "2", "--sizes", "100"], dir.path());
    assert!(stdout(&o).contains("verdict converges"));
    let o = nvmc(
        &["nodal", "--beta", "1", "--gamma", "1", "--k", "1", "--p", "2", "--uniform", "--sizes", "100"],
        dir.path(),
    );
    assert!(stdout(&o).contains("verdict diverges"));
}

#[test]
fn missing_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = nvmc(&["solve", "--config", "absent.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.json"));
}

#[test]
fn unknown_system_and_bad_param_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(nvmc(&["solve", "--system", "helium", "--dry-run"], dir.path()).status.code(), Some(1));
    let o = nvmc(&["solve", "--system", "double_well", "--param", "separation=wide", "--dry-run"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn dry_run_prints_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = nvmc(
        &["solve", "--system", "double_well", "--param", "separation=3.5", "--walkers", "300", "--seed", "9", "--dry-run"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let c = RunConfig::from_json(&stdout(&o)).unwrap();
    assert_eq!(c.sampler.n_walkers, 300);
    assert_eq!(c.sampler.seed, 9);
    assert_eq!(c.system.tag(), "double_well");
    assert!(c.ansatz.envelope.is_some(), "dry run shows resolved presets");
    assert!(!dir.path().join("runs").exists(), "dry run writes nothing");

    let o = nvmc(&["solve", "--system", "ho2d", "--state", "first_excited", "--dry-run"], dir.path());
    let c = RunConfig::from_json(&stdout(&o)).unwrap();
    assert_eq!(c.state, 1);
    assert!(c.trainer.loss.is_residual());
}

#[test]
fn zero_steps_exit_not_converged_with_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = nvmc(
        &["solve", "--system", "ho2d", "--layers", "1", "--width", "4", "--walkers", "64", "--burn-in", "10", "--max-steps", "0", "--out", "r"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    let csv = std::fs::read_to_string(dir.path().join("r/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    for f in ["summary.txt", "model.ckpt", "config.json"] {
        assert!(dir.path().join("r").join(f).is_file(), "{f}");
    }
}

#[test]
fn solve_converges_and_report_reads_it() {
    let dir = tempfile::tempdir().unwrap();
    let o = nvmc(
        &[
            "solve", "--system", "ho2d", "--layers", "1", "--width", "8", "--walkers", "500", "--burn-in", "50",
            "--max-steps", "2000", "--threshold", "1e-2", "--seed", "3", "--out", "runs/ho", "--progress", "0",
            "--observables", "2000",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("Converged"));
    let density = std::fs::read_to_string(dir.path().join("runs/ho/density.csv")).unwrap();
    assert!(density.starts_with("x0,x1,density\n"));

    let o = nvmc(&["report", "runs", "--threshold", "1e-2"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.starts_with("run,system,variance,relative_error,converged\n"), "{out}");
    assert!(out.contains("ho2d"));
    assert!(dir.path().join("report.csv").is_file());

    assert_eq!(nvmc(&["report", "nowhere"], dir.path()).status.code(), Some(1));
}

#[test]
fn scan_resume_reuses_finished_points() {
    let dir = tempfile::tempdir().unwrap();
    let plan = r#"{"base": {"system": {"kind": "double_well", "omega_y": 1.0, "separation": 0.0},
                            "ansatz": {"layers": 1, "width": 4},
                            "sampler": {"n_walkers": 64, "burn_in": 10},
                            "trainer": {"max_steps": 3}},
                   "axes": [{"path": "system.separation", "values": [0.0, 1.0]}],
                   "output_dir": "scan"}"#;
    std::fs::write(dir.path().join("plan.json"), plan).unwrap();
    let first = nvmc(&["scan", "--plan", "plan.json"], dir.path());
    // Three steps never converge.
    assert_eq!(first.status.code(), Some(2));
    let table = std::fs::read_to_string(dir.path().join("scan/scan.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    let summary = dir.path().join("scan/point_0001/summary.txt");
    let before = std::fs::read_to_string(&summary).unwrap();

    std::fs::remove_dir_all(dir.path().join("scan/point_0000")).unwrap();
    let again = nvmc(&["scan", "--plan", "plan.json", "--resume"], dir.path());
    assert_eq!(again.status.code(), Some(2));
    assert_eq!(std::fs::read_to_string(&summary).unwrap(), before);
    assert!(dir.path().join("scan/point_0000/summary.txt").is_file());
    // Recomputed points are deterministic; only the runtime column moves.
    let strip = |t: &str| -> Vec<String> {
        t.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
    };
    let after = std::fs::read_to_string(dir.path().join("scan/scan.csv")).unwrap();
    assert_eq!(strip(&after), strip(&table));
}
