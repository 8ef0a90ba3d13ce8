use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[dataset]
name = "two-moons"
size = 256

[schedule]
timesteps = 20

[model]
hidden_widths = [10, 10]
time_embed_dim = 4

[allocation]
groups = 3

[pruning]
rounds = 2
candidates = 2
eval_batch = 32
calibration_batch = 16

[training]
stage1_steps = 30
stage2_steps = 5
batch_size = 16
holdout = 32

[sampling]
steps = 4
samples = 32
"#;

fn progdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_progdiff")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("c.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&progdiff(&["--help"])), 0);
    assert_eq!(code(&progdiff(&["--version"])), 0);
    let o = progdiff(&["pipeline", "--help"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("--no-prune"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();

    assert_eq!(code(&progdiff(&[])), 1);
    assert_eq!(code(&progdiff(&["frobnicate"])), 1);
    assert_eq!(code(&progdiff(&["plan", "--config", &cfg, "--bogus"])), 1);
    assert_eq!(code(&progdiff(&["plan", "--config", &cfg, "--proxy", "oracle"])), 1);

    let o = progdiff(&["pipeline", "--out", out]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--config"));

    let o = progdiff(&["pipeline", "--config", &cfg, "--out", out, "--proxy", "magnitude", "--no-prune"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--no-prune"));
    assert!(!Path::new(out).join("base").exists());

    let o = progdiff(&["plan", "--config", &cfg, "--k", "1.5"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("allocation.k"), "{}", stderr(&o));

    let bad = write_config(dir.path(), &format!("{TINY}\n[llm]\nkey = \"secret\"\n"));
    let o = progdiff(&["plan", "--config", &bad]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("key"), "{}", stderr(&o));
}

#[test]
fn plan_writes_limits_without_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("run");
    let o = progdiff(&["plan", "--config", &cfg, "--out", out.to_str().unwrap(), "--groups", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let plan = fs::read_to_string(out.join("plan.txt")).unwrap();
    assert!(plan.lines().count() >= 4, "{plan}");
    assert!(!out.join("base").exists());
    let copy = fs::read_to_string(out.join("config.copy")).unwrap();
    assert!(copy.contains("groups = 4"), "{copy}");
}

#[test]
fn staged_commands_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();

    let o = progdiff(&["prune", "--config", &cfg, "--out", out_s]);
    assert_eq!(code(&o), 2, "prune before train-base is a runtime error");

    assert_eq!(code(&progdiff(&["train-base", "--config", &cfg, "--out", out_s])), 0);
    assert!(out.join("base/ckpt.bin").exists());

    let o = progdiff(&["prune", "--config", &cfg, "--out", out_s, "--group", "7"]);
    assert_eq!(code(&o), 1);

    let o = progdiff(&["pipeline", "--config", &cfg, "--out", out_s]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("report.json").exists());

    let o = progdiff(&["report", "--out", out_s]);
    assert_eq!(code(&o), 0);
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("energy distance"), "{table}");

    let file = dir.path().join("s.csv");
    let o = progdiff(&["sample", "--out", out_s, "--samples", "7", "--file", file.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&file).unwrap().lines().count(), 8);

    let o = progdiff(&["eval", "--out", out_s]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(json["metrics"]["energy_distance"].as_f64().unwrap() >= 0.0);

    // A different config for the same directory is refused.
    let o = progdiff(&["pipeline", "--config", &cfg, "--out", out_s, "--seed", "3"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn report_on_missing_run_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = progdiff(&["report", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn locked_directory_fails_fast() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("run");
    fs::create_dir_all(&out).unwrap();
    // Our own PID is alive, so the lock is not stale.
    fs::write(out.join(".lock"), format!("{}\n", std::process::id())).unwrap();
    let o = progdiff(&["train-base", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("lock"), "{}", stderr(&o));
}
