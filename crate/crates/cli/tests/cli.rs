use std::path::Path;
use std::process::{Command, Output};

fn lab(dir: &Path, command: &str, config: &str, extra: &[&str]) -> Output {
    let cfg = dir.join(format!("{command}.json"));
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_bitkernel-lab"))
        .arg(command)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_writes_run_table_and_meta() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(
        dir.path(),
        "train",
        r#"{"widths": [32], "steps": 20, "n": 12, "n_test": 6}"#,
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/run.csv")).unwrap();
    assert!(csv.starts_with("step,loss_1bit,loss_fp,lambda_min,lambda_max,gram_drift,max_train_diff,max_test_diff,flip_fraction,weight_drift\n"));
    // stride max(1, 20/100) = 1: steps 0..=20
    assert_eq!(csv.lines().count(), 1 + 21);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/meta.json")).unwrap()).unwrap();
    assert_eq!(meta["command"], "train");
    assert!(!String::from_utf8_lossy(&o.stdout).trim().is_empty());
}

#[test]
fn overrides_replace_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(
        dir.path(),
        "sweep-width",
        r#"{"widths": [8], "seeds": [1], "steps": 5, "n": 10, "n_test": 5}"#,
        &["--set", "widths=[8,16]", "--set", "seeds=[1,2]"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let sweep = std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 4);
}

#[test]
fn unknown_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(dir.path(), "train", r#"{"widths": [8], "lerning_rate": 0.1}"#, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lerning_rate"), "{}", stderr(&o));
}

#[test]
fn invalid_value_exits_2_and_names_key() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(dir.path(), "train", r#"{"kappa": 1.5}"#, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("kappa"), "{}", stderr(&o));
}

#[test]
fn unknown_command_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(dir.path(), "fit", "{}", &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn divergent_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(
        dir.path(),
        "train",
        r#"{"widths": [16], "eta": 1e6, "steps": 200, "n": 10, "n_test": 5, "mode": "box"}"#,
        &[],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn sweep_bytes_do_not_depend_on_worker_count() {
    let config = r#"{"widths": [8, 16, 32], "seeds": [1, 2], "steps": 15, "n": 12, "n_test": 6}"#;
    let runs: Vec<(String, String)> = [1, 4]
        .iter()
        .map(|workers| {
            let dir = tempfile::tempdir().unwrap();
            let o = lab(
                dir.path(),
                "sweep-width",
                config,
                &["--set", &format!("workers={workers}")],
            );
            assert!(o.status.success(), "{}", stderr(&o));
            (
                std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap(),
                std::fs::read_to_string(dir.path().join("out/sweep_summary.csv")).unwrap(),
            )
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}
