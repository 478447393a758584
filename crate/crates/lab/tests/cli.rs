//! The `lab` binary: commands, exit codes and the output tree.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn lab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("lab runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

#[test]
fn train_writes_a_content_addressed_run_and_never_overwrites_it() {
    let out = scratch("train");
    let args = ["train", "--scene", "ball", "--model", "cdl", "--epochs", "3", "--seed", "2"];
    let first = lab(&args, &out);
    assert_eq!(first.status.code(), Some(0));
    let first = json(&first);
    assert_eq!(first["reused"], false);
    let dir = PathBuf::from(first["run"].as_str().unwrap());
    assert!(dir.starts_with(out.join("runs/bouncing-ball/cdl")));
    for f in ["config.json", "dataset.json", "checkpoint.json", "report.json", "losses.csv", "forecast.csv"] {
        assert!(dir.join(f).exists(), "{f} missing");
    }
    let before = std::fs::read(dir.join("report.json")).unwrap();

    let second = json(&lab(&args, &out));
    assert_eq!(second["reused"], true);
    assert_eq!(second["rmse"], first["rmse"]);
    assert_eq!(std::fs::read(dir.join("report.json")).unwrap(), before);

    let other = json(&lab(&["train", "--scene", "ball", "--model", "cdl", "--epochs", "3", "--seed", "3"], &out));
    assert_ne!(other["run"], first["run"]);
}

#[test]
fn generate_is_byte_reproducible() {
    let a = scratch("generate-a");
    let b = scratch("generate-b");
    let args = ["generate", "--scene", "cradle", "--seed", "9"];
    let pa = json(&lab(&args, &a))["dataset"].as_str().unwrap().to_owned();
    let pb = json(&lab(&args, &b))["dataset"].as_str().unwrap().to_owned();
    assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
}

#[test]
fn eval_and_plot_read_a_stored_run() {
    let out = scratch("eval");
    let run = json(&lab(&["train", "--scene", "cradle", "--model", "resnet-contact", "--epochs", "2"], &out));
    let dir = PathBuf::from(run["run"].as_str().unwrap());
    let eval = Command::new(env!("CARGO_BIN_EXE_lab"))
        .args(["eval", "--checkpoint"])
        .arg(dir.join("checkpoint.json"))
        .output()
        .unwrap();
    assert_eq!(eval.status.code(), Some(0));
    assert_eq!(json(&eval)["rmse"], run["rmse"]);

    let dest = out.join("plots");
    let plot = Command::new(env!("CARGO_BIN_EXE_lab")).arg("plot").arg(&dir).arg("--dest").arg(&dest).output().unwrap();
    assert_eq!(plot.status.code(), Some(0));
    for stem in ["phase", "energy", "contact"] {
        assert!(dest.join(format!("{stem}.svg")).exists());
        assert!(dest.join(format!("{stem}.csv")).exists());
    }
    // The residual network has no potential to plot.
    assert!(!dest.join("potential_gradient.svg").exists());
}

#[test]
fn configuration_errors_exit_with_two() {
    let out = scratch("errors");
    let code = |args: &[&str]| lab(args, &out).status.code();
    assert_eq!(code(&["train", "--scene", "ball", "--model", "vin-vv"]), Some(2));
    assert_eq!(code(&["train", "--scene", "jupiter"]), Some(2));
    assert_eq!(code(&["train", "--sigma", "-1"]), Some(2));
    assert_eq!(code(&["train", "--config", "/nonexistent/config.json"]), Some(2));
    let bad = out.join("bad.json");
    std::fs::write(&bad, r#"{"scene":"ball","epocs":3}"#).unwrap();
    assert_eq!(code(&["train", "--config", bad.to_str().unwrap()]), Some(2));
    let plot = Command::new(env!("CARGO_BIN_EXE_lab")).args(["plot", "/nonexistent/run"]).output().unwrap();
    assert_eq!(plot.status.code(), Some(2));
}

#[test]
fn config_file_and_flags_combine() {
    let out = scratch("config");
    let file = out.join("exp.json");
    std::fs::write(&file, r#"{"scene":"pendulum","model":"vin-vv","trajectories":3,"train":{"epochs":2}}"#).unwrap();
    let run = json(&lab(&["train", "--config", file.to_str().unwrap(), "--seed", "5"], &out));
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(Path::new(run["run"].as_str().unwrap()).join("config.json")).unwrap())
            .unwrap();
    assert_eq!(cfg["model"], "vin-vv");
    assert_eq!(cfg["trajectories"], 3);
    assert_eq!((cfg["seed"].as_u64(), cfg["train"]["seed"].as_u64()), (Some(5), Some(5)));
}

#[test]
fn numerical_failure_exits_with_three() {
    let out = scratch("nan");
    let file = out.join("exp.json");
    // A learning rate this large drives the pendulum potential to overflow.
    std::fs::write(&file, r#"{"scene":"pendulum","model":"cdl","trajectories":2,"train":{"epochs":50,"lr":1e200}}"#).unwrap();
    let run = lab(&["train", "--config", file.to_str().unwrap()], &out);
    assert_eq!(run.status.code(), Some(3), "{}", String::from_utf8_lossy(&run.stdout));
    assert!(json(&run)["failure"].is_string());
}
