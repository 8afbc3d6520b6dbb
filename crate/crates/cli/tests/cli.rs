use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn tabgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tabgen"))
        .args(args)
        .env("TTF_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// 240 rows: two numerics, two categoricals and a categorical label that
/// depends on `x` and `b`.
fn write_table(dir: &Path, name: &str, offset: usize) -> PathBuf {
    let mut s = String::from("x,y,a,b,label\n");
    for i in offset..offset + 240 {
        let x = (i * 37 % 100) as f64 / 10.0;
        let y = ((i * 13 % 17) as f64 - 8.0) * 0.5 + x;
        let a = if x < 5.0 { "lo" } else { "hi" };
        let b = ["p", "q", "r"][i % 3];
        let label = if x + if b == "p" { 2.0 } else { 0.0 } + (i % 5) as f64 * 0.3 > 5.5 { "yes" } else { "no" };
        s += &format!("{x},{y},{a},{b},{label}\n");
    }
    let p = dir.join(name);
    fs::write(&p, s).unwrap();
    p
}

fn write_config(dir: &Path) -> PathBuf {
    let p = dir.join("cfg.json");
    fs::write(
        &p,
        r#"{"preset":"TINY","q":50,"gbm":{"n_trees":5,"max_leaves":8},
            "train":{"batch_size":16,"max_steps":12,"val_interval":4},
            "model":{"n_layers":1}}"#,
    )
    .unwrap();
    p
}

fn fitted(dir: &Path) -> PathBuf {
    let data = write_table(dir, "train.csv", 0);
    let cfg = write_config(dir);
    let model = dir.join("m.ttf");
    let o = tabgen(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--target",
        "label",
        "--seed",
        "1",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    model
}

#[test]
fn fit_generate_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let model = fitted(dir.path());
    assert!(model.exists());
    let (s1, s2) = (dir.path().join("s1.csv"), dir.path().join("s2.csv"));
    for out in [&s1, &s2] {
        let o = tabgen(&["generate", "--model", model.to_str().unwrap(), "--rows", "100", "--seed", "7", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = fs::read(&s1).unwrap();
    assert_eq!(a, fs::read(&s2).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 101);
    assert_eq!(text.lines().next().unwrap(), "x,y,a,b,label");

    let other = dir.path().join("s3.csv");
    let o = tabgen(&["generate", "--model", model.to_str().unwrap(), "--rows", "100", "--seed", "8", "--out", other.to_str().unwrap()]);
    assert!(o.status.success());
    assert_ne!(fs::read(&s1).unwrap(), fs::read(&other).unwrap());
}

#[test]
fn zero_rows_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let model = fitted(dir.path());
    let o = tabgen(&["generate", "--model", model.to_str().unwrap(), "--rows", "0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn corrupt_checkpoint_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.ttf");
    fs::write(&bad, b"not a checkpoint at all").unwrap();
    let o = tabgen(&["generate", "--model", bad.to_str().unwrap(), "--rows", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("magic"), "{}", stderr(&o));

    let mut bytes = fs::read(fitted(dir.path())).unwrap();
    bytes[4] = 9;
    fs::write(&bad, &bytes).unwrap();
    let o = tabgen(&["generate", "--model", bad.to_str().unwrap(), "--rows", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("version 9"), "{}", stderr(&o));
}

#[test]
fn no_mask_preset_constants_are_reported() {
    let o = tabgen(&["fit", "--data", "unused.csv", "--preset", "nm", "--print-config"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["train"]["tree_mask"], serde_json::json!([0.0, 0.0]));
    assert_eq!(v["train"]["value_mask"], serde_json::json!([0.0, 0.0]));
    assert_eq!(v["train"]["patience"], 100);
    assert_eq!(v["generation"]["temperature_categorical"], 0.2);
    assert_eq!(v["generation"]["temperature_numeric"], 0.1);
    assert_eq!(v["model"]["d_model"], 768);
}

#[test]
fn flags_override_the_config_file() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path());
    let o = tabgen(&["fit", "--data", "x.csv", "--config", cfg.to_str().unwrap(), "--max-steps", "99", "--seed", "5", "--print-config"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["train"]["max_steps"], 99);
    assert_eq!(v["train"]["batch_size"], 16);
    assert_eq!(v["run"]["seed"], 5);
    assert_eq!(v["model"]["n_layers"], 1);
}

#[test]
fn missing_target_picks_a_logged_random_column() {
    let dir = TempDir::new().unwrap();
    let data = write_table(dir.path(), "train.csv", 0);
    let cfg = write_config(dir.path());
    let model = dir.path().join("m.ttf");
    let o = tabgen(&["fit", "--data", data.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--out", model.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("picked column"), "{}", stderr(&o));
}

#[test]
fn evaluate_train_copy_and_skip_flag() {
    let dir = TempDir::new().unwrap();
    let train = write_table(dir.path(), "train.csv", 0);
    let test = write_table(dir.path(), "test.csv", 1000);
    let report = dir.path().join("r.json");
    let args = |extra: &[&str]| {
        let mut v = vec!["evaluate", "--train", train.to_str().unwrap(), "--test", test.to_str().unwrap()];
        v.extend_from_slice(&["--synth", train.to_str().unwrap(), "--report", report.to_str().unwrap()]);
        v.extend_from_slice(extra);
        v.into_iter().map(str::to_owned).collect::<Vec<_>>()
    };
    let run = |a: Vec<String>| tabgen(&a.iter().map(String::as_str).collect::<Vec<_>>());

    let o = run(args(&["--target", "label"]));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("shape"));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["shape"], 1.0);
    assert_eq!(v["trend"], 1.0);
    assert!(v["dcr_p"].as_f64().unwrap() < 0.05);
    assert_eq!(v["mle"]["linear"], v["breakdown"]["mle"]["trtr"]["linear"]);
    assert!(v["meta"]["n_real"] == 240 && v["meta"]["n_synth"] == 240);

    let o = run(args(&["--target", "label", "--skip-mle"]));
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(v.get("mle").is_none());
}

#[test]
fn malformed_synth_leaves_no_report() {
    let dir = TempDir::new().unwrap();
    let train = write_table(dir.path(), "train.csv", 0);
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "x,y,a,b,label\n1.0,oops,lo,p,yes\n").unwrap();
    let report = dir.path().join("r.json");
    let o = tabgen(&[
        "evaluate",
        "--train",
        train.to_str().unwrap(),
        "--test",
        train.to_str().unwrap(),
        "--synth",
        bad.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!report.exists());

    fs::write(&bad, "x,y,a,label\n1,2,lo,yes\n").unwrap();
    let o = tabgen(&["evaluate", "--train", train.to_str().unwrap(), "--test", train.to_str().unwrap(), "--synth", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(tabgen(&["fit"]).status.code(), Some(1));
    assert_eq!(tabgen(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(tabgen(&["fit", "--data", "d.csv", "--preset", "XL", "--print-config"]).status.code(), Some(1));
    assert_eq!(tabgen(&["--help"]).status.code(), Some(0));
}
