use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--repetitions",
    "1",
    "--steps",
    "25",
    "--batch-size",
    "16",
    "--feature-hidden",
    "16",
    "--feature-dim",
    "8",
    "--domain-hidden",
    "8,8",
];

fn uda(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uda"))
        .args(args)
        .env("UDA_OUTPUT_ROOT", root)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn uda_tiny(root: &Path, verb: &str, extra: &[&str]) -> Output {
    let mut args = vec![verb];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    uda(root, &args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn only_dir(p: &Path) -> std::path::PathBuf {
    let entries: Vec<_> = fs::read_dir(p).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_dir()).collect();
    assert_eq!(entries.len(), 1, "{entries:?}");
    entries.into_iter().next().unwrap()
}

#[test]
fn missing_config_fails_without_outputs() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("runs");
    let o = uda(root.path(), &["train", "--config", "absent.toml", "--out-root", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("absent.toml"));
    assert!(!out.exists());
}

#[test]
fn invalid_config_is_a_config_error() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("bad.toml");
    fs::write(&cfg, "[train]\nw0 = 7.0\n").unwrap();
    let o = uda(root.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("w0"));
}

#[test]
fn train_twice_gives_identical_bytes() {
    let root = tempfile::tempdir().unwrap();
    let args = ["--name", "twice"];
    let a = uda_tiny(root.path(), "train", &args);
    assert!(a.status.success(), "{}", stderr(&a));
    let run_dir = only_dir(&root.path().join("twice"));
    let read = |f: &str| fs::read(run_dir.join(f)).unwrap();
    let files = ["metrics.jsonl", "report.json", "summary.txt", "scores.csv", "histograms.csv", "checkpoint.txt"];
    let first: Vec<Vec<u8>> = files.iter().map(|f| read(f)).collect();
    let manifest = fs::read(root.path().join("twice/manifest.json")).unwrap();

    let b = uda_tiny(root.path(), "train", &args);
    assert!(b.status.success());
    for (f, bytes) in files.iter().zip(&first) {
        assert_eq!(&read(f), bytes, "{f}");
    }
    assert_eq!(fs::read(root.path().join("twice/manifest.json")).unwrap(), manifest);
    assert_eq!(fs::read_to_string(run_dir.join("metrics.jsonl")).unwrap().lines().count(), 25);
}

#[test]
fn numeric_blow_up_has_its_own_exit_code() {
    let root = tempfile::tempdir().unwrap();
    let o = uda_tiny(root.path(), "train", &["--name", "boom", "--lr", "1e150", "--momentum", "0"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("numeric abort"));
    assert!(!root.path().join("boom").exists());
}

#[test]
fn gen_then_train_and_eval_on_files() {
    let root = tempfile::tempdir().unwrap();
    let o = uda(root.path(), &["gen", "--name", "g"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let data = root.path().join("g/data");
    let plan = data.join("plan.toml");
    for f in ["source.csv", "target.csv"] {
        let text = fs::read_to_string(data.join(f)).unwrap();
        assert!(text.starts_with("# uda-features dim=16"));
    }

    let o = uda_tiny(root.path(), "train", &["--config", plan.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run_dir = only_dir(&root.path().join("g-files"));

    let ck = run_dir.join("checkpoint.txt");
    let eval_out = root.path().join("eval");
    let o = uda(
        root.path(),
        &[
            "eval",
            "--config",
            plan.to_str().unwrap(),
            "--checkpoint",
            ck.to_str().unwrap(),
            "--eval-target",
            data.join("target.csv").to_str().unwrap(),
            "--out",
            eval_out.to_str().unwrap(),
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(eval_out.join("report.json")).unwrap(),
        fs::read(run_dir.join("report.json")).unwrap()
    );
    assert!(stdout(&o).contains("average class accuracy"));
}

#[test]
fn sweep_rejects_empty_values_and_runs_each_value() {
    let root = tempfile::tempdir().unwrap();
    let o = uda_tiny(root.path(), "sweep", &["--name", "sw", "--param", "w0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!root.path().join("sw").exists());

    let o = uda_tiny(root.path(), "sweep", &["--name", "sw", "--param", "w0", "--values", "0,2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    assert!(table.contains("w0=0") && table.contains("w0=2"));
    assert!(root.path().join("sw-sweep-w0.txt").exists());
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.path().join("sw-sweep-w0.json")).unwrap()).unwrap();
    // w0 = 2 rejects everything: 1/(|Y|+1) with four shared classes
    assert_eq!(json["rows"][1]["mean"], 0.2);
}

#[test]
fn scoring_ablation_lists_every_scheme() {
    let root = tempfile::tempdir().unwrap();
    let o = uda_tiny(root.path(), "ablate", &["--name", "ab", "--ablation", "scoring"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    for s in ["ours", "uan", "entropy", "ours_no_d", "ours_no_maxy"] {
        assert!(table.lines().any(|l| l.starts_with(s)), "{s} missing in\n{table}");
    }
}

#[test]
fn flag_overrides_land_in_the_manifest() {
    let root = tempfile::tempdir().unwrap();
    let o = uda_tiny(
        root.path(),
        "train",
        &["--name", "flags", "--scheme", "uan", "--gamma", "0.3", "--diversity-mode", "target_only", "--no-pseudo-labels"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.path().join("flags/manifest.json")).unwrap()).unwrap();
    let t = &m["plan"]["train"];
    assert_eq!(t["scheme"], "uan");
    assert_eq!(t["w0"], 0.0);
    assert_eq!(t["gamma"], 0.3);
    assert_eq!(t["diversity_mode"], "target_only");
    assert_eq!(t["pseudo_labels"], false);
    assert_eq!(t["total_steps"], 25);
}

#[test]
fn unknown_enum_values_are_rejected() {
    let root = tempfile::tempdir().unwrap();
    let o = uda_tiny(root.path(), "train", &["--scheme", "nope"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nope"));
}
