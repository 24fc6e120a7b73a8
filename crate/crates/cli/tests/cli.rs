use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn stsc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stsc"))
        .args(args)
        .current_dir(dir)
        .env_remove("STSC_DATA_DIR")
        .env_remove("STSC_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn config_block(text: &str) -> Vec<String> {
    text.lines()
        .skip_while(|l| *l != "# effective config")
        .skip(1)
        .take_while(|l| *l != "# end config")
        .map(str::to_string)
        .collect()
}

const SMALL: &[&str] = &[
    "--dataset",
    "synthetic",
    "--override",
    "epochs=1",
    "--override",
    "limit_train=48",
    "--override",
    "limit_test=24",
    "--override",
    "timing=off",
];

fn small(extra: &[&str]) -> Vec<String> {
    SMALL.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn run(dir: &Path, cmd: &str, args: &[String]) -> Output {
    let mut all = vec![cmd];
    all.extend(args.iter().map(String::as_str));
    stsc(dir, &all)
}

#[test]
fn inspect_shd_spec() {
    let dir = tempfile::tempdir().unwrap();
    let out = stsc(dir.path(), &["inspect", "--dataset", "shd"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("voting: 100->20 (groups of 5)"), "{text}");
    assert!(
        text.contains("3 FC layers, 0 conv layers, STSC at spatial ops [1]"),
        "{text}"
    );
    assert_eq!(
        text.lines()
            .filter(|l| l.trim_start().starts_with("fc."))
            .count(),
        3
    );
    assert_eq!(
        text.lines()
            .filter(|l| l.trim_start().starts_with("stsc.1"))
            .count(),
        1
    );
}

#[test]
fn inspect_takes_a_spec_argument() {
    let dir = tempfile::tempdir().unwrap();
    let out = stsc(
        dir.path(),
        &["inspect", "--dataset", "synthetic", "Input-20FC-Voting-4"],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).contains("voting: 20->4 (groups of 5)"));
}

#[test]
fn override_changes_exactly_one_field() {
    let dir = tempfile::tempdir().unwrap();
    let a = run(dir.path(), "train", &small(&["--out", "a"]));
    let b = run(
        dir.path(),
        "train",
        &small(&["--out", "b", "--override", "K_F=7"]),
    );
    assert!(a.status.success() && b.status.success());
    let (ca, cb) = (config_block(&stdout(&a)), config_block(&stdout(&b)));
    assert_eq!(ca.len(), cb.len());
    let diff: Vec<_> = ca.iter().zip(&cb).filter(|(x, y)| x != y).collect();
    assert_eq!(diff.len(), 1, "{diff:?}");
    assert_eq!(diff[0].1, "K_F = 7");
    let written = fs::read_to_string(dir.path().join("b/config.txt")).unwrap();
    assert!(written.lines().any(|l| l == "K_F = 7"));
}

#[test]
fn printed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = run(
        dir.path(),
        "train",
        &small(&["--out", "first", "--seed", "11"]),
    );
    assert!(first.status.success());
    let block = config_block(&stdout(&first));
    fs::write(dir.path().join("replay.cfg"), block.join("\n")).unwrap();
    let second = stsc(
        dir.path(),
        &["train", "--config", "replay.cfg", "--out", "second"],
    );
    assert!(
        second.status.success(),
        "{}",
        String::from_utf8_lossy(&second.stderr)
    );
    assert_eq!(config_block(&stdout(&second)), block);
    let m1 = fs::read(dir.path().join("first/metrics.csv")).unwrap();
    let m2 = fs::read(dir.path().join("second/metrics.csv")).unwrap();
    assert_eq!(m1, m2);
}

#[test]
fn eval_matches_the_training_run() {
    let dir = tempfile::tempdir().unwrap();
    let t = run(dir.path(), "train", &small(&["--out", "run"]));
    assert!(t.status.success());
    let metrics = fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    let last = metrics.lines().last().unwrap();
    let acc: f64 = last.split(',').nth(3).unwrap().parse().unwrap();
    let e = stsc(dir.path(), &["eval", "--checkpoint", "run/final.ckpt"]);
    assert!(e.status.success(), "{}", String::from_utf8_lossy(&e.stderr));
    let line = stdout(&e)
        .lines()
        .find(|l| l.starts_with("test accuracy"))
        .unwrap()
        .to_string();
    assert_eq!(line, format!("test accuracy: {acc:.4}"));
}

#[test]
fn ablate_policies_writes_seven_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        "ablate",
        &small(&["--grid", "policies", "--out", "abl"]),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(dir.path().join("abl/ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "policy,K_F,K_G,variant,best_test_acc,final_test_acc,best_epoch,epochs"
    );
    assert_eq!(lines.len(), 8);
    let policies: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(policies, ["P1", "P2", "P3", "P12", "P13", "P23", "P123"]);
}

#[test]
fn prepare_data_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "prepare-data",
        "--dataset",
        "synthetic",
        "--override",
        "T=8",
    ];
    let first = stsc(dir.path(), &args);
    assert!(first.status.success());
    assert!(stdout(&first).contains("wrote"));
    assert!(stdout(&first).contains("sample shape: [8, 64]"));
    let stamp = |p: &str| {
        fs::metadata(dir.path().join(p))
            .unwrap()
            .modified()
            .unwrap()
    };
    let before = stamp("stsc-cache/synthetic_T8/train.frames");
    let second = stsc(dir.path(), &args);
    assert!(stdout(&second).contains("up to date"));
    assert_eq!(before, stamp("stsc-cache/synthetic_T8/train.frames"));
}

#[test]
fn unknown_flags_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = stsc(dir.path(), &["train", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn error_categories_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let unknown_key = stsc(d, &["inspect", "--override", "K_Q=1"]);
    let bad_spec = stsc(d, &["inspect", "Input-128FC-Voting-7"]);
    assert_eq!(unknown_key.status.code(), Some(4));
    assert_eq!(bad_spec.status.code(), Some(4));

    let missing = stsc(d, &["train", "--dataset", "shd"]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("manifest.json"));

    assert!(stsc(d, &["prepare-data", "--dataset", "synthetic"])
        .status
        .success());
    let frames = d.join("stsc-cache/synthetic_T12/train.frames");
    let mut bytes = fs::read(&frames).unwrap();
    bytes.truncate(bytes.len() / 2);
    fs::write(&frames, bytes).unwrap();
    // The manifest still matches, so prepare keeps the damaged file.
    let corrupt = stsc(
        d,
        &["train", "--dataset", "synthetic", "--override", "epochs=1"],
    );
    assert_eq!(
        corrupt.status.code(),
        Some(6),
        "{}",
        String::from_utf8_lossy(&corrupt.stderr)
    );
}

#[test]
fn gradcheck_reports_one_line_per_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = stsc(dir.path(), &["gradcheck", "--seeds", "1"]);
    let text = stdout(&out);
    let lines: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("PASS") || l.starts_with("FAIL"))
        .collect();
    assert!(lines.len() >= 20, "{text}");
    assert!(lines.iter().all(|l| l.contains("max_rel_err=")));
    if cfg!(feature = "fault-injection") {
        assert_ne!(out.status.code(), Some(0));
        assert!(lines.iter().all(|l| l.starts_with("FAIL")), "{text}");
    } else {
        assert_eq!(out.status.code(), Some(0), "{text}");
    }
}
