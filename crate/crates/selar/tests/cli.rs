//! End-to-end runs of the binary, including the exit-code contract.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_selar"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "expected success for {args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn assert_exit(args: &[&str], code: i32) -> String {
    let out = run(args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "expected exit {code} for {args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stderr).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generates a small dataset and returns its directory.
fn gen_dataset(root: &Path) -> std::path::PathBuf {
    let data = root.join("data");
    run_ok(&[
        "gen-synth",
        "--out",
        path_str(&data),
        "--seen",
        "4",
        "--unseen",
        "2",
        "--samples-per-class",
        "6",
        "--attr-dim",
        "12",
        "--grid",
        "3",
        "--seed",
        "5",
    ]);
    data
}

fn train_model(root: &Path, data: &Path, out_name: &str, extra: &[&str]) -> std::path::PathBuf {
    let out = root.join(out_name);
    let manifest = data.join("train.tsv");
    let attributes = data.join("attributes.csv");
    let split = data.join("split.txt");
    let mut args = vec![
        "train",
        "--manifest",
        path_str(&manifest),
        "--attributes",
        path_str(&attributes),
        "--split",
        path_str(&split),
        "--out",
        path_str(&out),
        "--aggregation",
        "gmp",
        "--space",
        "attribute",
        "--epochs",
        "6",
        "--lr",
        "0.3",
        "--weight-init-scale",
        "0.01",
        "--seed",
        "1",
        "--threads",
        "2",
    ];
    args.extend_from_slice(extra);
    run_ok(&args);
    out
}

#[test]
fn the_happy_path_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_dataset(dir.path());

    for name in [
        "attributes.csv",
        "split.txt",
        "train.tsv",
        "test.tsv",
        "test_seen.tsv",
        "test_unseen.tsv",
        "oracle.txt",
        "config.txt",
    ] {
        assert!(data.join(name).is_file(), "{name} missing");
    }

    let run_dir = train_model(dir.path(), &data, "run", &[]);
    assert!(run_dir.join("model.slrt").is_file());
    assert!(run_dir.join("model.meta").is_file());
    let history = fs::read_to_string(run_dir.join("loss_history.txt")).unwrap();
    let rows: Vec<&str> = history.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 6);
    let echo = fs::read_to_string(run_dir.join("config.txt")).unwrap();
    assert!(echo.contains("epochs = 6"));
    assert!(echo.contains("space = attribute"));

    let model = run_dir.join("model.slrt");
    let report_dir = dir.path().join("report");
    let stdout = run_ok(&[
        "eval",
        "--model",
        path_str(&model),
        "--manifest",
        path_str(&data.join("test.tsv")),
        "--attributes",
        path_str(&data.join("attributes.csv")),
        "--split",
        path_str(&data.join("split.txt")),
        "--mode",
        "both",
        "--out",
        path_str(&report_dir),
    ]);
    for key in ["acc_unseen=", "acc_seen=", "harmonic_mean=", "bias_ratio=", "zsl_acc="] {
        assert!(stdout.contains(key), "missing {key} in: {stdout}");
    }
    assert!(report_dir.join("report.txt").is_file());
    let porcelain = fs::read_to_string(report_dir.join("report.porcelain")).unwrap();
    for line in porcelain.lines() {
        let (name, value) = line.split_once(' ').expect("name value pairs");
        assert!(!name.is_empty());
        value.parse::<f64>().expect("porcelain values parse");
    }

    // ZSL mode accepts a manifest of purely unseen samples.
    let zsl_out = run_ok(&[
        "eval",
        "--model",
        path_str(&model),
        "--manifest",
        path_str(&data.join("test_unseen.tsv")),
        "--attributes",
        path_str(&data.join("attributes.csv")),
        "--split",
        path_str(&data.join("split.txt")),
        "--mode",
        "zsl",
    ]);
    assert!(zsl_out.contains("zsl_acc="));

    // Export heatmaps for the first test sample.
    let manifest = fs::read_to_string(data.join("test_unseen.tsv")).unwrap();
    let sample_id = manifest.lines().next().unwrap().split('\t').next().unwrap();
    let maps_dir = dir.path().join("maps");
    run_ok(&[
        "export-maps",
        "--model",
        path_str(&model),
        "--manifest",
        path_str(&data.join("test_unseen.tsv")),
        "--out",
        path_str(&maps_dir),
        "--samples",
        sample_id,
        "--select",
        "top:3",
        "--attributes",
        path_str(&data.join("attributes.csv")),
        "--upsample",
        "2",
        "--interpolation",
        "bilinear",
    ]);
    let index = fs::read_to_string(maps_dir.join(format!("{sample_id}.index.tsv"))).unwrap();
    assert_eq!(index.lines().count(), 3);
    for line in index.lines() {
        let file = line.rsplit('\t').next().unwrap();
        let bytes = fs::read(maps_dir.join(file)).unwrap();
        assert!(bytes.starts_with(b"P5\n6 6\n255\n"), "upsampled 3x3 grid");
    }

    let check_out = run_ok(&["grad-check", "--instances", "1", "--grid", "3", "--seed", "3"]);
    assert!(check_out.contains("gradient check passed"));
}

#[test]
fn training_is_deterministic_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_dataset(dir.path());
    let first = train_model(dir.path(), &data, "run1", &[]);
    let second = train_model(dir.path(), &data, "run2", &[]);
    let a = fs::read(first.join("model.slrt")).unwrap();
    let b = fs::read(second.join("model.slrt")).unwrap();
    assert_eq!(a, b, "same seed must give byte-identical model files");
}

#[test]
fn config_files_merge_under_explicit_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_dataset(dir.path());
    let out = dir.path().join("run_cfg");
    let cfg = dir.path().join("train.cfg");
    fs::write(
        &cfg,
        format!(
            "manifest = {}\nattributes = {}\nsplit = {}\nout = {}\n\
             epochs = 5\nlr = 0.2\nweight_init_scale = 0.01\nseed = 9\n",
            data.join("train.tsv").display(),
            data.join("attributes.csv").display(),
            data.join("split.txt").display(),
            out.display(),
        ),
    )
    .unwrap();
    run_ok(&["train", "--config", path_str(&cfg), "--epochs", "2"]);
    let history = fs::read_to_string(out.join("loss_history.txt")).unwrap();
    let rows = history.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 2, "the flag overrides the config file");
    let echo = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echo.contains("epochs = 2"));
    assert!(echo.contains("lr = 0.2"));
    assert!(echo.contains("seed = 9"));
}

#[test]
fn porcelain_output_is_line_oriented() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = run_ok(&[
        "--porcelain",
        "gen-synth",
        "--out",
        path_str(&data),
        "--seen",
        "3",
        "--unseen",
        "2",
        "--samples-per-class",
        "4",
        "--attr-dim",
        "8",
        "--grid",
        "2",
        "--seed",
        "2",
    ]);
    let mut saw_oracle = false;
    for line in out.lines() {
        let (name, value) = line.split_once(' ').unwrap();
        if name == "oracle_accuracy" {
            saw_oracle = true;
            let v: f64 = value.parse().unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }
    assert!(saw_oracle);

    let check = run_ok(&[
        "--porcelain",
        "grad-check",
        "--instances",
        "1",
        "--grid",
        "2",
        "--space",
        "attribute",
        "--aggregation",
        "gap",
    ]);
    assert!(check.lines().all(|l| l.starts_with("combo ")));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_dataset(dir.path());

    assert_exit(&["train", "--no-such-flag"], 2);
    let err = assert_exit(&["train"], 2);
    assert!(err.contains("manifest"), "names the missing setting: {err}");
    assert_exit(&["eval"], 2);
    assert_exit(&["grad-check", "--space", "bogus"], 2);
    assert_exit(&["grad-check", "--instances", "0"], 2);
    assert_exit(&["--threads", "0", "grad-check"], 2);

    // Top-k selection without an attribute table has no prototype to rank by.
    let model = train_model(dir.path(), &data, "run_usage", &[]);
    assert_exit(
        &[
            "export-maps",
            "--model",
            path_str(&model.join("model.slrt")),
            "--manifest",
            path_str(&data.join("test_unseen.tsv")),
            "--out",
            path_str(&dir.path().join("maps")),
            "--select",
            "top:2",
        ],
        2,
    );
    assert_exit(
        &[
            "export-maps",
            "--model",
            path_str(&model.join("model.slrt")),
            "--manifest",
            path_str(&data.join("test_unseen.tsv")),
            "--out",
            path_str(&dir.path().join("maps")),
            "--select",
            "schmop",
        ],
        2,
    );
}

#[test]
fn io_and_format_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_dataset(dir.path());
    let missing = dir.path().join("nope.slrt");

    assert_exit(
        &[
            "eval",
            "--model",
            path_str(&missing),
            "--manifest",
            path_str(&data.join("test.tsv")),
            "--attributes",
            path_str(&data.join("attributes.csv")),
            "--split",
            path_str(&data.join("split.txt")),
        ],
        3,
    );

    let corrupt = dir.path().join("corrupt.slrt");
    fs::write(&corrupt, b"XXXX0000000000000000").unwrap();
    let err = assert_exit(
        &[
            "eval",
            "--model",
            path_str(&corrupt),
            "--manifest",
            path_str(&data.join("test.tsv")),
            "--attributes",
            path_str(&data.join("attributes.csv")),
            "--split",
            path_str(&data.join("split.txt")),
        ],
        3,
    );
    assert!(err.contains("magic"), "describes the bad header: {err}");

    let err = assert_exit(
        &[
            "train",
            "--manifest",
            path_str(&dir.path().join("absent.tsv")),
            "--attributes",
            path_str(&data.join("attributes.csv")),
            "--split",
            path_str(&data.join("split.txt")),
            "--out",
            path_str(&dir.path().join("run_io")),
        ],
        3,
    );
    assert!(err.contains("absent.tsv"), "names the file: {err}");

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    assert_exit(&["train", "--config", path_str(&cfg)], 3);
    // A malformed value is only reached once the required settings resolve.
    fs::write(
        &cfg,
        format!(
            "manifest = {}\nattributes = {}\nsplit = {}\nout = {}\nepochs = banana\n",
            data.join("train.tsv").display(),
            data.join("attributes.csv").display(),
            data.join("split.txt").display(),
            dir.path().join("run_badcfg").display(),
        ),
    )
    .unwrap();
    let err = assert_exit(&["train", "--config", path_str(&cfg)], 3);
    assert!(err.contains("epochs"), "names the bad key: {err}");
}

#[test]
fn validation_errors_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_dataset(dir.path());
    let model = train_model(dir.path(), &data, "run_val", &[]);

    // ZSL over a manifest that still contains seen-class samples.
    let err = assert_exit(
        &[
            "eval",
            "--model",
            path_str(&model.join("model.slrt")),
            "--manifest",
            path_str(&data.join("test.tsv")),
            "--attributes",
            path_str(&data.join("attributes.csv")),
            "--split",
            path_str(&data.join("split.txt")),
            "--mode",
            "zsl",
        ],
        4,
    );
    assert!(!err.is_empty());

    // A feature map whose channel count disagrees with the model.
    let narrow = dir.path().join("narrow");
    run_ok(&[
        "gen-synth",
        "--out",
        path_str(&narrow),
        "--seen",
        "4",
        "--unseen",
        "2",
        "--samples-per-class",
        "2",
        "--attr-dim",
        "8",
        "--grid",
        "3",
        "--seed",
        "6",
    ]);
    assert_exit(
        &[
            "eval",
            "--model",
            path_str(&model.join("model.slrt")),
            "--manifest",
            path_str(&narrow.join("test.tsv")),
            "--attributes",
            path_str(&narrow.join("attributes.csv")),
            "--split",
            path_str(&narrow.join("split.txt")),
        ],
        4,
    );
}

#[test]
fn failed_gradient_checks_exit_5() {
    // A giant step makes the two-sided difference meaningless, so the check
    // must report failure rather than success.
    let err = assert_exit(
        &[
            "grad-check",
            "--space",
            "visual",
            "--aggregation",
            "gap",
            "--instances",
            "1",
            "--grid",
            "2",
            "--step",
            "10",
        ],
        5,
    );
    assert!(err.contains("gradient check failed"), "stderr: {err}");
}
