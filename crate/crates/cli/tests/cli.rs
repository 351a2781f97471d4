use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TOY: &[&str] = &[
    "data.synthetic.n_tasks=3",
    "data.synthetic.train_per_class=24",
    "data.synthetic.test_per_class=12",
    "optimizer.epochs=2",
    "model.regulator.hidden=12",
];

fn sorsnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sorsnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Trains the toy sequence into `root/name` and returns the archive path.
fn train_toy(root: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let dir = root.join(name);
    let out_set = format!("output_dir={}", dir.display());
    let mut args = vec!["train", "--set", &out_set];
    for o in TOY.iter().chain(extra) {
        args.push("--set");
        args.push(o);
    }
    let out = sorsnn(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    dir
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.clone(), fs::read(&p).unwrap());
            }
        }
    }
    files
}

#[test]
fn train_writes_full_archive_with_seed_override() {
    let root = TempDir::new().unwrap();
    let dir = train_toy(root.path(), "run", &["seed=7"]);
    assert_eq!(fs::read_to_string(dir.join("seed.txt")).unwrap().trim(), "7");
    for f in [
        "matrix.csv",
        "metrics.json",
        "loss_log.csv",
        "curves.csv",
        "weights_hist.csv",
        "config.resolved.json",
        "state.ckpt",
        "masks/task_0.tsv",
        "masks/task_2.tsv",
    ] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let matrix = fs::read_to_string(dir.join("matrix.csv")).unwrap();
    assert_eq!(matrix.lines().count(), 4);
}

#[test]
fn resolved_config_reproduces_the_run() {
    let root = TempDir::new().unwrap();
    let first = train_toy(root.path(), "first", &["seed=3"]);
    let second = root.path().join("second");
    let set = format!("output_dir={}", second.display());
    let cfg = first.join("config.resolved.json");
    let out = sorsnn(&["train", "--config", cfg.to_str().unwrap(), "--set", &set]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["matrix.csv", "masks/task_0.tsv", "masks/task_1.tsv", "masks/task_2.tsv"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_errors_exit_2_with_field_path() {
    let out = sorsnn(&["train", "--config", "/nonexistent/toy.json"]);
    assert_eq!(out.status.code(), Some(2));

    let out = sorsnn(&["train", "--set", "loss.alpah=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("loss.alpah"), "{}", stderr(&out));

    let root = TempDir::new().unwrap();
    let bad = root.path().join("bad.json");
    fs::write(&bad, r#"{"optimizer": {"epochs": "many"}}"#).unwrap();
    let out = sorsnn(&["train", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("optimizer.epochs"), "{}", stderr(&out));
}

#[test]
fn inspect_reports_bounded_counts_unit_diagonal_and_full_histograms() {
    let root = TempDir::new().unwrap();
    let dir = train_toy(root.path(), "run", &[]);
    let arch = dir.to_str().unwrap();

    let out = sorsnn(&["inspect", arch, "masks"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let counts: Vec<usize> = text
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(!counts.is_empty());
    assert!(counts.iter().all(|&c| c <= 3));

    let out = sorsnn(&["inspect", arch, "overlap"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let rows: Vec<Vec<String>> = text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 3);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[i + 1], "1.000000");
        for (j, v) in row.iter().enumerate().skip(1) {
            assert_eq!(v, &rows[j - 1][i + 1], "symmetric");
        }
    }

    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
    let active: Vec<u64> = metrics["pathways"]["active_counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    let out = sorsnn(&["inspect", arch, "weights"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mut sums = vec![0u64; active.len()];
    let mut bins = vec![0usize; active.len()];
    for line in stdout(&out).lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let task: usize = f[0].parse().unwrap();
        sums[task] += f[4].parse::<u64>().unwrap();
        bins[task] += 1;
    }
    assert_eq!(sums, active);
    assert!(bins.iter().all(|&b| b == 64));
}

#[test]
fn inspect_rejects_unknown_view_and_missing_archive() {
    let out = sorsnn(&["inspect", ".", "spikes"]);
    assert_eq!(out.status.code(), Some(2));
    let out = sorsnn(&["inspect", "/nonexistent/run", "masks"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_injury_is_a_no_op_and_leaves_input_untouched() {
    let root = TempDir::new().unwrap();
    let dir = train_toy(root.path(), "run", &[]);
    let before = snapshot(&dir);
    let out_dir = root.path().join("hurt");
    let out = sorsnn(&[
        "injure",
        dir.to_str().unwrap(),
        "--fraction",
        "0",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(snapshot(&dir), before);
    let table = fs::read_to_string(out_dir.join("injury.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "stage,task_0,task_1,task_2");
    assert_eq!(lines[1].trim_start_matches("pre"), lines[2].trim_start_matches("post"));
}

#[test]
fn half_injury_writes_pre_post_table() {
    let root = TempDir::new().unwrap();
    let dir = train_toy(root.path(), "run", &[]);
    let out = sorsnn(&["injure", dir.to_str().unwrap(), "--fraction", "0.5", "--repair-epochs", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = fs::read_to_string(root.path().join("run.injury").join("injury.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.lines().all(|l| l.split(',').count() == 4));
}

#[test]
fn injure_rejects_bad_fraction_and_missing_checkpoint() {
    let root = TempDir::new().unwrap();
    let dir = train_toy(root.path(), "run", &[]);
    let out = sorsnn(&["injure", dir.to_str().unwrap(), "--fraction", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    fs::remove_file(dir.join("state.ckpt")).unwrap();
    let out = sorsnn(&["injure", dir.to_str().unwrap(), "--fraction", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("checkpoint"));
}

#[test]
fn sweep_dedups_values_and_writes_one_row_per_value() {
    let root = TempDir::new().unwrap();
    let out_dir = root.path().to_str().unwrap();
    let mut args = vec![
        "sweep", "--param", "beta", "--values", "0,1e-3,0", "--seeds", "5", "--out", out_dir,
    ];
    for o in TOY {
        args.push("--set");
        args.push(o);
    }
    let out = Command::new(env!("CARGO_BIN_EXE_sorsnn"))
        .args(&args)
        .env("SORSNN_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("warning"));
    let csv = fs::read_to_string(root.path().join("sweep_beta.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("beta,runs,acc_mean,acc_std"));
    assert!(lines[1].starts_with("0,1,"));
    assert!(lines[2].starts_with("0.001,1,"));
}

#[test]
fn sweep_rejects_empty_values_and_unknown_param() {
    let out = sorsnn(&["sweep", "--param", "alpha", "--values"]);
    assert_eq!(out.status.code(), Some(2));
    let out = sorsnn(&["sweep", "--param", "gamma", "--values", "1"]);
    assert_eq!(out.status.code(), Some(2));
}
