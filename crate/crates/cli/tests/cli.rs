use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn recsearch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recsearch"))
        .args(args)
        .env_remove("RECSEARCH_DATA_ROOT")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes synthetic ratings and a small `mf` config into `dir`.
fn setup(dir: &Path, dataset: &str) -> std::path::PathBuf {
    let data = dir.join("ratings.dat");
    let o = recsearch(&[
        "synth",
        "ratings",
        "--out",
        path(&data),
        "--rows",
        "1200",
        "--users",
        "30",
        "--items",
        "20",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = dir.join("exp.toml");
    fs::write(
        &cfg,
        format!(
            r#"
[dataset]
path = "{dataset}"
format = "movielens"

[pipeline]
recipe = "mf"
embedding_dim = [4, 8]

[tuner]
name = "random"
max_trials = 3
seed = 1

[training]
epochs = 1
batch_size = 256
"#
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn recipes_lists_nine() {
    let o = recsearch(&["recipes"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8(o.stdout).unwrap();
    let names: Vec<&str> = out.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(
        names,
        [
            "mf",
            "mlp",
            "ncf",
            "deepfm",
            "dlrm",
            "autoint",
            "crossnet",
            "autorec_rp",
            "autorec_ctr"
        ]
    );
}

#[test]
fn run_writes_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "ratings.dat");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = recsearch(&["run", path(&cfg), "--out", path(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("best trial"));
    }
    let csv = fs::read_to_string(a.join("trials.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert_eq!(csv, fs::read_to_string(b.join("trials.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("summary.json")).unwrap(),
        fs::read(b.join("summary.json")).unwrap()
    );

    // --seed overrides the config; --timings fills the seconds column.
    let c = dir.path().join("c");
    let o = recsearch(&[
        "run",
        "--config",
        path(&cfg),
        "--out",
        path(&c),
        "--seed",
        "9",
        "--timings",
    ]);
    assert_eq!(code(&o), 0);
    let other = fs::read_to_string(c.join("trials.csv")).unwrap();
    assert_ne!(other, csv);
    assert!(other.lines().skip(1).all(|l| !l.ends_with(',')));
}

#[test]
fn validate_checks_without_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "ratings.dat");
    let o = recsearch(&["validate", path(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("ok:"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn data_root_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "nested/ratings.dat");
    let root = dir.path().join("root");
    fs::create_dir_all(root.join("nested")).unwrap();
    fs::copy(
        dir.path().join("ratings.dat"),
        root.join("nested/ratings.dat"),
    )
    .unwrap();
    assert_eq!(code(&recsearch(&["validate", path(&cfg)])), 1);
    let o = Command::new(env!("CARGO_BIN_EXE_recsearch"))
        .args(["validate", path(&cfg)])
        .env("RECSEARCH_DATA_ROOT", &root)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "missing.dat");
    let out = dir.path().join("out");
    let o = recsearch(&["run", path(&cfg), "--out", path(&out)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));
    assert!(!out.join("trials.csv").exists());

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[dataset]\npath = 3\n").unwrap();
    assert_eq!(code(&recsearch(&["validate", path(&bad)])), 1);
    assert_eq!(
        code(&recsearch(&["run", path(&dir.path().join("none.toml"))])),
        1
    );
    assert_eq!(code(&recsearch(&["run", path(&cfg), "--bogus"])), 1);
    assert_eq!(code(&recsearch(&["--help"])), 0);
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "ratings.dat");
    // The output directory is an existing regular file.
    let blocked = dir.path().join("blocked");
    fs::write(&blocked, "").unwrap();
    let o = recsearch(&["run", path(&cfg), "--out", path(&blocked)]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));

    // A rating that is not a number.
    fs::write(dir.path().join("ratings.dat"), "1::1::x::0\n".repeat(20)).unwrap();
    let o = recsearch(&["run", path(&cfg), "--out", path(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}
