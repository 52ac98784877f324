use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
family = "poisson"
n_train = 1
n_test = 1
seed = 5

[sizes]
poisson_nx = 4
poisson_ny = 4

[train]
episodes = 1

[bench]
trace_matrices = 1
"#;

fn mpcg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpcg")).args(args).env("RUST_LOG", "error").output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.toml");
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn gen_writes_matrices_and_stable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("sets");
    let o = mpcg(&["gen", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mtx: Vec<_> = ["train", "test"].iter().map(|s| out.join(s).join("A_000.mtx")).collect();
    assert!(mtx.iter().all(|p| p.exists()));
    let first = fs::read(out.join("manifest.json")).unwrap();
    assert_eq!(code(&mpcg(&["gen", &cfg, "--out", out.to_str().unwrap()])), 0);
    assert_eq!(fs::read(out.join("manifest.json")).unwrap(), first);
}

#[test]
fn unwritable_output_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = mpcg(&["gen", &cfg, "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&mpcg(&["train", dir.path().join("missing.toml").to_str().unwrap()])), 1);
    let bad = write_config(dir.path(), "[cg]\ntol = 2.0\n");
    assert_eq!(code(&mpcg(&["train", &bad])), 1);
    let cfg = write_config(dir.path(), TINY);
    assert_eq!(code(&mpcg(&["bench", &cfg, "--mode", "sloppy"])), 1);
}

#[test]
fn train_is_deterministic_and_bench_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = mpcg(&["train", &cfg, "--out", out.to_str().unwrap(), "--mode", "fast"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let policy = fs::read_to_string(a.join("policy.json")).unwrap();
    assert_eq!(policy, fs::read_to_string(b.join("policy.json")).unwrap());
    let q = mpcg::rlagent::policy_from_json(&policy).unwrap();
    assert_eq!(q.trained_episodes, 1);

    let o = mpcg(&["bench", &cfg, "--out", a.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("RL Error"));
    for f in ["per_matrix.csv", "aggregates.csv", "aggregates.json", "precision_distribution.csv", "traces/trace_RL_000.csv"] {
        assert!(a.join(f).exists(), "{f}");
    }
    // a different seed yields a different policy file
    let c = dir.path().join("c");
    assert_eq!(code(&mpcg(&["train", &cfg, "--out", c.to_str().unwrap(), "--seed", "6"])), 0);
    assert_ne!(fs::read_to_string(c.join("policy.json")).unwrap(), policy);
}

#[test]
fn incompatible_policy_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("o");
    assert_eq!(code(&mpcg(&["train", &cfg, "--out", out.to_str().unwrap()])), 0);
    let other = write_config(dir.path(), &format!("{TINY}\n[mdp]\nresidual_bins = 7\n"));
    let o = mpcg(&["bench", &other, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
}
