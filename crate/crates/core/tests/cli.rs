use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use brdiv::cli::io::{read_cross_play, read_metrics, to_toml, Checkpoint};
use tempfile::TempDir;

const QUICK: &str = "[train]\niterations = 30\nseed = 3\ncheckpoint_every = 10\n\n[gradcheck]\ntrials = 1\n\n[sweep]\nseeds = [0, 1]\n";

fn brdiv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brdiv")).args(args).output().unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &TempDir, body: &str) -> PathBuf {
    let p = dir.path().join("input.toml");
    fs::write(&p, body).unwrap();
    p
}

fn ok(out: &Output) {
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn generate(dir: &TempDir, name: &str, config: &Path) -> PathBuf {
    let run = dir.path().join(name);
    ok(&brdiv(&["generate", "--config", path_str(config), "--out", path_str(&run)]));
    run
}

#[test]
fn generate_writes_the_full_artifact_set() {
    let dir = TempDir::new().unwrap();
    let run = generate(&dir, "run", &write_config(&dir, QUICK));
    for f in ["config.toml", "metrics.csv", "cross_play.csv", "checkpoint.toml", "summary.toml"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    for it in [10, 20] {
        assert!(run.join("checkpoints").join(format!("iter_{it:06}.toml")).is_file());
    }
    // The final population goes to checkpoint.toml only.
    assert!(!run.join("checkpoints").join("iter_000030.toml").exists());
    let metrics = read_metrics(&run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.len(), 31);
    let header = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(header.starts_with("iteration,trace,det_or_jsd,objective,elapsed_seconds\n"));
    let echo = fs::read_to_string(run.join("config.toml")).unwrap();
    for key in ["learning_rate", "sigma", "jitter", "div_grad_targets", "goal_cells", "trials"] {
        assert!(echo.contains(key), "config echo lacks {key}");
    }
    let leftovers: Vec<_> = fs::read_dir(&run)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with('.'))
        .collect();
    assert!(leftovers.is_empty(), "temporary files left: {leftovers:?}");
}

#[test]
fn evaluate_reproduces_generate_time_matrix() {
    let dir = TempDir::new().unwrap();
    let run = generate(&dir, "run", &write_config(&dir, QUICK));
    let eval = dir.path().join("eval");
    let ckpt = run.join("checkpoint.toml");
    ok(&brdiv(&["evaluate", "--checkpoint", path_str(&ckpt), "--out", path_str(&eval)]));
    let a = read_cross_play(&run.join("cross_play.csv")).unwrap();
    let b = read_cross_play(&eval.join("cross_play.csv")).unwrap();
    for (ra, rb) in a.iter().zip(&b) {
        for (x, y) in ra.iter().zip(rb) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn rerun_from_config_echo_is_bit_identical() {
    let dir = TempDir::new().unwrap();
    let first = generate(&dir, "first", &write_config(&dir, QUICK));
    let second = generate(&dir, "second", &first.join("config.toml"));

    let strip = |p: &Path| -> Vec<(usize, u64, u64, u64)> {
        read_metrics(p)
            .unwrap()
            .iter()
            .map(|m| (m.iteration, m.trace.to_bits(), m.diversity.to_bits(), m.objective.to_bits()))
            .collect()
    };
    assert_eq!(strip(&first.join("metrics.csv")), strip(&second.join("metrics.csv")));
    for f in ["checkpoint.toml", "cross_play.csv", "summary.toml", "config.toml", "checkpoints/iter_000020.toml"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f} differs");
    }

    let ckpt = first.join("checkpoint.toml");
    let learner = |name: &str, config: &Path| {
        let out = dir.path().join(name);
        ok(&brdiv(&["learner", "--checkpoint", path_str(&ckpt), "--config", path_str(config), "--out", path_str(&out)]));
        out
    };
    let l1 = learner("l1", &first.join("config.toml"));
    let l2 = learner("l2", &l1.join("config.toml"));
    assert_eq!(fs::read(l1.join("learner.toml")).unwrap(), fs::read(l2.join("learner.toml")).unwrap());

    let g1 = dir.path().join("g1");
    ok(&brdiv(&["gradcheck", "--config", path_str(&first.join("config.toml")), "--out", path_str(&g1)]));
    let g2 = dir.path().join("g2");
    ok(&brdiv(&["gradcheck", "--config", path_str(&g1.join("config.toml")), "--out", path_str(&g2)]));
    assert_eq!(fs::read(g1.join("gradcheck.toml")).unwrap(), fs::read(g2.join("gradcheck.toml")).unwrap());
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let run = generate(&dir, "run", &write_config(&dir, QUICK));
    let bytes = fs::read_to_string(run.join("checkpoint.toml")).unwrap();
    let loaded = Checkpoint::load(&run.join("checkpoint.toml")).unwrap();
    assert_eq!(to_toml(&loaded).unwrap(), bytes);
}

#[test]
fn sweep_reports_split_counts() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sweep");
    let cfg = write_config(&dir, QUICK);
    ok(&brdiv(&["sweep", "--config", path_str(&cfg), "--out", path_str(&out), "--learner"]));
    let summary = fs::read_to_string(out.join("summary.toml")).unwrap();
    let parsed: toml::Table = summary.parse().unwrap();
    assert_eq!(parsed["runs"].as_integer(), Some(2));
    assert!(parsed["corner_split_count"].as_integer().unwrap() <= 2);
    assert!(summary.contains("learner_robustness"));
    assert!(out.join("seed_0").join("checkpoint.toml").is_file());
    assert!(out.join("seed_1").join("learner").join("learner.toml").is_file());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x");
    assert_eq!(brdiv(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(brdiv(&["generate", "--out", path_str(&out), "--bogus"]).status.code(), Some(2));
    assert_eq!(brdiv(&[]).status.code(), Some(2));
    assert_eq!(brdiv(&["--help"]).status.code(), Some(0));
}

#[test]
fn malformed_config_names_the_key() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x");
    for (body, key) in [
        ("[train]\nlearning_rate = -1.0\n", "learning_rate"),
        ("[train]\nstep_size = 0.1\n", "step_size"),
        ("[train.kernel]\nsigma = 0.0\n", "sigma"),
        ("[train]\nmethod = \"dpp\"\n", "dpp"),
    ] {
        let cfg = write_config(&dir, body);
        let res = brdiv(&["generate", "--config", path_str(&cfg), "--out", path_str(&out)]);
        assert_eq!(res.status.code(), Some(2), "{body}");
        let err = String::from_utf8_lossy(&res.stderr);
        assert!(err.contains(key), "{body}: {err}");
    }
}

#[test]
fn io_failures_exit_with_four() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x");
    let missing = dir.path().join("absent.toml");
    assert_eq!(brdiv(&["evaluate", "--checkpoint", path_str(&missing), "--out", path_str(&out)]).status.code(), Some(4));
    assert_eq!(brdiv(&["generate", "--config", path_str(&missing), "--out", path_str(&out)]).status.code(), Some(4));
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let nested = blocker.join("run");
    let cfg = write_config(&dir, QUICK);
    assert_eq!(brdiv(&["generate", "--config", path_str(&cfg), "--out", path_str(&nested)]).status.code(), Some(4));
}

#[test]
fn singular_kernel_without_jitter_exits_with_three() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x");
    // Zero-scale initialisation gives identical cross-play rows.
    let cfg = write_config(&dir, "[train]\niterations = 5\ninit_scale = 0.0\n\n[train.kernel]\njitter = 0.0\n");
    let res = brdiv(&["generate", "--config", path_str(&cfg), "--out", path_str(&out)]);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stderr).contains("iteration 0"));
}
