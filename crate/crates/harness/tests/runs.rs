//! Result directories, reruns and the `nnrl` binary.

use std::fs;
use std::path::Path;
use std::process::Command;

use nnrl::metric_space::{Point, PointCloud};
use nnrl_harness::report::analyze;
use nnrl_harness::runner::{load_results, run, write_results};
use nnrl_harness::ExperimentConfig;

const CHAIN: &str = r#"
agent = "ucrl_fa"
seeds = [1, 2]
budget = { episodes = 40 }
eval_every = 50
[env]
kind = "chain"
"#;

const NNAC: &str = r#"
agent = "nnac"
seeds = [3]
budget = { steps = 600 }
eval_every = 200
eval_episodes = 2
[env]
kind = "cartpole"
horizon = 100
"#;

const SOFT: &str = r#"
agent = "soft_ddpg"
seeds = [1]
budget = { steps = 600 }
eval_every = 300
eval_episodes = 2
[env]
kind = "reacher1d"
[lite]
hidden = 16
batch_size = 16
warmup_steps = 100
"#;

fn run_into(text: &str, dir: &Path) {
    let cfg = ExperimentConfig::from_toml_str(text).unwrap();
    let results = run(&cfg).unwrap();
    write_results(dir, &cfg, &results).unwrap();
}

/// Every per-seed CSV in `dir`, by name.
fn seed_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("seed"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn reruns_are_byte_identical() {
    for text in [CHAIN, NNAC, SOFT] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_into(text, a.path());
        run_into(text, b.path());
        let (fa, fb) = (seed_files(a.path()), seed_files(b.path()));
        assert!(!fa.is_empty());
        assert_eq!(fa, fb);
        assert_eq!(
            fs::read(a.path().join("config.toml")).unwrap(),
            fs::read(b.path().join("config.toml")).unwrap()
        );
    }
}

#[test]
fn distinct_seeds_give_distinct_runs() {
    let cfg = ExperimentConfig::from_toml_str(CHAIN).unwrap();
    let r = run(&cfg).unwrap();
    assert_eq!(r.len(), 2);
    assert_ne!(r[0].actions, r[1].actions);
}

#[test]
fn empty_seed_list_gives_no_results() {
    let text = CHAIN.replace("seeds = [1, 2]", "seeds = []");
    let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
    assert!(run(&cfg).unwrap().is_empty());
}

#[test]
fn written_results_load_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml_str(CHAIN).unwrap();
    let results = run(&cfg).unwrap();
    write_results(dir.path(), &cfg, &results).unwrap();
    let (back, records) = load_results(dir.path()).unwrap();
    assert_eq!(back, cfg);
    for (r, rec) in results.iter().zip(&records) {
        assert_eq!(rec.seed, r.seed);
        assert_eq!(rec.evals, r.curve.evals);
        assert_eq!(rec.episodes, r.curve.episodes);
        assert_eq!(rec.ledger, r.ledger);
        assert_eq!(rec.actions, r.actions);
    }
}

#[test]
fn analyze_reports_chain_regret() {
    let dir = tempfile::tempdir().unwrap();
    run_into(CHAIN, dir.path());
    let rows = analyze(dir.path(), 0.05).unwrap();
    for seed in [1, 2] {
        let bound = rows
            .iter()
            .find(|r| r.seed == seed && r.quantity == "regret_bound")
            .unwrap();
        assert!(bound.note.contains("holds=true"), "{}", bound.note);
        assert!(rows.iter().any(|r| r.seed == seed && r.quantity == "regret_exponent"));
    }
    assert!(dir.path().join("analysis.csv").exists());
    assert!(dir.path().join("seed1_episodes_smoothed.csv").exists());
}

fn nnrl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nnrl"))
}

#[test]
fn cli_run_eval_analyze_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("nnac.toml");
    fs::write(&cfg_path, NNAC).unwrap();
    let out = dir.path().join("out");
    let o = nnrl().arg("run").arg(&cfg_path).arg("--out").arg(&out).output().unwrap();
    assert!(o.status.success());
    assert!(out.join("summary.csv").exists());

    let o = nnrl()
        .args(["eval"])
        .arg(out.join("seed3_policy.csv"))
        .args(["cartpole", "--episodes", "2"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let o = nnrl().arg("analyze").arg(&out).output().unwrap();
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("final_eval_mean"));

    let cloud = PointCloud::euclidean((0..6).map(|i| Point::new(vec![i as f64 * 0.3]).unwrap()).collect()).unwrap();
    let cloud_path = dir.path().join("cloud.csv");
    cloud.write_csv(fs::File::create(&cloud_path).unwrap()).unwrap();
    let o = nnrl().arg("geometry").arg(&cloud_path).args(["--eps", "0.4"]).output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().nth(1).unwrap().ends_with("true"), "{text}");
}

#[test]
fn cli_reports_bad_key_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.toml");
    fs::write(&cfg_path, NNAC.replace("horizon = 100", "horizon = 100\nmass = 2")).unwrap();
    let o = nnrl().arg("run").arg(&cfg_path).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("env"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::from_file(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 4);
}
