use std::collections::BTreeMap;
use std::path::Path;

use addrscope::cli::main_with_args;
use sha2::{Digest, Sha256};

const CONFIG: &str = r#"
n_reachable = 20
n_unreachable_useful = 40
n_unreachable_useless = 5
duration_days = 2
monitors = 2
validation_peer = true
seed = 3

[churn]
kind = "session_lengths"
arrival_rate = 0.0
"#;

fn cli(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("addrscope").chain(args.iter().copied()))
}

fn digests(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), Sha256::digest(std::fs::read(&p).unwrap()).to_vec())
        })
        .collect()
}

#[test]
fn simulate_evaluate_analyze() {
    let tmp = tempfile::tempdir().unwrap();
    let t = |p: &str| tmp.path().join(p).to_string_lossy().into_owned();
    std::fs::write(t("sim.toml"), CONFIG).unwrap();

    assert_eq!(cli(&["simulate", "--config", &t("sim.toml"), "--out", &t("run1")]), 0);
    assert_eq!(cli(&["simulate", "--config", &t("sim.toml"), "--out", &t("run2")]), 0);
    let first = digests(&tmp.path().join("run1"));
    assert_eq!(first, digests(&tmp.path().join("run2")));
    for f in ["config.toml", "monitor-1.log", "monitor-2.log", "validation.log", "peers.csv", "tracked.csv", "stats.json"] {
        assert!(first.contains_key(f), "missing {f}");
    }

    assert_eq!(cli(&["simulate", "--config", &t("sim.toml"), "--out", &t("run3"), "--seed", "4"]), 0);
    assert_ne!(first["monitor-1.log"], digests(&tmp.path().join("run3"))["monitor-1.log"]);

    assert_eq!(cli(&["evaluate", "--sim", &t("run1"), "--out", &t("eval")]), 0);
    let eval = digests(&tmp.path().join("eval"));
    for f in ["daily.csv", "daily_2.csv", "overlap.csv", "incoming.csv", "subnet.csv", "recall.csv"] {
        assert!(eval.contains_key(f), "missing {f}");
    }
    let recall = std::fs::read_to_string(tmp.path().join("eval/recall.csv")).unwrap();
    assert_eq!(recall.lines().count(), 3);
    assert!(recall.starts_with("date,truth_reachable,"));

    let log1 = t("run1/monitor-1.log");
    let log2 = t("run1/monitor-2.log");
    let inbound = t("run1/validation.log");
    let args = ["analyze", "--log", &log1, "--log2", &log2, "--inbound", &inbound, "--out", &t("an"), "--subnet-prefix", "24"];
    assert_eq!(cli(&args), 0);
    let an = digests(&tmp.path().join("an"));
    assert_eq!(an["daily.csv"], eval["daily.csv"]);
    assert_eq!(an["overlap.csv"], eval["overlap.csv"]);
    assert_ne!(an["subnet_buckets.csv"], eval["subnet_buckets.csv"]);
}

#[test]
fn bad_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let t = |p: &str| tmp.path().join(p).to_string_lossy().into_owned();
    assert_eq!(cli(&["analyze", "--log", &t("missing.log"), "--out", &t("o")]), 2);
    assert_eq!(cli(&["analyze", "--log", &t("x"), "--out", &t("o"), "--subnet-prefix", "12"]), 1);
    std::fs::write(t("bad.toml"), "monitors = 7\n").unwrap();
    assert_eq!(cli(&["simulate", "--config", &t("bad.toml"), "--out", &t("s")]), 2);
    std::fs::write(t("typo.toml"), "n_reachabel = 7\n").unwrap();
    assert_eq!(cli(&["simulate", "--config", &t("typo.toml"), "--out", &t("s")]), 2);
    assert_eq!(cli(&["evaluate", "--sim", &t("nowhere"), "--out", &t("e")]), 2);
    assert_eq!(cli(&["monitor", "--seeds", &t("none.txt"), "--log", &t("m.log")]), 2);
    assert_eq!(cli(&["simulate", "--config", &t("bad.toml")]), 1);
}

#[test]
fn end_to_end_helper() {
    let tmp = tempfile::tempdir().unwrap();
    let config = addrscope::sim::SimConfig::from_toml_str(CONFIG).unwrap();
    let summary = addrscope::end_to_end(&config, tmp.path()).unwrap();
    assert_eq!(summary.recall.len(), 2);
    assert!(summary.recall.iter().all(|r| r.detected_useless == 0));
    assert!(!summary.analysis.overlap.is_empty());
    assert!(!summary.analysis.incoming.is_empty());
    assert!(tmp.path().join("eval/recall.csv").exists());
}
