//! End-to-end harness flow at tiny scale: train via the binary, evaluate
//! the checkpoint, analyze representations, aggregate reports, and verify
//! byte-identical reruns.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_metamap"))
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("metamap-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const TINY_POLY: &str = r#"
preset = "poly-desk"
epochs = 4
eval_interval = 2
z_dim = 16
p_hidden = 16
e_hidden = 24
h_hidden = 24
t_hidden = [8]
base_batch = 24
base_support = 10
poly_sources = 6
poly_source_train = 4
poly_train_mappings = 3
poly_heldout_mappings = 2
"#;

#[test]
fn train_eval_analyze_report_roundtrip() {
    let dir = tmp_dir("flow");
    let cfg_path = dir.join("cfg.toml");
    std::fs::write(&cfg_path, TINY_POLY).unwrap();

    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg_path)
        .args(["--seed", "1", "--out"])
        .arg(&dir)
        .args(["--name", "tiny"])
        .output()
        .unwrap();
    assert!(out.status.success(), "train failed: {}", String::from_utf8_lossy(&out.stderr));

    let run_dir = dir.join("tiny_seed1");
    assert!(run_dir.join("metrics.csv").exists());
    let ckpt = run_dir.join("final.ckpt");
    assert!(ckpt.exists());

    for protocol in ["meta-mapping", "no-adapt"] {
        let out = bin()
            .args(["eval", "--checkpoint"])
            .arg(&ckpt)
            .args(["--protocol", protocol])
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "eval {protocol} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(!out.stdout.is_empty());
    }

    let out = bin()
        .args(["analyze", "--checkpoint"])
        .arg(&ckpt)
        .args(["--components", "2", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "analyze failed: {}", String::from_utf8_lossy(&out.stderr));
    let projections = std::fs::read_to_string(dir.join("projections.csv")).unwrap();
    assert!(projections.starts_with("task_id,group,pc1,pc2"));
    let cosine = std::fs::read_to_string(dir.join("cosine_similarity.csv")).unwrap();
    assert!(cosine.lines().count() >= 4);

    let out = bin().args(["report", "--dir"]).arg(&dir).output().unwrap();
    assert!(out.status.success(), "report failed: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("normalized_performance"));

    let out = bin()
        .args(["sweep", "--checkpoint"])
        .arg(&ckpt)
        .args(["--sizes", "1,4,10"])
        .output()
        .unwrap();
    assert!(out.status.success(), "sweep failed: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("support ")).count(), 3);
}

#[test]
fn identical_seed_reruns_are_byte_identical() {
    let dir = tmp_dir("determinism");
    let cfg_path = dir.join("cfg.toml");
    std::fs::write(&cfg_path, TINY_POLY).unwrap();
    let mut bytes = Vec::new();
    for attempt in 0..2 {
        let out_dir = dir.join(format!("attempt{attempt}"));
        let out = bin()
            .args(["train", "--config"])
            .arg(&cfg_path)
            .args(["--seed", "7", "--out"])
            .arg(&out_dir)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        bytes.push(std::fs::read(out_dir.join("run_seed7/metrics.csv")).unwrap());
    }
    assert_eq!(bytes[0], bytes[1], "metrics CSV must be byte-identical across reruns");
}

#[test]
fn schema_errors_name_the_field() {
    let dir = tmp_dir("schema");
    let bad = dir.join("bad.toml");

    std::fs::write(&bad, "epochs = 5\n").unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&bad)
        .args(["--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing required field `preset`"));

    std::fs::write(&bad, "preset = \"poly-desk\"\nmystery_knob = 3\n").unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&bad)
        .args(["--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown field `mystery_knob`"));
}

#[test]
fn oracle_dump_golden_values() {
    let dir = tmp_dir("oracle");
    let dump = dir.join("cards.csv");
    let out = bin()
        .args(["oracle", "--domain", "cards", "--dump"])
        .arg(&dump)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = std::fs::read_to_string(&dump).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "rules,hand,p_win,p_tie,p_lose,ev0,ev1,ev2");
    assert_eq!(lines.len(), 1 + 40 * 36);
    // spot-check: the royal flush line in base straight flush, bet 2
    let royal = lines
        .iter()
        .find(|l| l.starts_with("straight_flush_000,4r3r,"))
        .expect("royal flush row present");
    let fields: Vec<&str> = royal.split(',').collect();
    let p_lose: f64 = fields[4].parse().unwrap();
    assert_eq!(p_lose, 0.0);

    let poly_dump = dir.join("poly.txt");
    let out = bin()
        .args(["oracle", "--domain", "poly", "--dump"])
        .arg(&poly_dump)
        .args(["--seed", "0"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = std::fs::read_to_string(&poly_dump).unwrap();
    let first = text.lines().next().unwrap();
    assert_eq!(first.split_whitespace().count(), 16, "id plus 15 coefficients");
}
