//! End-to-end CLI tests over the synthetic backend: determinism, the
//! simulate -> rank -> select -> evaluate chain, and exit-code contracts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use itemforge::model::{ItemSource, Polarity, SurveyItem};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_itemforge")
}

fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/big5.toml")
}

fn item(id: &str, trait_id: &str, text: &str, polarity: Polarity, source: ItemSource, gi: u32) -> SurveyItem {
    SurveyItem {
        item_id: id.into(),
        trait_id: trait_id.into(),
        text: text.into(),
        polarity,
        source,
        generator: "fixture".into(),
        generation_index: gi,
    }
}

/// Two Big Five traits, four official anchors and six generated candidates
/// each.
fn fixture_bank(dir: &Path) -> PathBuf {
    let mut bank = Vec::new();
    for (t, tag) in [("openness", "opn"), ("extraversion", "ext")] {
        for i in 0..4u32 {
            let polarity = if i % 2 == 0 { Polarity::Positive } else { Polarity::Negative };
            bank.push(item(
                &format!("{tag}-off-{i}"),
                t,
                &format!("Official statement {i} about {t}."),
                polarity,
                ItemSource::Official,
                i + 1,
            ));
        }
        for i in 0..6u32 {
            let polarity = if i % 2 == 0 { Polarity::Positive } else { Polarity::Negative };
            bank.push(item(
                &format!("{tag}-gen-{i}"),
                t,
                &format!("Generated statement {i} about {t}."),
                polarity,
                ItemSource::Generated,
                i + 1,
            ));
        }
    }
    let path = dir.join("items.json");
    std::fs::write(&path, serde_json::to_string_pretty(&bank).unwrap()).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn itemforge")
}

fn simulate(out: &Path, items: &Path, seed: u64) -> Output {
    run(&[
        "simulate",
        "--config",
        config_path().to_str().unwrap(),
        "--backend",
        "synthetic",
        "--seed",
        &seed.to_string(),
        "--out",
        out.to_str().unwrap(),
        "--items",
        items.to_str().unwrap(),
        "--respondents",
        "20",
    ])
}

#[test]
fn simulate_is_deterministic_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let items = fixture_bank(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let ra = simulate(&out_a, &items, 7);
    assert!(ra.status.success(), "stderr: {}", String::from_utf8_lossy(&ra.stderr));
    let rb = simulate(&out_b, &items, 7);
    assert!(rb.status.success());
    let ma = std::fs::read_to_string(out_a.join("matrix.csv")).unwrap();
    let mb = std::fs::read_to_string(out_b.join("matrix.csv")).unwrap();
    assert_eq!(ma, mb);
    assert!(out_a.join("manifest-simulate.json").exists());
    assert!(out_a.join("raw_log.jsonl").exists());

    let out_c = dir.path().join("c");
    let rc = simulate(&out_c, &items, 8);
    assert!(rc.status.success());
    let mc = std::fs::read_to_string(out_c.join("matrix.csv")).unwrap();
    assert_ne!(ma, mc, "different seeds must change the matrix");
}

#[test]
fn simulate_rank_select_evaluate_chain() {
    let dir = tempfile::tempdir().unwrap();
    let items = fixture_bank(dir.path());
    let out = dir.path().join("run");
    assert!(simulate(&out, &items, 11).status.success());
    let cfg = config_path();
    let matrix = out.join("matrix.csv");

    let rank = run(&[
        "rank",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--method",
        "simulation",
        "--items",
        items.to_str().unwrap(),
        "--matrix",
        matrix.to_str().unwrap(),
    ]);
    assert!(rank.status.success(), "stderr: {}", String::from_utf8_lossy(&rank.stderr));
    let ranking = out.join("ranking.json");

    let select = run(&[
        "select",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--ranking",
        ranking.to_str().unwrap(),
        "--n",
        "3",
    ]);
    assert!(select.status.success(), "stderr: {}", String::from_utf8_lossy(&select.stderr));
    let selected: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("selected.json")).unwrap()).unwrap();
    assert_eq!(selected["openness"].as_array().unwrap().len(), 3);
    assert_eq!(selected["extraversion"].as_array().unwrap().len(), 3);

    let eval = run(&[
        "evaluate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--ranking",
        ranking.to_str().unwrap(),
        "--matrix",
        matrix.to_str().unwrap(),
        "--items",
        items.to_str().unwrap(),
        "--with-oracle",
        "--n",
        "3",
    ]);
    assert!(eval.status.success(), "stderr: {}", String::from_utf8_lossy(&eval.stderr));
    let table = String::from_utf8_lossy(&eval.stdout);
    assert!(table.contains("Method"), "table header missing: {table}");
    assert!(table.contains("oracle"));
    assert!(out.join("report.json").exists());
}

#[test]
fn select_larger_than_pool_fails_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let items = fixture_bank(dir.path());
    let out = dir.path().join("run");
    assert!(simulate(&out, &items, 3).status.success());
    let cfg = config_path();
    let rank = run(&[
        "rank",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--method",
        "random",
        "--items",
        items.to_str().unwrap(),
    ]);
    assert!(rank.status.success());
    let select = run(&[
        "select",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--ranking",
        out.join("ranking.json").to_str().unwrap(),
        "--n",
        "100",
    ]);
    assert_eq!(select.status.code(), Some(1));
    let err = String::from_utf8_lossy(&select.stderr);
    assert!(err.contains("exceeds pool size"), "stderr: {err}");
}

#[test]
fn gen_items_rejects_synthetic_backend() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "gen-items",
        "--config",
        config_path().to_str().unwrap(),
        "--backend",
        "synthetic",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("live or replay"));
}

#[test]
fn usage_errors_exit_two() {
    let out = run(&["rank"]); // missing required --method/--items
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ablate_components_persona_only_runs() {
    let dir = tempfile::tempdir().unwrap();
    let items = fixture_bank(dir.path());
    let out = dir.path().join("abl");
    let r = run(&[
        "ablate-components",
        "--config",
        config_path().to_str().unwrap(),
        "--backend",
        "synthetic",
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
        "--mode",
        "persona-only",
        "--items",
        items.to_str().unwrap(),
        "--respondents",
        "10",
    ]);
    assert!(r.status.success(), "stderr: {}", String::from_utf8_lossy(&r.stderr));
    assert!(out.join("persona-only/matrix.csv").exists());
    // Steering must be absent from persona-only prompts.
    let raw = std::fs::read_to_string(out.join("persona-only/raw_log.jsonl")).unwrap();
    assert!(!raw.is_empty());
}
