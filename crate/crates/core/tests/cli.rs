//! The `relgat` binary: subcommands, exit codes and output confinement.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use relgat::graph::{GraphOptions, KnowledgeGraph};

const KINSHIP: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/kinship");

const TINY: [&str; 9] = [
    "transe.dim=4",
    "transe.epochs=5",
    "encoder.entity_dims=4,4,4",
    "encoder.relation_dims=4,4,4",
    "encoder.epochs=3",
    "decoder.epochs=2",
    "decoder.n_filters=2",
    "decoder.eval_every=1",
    "ablation.curve_every=1",
];

fn relgat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relgat"))
        .args(args)
        .env_remove("KG_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn with_tiny<'a>(mut args: Vec<&'a str>) -> Vec<&'a str> {
    for s in TINY {
        args.push("--set");
        args.push(s);
    }
    args
}

fn tiny_dataset(dir: &Path) {
    KnowledgeGraph::from_named(
        &[("a", "r", "b"), ("b", "r", "c"), ("c", "s", "a"), ("a", "s", "d"), ("d", "r", "a")],
        &[("b", "s", "d")],
        &[("c", "r", "d")],
        GraphOptions::default(),
    )
    .unwrap()
    .write_dataset(dir)
    .unwrap();
}

fn listing(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(listing(&p));
        }
        out.push(p);
    }
    out.sort();
    out
}

#[test]
fn stats_text_and_json_agree() {
    let text = relgat(&["stats", "--data", KINSHIP]);
    assert_eq!(text.status.code(), Some(0));
    let table = String::from_utf8(text.stdout).unwrap();
    assert!(table.contains("8544") && table.contains("82.15"), "{table}");
    let json = relgat(&["stats", "--data", KINSHIP, "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(v["n_entities"], 104);
    assert_eq!(v["n_train"], 8544);
    assert!(table.contains(&format!("{:.2}", v["mean_in_degree"].as_f64().unwrap())));
}

#[test]
fn input_errors_exit_2() {
    let missing = relgat(&["stats", "--data", "/definitely/not/here"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(!missing.stderr.is_empty());

    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();
    let bad_key = relgat(&["build-aux", "--data", KINSHIP, "--out", out, "--set", "nonsense=1"]);
    assert_eq!(bad_key.status.code(), Some(2));
    let bad_value = relgat(&["build-aux", "--data", KINSHIP, "--out", out, "--set", "aux.max_hops=lots"]);
    assert_eq!(bad_value.status.code(), Some(2));
    let no_args = relgat(&["evaluate"]);
    assert_eq!(no_args.status.code(), Some(2));
}

#[test]
fn pagerank_iteration_cap_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let args = [
        "analyze", "pagerank", "--data", KINSHIP, "--out", out.to_str().unwrap(),
        "--set", "analysis.pr_max_iters=2", "--set", "analysis.pr_tol=1e-15",
    ];
    let r = relgat(&args);
    assert_eq!(r.status.code(), Some(4), "{}", String::from_utf8_lossy(&r.stderr));
    let ok = relgat(&args[..6]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(out.join("pagerank.tsv").exists());
    assert!(out.join("analyze-pagerank.manifest.json").exists());
}

#[test]
fn blown_up_learning_rate_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    tiny_dataset(&data);
    let out = tmp.path().join("out");
    let r = relgat(&with_tiny(vec![
        "init-transe", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap(),
        "--set", "transe.lr=1e308", "--set", "transe.margin=1e308",
    ]));
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn stagewise_commands_and_pipeline_stay_in_out() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    tiny_dataset(&data);
    let before = listing(&data);
    let d = data.to_str().unwrap();
    let staged = tmp.path().join("staged");
    let s = staged.to_str().unwrap();
    for cmd in [
        vec!["build-aux", "--data", d, "--out", s],
        vec!["init-transe", "--data", d, "--out", s, "--seed", "3"],
        vec!["train-encoder", "--data", d, "--out", s, "--seed", "3"],
        vec!["train-decoder", "--data", d, "--out", s, "--seed", "3", "--freeze"],
        vec!["evaluate", "--data", d, "--out", s, "--per-triple"],
        vec!["ablate", "--data", d, "--out", s, "--mode", "minus_relations"],
        vec!["analyze", "attention", "--data", d, "--out", s, "--entity", "a"],
    ] {
        let r = relgat(&with_tiny(cmd.clone()));
        assert_eq!(r.status.code(), Some(0), "{cmd:?}: {}", String::from_utf8_lossy(&r.stderr));
    }
    for f in [
        "aux_paths.tsv",
        "transe/manifest.json",
        "encoder/manifest.json",
        "decoder/manifest.json",
        "metrics.json",
        "per_triple.csv",
        "ablation_minus_relations.csv",
        "attention_a.csv",
        "train-encoder.manifest.json",
        "evaluate.manifest.json",
    ] {
        assert!(staged.join(f).exists(), "{f}");
    }
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(staged.join("train-decoder.manifest.json")).unwrap()).unwrap();
    assert!(m["config"].as_array().unwrap().iter().any(|l| l == "decoder.freeze_embeddings = true"));

    let full = tmp.path().join("full");
    let r = relgat(&with_tiny(vec!["pipeline", "--data", d, "--out", full.to_str().unwrap(), "--seed", "3"]));
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8(r.stdout).unwrap().contains("MRR"));
    assert!(full.join("manifest.json").exists());
    let ab = tmp.path().join("ab");
    let r = relgat(&with_tiny(vec!["pipeline", "--data", d, "--out", ab.to_str().unwrap(), "--ablation", "minus_pg"]));
    assert_eq!(r.status.code(), Some(0));
    assert!(ab.join("ablation_minus_pg.csv").exists());

    // nothing outside the output directories, dataset untouched
    assert_eq!(listing(&data), before);
    let mut top: Vec<String> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    top.sort();
    assert_eq!(top, ["ab", "data", "full", "staged"]);
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    tiny_dataset(&data);
    let out = tmp.path().join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_relgat"))
        .args(with_tiny(vec!["init-transe", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()]))
        .env("KG_SEED", "41")
        .env("RUST_LOG", "warn")
        .status()
        .unwrap();
    assert!(status.success());
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("init-transe.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 41);
}
