use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use moodshift::catalog::{load_catalog, save_catalog, write_embeddings};
use moodshift::{Catalog, MoodLabel, Track};
use serde_json::Value;

const CONFIG: &str = r#"{
  "synth": {"dim": 16, "artists": 40, "tracks_per_artist": 10, "seed": 5},
  "split": {"seed": 5},
  "train": {"epochs": 3, "batch_size": 64, "k": 20, "seed": 5,
            "architecture": {"seed_hidden": 32, "seed_out": 16, "guide_hidden": 8, "guide_out": 8}}
}"#;

fn moodshift(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moodshift"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .arg("--config")
        .arg(dir.join("config.json"))
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = moodshift(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn workdir(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("config.json"), config).unwrap();
    dir
}

fn prepared() -> tempfile::TempDir {
    let dir = workdir(CONFIG);
    for cmd in ["gen", "index", "train"] {
        ok(dir.path(), &[cmd]);
    }
    dir
}

fn read(p: PathBuf) -> String {
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn jsonl(p: PathBuf) -> Vec<Value> {
    read(p).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn pipeline_stages_write_their_artifacts_and_manifests() {
    let dir = prepared();
    let d = dir.path();
    ok(d, &["evaluate", "--method", "all"]);
    let eval_csv = read(d.join("eval_test.csv"));
    let methods: Vec<&str> = eval_csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["model", "random", "avg-mood", "oracle-top1", "oracle-top100"]);
    for m in &methods {
        assert!(d.join(format!("confusion_{m}_test.csv")).exists());
    }

    let out = ok(d, &["compare"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 6);

    ok(d, &["ablate"]);
    assert_eq!(read(d.join("ablation.csv")).lines().count(), 8);
    assert_eq!(read(d.join("ablation_pp.csv")).lines().count(), 8);

    for cmd in ["gen", "index", "train", "evaluate", "compare", "ablate"] {
        let m: Value = serde_json::from_str(&read(d.join(format!("manifest_{cmd}.json")))).unwrap();
        assert_eq!(m["command"], cmd);
        assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
        assert_eq!(m["config"]["train"]["seed"], 5);
        assert!(!m["outputs"].as_object().unwrap().is_empty());
    }
    let sidecar: Value = serde_json::from_str(&read(d.join("model.json"))).unwrap();
    assert_eq!(sidecar["dim"], 16);
    assert_eq!(sidecar["train"]["epochs"], 3);
}

#[test]
fn reruns_reproduce_outputs_bit_exactly() {
    let a = prepared();
    let b = prepared();
    for f in ["catalog.emb", "catalog.jsonl", "split.json", "simmap_train.sim", "simmap_test.sim", "model.mdl", "train_report.json"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn manifest_config_regenerates_the_catalog() {
    let a = prepared();
    let m: Value = serde_json::from_str(&read(a.path().join("manifest_gen.json"))).unwrap();
    let b = workdir(&m["config"].to_string());
    ok(b.path(), &["gen"]);
    let mb: Value = serde_json::from_str(&read(b.path().join("manifest_gen.json"))).unwrap();
    let hashes = |m: &Value| -> Vec<String> {
        m["outputs"].as_object().unwrap().values().map(|v| v.as_str().unwrap().to_string()).collect()
    };
    assert_eq!(hashes(&m), hashes(&mb));
    assert_eq!(m["config_sha256"], mb["config_sha256"]);
}

#[test]
fn transform_emits_one_record_per_input_in_order() {
    let dir = prepared();
    let d = dir.path();
    let catalog = load_catalog(&d.join("catalog.emb"), &d.join("catalog.jsonl"), 4).unwrap();
    let inputs: Vec<&Track> = catalog.tracks().iter().take(7).collect();
    write_embeddings(&d.join("in.emb"), 16, inputs.iter().map(|t| t.embedding.as_slice())).unwrap();
    let moods: Vec<String> = inputs.iter().map(|t| t.mood.0.to_string()).collect();
    std::fs::write(d.join("moods.txt"), moods.join("\n")).unwrap();
    ok(d, &["transform", "--input", d.join("in.emb").to_str().unwrap(), "--seed-moods", d.join("moods.txt").to_str().unwrap(), "--target-mood", "2", "--k", "4"]);
    let recs = jsonl(d.join("transform.jsonl"));
    assert_eq!(recs.len(), 7);
    for (i, r) in recs.iter().enumerate() {
        assert_eq!(r["index"], i);
        assert_eq!(r["seed_mood"], inputs[i].mood.0);
        assert_eq!(r["target_mood"], 2);
        assert_eq!(r["vector"].as_array().unwrap().len(), 16);
        let sims: Vec<f64> = r["neighbors"].as_array().unwrap().iter().map(|n| n["similarity"].as_f64().unwrap()).collect();
        assert_eq!(sims.len(), 4);
        assert!(sims.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn transformed_vector_in_the_catalog_is_its_own_top_hit() {
    let dir = prepared();
    let d = dir.path();
    let catalog = load_catalog(&d.join("catalog.emb"), &d.join("catalog.jsonl"), 4).unwrap();
    let seed = &catalog.tracks()[3];
    write_embeddings(&d.join("in.emb"), 16, std::iter::once(seed.embedding.as_slice())).unwrap();
    let args = |out: &str| {
        vec![
            "transform".to_string(),
            "--input".into(),
            d.join("in.emb").display().to_string(),
            "--seed-mood".into(),
            seed.mood.0.to_string(),
            "--target-mood".into(),
            ((seed.mood.0 + 1) % 4).to_string(),
            "--k".into(),
            "1".into(),
            "--output".into(),
            d.join(out).display().to_string(),
        ]
    };
    let a = args("first.jsonl");
    ok(d, &a.iter().map(String::as_str).collect::<Vec<_>>());
    let vector: Vec<f32> = jsonl(d.join("first.jsonl"))[0]["vector"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap() as f32)
        .collect();

    let mut tracks = catalog.tracks().to_vec();
    tracks.push(Track {
        id: "probe".into(),
        artist_id: "probe".into(),
        embedding: vector,
        mood: MoodLabel(0),
        genre: 0,
        instruments: Default::default(),
    });
    let extended = Catalog::new(tracks, 4).unwrap();
    save_catalog(&extended, &d.join("catalog.emb"), &d.join("catalog.jsonl")).unwrap();
    let b = args("second.jsonl");
    ok(d, &b.iter().map(String::as_str).collect::<Vec<_>>());
    let hit = &jsonl(d.join("second.jsonl"))[0]["neighbors"][0];
    assert_eq!(hit["id"], "probe");
    assert!((hit["similarity"].as_f64().unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn invalid_inputs_exit_with_code_one() {
    let dir = workdir(CONFIG);
    let d = dir.path();
    // Training before indexing: the catalog is missing.
    assert_eq!(moodshift(d, &["train"]).status.code(), Some(1));
    ok(d, &["gen"]);
    assert_eq!(moodshift(d, &["train"]).status.code(), Some(1));
    ok(d, &["index"]);
    ok(d, &["train"]);

    let emb = d.join("catalog.emb").display().to_string();
    let code = |args: &[&str]| moodshift(d, args).status.code();
    assert_eq!(code(&["transform", "--input", &emb, "--seed-mood", "0", "--target-mood", "4"]), Some(1));
    assert_eq!(code(&["transform", "--input", &emb, "--seed-mood", "7", "--target-mood", "1"]), Some(1));
    write_embeddings(&d.join("wide.emb"), 3, std::iter::once([1.0f32, 2.0, 3.0].as_slice())).unwrap();
    let wide = d.join("wide.emb").display().to_string();
    assert_eq!(code(&["transform", "--input", &wide, "--seed-mood", "0", "--target-mood", "1"]), Some(1));
    assert_eq!(code(&["evaluate", "--method", "nearest"]), Some(1));
    assert_eq!(code(&["evaluate", "--split", "holdout"]), Some(1));

    std::fs::write(d.join("config.json"), r#"{"train": {"epochs": "many"}}"#).unwrap();
    let out = moodshift(d, &["train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochs") || String::from_utf8_lossy(&out.stderr).contains("config"));
}

#[test]
fn divergence_exits_with_code_two() {
    let config = CONFIG.replace("\"epochs\": 3", "\"epochs\": 3, \"learning_rate\": 1e36");
    let dir = workdir(&config);
    ok(dir.path(), &["gen"]);
    ok(dir.path(), &["index"]);
    assert_eq!(moodshift(dir.path(), &["train"]).status.code(), Some(2));
}

#[test]
fn kfold_config_writes_fold_reports() {
    let config = CONFIG.replace("\"epochs\": 3", "\"epochs\": 2, \"kfold\": 3");
    let dir = workdir(&config);
    ok(dir.path(), &["gen"]);
    ok(dir.path(), &["train"]);
    let csv = read(dir.path().join("kfold.csv"));
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().last().unwrap().starts_with("mean,"));
}
