use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use occpred::navsim::{read_episode_rows, EpisodeRow};

fn occpred(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_occpred"))
        .current_dir(dir)
        .env_remove("OCCPRED_OUT")
        .env_remove("RUST_LOG")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn manifest_hash(dir: &Path) -> String {
    occpred::manifest::manifest_hash(dir).unwrap()
}

const TINY: &str = r#"
seed = 5

[dataset]
scenes = 2
train_fraction = 0.5

[dataset.occlusion]
pairs_per_scene = 2
rays_per_scan = 512

[train]
epochs = 1
batch_size = 2

[train.arch]
width = 2
dilations = [1, 2]

[bench]
trials = 1
schemes = ["AGGRESSIVE", "PREDICTED(ALL_FREE)"]
"#;

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), TINY).unwrap();
    dir
}

#[test]
fn dataset_train_and_eval_pipeline_is_reproducible() {
    let w = workspace();
    let d = w.path();
    ok(occpred(d, &["dataset-gen", "-c", "run.toml", "-o", "a"]));
    ok(occpred(d, &["dataset-gen", "-c", "run.toml", "-o", "b"]));
    assert_eq!(manifest_hash(&d.join("a")), manifest_hash(&d.join("b")));
    // the stored config hashes to the recorded value
    let m: serde_json::Value = serde_json::from_slice(&fs::read(d.join("a/manifest.json")).unwrap()).unwrap();
    let stored = fs::read(d.join("a/config.toml")).unwrap();
    assert_eq!(m["provenance"]["config_hash"], occpred::manifest::sha256_hex(&stored));

    ok(occpred(d, &["train", "-c", "run.toml", "--dataset", "a", "-o", "t1"]));
    ok(occpred(d, &["train", "-c", "run.toml", "--dataset", "a", "-o", "t2"]));
    assert_eq!(manifest_hash(&d.join("t1")), manifest_hash(&d.join("t2")));

    ok(occpred(d, &["eval", "-c", "run.toml", "--dataset", "a", "--baseline", "ORACLE", "-o", "e"]));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("e/eval.json")).unwrap()).unwrap();
    assert_eq!(report["precision"], 1.0);
    assert_eq!(report["recall"], 1.0);
    assert!(d.join("e/manifest.json").is_file());

    ok(occpred(d, &["eval", "-c", "run.toml", "--dataset", "a", "--checkpoint", "t1/model.opnw", "-o", "e2"]));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("e2/eval.json")).unwrap()).unwrap();
    assert!(report["cells_evaluated"].as_u64().unwrap() > 0);
}

fn strip_scheme(rows: &[EpisodeRow], scheme: &str) -> Vec<EpisodeRow> {
    rows.iter()
        .filter(|r| r.scheme == scheme)
        .map(|r| EpisodeRow {
            scheme: String::new(),
            ..r.clone()
        })
        .collect()
}

#[test]
fn bench_schemes_agree_and_reruns_match() {
    let w = workspace();
    let d = w.path();
    let out = ok(occpred(d, &["bench", "-c", "run.toml", "-o", "b1"]));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PREDICTED(ALL_FREE)"));
    ok(occpred(d, &["bench", "-c", "run.toml", "-o", "b2"]));
    assert_eq!(manifest_hash(&d.join("b1")), manifest_hash(&d.join("b2")));
    let rows = read_episode_rows(d.join("b1/episodes.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(strip_scheme(&rows, "AGGRESSIVE"), strip_scheme(&rows, "PREDICTED(ALL_FREE)"));

    // --schemes replaces the configured list
    ok(occpred(d, &["bench", "-c", "run.toml", "--schemes", "CONSERVATIVE", "-o", "b3"]));
    let rows = read_episode_rows(d.join("b3/episodes.csv")).unwrap();
    assert!(rows.iter().all(|r| r.scheme == "CONSERVATIVE"));
}

#[test]
fn output_root_comes_from_environment() {
    let w = workspace();
    let d = w.path();
    let root = d.join("elsewhere");
    let out = Command::new(env!("CARGO_BIN_EXE_occpred"))
        .current_dir(d)
        .env("OCCPRED_OUT", &root)
        .args(["scene-gen", "-c", "run.toml"])
        .output()
        .unwrap();
    ok(out);
    assert!(root.join("scene-gen/scene_000.ocgr").is_file());
    assert!(root.join("scene-gen/manifest.json").is_file());
}

#[test]
fn inspect_exports_slices_and_points() {
    let w = workspace();
    let d = w.path();
    ok(occpred(d, &["scene-gen", "-c", "run.toml", "-o", "s"]));
    let out = ok(occpred(d, &["inspect", "s/scene_000.ocgr", "--slices", "png", "--axis", "x", "--ply", "p.ply"]));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("dims [40, 40, 20]"), "{text}");
    let slices = fs::read_dir(d.join("png")).unwrap().count();
    assert_eq!(slices, 40);
    let img = fs::read(d.join("png/x_0000.pgm")).unwrap();
    assert!(img.starts_with(b"P5\n40 20\n255\n"));
    assert_eq!(img.len(), b"P5\n40 20\n255\n".len() + 40 * 20);
    let ply = fs::read_to_string(d.join("p.ply")).unwrap();
    assert!(ply.starts_with("ply\n"));
    ok(occpred(d, &["inspect", "s/manifest.json"]));
}

fn error_code(out: &Output) -> (i32, serde_json::Value) {
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap_or(serde_json::Value::Null);
    (out.status.code().unwrap(), err)
}

#[test]
fn failures_map_to_distinct_exit_codes() {
    let w = workspace();
    let d = w.path();
    let (code, err) = error_code(&occpred(d, &["bench", "--set", "bench.nav.sensor.rayz=3"]));
    assert_eq!(code, 2);
    assert_eq!(err["error"]["kind"], "config");
    fs::write(d.join("bad.toml"), "seed = [").unwrap();
    assert_eq!(error_code(&occpred(d, &["scene-gen", "-c", "bad.toml"])).0, 2);
    assert_eq!(error_code(&occpred(d, &["bench", "--schemes", "FAST"])).0, 2);

    let (code, err) = error_code(&occpred(d, &["eval", "--dataset", "missing", "--baseline", "ORACLE"]));
    assert_eq!(code, 3);
    assert_eq!(err["error"]["kind"], "input");
    assert_eq!(error_code(&occpred(d, &["scene-gen", "-c", "nope.toml"])).0, 3);
    assert_eq!(error_code(&occpred(d, &["inspect", "missing.ocgr"])).0, 3);
    fs::write(d.join("junk.ocgr"), b"not a grid").unwrap();
    assert_eq!(error_code(&occpred(d, &["inspect", "junk.ocgr"])).0, 3);

    // a scene that cannot be generated is a runtime failure
    let (code, err) = error_code(&occpred(
        d,
        &["scene-gen", "--set", "scene.obstacle_count=2000", "--set", "scene.passage_clearance=0.9", "-o", "x"],
    ));
    assert_eq!(code, 4, "{err}");
}
