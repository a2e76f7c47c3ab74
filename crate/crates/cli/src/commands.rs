use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use occpred::manifest::{self, FileEntry, Provenance};
use occpred::navsim::{run_benchmark, write_benchmark, Scheme};
use occpred::occlusion::{generate_dataset, load_pairs, DatasetManifest, DatasetRequest};
use occpred::predictor::{self, evaluate, evaluate_baseline, load_model, BaselineKind, OpNet};
use occpred::rng::derive_seed;
use occpred::scenegen::{generate_scene, write_scene};

use crate::config::{self, RunConfig};
use crate::{CliError, Common};

pub const EVAL_FILE: &str = "eval.json";

fn load(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = config::load(common.config.as_deref(), &common.overrides)?;
    cfg.scene.seed = cfg.seed;
    cfg.dataset.scene.seed = cfg.seed;
    cfg.dataset.noise.seed = cfg.seed;
    cfg.train.seed = cfg.seed;
    cfg.bench.seed = cfg.seed;
    Ok(cfg)
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::runtime(format!("{}: {e}", path.display()))
}

/// Records the stored config's hash in an existing `manifest.json`.
fn stamp_manifest(dir: &Path, config_hash: &str) -> Result<String, CliError> {
    let path = dir.join("manifest.json");
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    let mut doc: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| io_err(&path, e))?;
    doc["provenance"]["config_hash"] = serde_json::Value::String(config_hash.to_string());
    Ok(manifest::write_manifest(dir, &doc)?)
}

fn write_provenance(dir: &Path, command: &str, cfg: &RunConfig, files: &[String]) -> Result<String, CliError> {
    let hash = cfg.store(dir)?;
    let mut p = Provenance::new(command, cfg.seed);
    p.config_hash = Some(hash);
    for f in files {
        p.files.push(FileEntry::of(dir, f)?);
    }
    Ok(manifest::write_manifest(dir, &serde_json::json!({ "provenance": p }))?)
}

fn report_done(command: &str, dir: &Path, manifest_hash: &str) {
    println!("{command}: wrote {} (manifest sha256 {manifest_hash})", dir.display());
}

pub fn scene_gen(common: &Common) -> Result<(), CliError> {
    let cfg = load(common)?;
    let out = cfg.output_for("scene-gen", common.out.as_deref());
    let mut files = Vec::new();
    for i in 0..cfg.scene_count {
        let mut spec = cfg.scene.clone();
        spec.seed = derive_seed(cfg.seed, i as u64);
        let scene = generate_scene(&spec)?;
        let stem = format!("scene_{i:03}");
        write_scene(&scene, &out, &stem)?;
        info!("{stem}: {} occupied cells", scene.grid.occupied_count(0.5));
        files.push(format!("{stem}.ocgr"));
        files.push(format!("{stem}.json"));
    }
    let h = write_provenance(&out, "scene-gen", &cfg, &files)?;
    report_done("scene-gen", &out, &h);
    Ok(())
}

pub fn dataset_gen(common: &Common) -> Result<(), CliError> {
    let cfg = load(common)?;
    let out = cfg.output_for("dataset-gen", common.out.as_deref());
    let d = &cfg.dataset;
    let scene_root = derive_seed(cfg.seed, 1);
    let scenes: Vec<_> = (0..d.scenes)
        .map(|i| {
            let mut s = d.scene.clone();
            s.seed = derive_seed(scene_root, i as u64);
            s
        })
        .collect();
    let req = DatasetRequest {
        scenes: &scenes,
        occlusion: &d.occlusion,
        noise: &d.noise,
        train_fraction: d.train_fraction,
        block_dims: d.block_dims,
        seed: cfg.seed,
    };
    let m = generate_dataset(&req, &out)?;
    info!("{} pairs, {} skipped", m.pairs.len(), m.skipped);
    let hash = cfg.store(&out)?;
    let h = stamp_manifest(&out, &hash)?;
    report_done("dataset-gen", &out, &h);
    Ok(())
}

/// Dataset directory, checked to hold a manifest.
fn dataset_dir(cfg: &RunConfig, dataset: Option<&Path>) -> Result<PathBuf, CliError> {
    let dir = dataset.map_or_else(|| cfg.output_for("dataset-gen", None), Path::to_path_buf);
    require_file(&dir.join("manifest.json"))?;
    Ok(dir)
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::input(format!("missing input file {}", path.display())))
    }
}

pub fn train(common: &Common, dataset: Option<&Path>) -> Result<(), CliError> {
    let cfg = load(common)?;
    let data = dataset_dir(&cfg, dataset)?;
    let out = cfg.output_for("train", common.out.as_deref());
    let outcome = predictor::train::<f32>(&data, &cfg.train, &out)?;
    let hash = cfg.store(&out)?;
    let h = stamp_manifest(&out, &hash)?;
    if let Some(r) = outcome.log.get(outcome.best_epoch) {
        println!(
            "best epoch {}: loss {:.4} val precision {:?} recall {:?}",
            r.epoch, r.loss, r.val_precision, r.val_recall
        );
    }
    report_done("train", &out, &h);
    Ok(())
}

pub fn eval(common: &Common, dataset: Option<&Path>, checkpoint: Option<&Path>, baseline: Option<&str>) -> Result<(), CliError> {
    let cfg = load(common)?;
    let data = dataset_dir(&cfg, dataset)?;
    let out = cfg.output_for("eval", common.out.as_deref());
    let manifest = DatasetManifest::read(&data)?;
    let pairs = load_pairs(&data, &manifest, cfg.eval.split)?;
    let report = match (checkpoint, baseline) {
        (Some(path), _) => {
            require_file(path)?;
            let net: OpNet<f32> = load_model(path, cfg.train.arch.block_dims)?;
            evaluate(&net, &pairs, cfg.eval.threshold)?
        }
        (None, Some(name)) => {
            let kind: BaselineKind = name.parse().map_err(|e: occpred::Error| CliError::config(e.to_string()))?;
            evaluate_baseline::<f32>(kind, &pairs, cfg.eval.threshold)?
        }
        (None, None) => return Err(CliError::config("eval needs --checkpoint or --baseline")),
    };
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    let body = serde_json::to_vec_pretty(&report).map_err(|e| CliError::runtime(e.to_string()))?;
    fs::write(out.join(EVAL_FILE), body).map_err(|e| io_err(&out, e))?;
    let h = write_provenance(&out, "eval", &cfg, &[EVAL_FILE.to_string()])?;
    println!(
        "{}: precision {:?} recall {:?} f1 {:?} over {} missing cells",
        report.predictor, report.precision, report.recall, report.f1, report.cells_evaluated
    );
    report_done("eval", &out, &h);
    Ok(())
}

pub fn bench(common: &Common, schemes: Option<&str>, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let mut cfg = load(common)?;
    if let Some(list) = schemes {
        cfg.bench.schemes = list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.parse::<Scheme>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::config(e.to_string()))?;
        cfg.bench.validate().map_err(|e| CliError::config(e.to_string()))?;
    }
    let out = cfg.output_for("bench", common.out.as_deref());
    let needs_model = cfg.bench.schemes.iter().any(|s| s.predictor() == Some("MODEL"));
    let model: Option<OpNet<f32>> = match (needs_model, checkpoint) {
        (true, Some(p)) => {
            require_file(p)?;
            Some(load_model(p, cfg.bench.nav.prediction.block_dims)?)
        }
        (true, None) => return Err(CliError::config("PREDICTED(MODEL) needs --checkpoint")),
        (false, _) => None,
    };
    let table = run_benchmark(&cfg.bench, model.as_ref())?;
    let files = write_benchmark(&table, &out, cfg.bench.export_paths)?;
    let h = write_provenance(&out, "bench", &cfg, &files)?;
    println!(
        "{:<24} {:>8} {:>10} {:>10} {:>10}",
        "scheme", "success%", "time s", "length m", "stops"
    );
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
    for s in &table.schemes {
        println!(
            "{:<24} {:>8.1} {:>10} {:>10} {:>10}",
            s.scheme,
            s.success_rate,
            fmt(s.mean_travel_time),
            fmt(s.mean_trajectory_length),
            fmt(s.mean_emergency_stops)
        );
    }
    println!("(means over {})", table.means_over);
    report_done("bench", &out, &h);
    Ok(())
}
