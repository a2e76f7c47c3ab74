use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::episode::{run_episode, NavConfig};
use super::Scheme;
use crate::error::{invalid, Error, Result};
use crate::predictor::{AllFree, AllOccupied, BaselineKind, Failing, OpNet, Oracle, Passthrough, Predictor};
use crate::rng::derive_seed;
use crate::scenegen::{generate_scene, Scene, SceneKind, SceneSpec};
use crate::voxel::Point;

pub const EPISODES_FILE: &str = "episodes.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Scene template; its seed is replaced per trial.
    pub scene: SceneSpec,
    pub trials: usize,
    pub seed: u64,
    pub schemes: Vec<Scheme>,
    pub nav: NavConfig,
    /// Write each executed path as a PLY point list.
    pub export_paths: bool,
}

impl Default for BenchmarkConfig {
    /// Occluded box-field room; 20 trials of the three schemes with the oracle predictor.
    fn default() -> Self {
        let mut scene = SceneSpec::new(SceneKind::BoxField, [10.0, 6.0, 2.0], 0.1, 0).with_obstacles(40);
        scene.clearance = 0.6;
        scene.passage_clearance = 0.45;
        Self {
            scene,
            trials: 20,
            seed: 1,
            schemes: vec![Scheme::Aggressive, Scheme::Conservative, Scheme::Predicted("ORACLE".into())],
            nav: NavConfig::default(),
            export_paths: false,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("benchmark needs at least one trial".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("benchmark needs at least one scheme".into()));
        }
        self.scene.validate().map_err(|e| Error::Config(format!("scene: {e}")))?;
        self.nav.validate()
    }

    /// Scene and episode seeds of trial `n`; shared by every scheme.
    pub fn trial_seeds(&self, n: usize) -> (u64, u64) {
        (derive_seed(self.seed, 2 * n as u64), derive_seed(self.seed, 2 * n as u64 + 1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub trial: usize,
    pub scheme: String,
    pub scene_seed: u64,
    pub episode_seed: u64,
    pub success: bool,
    /// Empty on success.
    pub failure: String,
    pub travel_time: f64,
    pub trajectory_length: f64,
    pub emergency_stops: usize,
    pub steps: usize,
    pub replans: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: String,
    pub episodes: usize,
    pub successes: usize,
    /// Percent.
    pub success_rate: f64,
    /// Means over successful episodes; `None` without any.
    pub mean_travel_time: Option<f64>,
    pub mean_trajectory_length: Option<f64>,
    pub mean_emergency_stops: Option<f64>,
    /// Over every episode, successful or not.
    pub mean_emergency_stops_all: f64,
    pub collisions: usize,
    pub timeouts: usize,
    pub stuck: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub means_over: String,
    pub schemes: Vec<SchemeSummary>,
    #[serde(skip)]
    pub rows: Vec<EpisodeRow>,
    #[serde(skip)]
    pub paths: Vec<Vec<Point>>,
}

impl BenchmarkTable {
    pub fn scheme(&self, name: &str) -> Option<&SchemeSummary> {
        self.schemes.iter().find(|s| s.scheme == name)
    }
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = v.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

/// Per-scheme aggregates, schemes in order of first appearance.
pub fn summarize(rows: &[EpisodeRow]) -> Vec<SchemeSummary> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.scheme.as_str()) {
            names.push(&r.scheme);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let all: Vec<&EpisodeRow> = rows.iter().filter(|r| r.scheme == name).collect();
            let ok: Vec<&&EpisodeRow> = all.iter().filter(|r| r.success).collect();
            let count = |f: &str| all.iter().filter(|r| r.failure == f).count();
            SchemeSummary {
                scheme: name.to_string(),
                episodes: all.len(),
                successes: ok.len(),
                success_rate: 100.0 * ok.len() as f64 / all.len() as f64,
                mean_travel_time: mean(ok.iter().map(|r| r.travel_time)),
                mean_trajectory_length: mean(ok.iter().map(|r| r.trajectory_length)),
                mean_emergency_stops: mean(ok.iter().map(|r| r.emergency_stops as f64)),
                mean_emergency_stops_all: mean(all.iter().map(|r| r.emergency_stops as f64)).unwrap_or(0.0),
                collisions: count("COLLISION"),
                timeouts: count("TIMEOUT"),
                stuck: count("STUCK"),
            }
        })
        .collect()
}

fn predictor_for<'a>(id: &str, scene: &'a Scene, model: Option<&'a OpNet<f32>>) -> Result<Box<dyn Predictor<f32> + 'a>> {
    if id == "FAILING" {
        return Ok(Box::new(Failing));
    }
    if id == "MODEL" {
        let m = model.ok_or_else(|| invalid("scheme PREDICTED(MODEL) needs a trained model"))?;
        return Ok(Box::new(m));
    }
    Ok(match id.parse::<BaselineKind>()? {
        BaselineKind::Oracle => Box::new(Oracle::new(&scene.grid)),
        BaselineKind::AllFree => Box::new(AllFree),
        BaselineKind::AllOccupied => Box::new(AllOccupied),
        BaselineKind::Passthrough => Box::new(Passthrough),
    })
}

/// Runs every scheme on the same `trials` seeded scenes.
pub fn run_benchmark(cfg: &BenchmarkConfig, model: Option<&OpNet<f32>>) -> Result<BenchmarkTable> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut paths = Vec::new();
    for n in 0..cfg.trials {
        let (scene_seed, episode_seed) = cfg.trial_seeds(n);
        let mut spec = cfg.scene.clone();
        spec.seed = scene_seed;
        let scene = generate_scene(&spec)?;
        for scheme in &cfg.schemes {
            let pred = scheme.predictor().map(|id| predictor_for(id, &scene, model)).transpose()?;
            let (r, path) = run_episode(&scene, scheme, pred.as_deref(), &cfg.nav, episode_seed)?;
            log::info!(
                "trial {n} {scheme}: success {} time {:.2} stops {}",
                r.success,
                r.travel_time,
                r.emergency_stops
            );
            rows.push(EpisodeRow {
                trial: n,
                scheme: scheme.to_string(),
                scene_seed,
                episode_seed,
                success: r.success,
                failure: r.failure.map_or(String::new(), |f| f.as_str().to_string()),
                travel_time: r.travel_time,
                trajectory_length: r.trajectory_length,
                emergency_stops: r.emergency_stops,
                steps: r.steps,
                replans: r.replans,
            });
            paths.push(path);
        }
    }
    Ok(BenchmarkTable {
        means_over: "successful episodes".into(),
        schemes: summarize(&rows),
        rows,
        paths,
    })
}

/// ASCII PLY point list.
pub fn write_ply(path: impl AsRef<Path>, points: &[Point]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "ply\nformat ascii 1.0\nelement vertex {}", points.len())?;
    writeln!(out, "property float x\nproperty float y\nproperty float z\nend_header")?;
    for p in points {
        writeln!(out, "{} {} {}", p.x, p.y, p.z)?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes `episodes.csv`, `summary.json` and optional `paths/*.ply`; returns the relative paths written.
pub fn write_benchmark(table: &BenchmarkTable, dir: impl AsRef<Path>, export_paths: bool) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(EPISODES_FILE))?;
    for r in &table.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    fs::write(dir.join(SUMMARY_FILE), serde_json::to_vec_pretty(table)?)?;
    let mut files = vec![EPISODES_FILE.to_string(), SUMMARY_FILE.to_string()];
    if export_paths {
        fs::create_dir_all(dir.join("paths"))?;
        for (r, p) in table.rows.iter().zip(&table.paths) {
            let name: String = r.scheme.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect();
            let rel = format!("paths/t{:03}_{}.ply", r.trial, name.trim_end_matches('_'));
            write_ply(dir.join(&rel), p)?;
            files.push(rel);
        }
    }
    Ok(files)
}

pub fn read_episode_rows(path: impl AsRef<Path>) -> Result<Vec<EpisodeRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows: std::result::Result<Vec<EpisodeRow>, _> = r.deserialize().collect();
    Ok(rows?)
}
