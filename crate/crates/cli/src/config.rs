//! Run configuration: one TOML document, `--set key=value` overrides and the
//! canonical form stored next to every output.

use std::fs;
use std::path::{Path, PathBuf};

use occpred::manifest::sha256_hex;
use occpred::navsim::BenchmarkConfig;
use occpred::occlusion::{NoiseParams, OcclusionParams, Split};
use occpred::predictor::TrainConfig;
use occpred::scenegen::SceneSpec;
use occpred::voxel::{Dims, DEFAULT_THRESHOLD};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

/// Environment variable that replaces `output_dir`.
pub const OUTPUT_ENV: &str = "OCCPRED_OUT";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every command derives its sub-seeds from it.
    pub seed: u64,
    /// Output root; each command writes to `<output_dir>/<command>` unless `--out` is given.
    pub output_dir: String,
    /// Template for `scene-gen`.
    pub scene: SceneSpec,
    pub scene_count: usize,
    pub dataset: DatasetSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub bench: BenchmarkConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: "out".into(),
            scene: SceneSpec::default(),
            scene_count: 1,
            dataset: DatasetSection::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
            bench: BenchmarkConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Scene template; seeds are derived per scene.
    pub scene: SceneSpec,
    pub scenes: usize,
    pub occlusion: OcclusionParams,
    pub noise: NoiseParams,
    pub train_fraction: f64,
    pub block_dims: Option<Dims>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            scenes: 60,
            occlusion: OcclusionParams::default(),
            noise: NoiseParams::default(),
            train_fraction: 0.8,
            block_dims: Some([40, 40, 20]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub threshold: f64,
    pub split: Split,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            split: Split::Val,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> occpred::Result<()> {
        self.scene.validate()?;
        if self.scene_count == 0 {
            return Err(occpred::Error::Config("scene_count must be >= 1".into()));
        }
        let d = &self.dataset;
        d.scene.validate()?;
        d.occlusion.validate()?;
        d.noise.validate()?;
        if !(0.0..=1.0).contains(&d.train_fraction) {
            return Err(occpred::Error::Config("dataset.train_fraction must be in [0,1]".into()));
        }
        self.train.validate()?;
        if !(self.eval.threshold > 0.0 && self.eval.threshold < 1.0) {
            return Err(occpred::Error::Config("eval.threshold must be in (0,1)".into()));
        }
        self.bench.validate()
    }

    /// Canonical TOML text; this exact text is stored and hashed.
    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::config(format!("cannot serialize config: {e}")))
    }

    /// Writes `config.toml` into `dir` and returns its SHA-256.
    pub fn store(&self, dir: &Path) -> Result<String, CliError> {
        let text = self.to_toml()?;
        fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
        fs::write(dir.join(CONFIG_FILE), &text).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
        Ok(sha256_hex(text.as_bytes()))
    }

    /// `--out` wins, then the environment override of the root, then `output_dir`.
    pub fn output_for(&self, command: &str, out: Option<&Path>) -> PathBuf {
        if let Some(o) = out {
            return o.to_path_buf();
        }
        let root = std::env::var_os(OUTPUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(&self.output_dir));
        root.join(command)
    }
}

/// Parses the right-hand side of `--set` as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

fn apply_override(doc: &mut Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override '{assignment}' is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(format!("bad override key '{key}'")));
    }
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = table.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("override '{key}': '{p}' is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Reads the config file (or starts from defaults), applies overrides and validates.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut doc = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::input(format!("config {}: {e}", p.display())))?;
            text.parse::<Table>().map_err(|e| CliError::config(format!("config {}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let cfg: RunConfig = Value::Table(doc).try_into().map_err(|e: toml::de::Error| CliError::config(e.to_string()))?;
    cfg.validate().map_err(|e| CliError::config(e.to_string()))?;
    Ok(cfg)
}
