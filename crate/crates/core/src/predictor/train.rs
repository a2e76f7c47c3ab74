use std::fs;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{evaluate, ArchConfig, OpNet};
use crate::error::{invalid, Result};
use crate::manifest::{self, FileEntry, Provenance};
use crate::num::Real;
use crate::occlusion::{load_pairs, DataPair, DatasetManifest, Split};
use crate::rng::{derive_seed, seeded};
use crate::tensornn::io::{read_weights, write_weights};
use crate::tensornn::{adam_step, loss_weights, AdamState, LossWeights, LrSchedule, Tensor};
use crate::voxel::{Dims, DEFAULT_THRESHOLD};

pub const MODEL_FILE: &str = "model.opnw";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub arch: ArchConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub loss_weights: LossWeights,
    pub threshold: f64,
    pub seed: u64,
    /// Random axis flips (and x/y swaps on square blocks) of training samples.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: ArchConfig::default(),
            epochs: 8,
            batch_size: 4,
            schedule: LrSchedule::default(),
            loss_weights: LossWeights::default(),
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.schedule.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(invalid("epochs and batch_size must be >= 1"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(invalid("threshold must be in (0,1)"));
        }
        Ok(())
    }
}

/// One training example: network input, trinary target and per-cell weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub dims: Dims,
    pub input: Vec<i8>,
    pub target: Vec<i8>,
    pub weights: Vec<f64>,
}

impl Sample {
    pub fn from_pair(pair: &DataPair, w: &LossWeights, threshold: f64) -> Result<Self> {
        Ok(Self {
            dims: pair.target.dims(),
            input: pair.partial.discretize(threshold)?.cells().to_vec(),
            target: pair.target.discretize(threshold)?.cells().to_vec(),
            weights: loss_weights(&pair.target, &pair.partial, w, threshold)?.weights,
        })
    }

    /// Bit 0 flips x, bit 1 flips y, bit 2 swaps x and y (square footprints only).
    pub fn transformed(&self, code: u8) -> Self {
        let [dx, dy, dz] = self.dims;
        let swap = code & 4 != 0 && dx == dy;
        let src = |i: usize, j: usize, k: usize| {
            let (mut i, mut j) = if swap { (j, i) } else { (i, j) };
            if code & 1 != 0 {
                i = dx - 1 - i;
            }
            if code & 2 != 0 {
                j = dy - 1 - j;
            }
            (i * dy + j) * dz + k
        };
        let mut out = self.clone();
        for i in 0..dx {
            for j in 0..dy {
                for k in 0..dz {
                    let (d, s) = ((i * dy + j) * dz + k, src(i, j, k));
                    out.input[d] = self.input[s];
                    out.target[d] = self.target[s];
                    out.weights[d] = self.weights[s];
                }
            }
        }
        out
    }
}

fn batch<T: Real>(samples: &[Sample]) -> Result<(Tensor<T>, Vec<i8>, Vec<f64>)> {
    let [d, h, w] = samples[0].dims;
    let mut x = Vec::with_capacity(samples.len() * d * h * w);
    let mut y = Vec::with_capacity(x.capacity());
    let mut wt = Vec::with_capacity(x.capacity());
    for s in samples {
        if s.dims != samples[0].dims {
            return Err(invalid("batch samples differ in dims"));
        }
        x.extend(s.input.iter().map(|&c| T::of(c as f64)));
        y.extend_from_slice(&s.target);
        wt.extend_from_slice(&s.weights);
    }
    Ok((Tensor::from_vec([samples.len(), 1, d, h, w], x)?, y, wt))
}

impl<T: Real> OpNet<T> {
    /// Zeroes gradients, runs forward/backward on `samples` and applies one Adam step.
    pub fn train_step(&mut self, samples: &[Sample], adam: &mut AdamState, lr: f64) -> Result<f64> {
        if samples.is_empty() {
            return Err(invalid("empty batch"));
        }
        let (x, y, w) = batch::<T>(samples)?;
        self.zero_grad();
        let loss = self.loss_and_backward(&x, &y, &w)?;
        adam_step(&mut self.params_mut(), adam, lr)?;
        Ok(loss)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub steps: usize,
    pub lr: f64,
    pub loss: f64,
    pub val_precision: Option<f64>,
    pub val_recall: Option<f64>,
    pub val_f1: Option<f64>,
}

pub struct TrainOutcome<T> {
    /// Checkpoint with the best validation F1 (the last epoch when there is no validation split).
    pub model: OpNet<T>,
    pub best_epoch: usize,
    pub log: Vec<TrainLogRow>,
}

/// Trains in memory. Data order per epoch comes from a seeded shuffle.
pub fn train_pairs<T: Real>(train: &[DataPair], val: &[DataPair], cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(invalid("training split is empty"));
    }
    let samples = train
        .iter()
        .map(|p| Sample::from_pair(p, &cfg.loss_weights, cfg.threshold))
        .collect::<Result<Vec<_>>>()?;
    if samples.iter().any(|s| s.dims != cfg.arch.block_dims) {
        return Err(invalid(format!("training pairs must have block dims {:?}", cfg.arch.block_dims)));
    }
    let mut net = OpNet::<T>::new(&cfg.arch, &mut seeded(derive_seed(cfg.seed, 0)))?;
    let mut adam = AdamState::default();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, OpNet<T>)> = None;
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut rng = seeded(derive_seed(cfg.seed, 1 + epoch as u64));
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = chunk
                .iter()
                .map(|&i| {
                    let code: u8 = if cfg.augment { rng.random_range(0..8) } else { 0 };
                    if code == 0 {
                        samples[i].clone()
                    } else {
                        samples[i].transformed(code)
                    }
                })
                .collect();
            loss_sum += net.train_step(&batch, &mut adam, cfg.schedule.lr_at(step))?;
            step += 1;
            batches += 1;
        }
        let (vp, vr, vf) = if val.is_empty() {
            (None, None, None)
        } else {
            let r = evaluate::<T>(&net, val, cfg.threshold)?;
            (r.precision, r.recall, r.f1)
        };
        let row = TrainLogRow {
            epoch,
            steps: step,
            lr: cfg.schedule.lr_at(step.saturating_sub(1)),
            loss: loss_sum / batches as f64,
            val_precision: vp,
            val_recall: vr,
            val_f1: vf,
        };
        info!(
            "epoch {epoch}: loss {:.4} val p {:?} r {:?} f1 {:?}",
            row.loss, row.val_precision, row.val_recall, row.val_f1
        );
        let score = if val.is_empty() { epoch as f64 } else { vf.unwrap_or(-1.0) };
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, epoch, net.clone()));
        }
        log.push(row);
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainOutcome { model, best_epoch, log })
}

pub fn save_model<T: Real>(net: &OpNet<T>, path: impl AsRef<Path>) -> Result<()> {
    write_weights(&net.layers(), path)
}

pub fn load_model<T: Real>(path: impl AsRef<Path>, block_dims: Dims) -> Result<OpNet<T>> {
    OpNet::from_layers(read_weights(path)?, block_dims)
}

fn write_log(rows: &[TrainLogRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TrainManifest<'a> {
    provenance: Provenance,
    config: &'a TrainConfig,
    dataset_manifest_sha256: String,
    best_epoch: usize,
    param_count: usize,
}

/// Trains on a generated dataset and writes `model.opnw`, `train_log.csv` and `manifest.json` to `out_dir`.
pub fn train<T: Real>(dataset_dir: impl AsRef<Path>, cfg: &TrainConfig, out_dir: impl AsRef<Path>) -> Result<TrainOutcome<T>> {
    let data = dataset_dir.as_ref();
    let out = out_dir.as_ref();
    let manifest = DatasetManifest::read(data)?;
    let train_set = load_pairs(data, &manifest, Split::Train)?;
    let val_set = load_pairs(data, &manifest, Split::Val)?;
    let outcome = train_pairs::<T>(&train_set, &val_set, cfg)?;
    fs::create_dir_all(out)?;
    save_model(&outcome.model, out.join(MODEL_FILE))?;
    write_log(&outcome.log, &out.join(TRAIN_LOG_FILE))?;
    let mut provenance = Provenance::new("train", cfg.seed);
    provenance.files.push(FileEntry::of(out, MODEL_FILE)?);
    provenance.files.push(FileEntry::of(out, TRAIN_LOG_FILE)?);
    manifest::write_manifest(
        out,
        &TrainManifest {
            provenance,
            config: cfg,
            dataset_manifest_sha256: manifest::manifest_hash(data)?,
            best_epoch: outcome.best_epoch,
            param_count: outcome.model.param_count(),
        },
    )?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::tests::pairs;
    use crate::predictor::Predictor;

    fn tiny() -> TrainConfig {
        TrainConfig {
            arch: ArchConfig {
                width: 2,
                depth: 2,
                dilations: vec![1, 2],
                block_dims: [40, 40, 20],
            },
            epochs: 2,
            batch_size: 2,
            ..Default::default()
        }
    }

    #[test]
    fn transforms_permute_consistently() {
        let p = &pairs(1)[0];
        let s = Sample::from_pair(p, &LossWeights::default(), 0.5).unwrap();
        for code in 0..8u8 {
            let t = s.transformed(code);
            let mut a = t.input.clone();
            let mut b = s.input.clone();
            a.sort();
            b.sort();
            assert_eq!(a, b);
            // the weight of a cell follows its target and input
            for i in 0..t.weights.len() {
                assert!(t.weights[i] == 0.0 || t.target[i] >= 0);
            }
        }
        assert_eq!(s.transformed(1).transformed(1), s);
        assert_eq!(s.transformed(4).transformed(4), s);
    }

    #[test]
    fn masked_batch_leaves_parameters_unchanged() {
        let p = &pairs(1)[0];
        let mut s = Sample::from_pair(p, &LossWeights::default(), 0.5).unwrap();
        s.weights.fill(0.0);
        let cfg = tiny();
        let mut net = OpNet::<f32>::new(&cfg.arch, &mut seeded(3)).unwrap();
        let before = net.flat_params();
        let mut adam = AdamState::default();
        let loss = net.train_step(&[s], &mut adam, 1e-3).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(net.flat_params(), before);
    }

    #[test]
    fn training_is_deterministic_and_checkpoints_roundtrip() {
        let ps = pairs(4);
        let cfg = tiny();
        let a = train_pairs::<f32>(&ps[..3], &ps[3..], &cfg).unwrap();
        let b = train_pairs::<f32>(&ps[..3], &ps[3..], &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model, b.model);
        let dir = tempfile::tempdir().unwrap();
        save_model(&a.model, dir.path().join("m.opnw")).unwrap();
        let back = load_model::<f32>(dir.path().join("m.opnw"), cfg.arch.block_dims).unwrap();
        let block = ps[0].partial.discretize(0.5).unwrap();
        assert_eq!(back.predict(&block).unwrap(), a.model.predict(&block).unwrap());
        assert!(train_pairs::<f32>(&[], &ps, &cfg).is_err());
    }
}
