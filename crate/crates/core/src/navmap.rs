//! Double-layer occupancy map: an observed layer fed by sensor scans and a
//! predicted layer refreshed block-wise from a [`Predictor`], queried through
//! a fused collision rule.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::num::Real;
use crate::predictor::Predictor;
use crate::voxel::{Dims, Geometry, GridIndex, OccupancyGrid, Point, Region, TrinaryGrid, VoxelValue};

/// Log-odds increments for the observed layer; the prior is probability 0.5.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogOddsParams {
    pub hit: f64,
    pub miss: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for LogOddsParams {
    fn default() -> Self {
        Self {
            hit: 0.85,
            miss: -0.4,
            min: -3.5,
            max: 3.5,
        }
    }
}

impl LogOddsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.hit > 0.0 && self.miss < 0.0 && self.min < 0.0 && self.max > 0.0) {
            return Err(Error::Config("log-odds: need hit > 0, miss < 0, min < 0 < max".into()));
        }
        if !(self.min.is_finite() && self.max.is_finite()) {
            return Err(Error::Config("log-odds clamp must be finite".into()));
        }
        Ok(())
    }
}

/// Weights of the two layers and the occupancy threshold of the fused value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionParams {
    /// Weight of the observed layer; the predicted layer gets `1 - original_weight`.
    pub original_weight: f64,
    pub threshold: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            original_weight: 0.8,
            threshold: 0.5,
        }
    }
}

impl FusionParams {
    pub fn predicted_weight(&self) -> f64 {
        1.0 - self.original_weight
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.original_weight) {
            return Err(Error::Config("fusion original_weight must be in [0,1]".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("fusion threshold must be in (0,1)".into()));
        }
        Ok(())
    }
}

/// When and where the predicted layer is refreshed, in simulation steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictionSchedule {
    pub period: usize,
    /// Steps between capturing a block and writing its prediction back.
    pub latency: usize,
    pub block_dims: Dims,
    /// Weight of the previous predicted value kept on overwrite; 0 replaces it.
    pub smoothing: f64,
}

impl Default for PredictionSchedule {
    fn default() -> Self {
        Self {
            period: 2,
            latency: 1,
            block_dims: [40, 40, 20],
            smoothing: 0.0,
        }
    }
}

impl PredictionSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.period == 0 {
            return Err(Error::Config("prediction period must be >= 1".into()));
        }
        if self.block_dims.contains(&0) {
            return Err(Error::Config("prediction block dims must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::Config("prediction smoothing must be in [0,1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Observation {
    pub index: GridIndex,
    pub hit: bool,
}

/// Fused occupancy of one cell.
///
/// Both known: weighted sum. Both unknown: 0 (free). One known: that value.
pub fn fused_value<T: Real>(original: VoxelValue<T>, predicted: VoxelValue<T>, params: &FusionParams) -> f64 {
    match (original, predicted) {
        (VoxelValue::Known(o), VoxelValue::Known(p)) => {
            params.original_weight * o.wide() + params.predicted_weight() * p.wide()
        }
        (VoxelValue::Unknown, VoxelValue::Unknown) => 0.0,
        (VoxelValue::Known(o), VoxelValue::Unknown) => o.wide(),
        (VoxelValue::Unknown, VoxelValue::Known(p)) => p.wide(),
    }
}

/// A prediction computed from a snapshot, waiting to be written back.
#[derive(Clone, Debug)]
pub struct PendingPrediction<T> {
    pub region: Region,
    pub block: OccupancyGrid<T>,
    /// Observed-layer version at capture time.
    pub source_version: u64,
}

#[derive(Clone, Debug)]
pub struct DoubleLayerMap<T> {
    original: OccupancyGrid<T>,
    predicted: OccupancyGrid<T>,
    log_odds: Vec<f64>,
    // per-cell scan tokens used to deduplicate observations
    seen_stamp: Vec<u64>,
    hit_stamp: Vec<u64>,
    original_version: u64,
    predicted_version: u64,
    pub fusion: FusionParams,
    pub log_odds_params: LogOddsParams,
}

#[inline]
fn sigmoid(l: f64) -> f64 {
    1.0 / (1.0 + (-l).exp())
}

impl<T: Real> DoubleLayerMap<T> {
    /// Both layers start all UNKNOWN.
    pub fn new(geom: Geometry, fusion: FusionParams, log_odds: LogOddsParams) -> Result<Self> {
        fusion.validate()?;
        log_odds.validate()?;
        let n = geom.len();
        Ok(Self {
            original: OccupancyGrid::unknown(geom.clone()),
            predicted: OccupancyGrid::unknown(geom),
            log_odds: vec![0.0; n],
            seen_stamp: vec![0; n],
            hit_stamp: vec![0; n],
            original_version: 0,
            predicted_version: 0,
            fusion,
            log_odds_params: log_odds,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        self.original.geometry()
    }

    pub fn original(&self) -> &OccupancyGrid<T> {
        &self.original
    }

    pub fn predicted(&self) -> &OccupancyGrid<T> {
        &self.predicted
    }

    pub fn original_version(&self) -> u64 {
        self.original_version
    }

    pub fn predicted_version(&self) -> u64 {
        self.predicted_version
    }

    /// Applies one scan. Repeated indices within a call count once, a hit taking precedence.
    /// Nothing is applied if any index is out of bounds.
    pub fn update_original(&mut self, observations: &[Observation]) -> Result<()> {
        let geom = self.original.geometry().clone();
        if let Some(o) = observations.iter().find(|o| !geom.contains_index(o.index)) {
            return Err(Error::OutOfBounds(format!("observation at {:?}", o.index)));
        }
        let token = self.original_version + 1;
        for o in observations.iter().filter(|o| o.hit) {
            self.hit_stamp[geom.linear(o.index)] = token;
        }
        let p = self.log_odds_params;
        let raw = self.original.raw_mut();
        for o in observations {
            let l = geom.linear(o.index);
            if self.seen_stamp[l] == token {
                continue;
            }
            self.seen_stamp[l] = token;
            let hit = self.hit_stamp[l] == token;
            let prior = if raw[l] < T::zero() { 0.0 } else { self.log_odds[l] };
            let v = (prior + if hit { p.hit } else { p.miss }).clamp(p.min, p.max);
            self.log_odds[l] = v;
            raw[l] = T::of(sigmoid(v));
        }
        self.original_version = token;
        Ok(())
    }

    /// Block of the observed layer around `center`, shifted inside the grid, discretized.
    pub fn capture(&self, center: &Point, block_dims: Dims) -> Result<(Region, TrinaryGrid)> {
        let geom = self.geometry();
        let c = geom
            .index_from_coords(geom.voxel_coords(center))
            .ok_or_else(|| Error::OutOfBounds(format!("prediction center {center:?} outside the map")))?;
        let region = Region::centered(c, block_dims, geom.dims)?;
        let block = self.original.extract_block(&region)?.discretize(self.fusion.threshold)?;
        Ok((region, block))
    }

    /// Runs the predictor on a snapshot. A failing predictor yields `None` and is logged.
    pub fn predict_block(
        &self,
        predictor: &dyn Predictor<T>,
        center: &Point,
        block_dims: Dims,
    ) -> Result<Option<PendingPrediction<T>>> {
        let (region, input) = self.capture(center, block_dims)?;
        match predictor.predict(&input) {
            Ok(block) if block.dims() == region.dims => Ok(Some(PendingPrediction {
                region,
                block,
                source_version: self.original_version,
            })),
            Ok(block) => {
                log::warn!(
                    "prediction skipped: {} returned dims {:?} for block {:?}",
                    predictor.name(),
                    block.dims(),
                    region.dims
                );
                Ok(None)
            }
            Err(e) => {
                log::warn!("prediction skipped: {}: {e}", predictor.name());
                Ok(None)
            }
        }
    }

    /// Overwrites the block's region of the predicted layer.
    /// With `smoothing > 0` previously known predictions are blended in.
    pub fn write_prediction(&mut self, pending: &PendingPrediction<T>, smoothing: f64) -> Result<()> {
        if smoothing <= 0.0 {
            self.predicted.write_block(&pending.region, &pending.block)?;
        } else {
            let mut block = pending.block.clone();
            let old = self.predicted.extract_block(&pending.region)?;
            for (n, &o) in block.raw_mut().iter_mut().zip(old.raw()) {
                if o >= T::zero() && *n >= T::zero() {
                    *n = T::of((1.0 - smoothing) * n.wide() + smoothing * o.wide());
                }
            }
            self.predicted.write_block(&pending.region, &block)?;
        }
        self.predicted_version += 1;
        Ok(())
    }

    /// Capture, predict and write back at once. Returns whether the layer was written.
    pub fn refresh_prediction(&mut self, predictor: &dyn Predictor<T>, center: &Point, block_dims: Dims) -> Result<bool> {
        match self.predict_block(predictor, center, block_dims)? {
            Some(p) => {
                self.write_prediction(&p, 0.0)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    #[inline]
    pub fn fused_at(&self, idx: GridIndex) -> f64 {
        fused_value(self.original.get(idx), self.predicted.get(idx), &self.fusion)
    }

    /// Fused value above the threshold; caller guarantees `idx` is in bounds.
    #[inline]
    pub fn occupied_at(&self, idx: GridIndex) -> bool {
        self.fused_at(idx) > self.fusion.threshold
    }

    pub fn query_occupied(&self, idx: GridIndex) -> Result<bool> {
        if !self.geometry().contains_index(idx) {
            return Err(Error::OutOfBounds(format!("query at {idx:?}")));
        }
        Ok(self.occupied_at(idx))
    }
}

/// Drives periodic refreshes with a fixed capture-to-write latency.
#[derive(Clone, Debug)]
pub struct PredictionQueue<T> {
    pub schedule: PredictionSchedule,
    pending: VecDeque<(usize, PendingPrediction<T>)>,
    skipped: usize,
    written: usize,
}

impl<T: Real> PredictionQueue<T> {
    pub fn new(schedule: PredictionSchedule) -> Result<Self> {
        schedule.validate()?;
        Ok(Self {
            schedule,
            pending: VecDeque::new(),
            skipped: 0,
            written: 0,
        })
    }

    /// Call once per step: captures when `step` is a multiple of the period, then writes
    /// every prediction whose latency has elapsed. A prediction written at step `t`
    /// reflects the observed layer as of step `t - latency`.
    pub fn tick(&mut self, map: &mut DoubleLayerMap<T>, predictor: &dyn Predictor<T>, step: usize, center: &Point) -> Result<()> {
        if step % self.schedule.period == 0 {
            match map.predict_block(predictor, center, self.schedule.block_dims)? {
                Some(p) => self.pending.push_back((step + self.schedule.latency, p)),
                None => self.skipped += 1,
            }
        }
        while self.pending.front().is_some_and(|(due, _)| *due <= step) {
            let (_, p) = self.pending.pop_front().expect("front checked");
            map.write_prediction(&p, self.schedule.smoothing)?;
            self.written += 1;
        }
        Ok(())
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }
}

/// Checks that a map and a block geometry are compatible before a run.
pub fn check_block_fits(geom: &Geometry, block_dims: Dims) -> Result<()> {
    if (0..3).any(|a| block_dims[a] > geom.dims[a]) {
        return Err(invalid(format!("prediction block {block_dims:?} larger than map {:?}", geom.dims)));
    }
    Ok(())
}
