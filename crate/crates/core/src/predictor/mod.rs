//! Occupancy predictors: the trained network, reference baselines and
//! missing-cell evaluation.

mod opnet;
mod train;

pub use opnet::{block_tensor, ArchConfig, ForwardCache, OpNet};
pub use train::{
    load_model, save_model, train, train_pairs, Sample, TrainConfig, TrainLogRow, TrainOutcome, MODEL_FILE,
    TRAIN_LOG_FILE,
};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::num::Real;
use crate::occlusion::DataPair;
use crate::voxel::{OccupancyGrid, TrinaryGrid, DEFAULT_THRESHOLD};

/// Maps a trinary block to per-cell occupancy probabilities of the same geometry.
pub trait Predictor<T: Real> {
    fn name(&self) -> String;
    fn predict(&self, block: &TrinaryGrid) -> Result<OccupancyGrid<T>>;
}

impl<T: Real, P: Predictor<T> + ?Sized> Predictor<T> for &P {
    fn name(&self) -> String {
        (**self).name()
    }

    fn predict(&self, block: &TrinaryGrid) -> Result<OccupancyGrid<T>> {
        (**self).predict(block)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BaselineKind {
    Oracle,
    AllFree,
    AllOccupied,
    Passthrough,
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "ORACLE" => Ok(Self::Oracle),
            "ALL_FREE" => Ok(Self::AllFree),
            "ALL_OCCUPIED" => Ok(Self::AllOccupied),
            "PASSTHROUGH" => Ok(Self::Passthrough),
            _ => Err(invalid(format!("unknown baseline '{s}'"))),
        }
    }
}

/// Constant predictors.
#[derive(Clone, Copy, Debug)]
pub struct AllFree;

#[derive(Clone, Copy, Debug)]
pub struct AllOccupied;

/// Observed cells keep their value; unknown cells get 0.5.
#[derive(Clone, Copy, Debug)]
pub struct Passthrough;

impl<T: Real> Predictor<T> for AllFree {
    fn name(&self) -> String {
        "ALL_FREE".into()
    }

    fn predict(&self, block: &TrinaryGrid) -> Result<OccupancyGrid<T>> {
        Ok(OccupancyGrid::filled(block.geometry().clone(), T::zero()))
    }
}

impl<T: Real> Predictor<T> for AllOccupied {
    fn name(&self) -> String {
        "ALL_OCCUPIED".into()
    }

    fn predict(&self, block: &TrinaryGrid) -> Result<OccupancyGrid<T>> {
        Ok(OccupancyGrid::filled(block.geometry().clone(), T::one()))
    }
}

impl<T: Real> Predictor<T> for Passthrough {
    fn name(&self) -> String {
        "PASSTHROUGH".into()
    }

    fn predict(&self, block: &TrinaryGrid) -> Result<OccupancyGrid<T>> {
        let cells = block.cells().iter().map(|&c| if c < 0 { T::of(0.5) } else { T::of(c as f64) }).collect();
        OccupancyGrid::from_raw(block.geometry().clone(), cells)
    }
}

/// Looks the answer up in a ground-truth grid by world position.
/// Cells unknown in or outside the truth map are predicted free.
#[derive(Clone, Debug)]
pub struct Oracle<'a, U> {
    truth: &'a OccupancyGrid<U>,
    threshold: f64,
}

impl<'a, U: Real> Oracle<'a, U> {
    pub fn new(truth: &'a OccupancyGrid<U>) -> Self {
        Self {
            truth,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl<T: Real, U: Real> Predictor<T> for Oracle<'_, U> {
    fn name(&self) -> String {
        "ORACLE".into()
    }

    fn predict(&self, block: &TrinaryGrid) -> Result<OccupancyGrid<T>> {
        let g = block.geometry();
        let tg = self.truth.geometry();
        let cells = g
            .indices()
            .map(|idx| {
                let occ = tg
                    .index_from_coords(tg.voxel_coords(&g.index_to_world(idx)))
                    .is_some_and(|t| self.truth.is_occupied(t, self.threshold));
                if occ {
                    T::one()
                } else {
                    T::zero()
                }
            })
            .collect();
        OccupancyGrid::from_raw(g.clone(), cells)
    }
}

/// Always errors; used to exercise fallbacks.
#[derive(Clone, Copy, Debug)]
pub struct Failing;

impl<T: Real> Predictor<T> for Failing {
    fn name(&self) -> String {
        "FAILING".into()
    }

    fn predict(&self, _block: &TrinaryGrid) -> Result<OccupancyGrid<T>> {
        Err(Error::PredictionFailed("predictor configured to fail".into()))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Counts {
    pub fn add(&mut self, o: &Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }

    pub fn cells(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> Option<f64> {
        (self.tp + self.fp > 0).then(|| self.tp as f64 / (self.tp + self.fp) as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        (self.tp + self.fn_ > 0).then(|| self.tp as f64 / (self.tp + self.fn_) as f64)
    }

    pub fn f1(&self) -> Option<f64> {
        let (p, r) = (self.precision()?, self.recall()?);
        (p + r > 0.0).then(|| 2.0 * p * r / (p + r))
    }
}

/// Confusion counts over cells unknown in `partial` but known in `target`.
pub fn missing_cell_counts<T: Real, U: Real>(target: &OccupancyGrid<U>, partial: &OccupancyGrid<U>, pred: &OccupancyGrid<T>, threshold: f64) -> Result<Counts> {
    if !target.geometry().same_shape(partial.geometry()) || !target.geometry().same_shape(pred.geometry()) {
        return Err(invalid("evaluation grids differ in shape"));
    }
    let mut c = Counts::default();
    for ((&t, &p), &y) in target.raw().iter().zip(partial.raw()).zip(pred.raw()) {
        if t.wide() < 0.0 || p.wide() >= 0.0 {
            continue;
        }
        let truth = t.wide() > threshold;
        let guess = y.wide() > threshold;
        match (truth, guess) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub id: String,
    #[serde(flatten)]
    pub counts: Counts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub predictor: String,
    pub threshold: f64,
    pub pairs: usize,
    pub cells_evaluated: u64,
    #[serde(flatten)]
    pub counts: Counts,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub mean_inference_ms: f64,
    pub per_pair: Vec<PairReport>,
}

/// Micro-averaged evaluation; `predict` receives each pair and its discretized partial map.
pub fn evaluate_by<T: Real>(
    pairs: &[DataPair],
    threshold: f64,
    name: &str,
    mut predict: impl FnMut(&DataPair, &TrinaryGrid) -> Result<OccupancyGrid<T>>,
) -> Result<EvalReport> {
    let mut total = Counts::default();
    let mut per_pair = Vec::with_capacity(pairs.len());
    let mut elapsed = 0.0;
    for pair in pairs {
        let block = pair.partial.discretize(threshold)?;
        let t0 = Instant::now();
        let pred = predict(pair, &block)?;
        elapsed += t0.elapsed().as_secs_f64();
        if pred.raw().iter().any(|v| !(v.wide() >= 0.0 && v.wide() <= 1.0)) {
            return Err(Error::PredictionFailed(format!("{name}: output outside [0,1]")));
        }
        let c = missing_cell_counts(&pair.target, &pair.partial, &pred, threshold)?;
        total.add(&c);
        per_pair.push(PairReport {
            id: pair.meta.id.clone(),
            counts: c,
        });
    }
    if total.cells() == 0 {
        return Err(Error::UndefinedMetrics("no missing cells to evaluate".into()));
    }
    Ok(EvalReport {
        predictor: name.to_string(),
        threshold,
        pairs: pairs.len(),
        cells_evaluated: total.cells(),
        counts: total,
        precision: total.precision(),
        recall: total.recall(),
        f1: total.f1(),
        mean_inference_ms: if pairs.is_empty() { 0.0 } else { 1e3 * elapsed / pairs.len() as f64 },
        per_pair,
    })
}

pub fn evaluate<T: Real>(predictor: &dyn Predictor<T>, pairs: &[DataPair], threshold: f64) -> Result<EvalReport> {
    evaluate_by(pairs, threshold, &predictor.name(), |_, b| predictor.predict(b))
}

/// Evaluates a baseline; the oracle reads each pair's own target.
pub fn evaluate_baseline<T: Real>(kind: BaselineKind, pairs: &[DataPair], threshold: f64) -> Result<EvalReport> {
    match kind {
        BaselineKind::Oracle => evaluate_by::<T>(pairs, threshold, "ORACLE", |p, b| Oracle::new(&p.target).predict(b)),
        BaselineKind::AllFree => evaluate::<T>(&AllFree, pairs, threshold),
        BaselineKind::AllOccupied => evaluate::<T>(&AllOccupied, pairs, threshold),
        BaselineKind::Passthrough => evaluate::<T>(&Passthrough, pairs, threshold),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::occlusion::{generate_pair, NoiseParams, OcclusionParams};
    use crate::rng::seeded;
    use crate::scenegen::{generate_scene, SceneKind, SceneSpec};
    use crate::voxel::{Geometry, Point};
    use proptest::prelude::*;

    pub(crate) fn pairs(n: usize) -> Vec<DataPair> {
        let occ = OcclusionParams {
            rays_per_scan: 512,
            ..Default::default()
        };
        (0..n)
            .map(|i| {
                let spec = SceneSpec::new(SceneKind::BoxField, [4.0, 4.0, 2.0], 0.1, 50 + i as u64).with_obstacles(10);
                let scene = generate_scene(&spec).unwrap();
                let mut p = generate_pair(&scene.grid, i, Some([40, 40, 20]), &occ, &NoiseParams::none(), i as u64).unwrap().0;
                p.meta.id = format!("p{i}");
                p
            })
            .collect()
    }

    #[test]
    fn baseline_outputs() {
        let p = &pairs(1)[0];
        let block = p.partial.discretize(0.5).unwrap();
        let free: OccupancyGrid<f32> = AllFree.predict(&block).unwrap();
        assert!(free.raw().iter().all(|&v| v == 0.0));
        let occ: OccupancyGrid<f32> = AllOccupied.predict(&block).unwrap();
        assert!(occ.raw().iter().all(|&v| v == 1.0));
        let oracle: OccupancyGrid<f32> = Oracle::new(&p.target).predict(&block).unwrap();
        for (o, t) in oracle.raw().iter().zip(p.target.raw()) {
            assert_eq!(*o, if *t > 0.5 { 1.0 } else { 0.0 });
        }
        assert!(Predictor::<f32>::predict(&Failing, &block).is_err());
    }

    #[test]
    fn baseline_metrics() {
        let ps = pairs(3);
        let oracle = evaluate_baseline::<f32>(BaselineKind::Oracle, &ps, 0.5).unwrap();
        assert_eq!((oracle.precision, oracle.recall), (Some(1.0), Some(1.0)));
        let all = evaluate_baseline::<f32>(BaselineKind::AllOccupied, &ps, 0.5).unwrap();
        assert_eq!(all.recall, Some(1.0));
        // exhaustive tally of occupied fraction among evaluated cells
        let (mut occ, mut tot) = (0u64, 0u64);
        for p in &ps {
            for (t, q) in p.target.raw().iter().zip(p.partial.raw()) {
                if *t >= 0.0 && *q < 0.0 {
                    tot += 1;
                    occ += (*t > 0.5) as u64;
                }
            }
        }
        assert_eq!(all.cells_evaluated, tot);
        assert_eq!(all.precision, Some(occ as f64 / tot as f64));
        let free = evaluate_baseline::<f32>(BaselineKind::AllFree, &ps, 0.5).unwrap();
        assert_eq!(free.recall, Some(0.0));
        assert_eq!(free.precision, None);
        for r in [&oracle, &all, &free] {
            assert_eq!(r.counts.tp + r.counts.fn_, occ);
        }
    }

    #[test]
    fn no_missing_cells_is_undefined() {
        let mut p = pairs(1).remove(0);
        p.partial = p.target.clone();
        assert!(matches!(
            evaluate_baseline::<f32>(BaselineKind::AllFree, &[p], 0.5),
            Err(Error::UndefinedMetrics(_))
        ));
    }

    #[test]
    fn baseline_names_parse() {
        assert_eq!("all-free".parse::<BaselineKind>().unwrap(), BaselineKind::AllFree);
        assert_eq!("ORACLE".parse::<BaselineKind>().unwrap(), BaselineKind::Oracle);
        assert!("x".parse::<BaselineKind>().is_err());
    }

    fn arb_block() -> impl Strategy<Value = TrinaryGrid> {
        proptest::collection::vec(-1i8..=1, 8 * 8 * 4).prop_map(|cells| {
            let g = Geometry::new([8, 8, 4], 0.1, Point::zeros()).unwrap();
            TrinaryGrid::from_cells(g, cells).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn predictors_respect_contract(block in arb_block()) {
            let arch = ArchConfig { width: 2, depth: 2, dilations: vec![1, 2], block_dims: [8, 8, 4] };
            let net = OpNet::<f32>::new(&arch, &mut seeded(1)).unwrap();
            let truth = block.to_occupancy::<f32>();
            let preds: Vec<Box<dyn Predictor<f32>>> = vec![Box::new(AllFree), Box::new(AllOccupied), Box::new(Passthrough), Box::new(Oracle::new(&truth)), Box::new(net)];
            for p in &preds {
                let out = p.predict(&block).unwrap();
                prop_assert_eq!(out.geometry(), block.geometry());
                prop_assert!(out.raw().iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }
}
