//! Self-supervised training pairs by simulated observation.
//!
//! A target block is re-observed from scan points along random straight
//! virtual paths. Rays stop at occupied or unknown cells, so whatever the
//! target's obstacles shadow stays unknown in the fused partial map. Pairs
//! whose known ratio falls outside `(r_min, r_max)` are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::manifest::{self, FileEntry, Provenance};
use crate::rng::{derive_seed, seeded, Rng};
use crate::scenegen::{generate_scene, SceneSpec};
use crate::voxel::{
    fibonacci_sphere, known_ratio, occupied_near, raycast_visit, read_grid, write_grid, Dims, GridIndex,
    OccupancyGrid, Point, RayCause, RayMode, Region, DEFAULT_THRESHOLD,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcclusionParams {
    /// Maximum number of virtual paths tried per pair.
    pub t_max: usize,
    pub scan_interval: f64,
    pub rays_per_scan: usize,
    pub scan_max_range: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub pairs_per_scene: usize,
    /// Radius used by the straight-path collision check (m).
    pub robot_radius: f64,
    /// Endpoint draws per virtual path before giving up.
    pub path_retries: usize,
    pub min_path_length: f64,
    pub threshold: f64,
    /// Fraction of target cells masked UNKNOWN before occlusion (simulated map defects).
    pub defect_fraction: f64,
    /// Seeds tried per pair slot before the slot is skipped.
    pub pair_attempts: usize,
}

impl Default for OcclusionParams {
    fn default() -> Self {
        Self {
            t_max: 30,
            scan_interval: 1.0,
            rays_per_scan: 2048,
            scan_max_range: 3.0,
            r_min: 0.25,
            r_max: 0.90,
            pairs_per_scene: 4,
            robot_radius: 0.15,
            path_retries: 50,
            min_path_length: 0.5,
            threshold: DEFAULT_THRESHOLD,
            defect_fraction: 0.0,
            pair_attempts: 8,
        }
    }
}

impl OcclusionParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.r_min && self.r_min < self.r_max && self.r_max <= 1.0) {
            return Err(invalid("require 0 < r_min < r_max <= 1"));
        }
        if !(self.scan_interval > 0.0) {
            return Err(invalid("scan_interval must be > 0"));
        }
        if self.t_max < 1 || self.rays_per_scan < 1 || self.path_retries < 1 || self.pair_attempts < 1 {
            return Err(invalid("t_max, rays_per_scan, path_retries and pair_attempts must be >= 1"));
        }
        if !(self.scan_max_range > 0.0) || !(self.robot_radius >= 0.0) {
            return Err(invalid("scan_max_range must be > 0 and robot_radius >= 0"));
        }
        if !(0.0..=1.0).contains(&self.defect_fraction) {
            return Err(invalid("defect_fraction must be in [0,1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseParams {
    pub gaussian_sigma: f64,
    pub pepper_rate: f64,
    pub seed: u64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            gaussian_sigma: 0.05,
            pepper_rate: 0.01,
            seed: 0,
        }
    }
}

impl NoiseParams {
    pub fn none() -> Self {
        Self {
            gaussian_sigma: 0.0,
            pepper_rate: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma >= 0.0) || !(0.0..=1.0).contains(&self.pepper_rate) {
            return Err(invalid("require gaussian_sigma >= 0 and pepper_rate in [0,1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    pub id: String,
    pub scene_id: usize,
    pub seed: u64,
    pub known_ratio: f64,
}

/// Target map and its occluded counterpart.
#[derive(Clone, Debug, PartialEq)]
pub struct DataPair {
    pub target: OccupancyGrid<f32>,
    pub partial: OccupancyGrid<f32>,
    pub meta: PairMeta,
}

impl DataPair {
    /// Cells unknown in the partial map but known in the target.
    pub fn missing_count(&self) -> usize {
        self.partial
            .raw()
            .iter()
            .zip(self.target.raw())
            .filter(|(&p, &t)| p < 0.0 && t >= 0.0)
            .count()
    }
}

/// Scan points along a collision-free straight segment.
pub fn sample_virtual_path(target: &OccupancyGrid<f32>, params: &OcclusionParams, rng: &mut Rng) -> Result<Vec<Point>> {
    let free: Vec<usize> = target
        .raw()
        .iter()
        .enumerate()
        .filter(|(_, &c)| c >= 0.0 && (c as f64) <= params.threshold)
        .map(|(l, _)| l)
        .collect();
    if free.is_empty() {
        return Err(Error::PathSamplingFailed(0));
    }
    let geom = target.geometry();
    let res = geom.resolution;
    for _ in 0..params.path_retries {
        let jitter = |rng: &mut Rng| Point::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * (res * 0.98);
        let a = geom.index_to_world(geom.unlinear(free[rng.random_range(0..free.len())])) + jitter(rng);
        let b = geom.index_to_world(geom.unlinear(free[rng.random_range(0..free.len())])) + jitter(rng);
        if (b - a).norm() < params.min_path_length {
            continue;
        }
        if segment_collides(target, &a, &b, params.robot_radius, params.threshold) {
            continue;
        }
        return Ok(scan_points(&a, &b, params.scan_interval));
    }
    Err(Error::PathSamplingFailed(params.path_retries))
}

fn segment_collides(grid: &OccupancyGrid<f32>, a: &Point, b: &Point, radius: f64, threshold: f64) -> bool {
    let len = (b - a).norm();
    let step = grid.resolution() / 2.0;
    let n = (len / step).ceil().max(1.0) as usize;
    (0..=n).any(|s| {
        let p = a + (b - a) * (s as f64 / n as f64);
        occupied_near(grid, &p, radius, threshold)
    })
}

/// Points at `k * interval` from `a` plus the endpoint `b` when it is not already on the lattice.
pub fn scan_points(a: &Point, b: &Point, interval: f64) -> Vec<Point> {
    let len = (b - a).norm();
    let dir = if len > 0.0 { (b - a) / len } else { Point::zeros() };
    let mut out = Vec::new();
    let mut k = 0usize;
    while (k as f64) * interval <= len + 1e-12 {
        out.push(a + dir * (k as f64 * interval).min(len));
        k += 1;
    }
    let last_s = (k - 1) as f64 * interval;
    if len - last_s > 1e-9 {
        out.push(*b);
    }
    out
}

/// Observation of `target` from `scan_point`: traversed cells free, hit cells occupied, rest UNKNOWN.
pub fn simulate_observation(
    target: &OccupancyGrid<f32>,
    scan_point: &Point,
    params: &OcclusionParams,
) -> Result<OccupancyGrid<f32>> {
    let dirs = fibonacci_sphere(params.rays_per_scan);
    let mut out = OccupancyGrid::unknown(target.geometry().clone());
    observe_into(target, scan_point, &dirs, params, &mut out)?;
    Ok(out)
}

fn observe_into(
    target: &OccupancyGrid<f32>,
    scan_point: &Point,
    dirs: &[Point],
    params: &OcclusionParams,
    out: &mut OccupancyGrid<f32>,
) -> Result<()> {
    let geom = target.geometry().clone();
    let origin = geom.world_to_index(scan_point)?;
    if target.is_occupied(origin, params.threshold) {
        return Err(invalid("scan point lies in an occupied cell"));
    }
    for d in dirs {
        let cells = out.raw_mut();
        let (terminal, cause, _) = raycast_visit(
            target,
            scan_point,
            d,
            params.scan_max_range,
            RayMode::Reverse,
            params.threshold,
            |idx| cells[geom.linear(idx)] = 0.0,
        )?;
        if cause == RayCause::HitOccupied {
            let t = terminal.expect("hit carries a terminal cell");
            out.raw_mut()[geom.linear(t)] = 1.0;
        }
    }
    Ok(())
}

/// First-write-wins fusion: UNKNOWN cells of `accum` take the scan value.
pub fn fuse_map(accum: &OccupancyGrid<f32>, scan: &OccupancyGrid<f32>) -> Result<OccupancyGrid<f32>> {
    let mut out = accum.clone();
    fuse_into(&mut out, scan)?;
    Ok(out)
}

pub fn fuse_into(accum: &mut OccupancyGrid<f32>, scan: &OccupancyGrid<f32>) -> Result<()> {
    if accum.geometry() != scan.geometry() {
        return Err(invalid("fuse_map: geometry mismatch"));
    }
    for (a, &s) in accum.raw_mut().iter_mut().zip(scan.raw()) {
        if *a < 0.0 {
            *a = s;
        }
    }
    Ok(())
}

/// Runs the occlusion loop on one target; returns the partial map and its known ratio.
pub fn generate_occluded_map(
    target: &OccupancyGrid<f32>,
    params: &OcclusionParams,
    rng: &mut Rng,
) -> Result<(OccupancyGrid<f32>, f64)> {
    params.validate()?;
    let dirs = fibonacci_sphere(params.rays_per_scan);
    let mut partial = OccupancyGrid::unknown(target.geometry().clone());
    for _t in 0..params.t_max {
        let points = match sample_virtual_path(target, params, rng) {
            Ok(p) => p,
            Err(Error::PathSamplingFailed(_)) => continue,
            Err(e) => return Err(e),
        };
        let mut scan = OccupancyGrid::unknown(target.geometry().clone());
        for p in &points {
            scan.raw_mut().fill(-1.0);
            observe_into(target, p, &dirs, params, &mut scan)?;
            fuse_into(&mut partial, &scan)?;
        }
        let ratio = known_ratio(&partial, target)?;
        if params.r_min < ratio && ratio < params.r_max {
            return Ok((partial, ratio));
        }
        if ratio >= params.r_max {
            // known cells only accumulate, so the upper bound can no longer be met
            break;
        }
    }
    Err(Error::OcclusionGenerationFailed(params.t_max))
}

/// Gaussian perturbation plus pepper resampling of known cells, clamped to [0,1].
pub fn add_noise(grid: &OccupancyGrid<f32>, noise: &NoiseParams, rng: &mut Rng) -> Result<OccupancyGrid<f32>> {
    noise.validate()?;
    let normal = Normal::new(0.0, noise.gaussian_sigma).map_err(|e| invalid(e.to_string()))?;
    let mut out = grid.clone();
    for c in out.raw_mut() {
        if *c < 0.0 {
            continue;
        }
        if rng.random::<f64>() < noise.pepper_rate {
            *c = rng.random::<f64>() as f32;
        } else {
            let v = *c as f64 + normal.sample(rng);
            *c = v.clamp(0.0, 1.0) as f32;
        }
    }
    Ok(out)
}

fn mask_defects(target: &mut OccupancyGrid<f32>, fraction: f64, rng: &mut Rng) {
    if fraction <= 0.0 {
        return;
    }
    for c in target.raw_mut() {
        if rng.random::<f64>() < fraction {
            *c = -1.0;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub scene_id: usize,
    pub spec: SceneSpec,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub id: String,
    pub scene_id: usize,
    pub split: Split,
    pub seed: u64,
    pub block_offset: GridIndex,
    pub known_ratio: f64,
    pub missing_cells: usize,
    pub target: String,
    pub partial: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub provenance: Provenance,
    pub block_dims: Option<Dims>,
    pub train_fraction: f64,
    pub occlusion: OcclusionParams,
    pub noise: NoiseParams,
    pub scenes: Vec<SceneEntry>,
    pub pairs: Vec<PairEntry>,
    pub skipped: usize,
}

impl DatasetManifest {
    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(dir.as_ref().join("manifest.json"))?)?)
    }

    pub fn pairs_in(&self, split: Split) -> impl Iterator<Item = &PairEntry> {
        self.pairs.iter().filter(move |p| p.split == split)
    }
}

#[derive(Clone, Debug)]
pub struct DatasetRequest<'a> {
    pub scenes: &'a [SceneSpec],
    pub occlusion: &'a OcclusionParams,
    pub noise: &'a NoiseParams,
    /// Fraction of scenes assigned to the training split.
    pub train_fraction: f64,
    /// Block size sampled from each scene; `None` uses the whole scene.
    pub block_dims: Option<Dims>,
    pub seed: u64,
}

/// One pair generated in memory; exposed so pipelines and tests can skip the disk.
pub fn generate_pair(
    scene_grid: &OccupancyGrid<f32>,
    scene_id: usize,
    block_dims: Option<Dims>,
    occlusion: &OcclusionParams,
    noise: &NoiseParams,
    pair_seed: u64,
) -> Result<(DataPair, GridIndex)> {
    let mut rng = seeded(pair_seed);
    let dims = scene_grid.dims();
    let region = match block_dims {
        Some(b) => {
            if (0..3).any(|a| b[a] > dims[a]) {
                return Err(invalid(format!("block {b:?} larger than scene {dims:?}")));
            }
            let off = [
                rng.random_range(0..=dims[0] - b[0]),
                rng.random_range(0..=dims[1] - b[1]),
                rng.random_range(0..=dims[2] - b[2]),
            ];
            Region::new(off.into(), b)
        }
        None => Region::new(GridIndex::new(0, 0, 0), dims),
    };
    let mut target = scene_grid.extract_block(&region)?;
    mask_defects(&mut target, occlusion.defect_fraction, &mut rng);
    let (partial, ratio) = generate_occluded_map(&target, occlusion, &mut rng)?;
    let mut noise_rng = seeded(derive_seed(noise.seed, pair_seed));
    let partial = add_noise(&partial, noise, &mut noise_rng)?;
    Ok((
        DataPair {
            target,
            partial,
            meta: PairMeta {
                id: String::new(),
                scene_id,
                seed: pair_seed,
                known_ratio: ratio,
            },
        },
        region.offset,
    ))
}

/// Generates scenes and pairs into `out_dir` (`pairs/<id>.{target,partial}.ocgr` plus `manifest.json`).
pub fn generate_dataset(req: &DatasetRequest<'_>, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    req.occlusion.validate()?;
    req.noise.validate()?;
    if !(0.0..=1.0).contains(&req.train_fraction) {
        return Err(invalid("train fraction must be in [0,1]"));
    }
    let out = out_dir.as_ref();
    let pair_dir = out.join("pairs");
    fs::create_dir_all(&pair_dir)?;

    let n = req.scenes.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(derive_seed(req.seed, u64::MAX)));
    let n_train = (req.train_fraction * n as f64).round() as usize;
    let mut split_of = vec![Split::Val; n];
    for &s in &order[..n_train] {
        split_of[s] = Split::Train;
    }

    let mut scenes = Vec::with_capacity(n);
    let mut pairs = Vec::new();
    let mut skipped = 0usize;
    for (scene_id, spec) in req.scenes.iter().enumerate() {
        let scene = generate_scene(spec)?;
        scenes.push(SceneEntry {
            scene_id,
            spec: spec.clone(),
            split: split_of[scene_id],
        });
        for slot in 0..req.occlusion.pairs_per_scene {
            let mut done = false;
            for attempt in 0..req.occlusion.pair_attempts {
                let pair_seed = derive_seed(
                    derive_seed(req.seed, scene_id as u64),
                    (slot * req.occlusion.pair_attempts + attempt) as u64,
                );
                match generate_pair(&scene.grid, scene_id, req.block_dims, req.occlusion, req.noise, pair_seed) {
                    Ok((pair, offset)) => {
                        let id = format!("s{scene_id:04}_p{slot:03}");
                        let target = format!("pairs/{id}.target.ocgr");
                        let partial = format!("pairs/{id}.partial.ocgr");
                        write_grid(&pair.target, out.join(&target))?;
                        write_grid(&pair.partial, out.join(&partial))?;
                        pairs.push(PairEntry {
                            id,
                            scene_id,
                            split: split_of[scene_id],
                            seed: pair_seed,
                            block_offset: offset,
                            known_ratio: pair.meta.known_ratio,
                            missing_cells: pair.missing_count(),
                            target,
                            partial,
                        });
                        done = true;
                        break;
                    }
                    Err(e @ (Error::OcclusionGenerationFailed(_) | Error::PathSamplingFailed(_))) => {
                        warn!("scene {scene_id} slot {slot} attempt {attempt}: {e}");
                    }
                    Err(e) => return Err(e),
                }
            }
            if !done {
                warn!("scene {scene_id} slot {slot}: skipped");
                skipped += 1;
            }
        }
    }

    let mut provenance = Provenance::new("dataset-gen", req.seed);
    for p in &pairs {
        provenance.files.push(FileEntry::of(out, &p.target)?);
        provenance.files.push(FileEntry::of(out, &p.partial)?);
    }
    let manifest = DatasetManifest {
        provenance,
        block_dims: req.block_dims,
        train_fraction: req.train_fraction,
        occlusion: req.occlusion.clone(),
        noise: req.noise.clone(),
        scenes,
        pairs,
        skipped,
    };
    manifest::write_manifest(out, &manifest)?;
    Ok(manifest)
}

/// Loads the pairs of one split listed in a dataset manifest.
pub fn load_pairs(dir: impl AsRef<Path>, manifest: &DatasetManifest, split: Split) -> Result<Vec<DataPair>> {
    let dir: PathBuf = dir.as_ref().to_path_buf();
    manifest
        .pairs_in(split)
        .map(|e| {
            Ok(DataPair {
                target: read_grid(dir.join(&e.target))?,
                partial: read_grid(dir.join(&e.partial))?,
                meta: PairMeta {
                    id: e.id.clone(),
                    scene_id: e.scene_id,
                    seed: e.seed,
                    known_ratio: e.known_ratio,
                },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::SceneKind;
    use crate::voxel::{Geometry, VoxelValue};

    fn room(seed: u64, obstacles: usize) -> OccupancyGrid<f32> {
        let spec = SceneSpec::new(SceneKind::BoxField, [4.0, 4.0, 2.0], 0.1, seed).with_obstacles(obstacles);
        generate_scene(&spec).unwrap().grid
    }

    #[test]
    fn scan_point_placement() {
        let a = Point::zeros();
        let pts = scan_points(&a, &Point::new(2.5, 0.0, 0.0), 1.0);
        let xs: Vec<f64> = pts.iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![0.0, 1.0, 2.0, 2.5]);
        let exact = scan_points(&a, &Point::new(2.0, 0.0, 0.0), 1.0);
        assert_eq!(exact.len(), 3);
    }

    #[test]
    fn empty_room_paths_are_accepted() {
        let g = room(1, 0);
        let params = OcclusionParams::default();
        let mut rng = seeded(3);
        for _ in 0..20 {
            let pts = sample_virtual_path(&g, &params, &mut rng).unwrap();
            for w in pts.windows(2).take(pts.len().saturating_sub(2)) {
                assert!(((w[1] - w[0]).norm() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn blocked_segments_are_rejected() {
        // wall splits the free space into two halves; no straight segment may cross it
        let mut g = room(1, 0);
        let geom = g.geometry().clone();
        for idx in geom.indices() {
            if idx.i == 20 {
                g.set(idx, VoxelValue::Known(1.0));
            }
        }
        let params = OcclusionParams::default();
        let mut rng = seeded(5);
        for _ in 0..30 {
            let pts = sample_virtual_path(&g, &params, &mut rng).unwrap();
            let side = |p: &Point| p.x < 2.0;
            assert!(pts.iter().all(|p| side(p) == side(&pts[0])));
        }
    }

    #[test]
    fn free_target_gives_free_ball() {
        let geom = Geometry::new([40, 40, 40], 0.1, Point::zeros()).unwrap();
        let g = OccupancyGrid::filled(geom, 0.0f32);
        let params = OcclusionParams {
            scan_max_range: 1.0,
            ..Default::default()
        };
        let c = Point::new(2.0, 2.0, 2.0);
        let obs = simulate_observation(&g, &c, &params).unwrap();
        assert_eq!(obs.occupied_count(0.5), 0);
        for idx in obs.geometry().indices() {
            let d = (obs.index_to_world(idx) - c).norm();
            if obs.is_known(idx) {
                assert!(d < 1.0 + 0.2);
            }
            if d < 0.5 {
                assert!(obs.is_known(idx), "near cell {idx:?} unobserved");
            }
        }
    }

    #[test]
    fn box_shadows_the_wall_behind_it() {
        let mut g = room(1, 0);
        let geom = g.geometry().clone();
        // 4x4 column in front of the scan point along +x
        for idx in geom.indices() {
            if (22..26).contains(&idx.i) && (18..22).contains(&idx.j) && idx.k > 0 && idx.k < 19 {
                g.set(idx, VoxelValue::Known(1.0));
            }
        }
        let params = OcclusionParams {
            scan_max_range: 5.0,
            rays_per_scan: 40_000,
            ..Default::default()
        };
        let obs = simulate_observation(&g, &Point::new(1.0, 2.0, 1.0), &params).unwrap();
        let behind = geom.world_to_index(&Point::new(3.95, 2.0, 1.0)).unwrap();
        assert!(!obs.is_known(behind));
        let beside = geom.world_to_index(&Point::new(3.95, 0.5, 1.0)).unwrap();
        assert!(obs.is_known(beside));
        assert!(obs.is_occupied(GridIndex::new(22, 20, 10), 0.5));
    }

    #[test]
    fn observations_are_sound() {
        let params = OcclusionParams::default();
        for seed in 0..5 {
            let g = room(seed, 8);
            let mut rng = seeded(seed);
            let pts = sample_virtual_path(&g, &params, &mut rng).unwrap();
            let obs = simulate_observation(&g, &pts[0], &params).unwrap();
            for (o, t) in obs.raw().iter().zip(g.raw()) {
                if *o >= 0.0 {
                    assert_eq!(*o, *t);
                }
            }
        }
    }

    #[test]
    fn fuse_identity_and_neutral() {
        let g = room(2, 5);
        let params = OcclusionParams::default();
        let mut rng = seeded(1);
        let pts = sample_virtual_path(&g, &params, &mut rng).unwrap();
        let a = simulate_observation(&g, &pts[0], &params).unwrap();
        let b = simulate_observation(&g, pts.last().unwrap(), &params).unwrap();
        let empty = OccupancyGrid::unknown(g.geometry().clone());
        assert_eq!(fuse_map(&empty, &a).unwrap(), a);
        assert_eq!(fuse_map(&a, &empty).unwrap(), a);
        for (x, y) in a.raw().iter().zip(b.raw()) {
            if *x >= 0.0 && *y >= 0.0 {
                assert_eq!(x, y);
            }
        }
        let other = OccupancyGrid::<f32>::new([2, 2, 2], 0.1, Point::zeros()).unwrap();
        assert!(fuse_map(&a, &other).is_err());
    }

    #[test]
    fn accepted_ratio_is_inside_bounds() {
        let params = OcclusionParams::default();
        let g = room(4, 10);
        let mut rng = seeded(11);
        let (partial, ratio) = generate_occluded_map(&g, &params, &mut rng).unwrap();
        assert!(ratio > 0.25 && ratio < 0.90);
        assert_eq!(ratio, known_ratio(&partial, &g).unwrap());
    }

    #[test]
    fn degenerate_target_fails() {
        let geom = Geometry::new([10, 10, 10], 0.1, Point::zeros()).unwrap();
        let mut g = OccupancyGrid::filled(geom, 1.0f32);
        g.set(GridIndex::new(5, 5, 5), VoxelValue::Known(0.0));
        let params = OcclusionParams {
            t_max: 5,
            ..Default::default()
        };
        assert!(matches!(
            generate_occluded_map(&g, &params, &mut seeded(0)),
            Err(Error::OcclusionGenerationFailed(5))
        ));
    }

    #[test]
    fn noise_limits() {
        let g = room(3, 4);
        let mut partial = OccupancyGrid::unknown(g.geometry().clone());
        fuse_into(&mut partial, &simulate_observation(&g, &Point::new(2.0, 2.0, 1.0), &OcclusionParams::default()).unwrap()).unwrap();
        let same = add_noise(&partial, &NoiseParams::none(), &mut seeded(1)).unwrap();
        assert_eq!(same, partial);
        let all = add_noise(
            &partial,
            &NoiseParams {
                gaussian_sigma: 0.0,
                pepper_rate: 1.0,
                seed: 0,
            },
            &mut seeded(1),
        )
        .unwrap();
        assert_eq!(all.known_count(), partial.known_count());
        let changed = all.raw().iter().zip(partial.raw()).filter(|(a, b)| a != b).count();
        assert!(changed as f64 > 0.99 * partial.known_count() as f64);
    }

    #[test]
    fn noise_statistics() {
        let n = 1_000_000usize;
        let geom = Geometry::new([100, 100, 100], 0.1, Point::zeros()).unwrap();
        let g = OccupancyGrid::filled(geom, 0.5f32);
        let (sigma, pepper) = (0.1, 0.05);

        // pepper alone: fraction of resampled cells
        let p_only = add_noise(&g, &NoiseParams { gaussian_sigma: 0.0, pepper_rate: pepper, seed: 0 }, &mut seeded(7)).unwrap();
        let flips = p_only.raw().iter().filter(|&&c| c != 0.5).count() as f64 / n as f64;
        let se = (pepper * (1.0 - pepper) / n as f64).sqrt();
        assert!((flips - pepper).abs() < 3.0 * se, "flip rate {flips}");

        // gaussian alone: variance of the perturbation
        let g_only = add_noise(&g, &NoiseParams { gaussian_sigma: sigma, pepper_rate: 0.0, seed: 0 }, &mut seeded(8)).unwrap();
        let d2: Vec<f64> = g_only.raw().iter().map(|&c| (c as f64 - 0.5).powi(2)).collect();
        let m2 = d2.iter().sum::<f64>() / n as f64;
        let se2 = (2.0f64).sqrt() * sigma * sigma / (n as f64).sqrt();
        assert!((m2 - sigma * sigma).abs() < 3.0 * se2, "second moment {m2}");

        // combined: mixture second moment
        let both = add_noise(&g, &NoiseParams { gaussian_sigma: sigma, pepper_rate: pepper, seed: 0 }, &mut seeded(9)).unwrap();
        let x: Vec<f64> = both.raw().iter().map(|&c| (c as f64 - 0.5).powi(2)).collect();
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let nominal = (1.0 - pepper) * sigma * sigma + pepper / 12.0;
        assert!((mean - nominal).abs() < 3.0 * (var / n as f64).sqrt(), "mixture moment {mean} vs {nominal}");
    }

    #[test]
    fn dataset_split_and_determinism() {
        let specs: Vec<SceneSpec> = (0..10)
            .map(|s| SceneSpec::new(SceneKind::BoxField, [4.0, 4.0, 2.0], 0.1, 100 + s).with_obstacles(8))
            .collect();
        let occ = OcclusionParams {
            pairs_per_scene: 2,
            rays_per_scan: 512,
            ..Default::default()
        };
        let noise = NoiseParams::default();
        let req = DatasetRequest {
            scenes: &specs,
            occlusion: &occ,
            noise: &noise,
            train_fraction: 0.8,
            block_dims: None,
            seed: 17,
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m1 = generate_dataset(&req, d1.path()).unwrap();
        let m2 = generate_dataset(&req, d2.path()).unwrap();
        assert_eq!(
            manifest::manifest_hash(d1.path()).unwrap(),
            manifest::manifest_hash(d2.path()).unwrap()
        );
        let train: Vec<usize> = m1.scenes.iter().filter(|s| s.split == Split::Train).map(|s| s.scene_id).collect();
        assert_eq!(train.len(), 8);
        assert_eq!(m1.scenes.len() - train.len(), 2);
        for p in &m1.pairs {
            assert_eq!(p.split == Split::Train, train.contains(&p.scene_id));
            assert!(p.known_ratio > occ.r_min && p.known_ratio < occ.r_max);
        }
        assert_eq!(m1, m2);
        let back = DatasetManifest::read(d1.path()).unwrap();
        assert_eq!(back, m1);
        let loaded = load_pairs(d1.path(), &back, Split::Val).unwrap();
        assert_eq!(loaded.len(), back.pairs_in(Split::Val).count());
        for pair in &loaded {
            for (p, t) in pair.partial.raw().iter().zip(pair.target.raw()) {
                assert!(*p < 0.0 || *t >= 0.0);
            }
        }
    }
}
