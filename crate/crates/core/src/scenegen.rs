//! Procedural ground-truth scenes: corridors, square rooms and box fields.
//!
//! Scenes are fully known grids with an occupied one-cell shell (floor,
//! ceiling and side walls) and axis-aligned box obstacles. Generation is a
//! pure function of the [`SceneSpec`], seed included.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{seeded, Rng};
use crate::voxel::{write_grid, Geometry, GridIndex, OccupancyGrid, Point};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SceneKind {
    /// Long corridor with full-height columns; start and goal at the two ends.
    Corridor,
    /// Square room with full-height columns.
    SquareRoom,
    /// Room with floor-standing boxes of random height.
    BoxField,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub kind: SceneKind,
    /// Lx, Ly, Lz in meters.
    pub extents: [f64; 3],
    pub resolution: f64,
    pub obstacle_count: Option<usize>,
    /// Target occupied fraction of the interior; alternative to `obstacle_count`.
    pub density: Option<f64>,
    /// Min and max obstacle edge length in meters.
    pub obstacle_size: [f64; 2],
    pub seed: u64,
    /// Minimum free radius around start and goal (m).
    pub clearance: f64,
    /// Start and goal must be connected through cells at least this far from obstacles (m).
    pub passage_clearance: f64,
    pub max_cells: usize,
}

impl Default for SceneSpec {
    /// 4 m x 4 m x 2 m box field at 0.1 m with ten boxes.
    fn default() -> Self {
        Self::new(SceneKind::BoxField, [4.0, 4.0, 2.0], 0.1, 0).with_obstacles(10)
    }
}

impl SceneSpec {
    pub fn new(kind: SceneKind, extents: [f64; 3], resolution: f64, seed: u64) -> Self {
        Self {
            kind,
            extents,
            resolution,
            obstacle_count: None,
            density: None,
            obstacle_size: [0.3, 1.0],
            seed,
            clearance: 0.4,
            passage_clearance: 0.0,
            max_cells: 64_000_000,
        }
    }

    pub fn with_obstacles(mut self, count: usize) -> Self {
        self.obstacle_count = Some(count);
        self.density = None;
        self
    }

    pub fn dims(&self) -> Result<[usize; 3]> {
        let mut d = [0usize; 3];
        for a in 0..3 {
            let n = self.extents[a] / self.resolution;
            let r = n.round();
            if !(r >= 3.0) || (n - r).abs() > 1e-6 {
                return Err(invalid(format!(
                    "extent {} is not a whole number (>= 3) of {} m voxels",
                    self.extents[a], self.resolution
                )));
            }
            d[a] = r as usize;
        }
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0) {
            return Err(invalid("resolution must be > 0"));
        }
        let d = self.dims()?;
        if d.iter().product::<usize>() > self.max_cells {
            return Err(invalid("scene exceeds the cell budget"));
        }
        if let Some(rho) = self.density {
            if !(0.0..1.0).contains(&rho) {
                return Err(invalid("density must be in [0,1)"));
            }
            if self.obstacle_count.is_some() {
                return Err(invalid("set either obstacle_count or density, not both"));
            }
        }
        let [lo, hi] = self.obstacle_size;
        if !(lo > 0.0 && lo <= hi) {
            return Err(invalid("obstacle size range must satisfy 0 < min <= max"));
        }
        if !(self.clearance >= 0.0) || !(self.passage_clearance >= 0.0) {
            return Err(invalid("clearances must be non-negative"));
        }
        Ok(())
    }
}

/// Axis-aligned box in voxel coordinates, `lo` inclusive, `hi` exclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxObstacle {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub grid: OccupancyGrid<f32>,
    pub start: Point,
    pub goal: Point,
    pub obstacles: Vec<BoxObstacle>,
    pub spec: SceneSpec,
}

#[derive(Serialize, Deserialize)]
struct SceneSidecar {
    spec: SceneSpec,
    start: [f64; 3],
    goal: [f64; 3],
    obstacles: Vec<BoxObstacle>,
}

const PLACEMENT_RETRIES: usize = 64;

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let dims = spec.dims()?;
    let geom = Geometry::new(dims, spec.resolution, Point::zeros())?;
    let mut rng = seeded(spec.seed);

    for _ in 0..PLACEMENT_RETRIES {
        let (start, goal) = sample_endpoints(spec, &geom, &mut rng);
        let mut grid = OccupancyGrid::filled(geom.clone(), 0.0f32);
        paint_shell(&mut grid);
        if !ball_free(&grid, &start, spec.clearance) || !ball_free(&grid, &goal, spec.clearance) {
            continue;
        }
        let obstacles = place_obstacles(spec, &mut grid, &start, &goal, &mut rng);
        if connected(&grid, &start, &goal, spec.passage_clearance) {
            return Ok(Scene {
                grid,
                start,
                goal,
                obstacles,
                spec: spec.clone(),
            });
        }
    }
    Err(Error::GenerationFailed(format!(
        "no connected placement with clearance {} after {PLACEMENT_RETRIES} retries",
        spec.clearance
    )))
}

fn long_axis(spec: &SceneSpec) -> usize {
    if spec.extents[1] > spec.extents[0] {
        1
    } else {
        0
    }
}

fn sample_endpoints(spec: &SceneSpec, geom: &Geometry, rng: &mut Rng) -> (Point, Point) {
    let ext = geom.extent();
    let res = spec.resolution;
    let a = long_axis(spec);
    let b = 1 - a;
    let margin = spec.clearance + 1.5 * res;
    let lateral = |rng: &mut Rng| {
        let lo = margin;
        let hi = ext[b] - margin;
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            ext[b] / 2.0
        }
    };
    let z = ext.z / 2.0;
    let mut s = Point::zeros();
    let mut g = Point::zeros();
    s[a] = margin.min(ext[a] / 2.0);
    g[a] = (ext[a] - margin).max(ext[a] / 2.0);
    s[b] = lateral(rng);
    g[b] = lateral(rng);
    s.z = z;
    g.z = z;
    (s, g)
}

fn paint_shell(grid: &mut OccupancyGrid<f32>) {
    let [dx, dy, dz] = grid.dims();
    for i in 0..dx {
        for j in 0..dy {
            for k in 0..dz {
                if i == 0 || j == 0 || k == 0 || i == dx - 1 || j == dy - 1 || k == dz - 1 {
                    grid.raw_mut()[(i * dy + j) * dz + k] = 1.0;
                }
            }
        }
    }
}

fn cells_within(geom: &Geometry, p: &Point, radius: f64) -> Vec<GridIndex> {
    let res = geom.resolution;
    let c = geom.voxel_coords(p);
    let r = (radius / res).ceil() as i64 + 1;
    let mut out = Vec::new();
    for di in -r..=r {
        for dj in -r..=r {
            for dk in -r..=r {
                if let Some(idx) = geom.index_from_coords([c[0] + di, c[1] + dj, c[2] + dk]) {
                    if (geom.index_to_world(idx) - p).norm() <= radius {
                        out.push(idx);
                    }
                }
            }
        }
    }
    out
}

fn ball_free(grid: &OccupancyGrid<f32>, p: &Point, radius: f64) -> bool {
    grid.geometry().contains_point(p)
        && grid.get_raw(grid.geometry().world_to_index(p).unwrap()) == 0.0
        && cells_within(grid.geometry(), p, radius)
            .into_iter()
            .all(|idx| grid.get_raw(idx) == 0.0)
}

fn box_hits_ball(geom: &Geometry, b: &BoxObstacle, p: &Point, radius: f64) -> bool {
    let lo = geom.origin() + Point::new(b.lo[0] as f64, b.lo[1] as f64, b.lo[2] as f64) * geom.resolution;
    let hi = geom.origin() + Point::new(b.hi[0] as f64, b.hi[1] as f64, b.hi[2] as f64) * geom.resolution;
    let mut d2 = 0.0;
    for a in 0..3 {
        let v = p[a].clamp(lo[a], hi[a]) - p[a];
        d2 += v * v;
    }
    // cells are tested by center, so pad by half a diagonal
    let pad = radius + geom.resolution * 0.87;
    d2 <= pad * pad
}

fn place_obstacles(
    spec: &SceneSpec,
    grid: &mut OccupancyGrid<f32>,
    start: &Point,
    goal: &Point,
    rng: &mut Rng,
) -> Vec<BoxObstacle> {
    let geom = grid.geometry().clone();
    let [dx, dy, dz] = geom.dims;
    let res = spec.resolution;
    let interior = (dx - 2) * (dy - 2) * (dz - 2);
    let size_cells = |m: f64| ((m / res).round() as usize).max(1);
    let [smin, smax] = spec.obstacle_size;
    let mut boxes = Vec::new();
    let mut filled = 0usize;

    let target_count = spec.obstacle_count.unwrap_or(0);
    let max_attempts = 10_000usize;
    for _ in 0..max_attempts {
        let done = match spec.density {
            Some(rho) => filled as f64 >= rho * interior as f64,
            None => boxes.len() >= target_count,
        };
        if done {
            break;
        }
        let mut ext = [0usize; 3];
        for (a, e) in ext.iter_mut().enumerate().take(2) {
            let s = if smax > smin { rng.random_range(smin..=smax) } else { smin };
            *e = size_cells(s).min(geom.dims[a] - 2);
        }
        ext[2] = match spec.kind {
            SceneKind::BoxField => {
                let s = if smax > smin { rng.random_range(smin..=smax) } else { smin };
                size_cells(s).min(dz - 2)
            }
            SceneKind::Corridor | SceneKind::SquareRoom => dz - 2,
        };
        let i0 = 1 + rng.random_range(0..=(dx - 2 - ext[0]));
        let j0 = 1 + rng.random_range(0..=(dy - 2 - ext[1]));
        let b = BoxObstacle {
            lo: [i0, j0, 1],
            hi: [i0 + ext[0], j0 + ext[1], 1 + ext[2]],
        };
        if box_hits_ball(&geom, &b, start, spec.clearance) || box_hits_ball(&geom, &b, goal, spec.clearance) {
            continue;
        }
        let cells = grid.raw_mut();
        for i in b.lo[0]..b.hi[0] {
            for j in b.lo[1]..b.hi[1] {
                for k in b.lo[2]..b.hi[2] {
                    let l = (i * dy + j) * dz + k;
                    if cells[l] == 0.0 {
                        cells[l] = 1.0;
                        filled += 1;
                    }
                }
            }
        }
        boxes.push(b);
    }
    boxes
}

/// Breadth-first search over free cells (6-connected) whose centers are farther
/// than `clearance` from every occupied cell center.
fn connected(grid: &OccupancyGrid<f32>, start: &Point, goal: &Point, clearance: f64) -> bool {
    let geom = grid.geometry();
    let (Ok(s), Ok(g)) = (geom.world_to_index(start), geom.world_to_index(goal)) else {
        return false;
    };
    let passable = passable_mask(grid, clearance);
    let ls = geom.linear(s);
    let lg = geom.linear(g);
    if !passable[ls] || !passable[lg] {
        return false;
    }
    let mut seen = vec![false; geom.len()];
    let mut queue = VecDeque::from([s]);
    seen[ls] = true;
    while let Some(c) = queue.pop_front() {
        if c == g {
            return true;
        }
        let ci = [c.i as i64, c.j as i64, c.k as i64];
        for (a, d) in [(0, -1), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1)] {
            let mut n = ci;
            n[a] += d;
            if let Some(nb) = geom.index_from_coords(n) {
                let l = geom.linear(nb);
                if passable[l] && !seen[l] {
                    seen[l] = true;
                    queue.push_back(nb);
                }
            }
        }
    }
    false
}

fn passable_mask(grid: &OccupancyGrid<f32>, clearance: f64) -> Vec<bool> {
    let geom = grid.geometry();
    let mut mask: Vec<bool> = grid.raw().iter().map(|&c| c == 0.0).collect();
    if clearance <= 0.0 {
        return mask;
    }
    let r = (clearance / geom.resolution).floor() as i64;
    let r2 = (clearance / geom.resolution).powi(2);
    let mut offsets = Vec::new();
    for di in -r..=r {
        for dj in -r..=r {
            for dk in -r..=r {
                if ((di * di + dj * dj + dk * dk) as f64) <= r2 {
                    offsets.push([di, dj, dk]);
                }
            }
        }
    }
    for (l, &c) in grid.raw().iter().enumerate() {
        if c != 0.0 {
            let idx = geom.unlinear(l);
            for o in &offsets {
                let n = [idx.i as i64 + o[0], idx.j as i64 + o[1], idx.k as i64 + o[2]];
                if let Some(nb) = geom.index_from_coords(n) {
                    mask[geom.linear(nb)] = false;
                }
            }
        }
    }
    mask
}

/// Occupied cells over total cells.
pub fn occupied_fraction(scene: &Scene) -> f64 {
    scene.grid.occupied_count(0.5) as f64 / scene.grid.len() as f64
}

/// Writes `<stem>.ocgr` and the `<stem>.json` sidecar; returns both paths.
pub fn write_scene(scene: &Scene, dir: impl AsRef<Path>, stem: &str) -> Result<(PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let grid_path = dir.join(format!("{stem}.ocgr"));
    let json_path = dir.join(format!("{stem}.json"));
    write_grid(&scene.grid, &grid_path)?;
    let side = SceneSidecar {
        spec: scene.spec.clone(),
        start: [scene.start.x, scene.start.y, scene.start.z],
        goal: [scene.goal.x, scene.goal.y, scene.goal.z],
        obstacles: scene.obstacles.clone(),
    };
    fs::write(&json_path, serde_json::to_vec_pretty(&side)?)?;
    Ok((grid_path, json_path))
}

pub fn read_scene(dir: impl AsRef<Path>, stem: &str) -> Result<Scene> {
    let dir = dir.as_ref();
    let grid = crate::voxel::read_grid(dir.join(format!("{stem}.ocgr")))?;
    let side: SceneSidecar = serde_json::from_slice(&fs::read(dir.join(format!("{stem}.json")))?)?;
    Ok(Scene {
        grid,
        start: Point::from(side.start),
        goal: Point::from(side.goal),
        obstacles: side.obstacles,
        spec: side.spec,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shell_cells(d: [usize; 3]) -> usize {
        d[0] * d[1] * d[2] - (d[0] - 2) * (d[1] - 2) * (d[2] - 2)
    }

    #[test]
    fn corridor_dims_and_walls() {
        let spec = SceneSpec::new(SceneKind::Corridor, [3.0, 30.0, 2.0], 0.1, 1).with_obstacles(0);
        let s = generate_scene(&spec).unwrap();
        assert_eq!(s.grid.dims(), [30, 300, 20]);
        for idx in s.grid.geometry().indices() {
            let on_shell = idx.i == 0 || idx.j == 0 || idx.k == 0 || idx.i == 29 || idx.j == 299 || idx.k == 19;
            assert_eq!(s.grid.get_raw(idx) == 1.0, on_shell);
        }
        assert!(s.start.y < 1.0 && s.goal.y > 29.0);
    }

    #[test]
    fn empty_box_field_is_shell_only() {
        let spec = SceneSpec::new(SceneKind::BoxField, [4.0, 4.0, 2.0], 0.1, 3).with_obstacles(0);
        let s = generate_scene(&spec).unwrap();
        let expected = shell_cells([40, 40, 20]) as f64 / 32000.0;
        assert_eq!(occupied_fraction(&s), expected);
        let with = generate_scene(&spec.clone().with_obstacles(5)).unwrap();
        assert!(occupied_fraction(&with) > expected);
    }

    #[test]
    fn fully_occupied_fraction_is_one() {
        let spec = SceneSpec::new(SceneKind::BoxField, [0.4, 0.4, 0.4], 0.1, 0).with_obstacles(0);
        let mut s = generate_scene(&SceneSpec { clearance: 0.0, ..spec }).unwrap();
        s.grid.raw_mut().iter_mut().for_each(|c| *c = 1.0);
        assert_eq!(occupied_fraction(&s), 1.0);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let spec = SceneSpec::new(SceneKind::BoxField, [6.0, 6.0, 2.0], 0.1, 42).with_obstacles(12);
        let a = generate_scene(&spec).unwrap();
        let b = generate_scene(&spec).unwrap();
        assert_eq!(a.grid.raw(), b.grid.raw());
        assert_eq!(a.start, b.start);
        let c = generate_scene(&SceneSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a.grid.raw(), c.grid.raw());
    }

    #[test]
    fn endpoints_clear_and_connected() {
        for seed in 0..10 {
            let mut spec = SceneSpec::new(SceneKind::SquareRoom, [8.0, 8.0, 2.0], 0.1, seed).with_obstacles(25);
            spec.passage_clearance = 0.2;
            let s = generate_scene(&spec).unwrap();
            assert!(ball_free(&s.grid, &s.start, spec.clearance));
            assert!(ball_free(&s.grid, &s.goal, spec.clearance));
            assert!(connected(&s.grid, &s.start, &s.goal, 0.0));
            assert_eq!(s.grid.known_count(), s.grid.len());
        }
    }

    #[test]
    fn density_mode_fills_interior() {
        let mut spec = SceneSpec::new(SceneKind::BoxField, [4.0, 4.0, 2.0], 0.1, 5);
        spec.density = Some(0.1);
        let s = generate_scene(&spec).unwrap();
        let interior = 38.0 * 38.0 * 18.0;
        let filled = (s.grid.occupied_count(0.5) - shell_cells([40, 40, 20])) as f64;
        assert!(filled >= 0.1 * interior);
    }

    #[test]
    fn invalid_specs() {
        let bad = SceneSpec::new(SceneKind::BoxField, [4.05, 4.0, 2.0], 0.1, 0);
        assert!(generate_scene(&bad).is_err());
        let mut d = SceneSpec::new(SceneKind::BoxField, [4.0, 4.0, 2.0], 0.1, 0);
        d.density = Some(1.0);
        assert!(generate_scene(&d).is_err());
        let mut s = SceneSpec::new(SceneKind::BoxField, [4.0, 4.0, 2.0], 0.1, 0);
        s.obstacle_size = [1.0, 0.5];
        assert!(generate_scene(&s).is_err());
    }

    #[test]
    fn sidecar_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SceneSpec::new(SceneKind::BoxField, [2.0, 2.0, 1.0], 0.1, 9).with_obstacles(2);
        let s = generate_scene(&spec).unwrap();
        write_scene(&s, dir.path(), "scene_0").unwrap();
        let back = read_scene(dir.path(), "scene_0").unwrap();
        assert_eq!(back, s);
    }
}
