//! Grid planning over an inflated collision view: 26-connected A*,
//! line-of-sight shortcutting and trapezoidal time parameterization.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::Scheme;
use crate::error::{Error, Result};
use crate::navmap::DoubleLayerMap;
use crate::num::Real;
use crate::voxel::{Geometry, GridIndex, Point};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Collision radius of the robot against ground truth (m).
    pub robot_radius: f64,
    /// Extra inflation used when planning (m).
    pub safety_margin: f64,
    pub v_max: f64,
    pub a_max: f64,
    /// Steps between periodic replans.
    pub replan_period: usize,
    pub smoothing_iterations: usize,
    /// Search budget in node expansions; stands in for a wall-clock timeout.
    pub max_expansions: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            robot_radius: 0.2,
            safety_margin: 0.2,
            v_max: 2.0,
            a_max: 2.0,
            replan_period: 10,
            smoothing_iterations: 2,
            max_expansions: 2_000_000,
        }
    }
}

impl PlannerConfig {
    pub fn inflation(&self) -> f64 {
        self.robot_radius + self.safety_margin
    }

    pub fn stopping_distance(&self, speed: f64) -> f64 {
        speed * speed / (2.0 * self.a_max)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [self.robot_radius, self.v_max, self.a_max];
        if pos.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("planner robot_radius, v_max and a_max must be positive".into()));
        }
        if !(self.safety_margin >= 0.0) {
            return Err(Error::Config("planner safety_margin must be >= 0".into()));
        }
        if self.replan_period == 0 || self.max_expansions == 0 {
            return Err(Error::Config("planner replan_period and max_expansions must be >= 1".into()));
        }
        Ok(())
    }
}

/// Occupancy test for planning with inflation already applied.
pub trait FreeSpace {
    fn geometry(&self) -> &Geometry;

    fn cell_free(&self, idx: GridIndex) -> bool;

    fn point_free(&self, p: &Point) -> bool {
        let g = self.geometry();
        g.index_from_coords(g.voxel_coords(p)).is_some_and(|idx| self.cell_free(idx))
    }

    /// Every voxel the segment touches must be free, including both neighbors
    /// wherever it passes exactly through a voxel edge or corner.
    fn segment_free(&self, a: &Point, b: &Point) -> bool {
        first_blocked_on_segment(self.geometry(), a, b, |idx| self.cell_free(idx)).is_none()
    }
}

/// Distance from `a` at which the segment `a`-`b` first enters a voxel rejected
/// by `free` or leaves the grid. Ties between axes visit all side voxels, so the
/// result does not depend on rounding at voxel corners.
pub fn first_blocked_on_segment(geom: &Geometry, a: &Point, b: &Point, mut free: impl FnMut(GridIndex) -> bool) -> Option<f64> {
    const TIE: f64 = 1e-9;
    let Some(mut cell) = geom.index_from_coords(geom.voxel_coords(a)) else {
        return Some(0.0);
    };
    let len = (b - a).norm();
    if len < 1e-12 {
        return (!free(cell)).then_some(0.0);
    }
    let dir = (b - a) / len;
    let res = geom.resolution;
    let local = (a - geom.origin()) / res;
    let mut c = [cell.i as i64, cell.j as i64, cell.k as i64];
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for ax in 0..3 {
        if dir[ax] > 0.0 {
            step[ax] = 1;
            t_max[ax] = ((c[ax] as f64 + 1.0) - local[ax]) / dir[ax] * res;
            t_delta[ax] = res / dir[ax];
        } else if dir[ax] < 0.0 {
            step[ax] = -1;
            t_max[ax] = (local[ax] - c[ax] as f64) / -dir[ax] * res;
            t_delta[ax] = res / -dir[ax];
        }
    }
    let at = |c: [i64; 3]| geom.index_from_coords(c);
    let mut t_enter = 0.0;
    loop {
        if !free(cell) {
            return Some(t_enter);
        }
        let t_next = t_max.iter().copied().fold(f64::INFINITY, f64::min);
        if t_next >= len {
            return None;
        }
        let tied: Vec<usize> = (0..3).filter(|&ax| t_max[ax] <= t_next + TIE).collect();
        if tied.len() > 1 {
            // side voxels of an edge or corner crossing: every proper subset of the tied steps
            for mask in 1..(1u32 << tied.len()) - 1 {
                let mut side = c;
                for (bit, &ax) in tied.iter().enumerate() {
                    if mask & (1 << bit) != 0 {
                        side[ax] += step[ax];
                    }
                }
                match at(side) {
                    Some(idx) if free(idx) => {}
                    _ => return Some(t_next),
                }
            }
        }
        for &ax in &tied {
            c[ax] += step[ax];
            t_max[ax] += t_delta[ax];
        }
        t_enter = t_next;
        match at(c) {
            Some(idx) => cell = idx,
            None => return Some(t_next),
        }
    }
}

/// Squared distance (in voxels, between centers) from each cell to the nearest
/// blocked cell; `f64::INFINITY`-like (1e20) when nothing is blocked.
pub fn edt_squared(dims: [usize; 3], blocked: &[bool]) -> Vec<f64> {
    const FAR: f64 = 1e20;
    let mut d: Vec<f64> = blocked.iter().map(|&b| if b { 0.0 } else { FAR }).collect();
    let strides = [dims[1] * dims[2], dims[2], 1];
    let longest = *dims.iter().max().unwrap_or(&1);
    let mut f = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut v = vec![0usize; longest];
    let mut z = vec![0.0; longest + 1];
    for axis in 0..3 {
        let n = dims[axis];
        let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
        for p in 0..dims[others[0]] {
            for q in 0..dims[others[1]] {
                let base = p * strides[others[0]] + q * strides[others[1]];
                for x in 0..n {
                    f[x] = d[base + x * strides[axis]];
                }
                if f[..n].iter().all(|&x| x >= FAR) {
                    continue;
                }
                lower_envelope(&f[..n], &mut out[..n], &mut v, &mut z);
                for x in 0..n {
                    d[base + x * strides[axis]] = out[x];
                }
            }
        }
    }
    d
}

/// One-dimensional squared distance transform of a sampled function.
fn lower_envelope(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let sq = |x: usize| (x * x) as f64;
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + sq(q)) - (f[p] + sq(p))) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Voxel offsets whose center distance is within `radius` (m).
pub fn inflation_offsets(radius: f64, resolution: f64) -> Vec<[i64; 3]> {
    let r2 = (radius / resolution).powi(2);
    let r = (radius / resolution).floor() as i64;
    let mut out = Vec::new();
    for di in -r..=r {
        for dj in -r..=r {
            for dk in -r..=r {
                if ((di * di + dj * dj + dk * dk) as f64) <= r2 {
                    out.push([di, dj, dk]);
                }
            }
        }
    }
    out
}

/// Whole-grid collision view: a cell is free when no blocked cell center lies
/// within the inflation radius of its center.
#[derive(Clone, Debug)]
pub struct CollisionView {
    geom: Geometry,
    clearance2: Vec<f64>,
    radius: f64,
    r2: f64,
}

impl CollisionView {
    pub fn from_blocked(geom: Geometry, blocked: &[bool], radius: f64) -> Self {
        assert_eq!(blocked.len(), geom.len(), "blocked mask size");
        let clearance2 = edt_squared(geom.dims, blocked);
        let r2 = (radius / geom.resolution).powi(2);
        Self {
            geom,
            clearance2,
            radius,
            r2,
        }
    }

    pub fn build<T: Real>(map: &DoubleLayerMap<T>, scheme: &Scheme, radius: f64) -> Self {
        let geom = map.geometry().clone();
        let blocked: Vec<bool> = (0..geom.len()).map(|l| scheme.blocked(map, geom.unlinear(l))).collect();
        Self::from_blocked(geom, &blocked, radius)
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn set_radius(&mut self, radius: f64) {
        self.radius = radius;
        self.r2 = (radius / self.geom.resolution).powi(2);
    }

    /// Center distance from `idx` to the nearest blocked cell (m).
    pub fn clearance(&self, idx: GridIndex) -> f64 {
        self.clearance2[self.geom.linear(idx)].sqrt() * self.geom.resolution
    }
}

impl FreeSpace for CollisionView {
    fn geometry(&self) -> &Geometry {
        &self.geom
    }

    #[inline]
    fn cell_free(&self, idx: GridIndex) -> bool {
        self.clearance2[self.geom.linear(idx)] > self.r2
    }
}

/// Same rule as [`CollisionView`] evaluated on demand around each queried cell.
pub struct LocalView<'a, T> {
    map: &'a DoubleLayerMap<T>,
    scheme: &'a Scheme,
    offsets: Vec<[i64; 3]>,
}

impl<'a, T: Real> LocalView<'a, T> {
    pub fn new(map: &'a DoubleLayerMap<T>, scheme: &'a Scheme, radius: f64) -> Self {
        let offsets = inflation_offsets(radius, map.geometry().resolution);
        Self { map, scheme, offsets }
    }
}

impl<T: Real> FreeSpace for LocalView<'_, T> {
    fn geometry(&self) -> &Geometry {
        self.map.geometry()
    }

    fn cell_free(&self, idx: GridIndex) -> bool {
        let g = self.map.geometry();
        let c = [idx.i as i64, idx.j as i64, idx.k as i64];
        self.offsets.iter().all(|o| {
            g.index_from_coords([c[0] + o[0], c[1] + o[1], c[2] + o[2]])
                .is_none_or(|n| !self.scheme.blocked(self.map, n))
        })
    }
}

/// Speed along the path: accelerate from `v0`, cruise at `peak`, brake to rest at the end.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub length: f64,
    pub v0: f64,
    pub peak: f64,
    pub accel: f64,
    /// Equals `accel` unless the path is shorter than the stopping distance from `v0`.
    pub decel: f64,
    pub t_acc: f64,
    pub t_cruise: f64,
    pub t_dec: f64,
    pub s_acc: f64,
    pub s_cruise: f64,
}

impl Profile {
    pub fn new(length: f64, v0: f64, v_max: f64, a_max: f64) -> Self {
        let v0 = v0.clamp(0.0, v_max);
        let length = length.max(0.0);
        let mut p = Profile {
            length,
            v0,
            peak: v0,
            accel: a_max,
            decel: a_max,
            t_acc: 0.0,
            t_cruise: 0.0,
            t_dec: 0.0,
            s_acc: 0.0,
            s_cruise: 0.0,
        };
        if length <= 0.0 {
            p.peak = 0.0;
            return p;
        }
        let stop = v0 * v0 / (2.0 * a_max);
        if length <= stop {
            p.decel = v0 * v0 / (2.0 * length);
            p.t_dec = v0 / p.decel;
            return p;
        }
        let peak = (a_max * length + v0 * v0 / 2.0).sqrt().min(v_max).max(v0);
        p.peak = peak;
        p.s_acc = (peak * peak - v0 * v0) / (2.0 * a_max);
        p.t_acc = (peak - v0) / a_max;
        let s_dec = peak * peak / (2.0 * a_max);
        p.s_cruise = (length - p.s_acc - s_dec).max(0.0);
        p.t_cruise = p.s_cruise / peak;
        p.t_dec = peak / a_max;
        p
    }

    pub fn duration(&self) -> f64 {
        self.t_acc + self.t_cruise + self.t_dec
    }

    pub fn speed_at(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        if t < self.t_acc {
            self.v0 + self.accel * t
        } else if t < self.t_acc + self.t_cruise {
            self.peak
        } else {
            let u = (t - self.t_acc - self.t_cruise).min(self.t_dec);
            (self.peak - self.decel * u).max(0.0)
        }
    }

    pub fn distance_at(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        let s = if t < self.t_acc {
            self.v0 * t + 0.5 * self.accel * t * t
        } else if t < self.t_acc + self.t_cruise {
            self.s_acc + self.peak * (t - self.t_acc)
        } else {
            let u = (t - self.t_acc - self.t_cruise).min(self.t_dec);
            self.s_acc + self.s_cruise + self.peak * u - 0.5 * self.decel * u * u
        };
        s.min(self.length)
    }

    /// Time at which distance `s` along the path is reached.
    pub fn time_at(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.length);
        if s <= self.s_acc && self.t_acc > 0.0 {
            let a = self.accel;
            (-self.v0 + (self.v0 * self.v0 + 2.0 * a * s).sqrt()) / a
        } else if s <= self.s_acc + self.s_cruise && self.t_cruise > 0.0 {
            self.t_acc + (s - self.s_acc) / self.peak
        } else {
            let r = s - self.s_acc - self.s_cruise;
            let d = self.decel;
            if d <= 0.0 || self.peak <= 0.0 {
                return self.duration();
            }
            let disc = (self.peak * self.peak - 2.0 * d * r).max(0.0);
            (self.t_acc + self.t_cruise + (self.peak - disc.sqrt()) / d).min(self.duration())
        }
    }
}

/// Polyline with a trapezoidal speed profile; times are relative to the trajectory start.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub waypoints: Vec<Point>,
    pub times: Vec<f64>,
    cum: Vec<f64>,
    pub profile: Profile,
    /// Inflation radius the path was planned with.
    pub inflation: f64,
}

impl Trajectory {
    /// Drops zero-length segments; the profile starts at `v0` and ends at rest.
    pub fn new(points: &[Point], v0: f64, cfg: &PlannerConfig, inflation: f64) -> Self {
        assert!(!points.is_empty(), "trajectory needs a point");
        let mut waypoints = vec![points[0]];
        let mut cum = vec![0.0];
        for p in &points[1..] {
            let d = (p - waypoints.last().expect("non-empty")).norm();
            if d > 1e-9 {
                cum.push(cum.last().expect("non-empty") + d);
                waypoints.push(*p);
            }
        }
        let length = *cum.last().expect("non-empty");
        let profile = Profile::new(length, v0, cfg.v_max, cfg.a_max);
        let times = cum.iter().map(|&s| profile.time_at(s)).collect();
        Self {
            waypoints,
            times,
            cum,
            profile,
            inflation,
        }
    }

    pub fn length(&self) -> f64 {
        self.profile.length
    }

    pub fn duration(&self) -> f64 {
        self.profile.duration()
    }

    pub fn point_at(&self, s: f64) -> Point {
        let s = s.clamp(0.0, self.length());
        let i = self.cum.partition_point(|&c| c <= s).clamp(1, self.cum.len().max(2) - 1);
        if self.waypoints.len() == 1 {
            return self.waypoints[0];
        }
        let (a, b) = (self.cum[i - 1], self.cum[i]);
        let u = if b > a { (s - a) / (b - a) } else { 0.0 };
        self.waypoints[i - 1].lerp(&self.waypoints[i], u.clamp(0.0, 1.0))
    }

    /// Unit direction of travel at distance `s`.
    pub fn direction_at(&self, s: f64) -> Point {
        if self.waypoints.len() < 2 {
            return Point::zeros();
        }
        let s = s.clamp(0.0, self.length());
        let i = self.cum.partition_point(|&c| c <= s).clamp(1, self.cum.len() - 1);
        (self.waypoints[i] - self.waypoints[i - 1]).normalize()
    }

    /// Points from distance `from` to `to` along the path, both ends included.
    pub fn slice(&self, from: f64, to: f64) -> Vec<Point> {
        let (from, to) = (from.clamp(0.0, self.length()), to.clamp(0.0, self.length()));
        let mut out = vec![self.point_at(from)];
        for (p, &c) in self.waypoints.iter().zip(&self.cum) {
            if c > from && c < to {
                out.push(*p);
            }
        }
        if to > from {
            out.push(self.point_at(to));
        }
        out
    }

    /// First distance in `[from, length]` where the path touches a voxel that is not free.
    pub fn first_blocked(&self, view: &impl FreeSpace, from: f64) -> Option<f64> {
        let g = view.geometry();
        let from = from.clamp(0.0, self.length());
        let mut p = self.point_at(from);
        let mut base = from;
        let first = self.cum.partition_point(|&c| c <= from);
        for i in first..self.waypoints.len() {
            let q = self.waypoints[i];
            if let Some(t) = first_blocked_on_segment(g, &p, &q, |idx| view.cell_free(idx)) {
                return Some(base + t);
            }
            base = self.cum[i];
            p = q;
        }
        if first >= self.waypoints.len() {
            return first_blocked_on_segment(g, &p, &p, |idx| view.cell_free(idx)).map(|t| base + t);
        }
        None
    }
}

/// The 26 neighbor moves, each with the axis sub-moves that must be free too
/// (no cutting past blocked corners).
fn moves() -> Vec<([i64; 3], f64, Vec<[i64; 3]>)> {
    let mut out = Vec::with_capacity(26);
    for di in -1i64..=1 {
        for dj in -1i64..=1 {
            for dk in -1i64..=1 {
                if di == 0 && dj == 0 && dk == 0 {
                    continue;
                }
                let mut subs = Vec::new();
                for mask in 1u8..8 {
                    let s = [
                        if mask & 1 != 0 { di } else { 0 },
                        if mask & 2 != 0 { dj } else { 0 },
                        if mask & 4 != 0 { dk } else { 0 },
                    ];
                    if s != [0, 0, 0] && !subs.contains(&s) {
                        subs.push(s);
                    }
                }
                let cost = ((di * di + dj * dj + dk * dk) as f64).sqrt();
                out.push(([di, dj, dk], cost, subs));
            }
        }
    }
    out
}

struct SearchOutcome {
    cells: Vec<GridIndex>,
    reached: bool,
}

/// A* from `start` to `goal`; on failure returns the path to the expanded cell
/// closest to the goal.
fn search(view: &impl FreeSpace, start: GridIndex, goal: GridIndex, max_expansions: usize) -> SearchOutcome {
    let g = view.geometry();
    let n = g.len();
    let moves = moves();
    let mut cost = vec![f64::INFINITY; n];
    let mut parent = vec![u32::MAX; n];
    let mut closed = vec![false; n];
    let h = |idx: GridIndex| {
        let d = [
            idx.i as f64 - goal.i as f64,
            idx.j as f64 - goal.j as f64,
            idx.k as f64 - goal.k as f64,
        ];
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    };
    let ls = g.linear(start);
    cost[ls] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((h(start).to_bits(), ls)));
    let mut best = (h(start), ls);
    let mut expansions = 0usize;
    let mut reached = false;
    while let Some(Reverse((_, l))) = heap.pop() {
        if closed[l] {
            continue;
        }
        closed[l] = true;
        let idx = g.unlinear(l);
        let hl = h(idx);
        if hl < best.0 {
            best = (hl, l);
        }
        if idx == goal {
            reached = true;
            best = (0.0, l);
            break;
        }
        expansions += 1;
        if expansions > max_expansions {
            break;
        }
        let c = [idx.i as i64, idx.j as i64, idx.k as i64];
        'next: for (d, step, subs) in &moves {
            let Some(nb) = g.index_from_coords([c[0] + d[0], c[1] + d[1], c[2] + d[2]]) else {
                continue;
            };
            let ln = g.linear(nb);
            if closed[ln] {
                continue;
            }
            for s in subs {
                match g.index_from_coords([c[0] + s[0], c[1] + s[1], c[2] + s[2]]) {
                    Some(m) if view.cell_free(m) => {}
                    _ => continue 'next,
                }
            }
            let nc = cost[l] + step;
            if nc < cost[ln] {
                cost[ln] = nc;
                parent[ln] = l as u32;
                heap.push(Reverse(((nc + h(nb)).to_bits(), ln)));
            }
        }
    }
    let mut cells = vec![g.unlinear(best.1)];
    let mut cur = best.1;
    while parent[cur] != u32::MAX {
        cur = parent[cur] as usize;
        cells.push(g.unlinear(cur));
    }
    cells.reverse();
    SearchOutcome { cells, reached }
}

fn shortcut(view: &impl FreeSpace, pts: Vec<Point>, iterations: usize) -> Vec<Point> {
    let mut pts = pts;
    for _ in 0..iterations {
        if pts.len() <= 2 {
            break;
        }
        let mut out = vec![pts[0]];
        let mut i = 0;
        while i + 1 < pts.len() {
            let mut j = i + 1;
            while j + 1 < pts.len() && view.segment_free(&pts[i], &pts[j + 1]) {
                j += 1;
            }
            out.push(pts[j]);
            i = j;
        }
        let done = out.len() == pts.len();
        pts = out;
        if done {
            break;
        }
    }
    pts
}

fn start_cell(view: &impl FreeSpace, start: &Point) -> Result<GridIndex> {
    let g = view.geometry();
    let idx = g
        .index_from_coords(g.voxel_coords(start))
        .ok_or_else(|| Error::InvalidStart(format!("start {start:?} outside the map")))?;
    if !view.cell_free(idx) {
        return Err(Error::InvalidStart(format!("start {start:?} in collision")));
    }
    Ok(idx)
}

fn path_points(view: &impl FreeSpace, start: &Point, end: Option<&Point>, cells: &[GridIndex], cfg: &PlannerConfig) -> Vec<Point> {
    let g = view.geometry();
    let mut pts = vec![*start];
    pts.extend(cells.iter().skip(1).map(|&c| g.index_to_world(c)));
    if let Some(e) = end {
        if cells.len() > 1 {
            pts.pop();
        }
        pts.push(*e);
    }
    shortcut(view, pts, cfg.smoothing_iterations)
}

/// Plans a path to `goal` and times it from speed `v0`.
///
/// Errors with `InvalidStart` when the start is not free and `PlanFailed` when
/// the goal is blocked or unreachable.
pub fn plan(view: &impl FreeSpace, start: &Point, goal: &Point, v0: f64, cfg: &PlannerConfig, inflation: f64) -> Result<Trajectory> {
    let s = start_cell(view, start)?;
    let g = view.geometry();
    let gc = g
        .index_from_coords(g.voxel_coords(goal))
        .filter(|&c| view.cell_free(c))
        .ok_or_else(|| Error::PlanFailed(format!("goal {goal:?} is not free")))?;
    let out = search(view, s, gc, cfg.max_expansions);
    if !out.reached {
        return Err(Error::PlanFailed(format!("goal {goal:?} unreachable")));
    }
    let pts = path_points(view, start, Some(goal), &out.cells, cfg);
    Ok(Trajectory::new(&pts, v0, cfg, inflation))
}

/// Like [`plan`], but when the goal cannot be reached heads for the reachable
/// cell closest to it. Returns the trajectory and whether it ends at the goal.
pub fn plan_toward(
    view: &impl FreeSpace,
    start: &Point,
    goal: &Point,
    v0: f64,
    cfg: &PlannerConfig,
    inflation: f64,
) -> Result<(Trajectory, bool)> {
    let s = start_cell(view, start)?;
    let g = view.geometry();
    let gc = g.index_from_coords(g.voxel_coords(goal)).unwrap_or_else(|| {
        let c = g.voxel_coords(goal);
        let clamp = |a: usize| c[a].clamp(0, g.dims[a] as i64 - 1) as usize;
        GridIndex::new(clamp(0), clamp(1), clamp(2))
    });
    let out = search(view, s, gc, cfg.max_expansions);
    if out.reached && view.cell_free(gc) {
        let pts = path_points(view, start, Some(goal), &out.cells, cfg);
        return Ok((Trajectory::new(&pts, v0, cfg, inflation), true));
    }
    if out.cells.len() < 2 {
        return Err(Error::PlanFailed("no reachable cell closer to the goal".into()));
    }
    let pts = path_points(view, start, None, &out.cells, cfg);
    Ok((Trajectory::new(&pts, v0, cfg, inflation), false))
}
