//! Exact voxel traversal (Amanatides & Woo stepping) over an occupancy grid.
//!
//! `Forward` rays pass through unknown space and stop at the first cell above
//! the occupancy threshold. `Reverse` rays also stop at the first unknown
//! cell; they are used to synthesize what a sensor would have observed from a
//! viewpoint inside an already-mapped block.

use crate::error::{invalid, Result};
use crate::num::Real;

use super::{GridIndex, OccupancyGrid, Point};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RayMode {
    Forward,
    Reverse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RayCause {
    HitOccupied,
    HitUnknown,
    MaxRange,
    OutOfBounds,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RayResult {
    /// Cells passed before the ray stopped, in traversal order. Includes the origin cell
    /// unless the origin itself terminated the ray.
    pub traversed: Vec<GridIndex>,
    /// The cell that stopped the ray, for `HitOccupied`/`HitUnknown`.
    pub terminal: Option<GridIndex>,
    pub cause: RayCause,
    /// Distance along the ray at which the terminal cell is entered, or the
    /// distance where the ray left the grid / reached its range.
    pub distance: f64,
}

/// Casts a ray and collects the traversed cells.
pub fn raycast<T: Real>(
    grid: &OccupancyGrid<T>,
    start: &Point,
    direction: &Point,
    max_range: f64,
    mode: RayMode,
    threshold: f64,
) -> Result<RayResult> {
    let mut traversed = Vec::new();
    let (terminal, cause, distance) =
        raycast_visit(grid, start, direction, max_range, mode, threshold, |idx| traversed.push(idx))?;
    Ok(RayResult {
        traversed,
        terminal,
        cause,
        distance,
    })
}

/// Allocation-free traversal; `visit` is called for every traversed cell in order.
pub fn raycast_visit<T: Real, F: FnMut(GridIndex)>(
    grid: &OccupancyGrid<T>,
    start: &Point,
    direction: &Point,
    max_range: f64,
    mode: RayMode,
    threshold: f64,
    mut visit: F,
) -> Result<(Option<GridIndex>, RayCause, f64)> {
    let geom = grid.geometry();
    let mut cell = geom.world_to_index(start)?;
    let norm = direction.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(invalid("ray direction must be non-zero and finite"));
    }
    if !(max_range >= 0.0) {
        return Err(invalid("ray range must be non-negative"));
    }
    let dir = direction / norm;
    let res = geom.resolution;
    let local = (start - geom.origin()) / res;
    let dims = geom.dims;

    let mut c = [cell.i as i64, cell.j as i64, cell.k as i64];
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        let d = dir[a];
        let u = local[a];
        if d > 0.0 {
            step[a] = 1;
            t_max[a] = ((c[a] as f64 + 1.0) - u) / d * res;
            t_delta[a] = res / d;
        } else if d < 0.0 {
            step[a] = -1;
            t_max[a] = (u - c[a] as f64) / -d * res;
            t_delta[a] = res / -d;
        }
    }

    let mut t_enter = 0.0;
    loop {
        let raw = grid.get_raw(cell);
        if raw.wide() > threshold {
            return Ok((Some(cell), RayCause::HitOccupied, t_enter));
        }
        if mode == RayMode::Reverse && raw < T::zero() {
            return Ok((Some(cell), RayCause::HitUnknown, t_enter));
        }
        visit(cell);

        let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        let t_next = t_max[axis];
        if t_next >= max_range {
            return Ok((None, RayCause::MaxRange, max_range));
        }
        c[axis] += step[axis];
        if c[axis] < 0 || c[axis] as usize >= dims[axis] {
            return Ok((None, RayCause::OutOfBounds, t_next));
        }
        t_max[axis] += t_delta[axis];
        t_enter = t_next;
        cell = GridIndex::new(c[0] as usize, c[1] as usize, c[2] as usize);
    }
}

/// `n` unit vectors spread evenly over the sphere (golden-angle spiral).
pub fn fibonacci_sphere(n: usize) -> Vec<Point> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Point::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::voxel::{Geometry, VoxelValue};

    fn free_grid(n: usize) -> OccupancyGrid<f64> {
        let g = Geometry::new([n, n, n], 0.1, Point::zeros()).unwrap();
        OccupancyGrid::filled(g, 0.0)
    }

    #[test]
    fn free_grid_reaches_max_range() {
        let g = free_grid(40);
        let r = raycast(&g, &Point::new(2.0, 2.0, 2.0), &Point::new(1.0, 0.3, -0.2), 1.0, RayMode::Forward, 0.5)
            .unwrap();
        assert_eq!(r.cause, RayCause::MaxRange);
        assert!(r.terminal.is_none());
        assert!(r.traversed.iter().all(|&c| g.get_raw(c) == 0.0));
        assert_eq!(r.traversed[0], g.world_to_index(&Point::new(2.0, 2.0, 2.0)).unwrap());
    }

    #[test]
    fn single_obstacle_stops_ray() {
        let mut g = free_grid(40);
        let start = Point::new(0.55, 2.05, 2.05);
        let hit = g.world_to_index(&Point::new(1.55, 2.05, 2.05)).unwrap();
        g.set(hit, VoxelValue::Known(1.0));
        let r = raycast(&g, &start, &Point::new(1.0, 0.0, 0.0), 3.0, RayMode::Forward, 0.5).unwrap();
        assert_eq!(r.cause, RayCause::HitOccupied);
        assert_eq!(r.terminal, Some(hit));
        assert_eq!(r.traversed.len(), 10);
        assert!(r.traversed.iter().all(|c| c.i < hit.i));
        assert!((r.distance - 0.95).abs() < 1e-9);
    }

    #[test]
    fn origin_cell_can_terminate() {
        let mut g = free_grid(4);
        g.set(GridIndex::new(0, 0, 0), VoxelValue::Unknown);
        let r = raycast(&g, &Point::new(0.05, 0.05, 0.05), &Point::new(1.0, 1.0, 1.0), 1.0, RayMode::Reverse, 0.5)
            .unwrap();
        assert_eq!(r.cause, RayCause::HitUnknown);
        assert!(r.traversed.is_empty());
        let f = raycast(&g, &Point::new(0.05, 0.05, 0.05), &Point::new(1.0, 0.0, 0.0), 1.0, RayMode::Forward, 0.5)
            .unwrap();
        assert_eq!(f.cause, RayCause::OutOfBounds);
        assert_eq!(f.traversed.len(), 4);
    }

    #[test]
    fn start_outside_rejected() {
        let g = free_grid(4);
        assert!(matches!(
            raycast(&g, &Point::new(-0.1, 0.0, 0.0), &Point::x(), 1.0, RayMode::Forward, 0.5),
            Err(Error::OutOfBounds(_))
        ));
        assert!(raycast(&g, &Point::new(0.1, 0.1, 0.1), &Point::zeros(), 1.0, RayMode::Forward, 0.5).is_err());
    }

    #[test]
    fn fibonacci_directions_are_unit_and_balanced() {
        let d = fibonacci_sphere(2048);
        assert!(d.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        let mean: Point = d.iter().sum::<Point>() / d.len() as f64;
        assert!(mean.norm() < 1e-2);
    }
}
