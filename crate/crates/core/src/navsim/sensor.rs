use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::navmap::Observation;
use crate::num::Real;
use crate::rng::Rng;
use crate::voxel::{fibonacci_sphere, raycast_visit, OccupancyGrid, Point, RayCause, RayMode, DEFAULT_THRESHOLD};

/// Omnidirectional range sensor with rays on a Fibonacci sphere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    pub rays: usize,
    pub max_range: f64,
    /// Standard deviation of additive range noise on hits (m).
    pub range_noise: f64,
    /// Steps between scans.
    pub period: usize,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            rays: 4096,
            max_range: 1.2,
            range_noise: 0.0,
            period: 2,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rays == 0 || self.period == 0 {
            return Err(Error::Config("sensor rays and period must be >= 1".into()));
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return Err(Error::Config("sensor max_range must be positive".into()));
        }
        if !(self.range_noise >= 0.0 && self.range_noise.is_finite()) {
            return Err(Error::Config("sensor range_noise must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scan {
    pub observations: Vec<Observation>,
    /// Measured hit distance per ray; `None` when nothing was hit within range.
    pub ranges: Vec<Option<f64>>,
}

/// Casts every sensor ray against the ground truth from `pose`.
///
/// Cells passed before a hit are free observations and the hit cell is an
/// occupied one. With range noise the hit distance is perturbed first and the
/// observed cells follow the perturbed distance.
pub fn simulate_scan<T: Real>(truth: &OccupancyGrid<T>, pose: &Point, sensor: &SensorConfig, rng: &mut Rng) -> Result<Scan> {
    sensor.validate()?;
    let geom = truth.geometry();
    let cell = geom
        .index_from_coords(geom.voxel_coords(pose))
        .ok_or_else(|| invalid(format!("sensor pose {pose:?} outside the scene")))?;
    if truth.is_occupied(cell, DEFAULT_THRESHOLD) {
        return Err(invalid(format!("sensor pose {pose:?} is inside an obstacle")));
    }
    let noise = (sensor.range_noise > 0.0)
        .then(|| Normal::new(0.0, sensor.range_noise).map_err(|e| invalid(e.to_string())))
        .transpose()?;
    let mut scan = Scan::default();
    for dir in fibonacci_sphere(sensor.rays) {
        let start = scan.observations.len();
        let (terminal, cause, dist) = raycast_visit(truth, pose, &dir, sensor.max_range, RayMode::Forward, DEFAULT_THRESHOLD, |idx| {
            scan.observations.push(Observation { index: idx, hit: false })
        })?;
        let (RayCause::HitOccupied, Some(hit)) = (cause, terminal) else {
            scan.ranges.push(None);
            continue;
        };
        let Some(noise) = &noise else {
            scan.observations.push(Observation { index: hit, hit: true });
            scan.ranges.push(Some(dist));
            continue;
        };
        let measured = (dist + noise.sample(rng)).max(0.0);
        scan.observations.truncate(start);
        if measured >= sensor.max_range {
            raycast_visit(truth, pose, &dir, sensor.max_range, RayMode::Forward, f64::INFINITY, |idx| {
                scan.observations.push(Observation { index: idx, hit: false })
            })?;
            scan.ranges.push(None);
            continue;
        }
        // geometric traversal up to the measured distance; the last cell holds the return
        let (_, end, _) = raycast_visit(truth, pose, &dir, measured, RayMode::Forward, f64::INFINITY, |idx| {
            scan.observations.push(Observation { index: idx, hit: false })
        })?;
        if end == RayCause::OutOfBounds {
            scan.ranges.push(None);
            continue;
        }
        if let Some(last) = scan.observations.last_mut() {
            last.hit = true;
        }
        scan.ranges.push(Some(measured));
    }
    Ok(scan)
}
