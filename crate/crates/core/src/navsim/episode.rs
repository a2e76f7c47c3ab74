use serde::{Deserialize, Serialize};

use super::planner::{plan_toward, CollisionView, FreeSpace, LocalView, PlannerConfig, Trajectory};
use super::sensor::{simulate_scan, SensorConfig};
use super::Scheme;
use crate::error::{invalid, Error, Result};
use crate::navmap::{check_block_fits, DoubleLayerMap, FusionParams, LogOddsParams, PredictionQueue, PredictionSchedule};
use crate::num::Real;
use crate::predictor::Predictor;
use crate::rng::{seeded, Rng};
use crate::scenegen::Scene;
use crate::voxel::{occupied_near, Point, DEFAULT_THRESHOLD};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Simulation step (s).
    pub dt: f64,
    /// Simulated time limit (s).
    pub timeout: f64,
    pub goal_radius: f64,
    /// Declared stuck after this long (s) without getting a voxel closer to the goal.
    pub stuck_time: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            timeout: 60.0,
            goal_radius: 0.3,
            stuck_time: 10.0,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        let v = [self.dt, self.timeout, self.goal_radius, self.stuck_time];
        if v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::Config("episode dt, timeout, goal_radius and stuck_time must be positive".into()));
        }
        Ok(())
    }
}

/// Everything an episode needs besides the scene, scheme and seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NavConfig {
    pub sensor: SensorConfig,
    pub planner: PlannerConfig,
    pub episode: EpisodeConfig,
    pub fusion: FusionParams,
    pub log_odds: LogOddsParams,
    pub prediction: PredictionSchedule,
}

impl NavConfig {
    pub fn validate(&self) -> Result<()> {
        self.sensor.validate()?;
        self.planner.validate()?;
        self.episode.validate()?;
        self.fusion.validate()?;
        self.log_odds.validate()?;
        self.prediction.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobotState {
    pub position: Point,
    pub velocity: Point,
    pub time: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FailureCause {
    Collision,
    Timeout,
    Stuck,
}

impl FailureCause {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureCause::Collision => "COLLISION",
            FailureCause::Timeout => "TIMEOUT",
            FailureCause::Stuck => "STUCK",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    /// Time of arrival, or of the failure.
    pub travel_time: f64,
    /// Length of the executed motion (m).
    pub trajectory_length: f64,
    pub emergency_stops: usize,
    pub failure: Option<FailureCause>,
    pub steps: usize,
    pub replans: usize,
}

/// One navigation run, advanced a fixed step at a time.
pub struct Episode<'a, T: Real> {
    scene: &'a Scene,
    scheme: Scheme,
    predictor: Option<&'a dyn Predictor<T>>,
    cfg: NavConfig,
    rng: Rng,
    map: DoubleLayerMap<T>,
    queue: Option<PredictionQueue<T>>,
    traj: Option<Trajectory>,
    traj_time: f64,
    braking: bool,
    since_plan: usize,
    step: usize,
    state: RobotState,
    path: Vec<Point>,
    length: f64,
    stops: usize,
    replans: usize,
    best_dist: f64,
    last_progress: f64,
    result: Option<EpisodeResult>,
}

impl<'a, T: Real> Episode<'a, T> {
    /// `predictor` is required by the predicted scheme and ignored otherwise.
    pub fn new(scene: &'a Scene, scheme: Scheme, predictor: Option<&'a dyn Predictor<T>>, cfg: &NavConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let geom = scene.grid.geometry().clone();
        let queue = match (&scheme, predictor) {
            (Scheme::Predicted(_), Some(_)) => {
                check_block_fits(&geom, cfg.prediction.block_dims)?;
                Some(PredictionQueue::new(cfg.prediction)?)
            }
            (Scheme::Predicted(p), None) => return Err(invalid(format!("scheme {scheme} needs predictor {p}"))),
            _ => None,
        };
        if occupied_near(&scene.grid, &scene.start, cfg.planner.robot_radius, DEFAULT_THRESHOLD) {
            return Err(invalid("start is in collision with the scene"));
        }
        let map = DoubleLayerMap::new(geom, cfg.fusion, cfg.log_odds)?;
        let predictor = if queue.is_some() { predictor } else { None };
        Ok(Self {
            scene,
            scheme,
            predictor,
            cfg: cfg.clone(),
            rng: seeded(seed),
            map,
            queue,
            traj: None,
            traj_time: 0.0,
            braking: false,
            since_plan: 0,
            step: 0,
            state: RobotState {
                position: scene.start,
                velocity: Point::zeros(),
                time: 0.0,
            },
            path: vec![scene.start],
            length: 0.0,
            stops: 0,
            replans: 0,
            best_dist: (scene.goal - scene.start).norm(),
            last_progress: 0.0,
            result: None,
        })
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn map(&self) -> &DoubleLayerMap<T> {
        &self.map
    }

    pub fn trajectory(&self) -> Option<&Trajectory> {
        self.traj.as_ref()
    }

    /// Executed positions, one per step, starting at the start point.
    pub fn path(&self) -> &[Point] {
        &self.path
    }

    pub fn result(&self) -> Option<&EpisodeResult> {
        self.result.as_ref()
    }

    pub fn emergency_stops(&self) -> usize {
        self.stops
    }

    fn speed(&self) -> f64 {
        self.traj.as_ref().map_or(0.0, |t| t.profile.speed_at(self.traj_time))
    }

    fn progress(&self) -> f64 {
        self.traj.as_ref().map_or(0.0, |t| t.profile.distance_at(self.traj_time))
    }

    fn set_trajectory(&mut self, t: Trajectory) {
        self.traj = Some(t);
        self.traj_time = 0.0;
    }

    /// Plans from `from`; when `from` sits inside the inflation zone the radius
    /// shrinks to its clearance, but never below the robot radius.
    fn plan_from(&self, from: &Point, v0: f64) -> Result<Trajectory> {
        let p = &self.cfg.planner;
        let mut view = CollisionView::build(&self.map, &self.scheme, p.inflation());
        let g = self.map.geometry();
        let cell = g
            .index_from_coords(g.voxel_coords(from))
            .ok_or_else(|| Error::InvalidStart(format!("{from:?} outside the map")))?;
        let mut radius = p.inflation();
        if !view.cell_free(cell) {
            let c = view.clearance(cell);
            if c <= p.robot_radius {
                return Err(Error::InvalidStart(format!("clearance {c:.3} m at {from:?}")));
            }
            radius = radius.min(c - 1e-6);
            view.set_radius(radius);
        }
        plan_toward(&view, from, &self.scene.goal, v0, p, radius).map(|(t, _)| t)
    }

    fn replan(&mut self, blocked_at: Option<f64>) {
        self.since_plan = 0;
        self.replans += 1;
        let p = self.cfg.planner;
        let speed = self.speed();
        let s_cur = self.progress();
        let d = p.stopping_distance(speed);
        if let (Some(b), Some(t)) = (blocked_at, &self.traj) {
            if speed > 0.0 && b <= s_cur + d {
                // the robot cannot leave its current path before the blocked point
                let brake = Trajectory::new(&t.slice(s_cur, s_cur + d), speed, &p, t.inflation);
                self.set_trajectory(brake);
                self.braking = true;
                self.stops += 1;
                return;
            }
        }
        let prefix = match &self.traj {
            Some(t) if speed > 0.0 => t.slice(s_cur, s_cur + d),
            _ => vec![self.state.position],
        };
        let branch = *prefix.last().expect("prefix has a point");
        match self.plan_from(&branch, speed) {
            Ok(next) => {
                let mut pts = prefix;
                pts.extend_from_slice(&next.waypoints[1..]);
                let t = Trajectory::new(&pts, speed, &p, next.inflation);
                self.set_trajectory(t);
            }
            Err(e) => {
                log::debug!("replan failed at t={:.2}: {e}", self.state.time);
                if let (Some(b), Some(t)) = (blocked_at, &self.traj) {
                    // blocked beyond the stopping distance: stop short of it
                    let stop = (b - s_cur - 0.5 * self.map.geometry().resolution).max(d);
                    let halt = Trajectory::new(&t.slice(s_cur, s_cur + stop), speed, &p, t.inflation);
                    self.set_trajectory(halt);
                }
            }
        }
    }

    /// Advances one step. Returns the result once the episode has ended.
    pub fn step(&mut self) -> Result<Option<&EpisodeResult>> {
        if self.result.is_some() {
            return Ok(self.result.as_ref());
        }
        let cfg = self.cfg.clone();
        let pos = self.state.position;
        if self.step % cfg.sensor.period == 0 {
            let scan = simulate_scan(&self.scene.grid, &pos, &cfg.sensor, &mut self.rng)?;
            self.map.update_original(&scan.observations)?;
        }
        if let (Some(q), Some(pred)) = (self.queue.as_mut(), self.predictor) {
            q.tick(&mut self.map, pred, self.step, &pos)?;
        }

        if self.braking && self.speed() <= 0.0 {
            self.braking = false;
        }
        if !self.braking {
            let s_cur = self.progress();
            let blocked_at = self.traj.as_ref().and_then(|t| {
                let view = LocalView::new(&self.map, &self.scheme, t.inflation);
                t.first_blocked(&view, s_cur)
            });
            let finished = self.traj.as_ref().is_none_or(|t| self.traj_time >= t.duration());
            if finished || blocked_at.is_some() || self.since_plan + 1 >= cfg.planner.replan_period {
                self.replan(blocked_at);
            } else {
                self.since_plan += 1;
            }
        }

        let dt = cfg.episode.dt;
        let (next, velocity) = match &self.traj {
            Some(t) => {
                self.traj_time += dt;
                let s = t.profile.distance_at(self.traj_time);
                (t.point_at(s), t.direction_at(s) * t.profile.speed_at(self.traj_time))
            }
            None => (pos, Point::zeros()),
        };
        self.length += (next - pos).norm();
        self.state = RobotState {
            position: next,
            velocity,
            time: self.state.time + dt,
        };
        self.path.push(next);
        self.step += 1;

        let now = self.state.time;
        let res = self.map.geometry().resolution;
        let dist = (self.scene.goal - next).norm();
        if dist < self.best_dist - res {
            self.best_dist = dist;
            self.last_progress = now;
        }
        let failure = if occupied_near(&self.scene.grid, &next, cfg.planner.robot_radius, DEFAULT_THRESHOLD) {
            Some(FailureCause::Collision)
        } else if dist <= cfg.episode.goal_radius {
            None
        } else if now >= cfg.episode.timeout - 1e-9 {
            Some(FailureCause::Timeout)
        } else if now - self.last_progress > cfg.episode.stuck_time {
            Some(FailureCause::Stuck)
        } else {
            return Ok(None);
        };
        self.result = Some(EpisodeResult {
            success: failure.is_none(),
            travel_time: now,
            trajectory_length: self.length,
            emergency_stops: self.stops,
            failure,
            steps: self.step,
            replans: self.replans,
        });
        Ok(self.result.as_ref())
    }
}

/// Runs an episode to completion and returns its result and executed path.
/// A pure function of its arguments.
pub fn run_episode<T: Real>(
    scene: &Scene,
    scheme: &Scheme,
    predictor: Option<&dyn Predictor<T>>,
    cfg: &NavConfig,
    seed: u64,
) -> Result<(EpisodeResult, Vec<Point>)> {
    let mut ep = Episode::new(scene, scheme.clone(), predictor, cfg, seed)?;
    loop {
        if let Some(r) = ep.step()? {
            let r = r.clone();
            return Ok((r, ep.path));
        }
    }
}
