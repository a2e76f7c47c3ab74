//! Deterministic navigation simulator: range sensor, grid planner with
//! trapezoidal timing, replanning with emergency stops, episodes and the
//! per-scheme benchmark.

mod bench;
mod episode;
mod planner;
mod sensor;

pub use bench::{
    read_episode_rows, run_benchmark, summarize, write_benchmark, write_ply, BenchmarkConfig, BenchmarkTable,
    EpisodeRow, SchemeSummary, EPISODES_FILE, SUMMARY_FILE,
};
pub use episode::{run_episode, Episode, EpisodeConfig, EpisodeResult, FailureCause, NavConfig, RobotState};
pub use planner::{
    edt_squared, first_blocked_on_segment, inflation_offsets, plan, plan_toward, CollisionView, FreeSpace, LocalView, PlannerConfig, Profile,
    Trajectory,
};
pub use sensor::{simulate_scan, Scan, SensorConfig};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};
use crate::navmap::DoubleLayerMap;
use crate::num::Real;
use crate::voxel::GridIndex;

/// How unknown space is treated by collision checks.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Unknown is free; only the observed layer is consulted.
    Aggressive,
    /// Unknown is occupied; only known-free cells are traversable.
    Conservative,
    /// Fused observed and predicted layers, with the named predictor.
    Predicted(String),
}

impl Scheme {
    /// Collision rule of the scheme for one in-bounds cell.
    #[inline]
    pub fn blocked<T: Real>(&self, map: &DoubleLayerMap<T>, idx: GridIndex) -> bool {
        let theta = map.fusion.threshold;
        match self {
            Scheme::Aggressive => map.original().get_raw(idx).wide() > theta,
            Scheme::Conservative => {
                let v = map.original().get_raw(idx);
                v < T::zero() || v.wide() > theta
            }
            Scheme::Predicted(_) => map.occupied_at(idx),
        }
    }

    pub fn predictor(&self) -> Option<&str> {
        match self {
            Scheme::Predicted(p) => Some(p),
            _ => None,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Aggressive => f.write_str("AGGRESSIVE"),
            Scheme::Conservative => f.write_str("CONSERVATIVE"),
            Scheme::Predicted(p) => write!(f, "PREDICTED({p})"),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        match t.to_ascii_uppercase().as_str() {
            "AGGRESSIVE" => return Ok(Scheme::Aggressive),
            "CONSERVATIVE" => return Ok(Scheme::Conservative),
            _ => {}
        }
        let inner = t
            .strip_prefix("PREDICTED(")
            .or_else(|| t.strip_prefix("predicted("))
            .and_then(|r| r.strip_suffix(')'))
            .map(str::trim)
            .filter(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-'));
        match inner {
            Some(p) => Ok(Scheme::Predicted(p.to_ascii_uppercase())),
            None => Err(invalid(format!(
                "unknown scheme '{s}' (expected AGGRESSIVE, CONSERVATIVE or PREDICTED(<predictor>))"
            ))),
        }
    }
}

impl Serialize for Scheme {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Scheme {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::navmap::{FusionParams, LogOddsParams, Observation};
    use crate::predictor::{AllFree, AllOccupied};
    use crate::voxel::{Geometry, Point, Region};

    #[test]
    fn scheme_names_roundtrip() {
        for s in ["AGGRESSIVE", "CONSERVATIVE", "PREDICTED(ORACLE)", "PREDICTED(ALL_FREE)"] {
            let v: Scheme = s.parse().unwrap();
            assert_eq!(v.to_string(), s);
            let j = serde_json::to_string(&v).unwrap();
            assert_eq!(serde_json::from_str::<Scheme>(&j).unwrap(), v);
        }
        assert_eq!("predicted(model)".parse::<Scheme>().unwrap(), Scheme::Predicted("MODEL".into()));
        for bad in ["", "PREDICTED()", "PREDICTED(ORACLE", "FAST", "PREDICTED(a b)"] {
            assert!(bad.parse::<Scheme>().is_err(), "{bad}");
        }
    }

    fn observed_map() -> DoubleLayerMap<f32> {
        let g = Geometry::new([12, 12, 6], 0.1, Point::zeros()).unwrap();
        let mut m = DoubleLayerMap::new(g, FusionParams::default(), LogOddsParams::default()).unwrap();
        let obs: Vec<Observation> = (0..12)
            .flat_map(|i| (0..6).map(move |j| Observation { index: GridIndex::new(i, j, 2), hit: (i + j) % 4 == 0 }))
            .collect();
        m.update_original(&obs).unwrap();
        m
    }

    #[test]
    fn views_order_by_restrictiveness() {
        let mut m = observed_map();
        let center = Point::new(0.6, 0.6, 0.3);
        let agg = Scheme::Aggressive;
        let pred = Scheme::Predicted("ALL_FREE".into());
        m.refresh_prediction(&AllFree, &center, [8, 8, 6]).unwrap();
        for idx in m.geometry().indices() {
            assert_eq!(agg.blocked(&m, idx), pred.blocked(&m, idx));
            if agg.blocked(&m, idx) {
                assert!(Scheme::Conservative.blocked(&m, idx));
            }
        }
        m.refresh_prediction(&AllOccupied, &center, [8, 8, 6]).unwrap();
        let region = Region::centered(m.geometry().world_to_index(&center).unwrap(), [8, 8, 6], [12, 12, 6]).unwrap();
        for idx in m.geometry().indices() {
            if region.contains(idx) && agg.blocked(&m, idx) {
                assert!(pred.blocked(&m, idx));
            }
            if region.contains(idx) && !m.original().is_known(idx) {
                assert!(pred.blocked(&m, idx));
            }
        }
    }
}
