//! Closed-route geometry. Positions are arc lengths along a single closed
//! route and all arithmetic is modulo the route length. A vehicle's
//! position is its front bumper; its body extends `length` metres behind.

use serde::{Deserialize, Serialize};

use crate::engine::VehicleState;
use crate::error::ConfigError;

/// Wraps `s` into `[0, length)`.
pub fn wrap(s: f64, length: f64) -> f64 {
    let r = s.rem_euclid(length);
    // rem_euclid can round up to `length` for tiny negative inputs
    if r >= length {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingSpec {
    pub length: f64,
    pub num_lanes: usize,
}

impl RingSpec {
    pub fn single(length: f64) -> Self {
        Self { length, num_lanes: 1 }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(ConfigError::invalid(format!("ring length must be > 0, got {}", self.length)));
        }
        if !(1..=2).contains(&self.num_lanes) {
            return Err(ConfigError::invalid(format!("num_lanes must be 1 or 2, got {}", self.num_lanes)));
        }
        Ok(())
    }
}

/// Half-open stretch `[start, end)` of route positions, `start < end`, not
/// crossing the route origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }
}

/// A figure-eight modelled as one closed route that passes the central
/// intersection twice, once on each crossing arm. The two arm segments form
/// one conflict zone: vehicles on different arms may not occupy it together.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FigureEightSpec {
    /// Radius of each loop, m. Informational: curvature is not modelled.
    pub loop_radius: f64,
    pub total_length: f64,
    /// Length of the conflict segment on each arm, m.
    pub zone_length: f64,
}

impl Default for FigureEightSpec {
    fn default() -> Self {
        Self {
            loop_radius: 30.0,
            total_length: 402.0,
            zone_length: 10.0,
        }
    }
}

impl FigureEightSpec {
    /// Arm segments, centred a quarter and three quarters of the way round.
    pub fn conflict_zones(&self) -> [Interval; 2] {
        let half = self.zone_length / 2.0;
        let c0 = self.total_length / 4.0;
        let c1 = 3.0 * self.total_length / 4.0;
        [
            Interval {
                start: c0 - half,
                end: c0 + half,
            },
            Interval {
                start: c1 - half,
                end: c1 + half,
            },
        ]
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.total_length > 0.0 && self.zone_length > 0.0 && self.loop_radius > 0.0) {
            return Err(ConfigError::invalid("figure-eight dimensions must be positive"));
        }
        if self.zone_length >= self.total_length / 4.0 {
            return Err(ConfigError::invalid("figure-eight conflict zone too long for the route"));
        }
        Ok(())
    }
}

/// Resolved geometry of one episode's network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NetworkSpec {
    Ring(RingSpec),
    FigureEight(FigureEightSpec),
}

impl NetworkSpec {
    pub fn length(&self) -> f64 {
        match self {
            NetworkSpec::Ring(r) => r.length,
            NetworkSpec::FigureEight(f) => f.total_length,
        }
    }

    pub fn num_lanes(&self) -> usize {
        match self {
            NetworkSpec::Ring(r) => r.num_lanes,
            NetworkSpec::FigureEight(_) => 1,
        }
    }

    pub fn figure_eight(&self) -> Option<&FigureEightSpec> {
        match self {
            NetworkSpec::FigureEight(f) => Some(f),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self {
            NetworkSpec::Ring(r) => r.validate(),
            NetworkSpec::FigureEight(f) => f.validate(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutePosition {
    pub s: f64,
    pub lane: usize,
}

/// Bumper-to-bumper gap from `follower` to `leader`. A vehicle following
/// itself sees the whole route minus its own length.
pub fn gap_to_leader(follower: &VehicleState, leader: &VehicleState, length: f64) -> f64 {
    if follower.id == leader.id {
        return length - leader.length;
    }
    wrap(leader.s - follower.s, length) - leader.length
}

/// Index of the vehicle directly ahead of `vehicles[idx]` in its lane.
/// Returns `idx` itself when it is alone in the lane.
pub fn leader_of(idx: usize, vehicles: &[VehicleState], length: f64) -> usize {
    let me = &vehicles[idx];
    let mut best = idx;
    let mut best_dist = f64::INFINITY;
    for (j, other) in vehicles.iter().enumerate() {
        if j == idx || other.lane != me.lane {
            continue;
        }
        let d = wrap(other.s - me.s, length);
        if d > 0.0 && d < best_dist {
            best_dist = d;
            best = j;
        }
    }
    best
}

/// Leader index of every vehicle, computed per lane from a positional sort.
pub fn leader_table(vehicles: &[VehicleState], num_lanes: usize) -> Vec<usize> {
    let mut leaders = vec![0; vehicles.len()];
    let mut lane_members: Vec<usize> = Vec::with_capacity(vehicles.len());
    for lane in 0..num_lanes {
        lane_members.clear();
        lane_members.extend((0..vehicles.len()).filter(|&i| vehicles[i].lane == lane));
        lane_members.sort_by(|&a, &b| vehicles[a].s.total_cmp(&vehicles[b].s).then(a.cmp(&b)));
        let m = lane_members.len();
        for k in 0..m {
            leaders[lane_members[k]] = lane_members[(k + 1) % m];
        }
    }
    leaders
}

/// Whether a body with front bumper at `front` and the given length
/// overlaps `zone` on a route of length `route_length`.
pub fn body_overlaps(front: f64, body_length: f64, zone: Interval, route_length: f64) -> bool {
    extent_overlaps(front - body_length, front, zone, route_length)
}

/// Whether the route stretch `[rear, front]` (unwrapped, `rear <= front`)
/// overlaps `zone`.
pub fn extent_overlaps(rear: f64, front: f64, zone: Interval, route_length: f64) -> bool {
    (-1..=1).any(|k| {
        let shift = k as f64 * route_length;
        front > zone.start + shift && rear < zone.end + shift
    })
}

/// Which conflict arm, if any, the vehicle body currently overlaps.
pub fn conflict_arm(pos: RoutePosition, body_length: f64, spec: &FigureEightSpec) -> Option<usize> {
    spec.conflict_zones()
        .iter()
        .position(|z| body_overlaps(pos.s, body_length, *z, spec.total_length))
}

pub fn in_conflict_zone(pos: RoutePosition, body_length: f64, spec: &FigureEightSpec) -> bool {
    conflict_arm(pos, body_length, spec).is_some()
}
