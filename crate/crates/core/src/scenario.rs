//! Scenario description and world construction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::control::{FollowerStopperParams, PiSaturationParams};
use crate::dynamics::IdmParams;
use crate::engine::{ControlTag, Controller, LaneChangeParams, SimConfig, VehicleState, World};
use crate::error::ConfigError;
use crate::network::{FigureEightSpec, NetworkSpec, RingSpec};
use crate::policy::PolicyArch;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NetworkConfig {
    Ring {
        /// Nominal track length, m.
        length: f64,
        lanes: usize,
        /// Range sampled from at training resets, m.
        #[serde(default)]
        train_range: Option<[f64; 2]>,
        /// Range used by generalisation evaluations, m.
        #[serde(default)]
        test_range: Option<[f64; 2]>,
    },
    FigureEight {
        loop_radius: f64,
        total_length: f64,
        zone_length: f64,
    },
}

impl NetworkConfig {
    pub fn ring(length: f64) -> Self {
        NetworkConfig::Ring {
            length,
            lanes: 1,
            train_range: None,
            test_range: None,
        }
    }

    pub fn nominal_length(&self) -> f64 {
        match self {
            NetworkConfig::Ring { length, .. } => *length,
            NetworkConfig::FigureEight { total_length, .. } => *total_length,
        }
    }

    pub fn lanes(&self) -> usize {
        match self {
            NetworkConfig::Ring { lanes, .. } => *lanes,
            NetworkConfig::FigureEight { .. } => 1,
        }
    }

    pub fn is_ring(&self) -> bool {
        matches!(self, NetworkConfig::Ring { .. })
    }

    /// Geometry for one episode with the given route length (rings only;
    /// the figure-eight length is fixed).
    pub fn resolve(&self, length: f64) -> NetworkSpec {
        match *self {
            NetworkConfig::Ring { lanes, .. } => NetworkSpec::Ring(RingSpec {
                length,
                num_lanes: lanes,
            }),
            NetworkConfig::FigureEight {
                loop_radius,
                total_length,
                zone_length,
            } => NetworkSpec::FigureEight(FigureEightSpec {
                loop_radius,
                total_length,
                zone_length,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    /// AVs take consecutive slots starting at slot 0.
    Contiguous,
    /// AVs are spread evenly through the fleet.
    Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AvControl {
    Idm,
    FollowerStopper {
        #[serde(default)]
        params: FollowerStopperParams,
    },
    PiSaturation {
        #[serde(default)]
        params: PiSaturationParams,
    },
    Learned {
        policy: PolicyArch,
        /// AVs also emit a lane-change signal (two-lane rings).
        #[serde(default)]
        lane_actions: bool,
    },
}

impl AvControl {
    pub fn is_learned(&self) -> bool {
        matches!(self, AvControl::Learned { .. })
    }

    fn controller(&self) -> Controller {
        match self {
            AvControl::Idm => Controller::Idm,
            AvControl::FollowerStopper { params } => Controller::FollowerStopper(*params),
            AvControl::PiSaturation { params } => Controller::pi(*params),
            AvControl::Learned { .. } => Controller::External,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvConfig {
    pub count: usize,
    pub placement: Placement,
    pub control: AvControl,
    /// Lane holding the AVs on multi-lane rings.
    #[serde(default)]
    pub lane: usize,
}

impl AvConfig {
    pub fn none() -> Self {
        Self {
            count: 0,
            placement: Placement::Contiguous,
            control: AvControl::Idm,
            lane: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationMode {
    /// Per AV: own velocity, leader relative velocity, gap.
    Partial,
    /// Every vehicle's position and velocity (and lane on multi-lane rings).
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationConfig {
    pub mode: ObservationMode,
    /// Scale velocities by `v0` and distances by the route length.
    pub normalize: bool,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            mode: ObservationMode::Partial,
            normalize: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    /// Weight on the mean squared AV acceleration.
    pub w_accel: f64,
    /// Added to the reward of a step that ends in a collision.
    pub collision_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            w_accel: 1.0,
            collision_penalty: -100.0,
        }
    }
}

/// How the episode's route length is chosen at reset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LengthChoice {
    Nominal,
    /// Uniform draw from the training range (nominal if none).
    Train,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub network: NetworkConfig,
    pub num_vehicles: usize,
    pub vehicle_length: f64,
    pub avs: AvConfig,
    pub idm: IdmParams,
    pub sim: SimConfig,
    pub reward: RewardConfig,
    pub observation: ObservationConfig,
    #[serde(default)]
    pub lane_change: LaneChangeParams,
}

impl ScenarioConfig {
    /// Single-lane ring with `n` IDM vehicles and the default settings.
    pub fn ring(name: &str, length: f64, n: usize) -> Self {
        Self {
            name: name.to_string(),
            network: NetworkConfig::ring(length),
            num_vehicles: n,
            vehicle_length: 5.0,
            avs: AvConfig::none(),
            idm: IdmParams::default(),
            sim: SimConfig::default(),
            reward: RewardConfig::default(),
            observation: ObservationConfig::default(),
            lane_change: LaneChangeParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.idm.validate()?;
        self.sim.validate()?;
        if self.num_vehicles == 0 {
            return Err(ConfigError::invalid("num_vehicles must be >= 1"));
        }
        if !(self.vehicle_length > 0.0) {
            return Err(ConfigError::invalid("vehicle_length must be > 0"));
        }
        if self.avs.count > self.num_vehicles {
            return Err(ConfigError::invalid("more AVs than vehicles"));
        }
        if self.reward.w_accel < 0.0 {
            return Err(ConfigError::invalid("reward.w_accel must be >= 0"));
        }
        let lanes = self.network.lanes();
        if !(1..=2).contains(&lanes) {
            return Err(ConfigError::invalid("lanes must be 1 or 2"));
        }
        if self.num_vehicles % lanes != 0 {
            return Err(ConfigError::invalid("num_vehicles must divide evenly among lanes"));
        }
        if self.avs.lane >= lanes {
            return Err(ConfigError::invalid("avs.lane out of range"));
        }
        if self.avs.count > self.num_vehicles / lanes {
            return Err(ConfigError::invalid("AVs must fit in their lane"));
        }
        match &self.avs.control {
            AvControl::FollowerStopper { params } => params.validate()?,
            AvControl::PiSaturation { params } => params.validate()?,
            AvControl::Learned { policy, lane_actions } => {
                policy.validate()?;
                if *lane_actions && lanes != 2 {
                    return Err(ConfigError::invalid("lane_actions require a two-lane ring"));
                }
            }
            AvControl::Idm => {}
        }
        if let NetworkConfig::Ring {
            train_range,
            test_range,
            ..
        } = &self.network
        {
            for r in [train_range, test_range].into_iter().flatten() {
                if !(r[0] > 0.0 && r[0] <= r[1]) {
                    return Err(ConfigError::invalid("length ranges must be [lo, hi] with 0 < lo <= hi"));
                }
            }
        }
        self.network.resolve(self.network.nominal_length()).validate()
    }

    pub fn has_learned_avs(&self) -> bool {
        self.avs.count > 0 && self.avs.control.is_learned()
    }

    pub fn lane_actions(&self) -> bool {
        matches!(self.avs.control, AvControl::Learned { lane_actions: true, .. })
    }

    /// Route length for an episode seeded with `seed`.
    pub fn draw_length(&self, choice: LengthChoice, seed: u64) -> f64 {
        match (choice, &self.network) {
            (LengthChoice::Fixed(l), NetworkConfig::Ring { .. }) => l,
            (
                LengthChoice::Train,
                NetworkConfig::Ring {
                    train_range: Some([lo, hi]),
                    ..
                },
            ) => {
                if lo == hi {
                    *lo
                } else {
                    rng::stream(seed, "track-length").random_range(*lo..*hi)
                }
            }
            _ => self.network.nominal_length(),
        }
    }

    /// Indices of the AV slots.
    pub fn av_indices(&self) -> Vec<usize> {
        let per_lane = self.num_vehicles / self.network.lanes();
        let m = self.avs.count;
        match self.avs.placement {
            Placement::Contiguous => (0..m).collect(),
            Placement::Spread => (0..m).map(|k| k * per_lane / m.max(1)).collect(),
        }
    }

    /// Evenly spaced fleet at rest, AVs in their configured slots. Vehicle
    /// ids follow slot order: the AV lane first, front to back along the
    /// direction of travel.
    pub fn build_world(&self, length: f64, seed: u64) -> Result<World, ConfigError> {
        self.validate()?;
        let network = self.network.resolve(length);
        let lanes = network.num_lanes();
        let per_lane = self.num_vehicles / lanes;
        let spacing = network.length() / per_lane as f64;
        if spacing <= self.vehicle_length {
            return Err(ConfigError::infeasible(format!(
                "{} vehicles of {} m do not fit on {} m",
                per_lane,
                self.vehicle_length,
                network.length()
            )));
        }
        let av_slots = self.av_indices();
        let mut lane_order = vec![self.avs.lane];
        lane_order.extend((0..lanes).filter(|&l| l != self.avs.lane));
        let mut vehicles = Vec::with_capacity(self.num_vehicles);
        let mut controllers = Vec::with_capacity(self.num_vehicles);
        for (li, &lane) in lane_order.iter().enumerate() {
            // stagger lanes by half a slot
            let offset = if lane == 0 { 0.0 } else { spacing / 2.0 };
            for k in 0..per_lane {
                let id = vehicles.len();
                let is_av = li == 0 && av_slots.contains(&k);
                let controller = if is_av {
                    self.avs.control.controller()
                } else {
                    Controller::Idm
                };
                vehicles.push(VehicleState::new(
                    id,
                    offset + k as f64 * spacing,
                    lane,
                    0.0,
                    self.vehicle_length,
                    ControlTag::Human,
                ));
                controllers.push(controller);
            }
        }
        World::new(network, vehicles, controllers, self.idm, self.sim, self.lane_change, seed)
            .map(|w| w.with_av_lane_actions(self.lane_actions()))
    }
}
