//! Synchronous time stepping of a closed-route vehicle population.
//!
//! Every step computes all accelerations from the state at time `t`, then
//! applies them at once with explicit Euler integration (`v` first, then
//! `s` with the new `v`). Figure-eight right-of-way and two-lane lane
//! changes run as sub-steps around the integration.

use serde::{Deserialize, Serialize};

use crate::control::{
    cmd_velocity_to_accel, follower_stopper_cmd, pi_saturation_cmd, FollowerStopperParams, PiSaturationParams,
    PiSaturationState, MODEL_BASED_ACCEL_BOUNDS,
};
use crate::dynamics::{apply_acceleration_noise, idm_acceleration, safe_velocity_cap, IdmParams, KinematicInput};
use crate::error::{ConfigError, SimError};
use crate::network::{
    body_overlaps, extent_overlaps, gap_to_leader, leader_table, wrap, FigureEightSpec, NetworkSpec,
};
use crate::rng::RngStreams;

/// Which control law drives a vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlTag {
    Human,
    FollowerStopper,
    PiSaturation,
    Learned,
}

impl ControlTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControlTag::Human => "human",
            ControlTag::FollowerStopper => "follower-stopper",
            ControlTag::PiSaturation => "pi-saturation",
            ControlTag::Learned => "learned",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "human" => Some(ControlTag::Human),
            "follower-stopper" => Some(ControlTag::FollowerStopper),
            "pi-saturation" => Some(ControlTag::PiSaturation),
            "learned" => Some(ControlTag::Learned),
            _ => None,
        }
    }

    pub fn is_automated(&self) -> bool {
        !matches!(self, ControlTag::Human)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub id: usize,
    /// Front-bumper route position, m, in `[0, L)`.
    pub s: f64,
    pub lane: usize,
    pub velocity: f64,
    pub length: f64,
    pub tag: ControlTag,
}

impl VehicleState {
    pub fn new(id: usize, s: f64, lane: usize, velocity: f64, length: f64, tag: ControlTag) -> Self {
        Self {
            id,
            s,
            lane,
            velocity,
            length,
            tag,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Step length, s.
    pub dt: f64,
    /// Initial period during which automated vehicles are driven by IDM, s.
    pub warmup: f64,
    /// Controlled period after warmup, s.
    pub horizon: f64,
    /// Bounds applied to externally supplied AV accelerations, m/s².
    pub accel_bounds: [f64; 2],
    /// Braking capability assumed by the velocity fail-safe, m/s².
    pub max_decel_failsafe: f64,
    /// Standstill distance the fail-safe keeps to the leader, m.
    #[serde(default = "default_failsafe_margin")]
    pub failsafe_margin: f64,
    /// Also apply the fail-safe to human drivers.
    #[serde(default)]
    pub human_failsafe: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            warmup: 75.0,
            horizon: 300.0,
            accel_bounds: [-1.0, 1.0],
            max_decel_failsafe: 4.5,
            failsafe_margin: default_failsafe_margin(),
            human_failsafe: false,
        }
    }
}

fn default_failsafe_margin() -> f64 {
    0.5
}

impl SimConfig {
    pub fn warmup_steps(&self) -> usize {
        (self.warmup / self.dt).round() as usize
    }

    pub fn horizon_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn total_steps(&self) -> usize {
        self.warmup_steps() + self.horizon_steps()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.dt > 0.0 && self.warmup >= 0.0 && self.horizon > 0.0) {
            return Err(ConfigError::invalid("sim requires dt > 0, warmup >= 0, horizon > 0"));
        }
        if !(self.accel_bounds[0] <= self.accel_bounds[1]) {
            return Err(ConfigError::invalid("sim.accel_bounds must be [lower, upper]"));
        }
        if !(self.max_decel_failsafe > 0.0) {
            return Err(ConfigError::invalid("sim.max_decel_failsafe must be > 0"));
        }
        if !(self.failsafe_margin >= 0.0) {
            return Err(ConfigError::invalid("sim.failsafe_margin must be >= 0"));
        }
        Ok(())
    }
}

/// Simplified MOBIL-style lane-change rule for two-lane rings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneChangeParams {
    /// Required acceleration gain in the target lane, m/s².
    pub incentive_threshold: f64,
    /// Largest deceleration a change may force on the new follower, m/s².
    pub safe_decel: f64,
    /// Minimum time between two changes of one vehicle, s.
    pub cooldown: f64,
}

impl Default for LaneChangeParams {
    fn default() -> Self {
        Self {
            incentive_threshold: 0.1,
            safe_decel: 2.0,
            cooldown: 3.0,
        }
    }
}

/// Runtime control law of one vehicle, with its memory.
#[derive(Debug, Clone, PartialEq)]
pub enum Controller {
    Idm,
    FollowerStopper(FollowerStopperParams),
    PiSaturation {
        params: PiSaturationParams,
        state: PiSaturationState,
    },
    /// Acceleration supplied by the caller each step.
    External,
}

impl Controller {
    pub fn tag(&self) -> ControlTag {
        match self {
            Controller::Idm => ControlTag::Human,
            Controller::FollowerStopper(_) => ControlTag::FollowerStopper,
            Controller::PiSaturation { .. } => ControlTag::PiSaturation,
            Controller::External => ControlTag::Learned,
        }
    }

    pub fn pi(params: PiSaturationParams) -> Self {
        Controller::PiSaturation {
            params,
            state: PiSaturationState::new(),
        }
    }
}

/// Holder of the figure-eight conflict zone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZoneLock {
    pub arm: usize,
    pub holder: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    pub collided: bool,
    pub overridden: bool,
}

#[derive(Debug, Clone)]
pub struct World {
    pub time: f64,
    pub step_index: usize,
    pub network: NetworkSpec,
    pub vehicles: Vec<VehicleState>,
    pub streams: RngStreams,
    pub conflict_lock: Option<ZoneLock>,
    pub collided: bool,
    controllers: Vec<Controller>,
    external: Vec<usize>,
    idm: IdmParams,
    sim: SimConfig,
    lane_change: LaneChangeParams,
    av_lane_actions: bool,
    last_lane_change: Vec<f64>,
    last_accel: Vec<f64>,
    last_lane_requests: Vec<bool>,
}

impl World {
    /// Builds a world; vehicle ids must equal their index.
    pub fn new(
        network: NetworkSpec,
        vehicles: Vec<VehicleState>,
        controllers: Vec<Controller>,
        idm: IdmParams,
        sim: SimConfig,
        lane_change: LaneChangeParams,
        seed: u64,
    ) -> Result<Self, ConfigError> {
        network.validate()?;
        idm.validate()?;
        sim.validate()?;
        if vehicles.is_empty() {
            return Err(ConfigError::invalid("at least one vehicle is required"));
        }
        if vehicles.len() != controllers.len() {
            return Err(ConfigError::invalid("one controller per vehicle is required"));
        }
        let length = network.length();
        for (i, v) in vehicles.iter().enumerate() {
            if v.id != i {
                return Err(ConfigError::invalid("vehicle ids must equal their index"));
            }
            if !(v.s >= 0.0 && v.s < length) || !(v.velocity >= 0.0) || v.lane >= network.num_lanes() {
                return Err(ConfigError::invalid(format!("vehicle {i} has an invalid state")));
            }
            if !(v.length > 0.0) {
                return Err(ConfigError::invalid("vehicle length must be > 0"));
            }
        }
        let leaders = leader_table(&vehicles, network.num_lanes());
        for (i, &l) in leaders.iter().enumerate() {
            if gap_to_leader(&vehicles[i], &vehicles[l], length) <= 0.0 {
                return Err(ConfigError::infeasible(format!(
                    "vehicle {i} overlaps its leader at initialization"
                )));
            }
        }
        let mut vehicles = vehicles;
        for (v, c) in vehicles.iter_mut().zip(&controllers) {
            v.tag = c.tag();
        }
        let external = (0..vehicles.len())
            .filter(|&i| matches!(controllers[i], Controller::External))
            .collect();
        let n = vehicles.len();
        let mut world = World {
            time: 0.0,
            step_index: 0,
            network,
            vehicles,
            streams: RngStreams::new(seed),
            conflict_lock: None,
            collided: false,
            controllers,
            external,
            idm,
            sim,
            lane_change,
            av_lane_actions: false,
            last_lane_change: vec![f64::NEG_INFINITY; n],
            last_accel: vec![0.0; n],
            last_lane_requests: vec![false; n],
        };
        if let Some(spec) = network.figure_eight() {
            world.conflict_lock = world.initial_lock(spec)?;
        }
        Ok(world)
    }

    /// Lets externally driven vehicles request lane changes: each then
    /// takes two action values, `[accel, lane_signal]`, and a signal above
    /// 0.5 asks to move to the other lane.
    pub fn with_av_lane_actions(mut self, enabled: bool) -> Self {
        self.av_lane_actions = enabled && self.network.num_lanes() == 2;
        self
    }

    pub fn sim(&self) -> &SimConfig {
        &self.sim
    }

    pub fn idm(&self) -> &IdmParams {
        &self.idm
    }

    pub fn length(&self) -> f64 {
        self.network.length()
    }

    pub fn controllers(&self) -> &[Controller] {
        &self.controllers
    }

    /// Indices of externally driven vehicles, in id order.
    pub fn external_indices(&self) -> &[usize] {
        &self.external
    }

    pub fn action_dim_per_vehicle(&self) -> usize {
        if self.av_lane_actions {
            2
        } else {
            1
        }
    }

    pub fn action_len(&self) -> usize {
        self.external.len() * self.action_dim_per_vehicle()
    }

    /// Accelerations realised during the most recent step.
    pub fn last_accelerations(&self) -> &[f64] {
        &self.last_accel
    }

    pub fn in_warmup(&self) -> bool {
        self.step_index < self.sim.warmup_steps()
    }

    pub fn leaders(&self) -> Vec<usize> {
        leader_table(&self.vehicles, self.network.num_lanes())
    }

    /// `(gap, leader velocity)` for every vehicle.
    pub fn gaps(&self) -> Vec<(f64, f64)> {
        let length = self.length();
        self.leaders()
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                (
                    gap_to_leader(&self.vehicles[i], &self.vehicles[l], length),
                    self.vehicles[l].velocity,
                )
            })
            .collect()
    }

    pub fn min_gap(&self) -> f64 {
        self.gaps().iter().map(|g| g.0).fold(f64::INFINITY, f64::min)
    }

    pub fn mean_velocity(&self) -> f64 {
        self.vehicles.iter().map(|v| v.velocity).sum::<f64>() / self.vehicles.len() as f64
    }

    fn initial_lock(&self, spec: &FigureEightSpec) -> Result<Option<ZoneLock>, ConfigError> {
        let zones = spec.conflict_zones();
        let mut lock: Option<ZoneLock> = None;
        for v in &self.vehicles {
            for (arm, z) in zones.iter().enumerate() {
                if body_overlaps(v.s, v.length, *z, spec.total_length) {
                    match lock {
                        None => lock = Some(ZoneLock { arm, holder: v.id }),
                        Some(l) if l.arm == arm => {}
                        Some(_) => {
                            return Err(ConfigError::infeasible(
                                "vehicles occupy both conflict arms at initialization",
                            ))
                        }
                    }
                }
            }
        }
        Ok(lock)
    }

    /// Advances the world by one step. `actions` holds one acceleration per
    /// externally driven vehicle (two values each with lane actions
    /// enabled); they are ignored while the warmup override is active.
    pub fn step(&mut self, actions: &[f64]) -> Result<StepReport, SimError> {
        if actions.len() != self.action_len() {
            return Err(SimError::ActionCount {
                expected: self.action_len(),
                got: actions.len(),
            });
        }
        if let Some(&bad) = actions.iter().find(|a| !a.is_finite()) {
            return Err(SimError::NonFiniteAction(bad));
        }
        let overridden = self.in_warmup();
        let n = self.vehicles.len();
        let dt = self.sim.dt;
        let length = self.length();
        let gaps = self.gaps();
        let stride = self.action_dim_per_vehicle();

        let mut new_v = vec![0.0; n];
        let mut ext_k = 0;
        for i in 0..n {
            let v = self.vehicles[i].velocity;
            let (gap, v_lead) = gaps[i];
            let automated_active = !overridden && !matches!(self.controllers[i], Controller::Idm);
            let use_idm = overridden || matches!(self.controllers[i], Controller::Idm);
            let accel = if use_idm {
                if let Controller::PiSaturation { params, state } = &mut self.controllers[i] {
                    state.observe(v, params.window);
                }
                let a = idm_acceleration(KinematicInput::new(gap, v - v_lead, v), &self.idm)?;
                apply_acceleration_noise(a, &mut self.streams.noise, self.idm.noise_std)
            } else {
                match &mut self.controllers[i] {
                    Controller::FollowerStopper(p) => {
                        let cmd = follower_stopper_cmd(v, v_lead, gap, p);
                        cmd_velocity_to_accel(cmd, v, dt, MODEL_BASED_ACCEL_BOUNDS)
                    }
                    Controller::PiSaturation { params, state } => {
                        let cmd = pi_saturation_cmd(state, v, v_lead, gap, params);
                        cmd_velocity_to_accel(cmd, v, dt, MODEL_BASED_ACCEL_BOUNDS)
                    }
                    Controller::External => {
                        actions[ext_k * stride].clamp(self.sim.accel_bounds[0], self.sim.accel_bounds[1])
                    }
                    Controller::Idm => unreachable!("handled above"),
                }
            };
            if matches!(self.controllers[i], Controller::External) {
                ext_k += 1;
            }
            let mut target = v + accel * dt;
            if automated_active || self.sim.human_failsafe {
                target = target.min(safe_velocity_cap(gap - self.sim.failsafe_margin, v_lead, self.sim.max_decel_failsafe, dt));
            }
            new_v[i] = target.max(0.0);
        }

        if let Some(spec) = self.network.figure_eight().copied() {
            self.right_of_way_step(&spec, &mut new_v);
        }

        for i in 0..n {
            let veh = &mut self.vehicles[i];
            self.last_accel[i] = (new_v[i] - veh.velocity) / dt;
            veh.velocity = new_v[i];
            veh.s = wrap(veh.s + new_v[i] * dt, length);
        }

        if let Some(spec) = self.network.figure_eight().copied() {
            self.release_lock(&spec);
        }

        if self.network.num_lanes() == 2 {
            for r in self.last_lane_requests.iter_mut() {
                *r = false;
            }
            if self.av_lane_actions && !overridden {
                for (k, &i) in self.external.iter().enumerate() {
                    self.last_lane_requests[i] = actions[k * stride + 1] > 0.5;
                }
            }
            self.lane_change_step();
        }

        self.time = (self.step_index + 1) as f64 * dt;
        self.step_index += 1;
        self.collided = self.min_gap() <= 0.0;
        Ok(StepReport {
            collided: self.collided,
            overridden,
        })
    }

    /// First-come-first-served arbitration of the figure-eight conflict
    /// zone. Operates on the tentative post-step velocities.
    pub fn right_of_way_step(&mut self, spec: &FigureEightSpec, new_v: &mut [f64]) {
        let zones = spec.conflict_zones();
        let length = spec.total_length;
        let dt = self.sim.dt;
        let occupying = |v: &VehicleState| zones.iter().position(|z| body_overlaps(v.s, v.length, *z, length));

        // vehicles approaching an arm the lock excludes brake to stop short of it
        if let Some(lock) = self.conflict_lock {
            let blocked = zones[1 - lock.arm];
            for (i, v) in self.vehicles.iter().enumerate() {
                if occupying(v).is_some() {
                    continue;
                }
                let d = wrap(blocked.start - v.s, length);
                if d < length / 2.0 {
                    let cap = safe_velocity_cap(d, 0.0, self.sim.max_decel_failsafe, dt);
                    new_v[i] = new_v[i].min(cap);
                }
            }
        }

        // entrants in id order; same-step ties go to the lower id
        for i in 0..self.vehicles.len() {
            let v = self.vehicles[i];
            let current = occupying(&v);
            let reach = v.s + new_v[i] * dt;
            for (arm, zone) in zones.iter().enumerate() {
                if current == Some(arm) || !extent_overlaps(v.s - v.length, reach, *zone, length) {
                    continue;
                }
                match self.conflict_lock {
                    None => self.conflict_lock = Some(ZoneLock { arm, holder: i }),
                    Some(lock) if lock.arm == arm => {}
                    Some(_) => {
                        let d = wrap(zone.start - v.s, length);
                        new_v[i] = new_v[i].min((d / dt) * (1.0 - 1e-9)).max(0.0);
                    }
                }
            }
        }
    }

    fn release_lock(&mut self, spec: &FigureEightSpec) {
        let Some(lock) = self.conflict_lock else { return };
        let zone = spec.conflict_zones()[lock.arm];
        let length = spec.total_length;
        let holder = &self.vehicles[lock.holder];
        if body_overlaps(holder.s, holder.length, zone, length) {
            return;
        }
        // hand over to the same-arm occupant furthest into the zone
        let next = self
            .vehicles
            .iter()
            .filter(|v| body_overlaps(v.s, v.length, zone, length))
            .max_by(|a, b| {
                wrap(a.s - zone.start, length)
                    .total_cmp(&wrap(b.s - zone.start, length))
                    .then(b.id.cmp(&a.id))
            })
            .map(|v| v.id);
        self.conflict_lock = next.map(|holder| ZoneLock { arm: lock.arm, holder });
    }

    /// Whether the lock invariant holds: no two arms occupied at once, and
    /// any occupied arm is the locked one.
    pub fn zone_exclusive(&self) -> bool {
        let Some(spec) = self.network.figure_eight() else {
            return true;
        };
        let zones = spec.conflict_zones();
        let occupied: Vec<bool> = zones
            .iter()
            .map(|z| {
                self.vehicles
                    .iter()
                    .any(|v| body_overlaps(v.s, v.length, *z, spec.total_length))
            })
            .collect();
        match self.conflict_lock {
            None => !occupied[0] && !occupied[1],
            Some(lock) => !occupied[1 - lock.arm],
        }
    }

    /// Lane changes on a two-lane ring, applied in position order with at
    /// most one change per vehicle. Humans use the incentive/safety rule;
    /// externally driven vehicles change on request when it is safe.
    pub fn lane_change_step(&mut self) {
        if self.network.num_lanes() != 2 {
            return;
        }
        let length = self.length();
        let mut order: Vec<usize> = (0..self.vehicles.len()).collect();
        order.sort_by(|&a, &b| {
            self.vehicles[a]
                .s
                .total_cmp(&self.vehicles[b].s)
                .then(a.cmp(&b))
        });
        let now = self.time + self.sim.dt;
        for i in order {
            if now - self.last_lane_change[i] < self.lane_change.cooldown {
                continue;
            }
            let target = 1 - self.vehicles[i].lane;
            let decision = match self.controllers[i] {
                Controller::External if !self.in_warmup() => {
                    self.last_lane_requests[i] && self.change_is_safe(i, target, length)
                }
                Controller::External => false,
                _ => self.wants_lane_change(i, target, length),
            };
            if decision {
                self.vehicles[i].lane = target;
                self.last_lane_change[i] = now;
            }
        }
    }

    /// `(leader, follower)` of a hypothetical vehicle `i` placed in `lane`.
    fn lane_neighbors(&self, i: usize, lane: usize, length: f64) -> (Option<usize>, Option<usize>) {
        let me = &self.vehicles[i];
        let mut ahead: Option<(f64, usize)> = None;
        let mut behind: Option<(f64, usize)> = None;
        for (j, o) in self.vehicles.iter().enumerate() {
            if j == i || o.lane != lane {
                continue;
            }
            let d_ahead = wrap(o.s - me.s, length);
            let d_behind = wrap(me.s - o.s, length);
            if ahead.is_none_or(|(d, _)| d_ahead < d) {
                ahead = Some((d_ahead, j));
            }
            if behind.is_none_or(|(d, _)| d_behind < d) {
                behind = Some((d_behind, j));
            }
        }
        (ahead.map(|a| a.1), behind.map(|b| b.1))
    }

    fn gap_between(&self, follower: usize, leader: Option<usize>, length: f64) -> (f64, f64) {
        let me = &self.vehicles[follower];
        match leader {
            Some(l) => {
                let lv = &self.vehicles[l];
                (wrap(lv.s - me.s, length) - lv.length, lv.velocity)
            }
            None => (length - me.length, me.velocity),
        }
    }

    fn idm_noiseless(&self, gap: f64, v: f64, v_lead: f64) -> Option<f64> {
        idm_acceleration(KinematicInput::new(gap, v - v_lead, v), &self.idm).ok()
    }

    fn change_is_safe(&self, i: usize, target: usize, length: f64) -> bool {
        let (lead, follow) = self.lane_neighbors(i, target, length);
        let (gap_ahead, _) = self.gap_between(i, lead, length);
        if gap_ahead <= 0.0 {
            return false;
        }
        if let Some(f) = follow {
            let me = &self.vehicles[i];
            let fv = &self.vehicles[f];
            let gap_behind = wrap(me.s - fv.s, length) - me.length;
            if gap_behind <= 0.0 {
                return false;
            }
            match self.idm_noiseless(gap_behind, fv.velocity, me.velocity) {
                Some(a) if a >= -self.lane_change.safe_decel => {}
                _ => return false,
            }
        }
        true
    }

    fn wants_lane_change(&self, i: usize, target: usize, length: f64) -> bool {
        if !self.change_is_safe(i, target, length) {
            return false;
        }
        let me = &self.vehicles[i];
        let (cur_lead, _) = self.lane_neighbors(i, me.lane, length);
        let (gap_cur, vl_cur) = self.gap_between(i, cur_lead, length);
        let (new_lead, _) = self.lane_neighbors(i, target, length);
        let (gap_new, vl_new) = self.gap_between(i, new_lead, length);
        let (Some(a_cur), Some(a_new)) = (
            self.idm_noiseless(gap_cur, me.velocity, vl_cur),
            self.idm_noiseless(gap_new, me.velocity, vl_new),
        ) else {
            return false;
        };
        a_new - a_cur > self.lane_change.incentive_threshold
    }
}
