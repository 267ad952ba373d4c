//! Episodic control environment over the engine: observations, reward and
//! reset/step lifecycle.

use crate::engine::{Controller, World};
use crate::error::{ConfigError, SimError};
use crate::network::wrap;
use crate::scenario::{LengthChoice, ObservationMode, RewardConfig, ScenarioConfig};

/// Local view of one AV: own velocity, leader velocity minus own, gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalObs {
    pub v: f64,
    pub dv: f64,
    pub gap: f64,
}

impl LocalObs {
    pub fn to_array(self) -> [f64; 3] {
        [self.v, self.dv, self.gap]
    }
}

/// Whole-fleet state in id order.
#[derive(Debug, Clone, PartialEq)]
pub struct FullObs {
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    /// Present on multi-lane networks.
    pub lanes: Option<Vec<f64>>,
    /// Vehicle indices of the controlled AVs.
    pub agents: Vec<usize>,
    /// Route length in the units of `positions`.
    pub length: f64,
}

impl FullObs {
    pub fn per_vehicle(&self) -> usize {
        if self.lanes.is_some() {
            3
        } else {
            2
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.positions.len() * self.per_vehicle());
        for j in 0..self.positions.len() {
            out.push(self.positions[j]);
            out.push(self.velocities[j]);
            if let Some(l) = &self.lanes {
                out.push(l[j]);
            }
        }
        out
    }

    /// The fleet seen from AV `agent`: vehicles listed from it onwards in id
    /// order; its own slot keeps the absolute position, the others carry
    /// their distance ahead of it.
    pub fn ego_features(&self, agent: usize, out: &mut Vec<f64>) {
        let n = self.positions.len();
        let i = self.agents[agent];
        let origin = self.positions[i];
        for k in 0..n {
            let j = (i + k) % n;
            let pos = if k == 0 {
                origin
            } else {
                wrap(self.positions[j] - origin, self.length)
            };
            out.push(pos);
            out.push(self.velocities[j]);
            if let Some(l) = &self.lanes {
                out.push(l[j]);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Partial(Vec<LocalObs>),
    Full(FullObs),
}

impl Observation {
    pub fn agents(&self) -> usize {
        match self {
            Observation::Partial(v) => v.len(),
            Observation::Full(f) => f.agents.len(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        match self {
            Observation::Partial(v) => v.iter().flat_map(|o| o.to_array()).collect(),
            Observation::Full(f) => f.flat(),
        }
    }
}

/// Mean fleet velocity minus the weighted mean squared AV acceleration,
/// plus the collision penalty on a colliding step.
pub fn reward(velocities: &[f64], av_accels: &[f64], collided: bool, cfg: &RewardConfig) -> f64 {
    let mean_v = velocities.iter().sum::<f64>() / velocities.len() as f64;
    let cost = if av_accels.is_empty() {
        0.0
    } else {
        av_accels.iter().map(|a| a * a).sum::<f64>() / av_accels.len() as f64
    };
    let mut r = mean_v - cfg.w_accel * cost;
    if collided {
        r += cfg.collision_penalty;
    }
    r
}

/// `Σ γ^t r_t`.
pub fn episode_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut discount = 1.0;
    for r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub collided: bool,
    /// The step ran under the warmup override.
    pub overridden: bool,
}

#[derive(Debug, Clone)]
pub struct Env {
    scenario: ScenarioConfig,
    world: Option<World>,
    automated: Vec<usize>,
    seed: u64,
}

impl Env {
    pub fn new(scenario: ScenarioConfig) -> Result<Self, ConfigError> {
        scenario.validate()?;
        Ok(Self {
            scenario,
            world: None,
            automated: Vec::new(),
            seed: 0,
        })
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    /// Starts an episode: draws the route length, places the fleet at rest
    /// and returns the first observation.
    pub fn reset(&mut self, seed: u64, length: LengthChoice) -> Result<Observation, ConfigError> {
        let l = self.scenario.draw_length(length, seed);
        let world = self.scenario.build_world(l, seed)?;
        self.automated = world
            .controllers()
            .iter()
            .enumerate()
            .filter(|(_, c)| !matches!(c, Controller::Idm))
            .map(|(i, _)| i)
            .collect();
        self.world = Some(world);
        self.seed = seed;
        Ok(self.observation())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn world(&self) -> &World {
        self.world.as_ref().expect("reset must be called first")
    }

    pub fn world_mut(&mut self) -> &mut World {
        self.world.as_mut().expect("reset must be called first")
    }

    /// Indices of all automated vehicles (any non-human controller).
    pub fn automated(&self) -> &[usize] {
        &self.automated
    }

    pub fn done(&self) -> bool {
        let w = self.world();
        w.collided || w.step_index >= w.sim().total_steps()
    }

    pub fn action_size(&self) -> usize {
        self.world().action_len()
    }

    pub fn observation_size(&self) -> usize {
        let w = self.world();
        match self.scenario.observation.mode {
            ObservationMode::Partial => 3 * w.external_indices().len(),
            ObservationMode::Full => w.vehicles.len() * if w.network.num_lanes() > 1 { 3 } else { 2 },
        }
    }

    /// Input width of a per-AV policy network.
    pub fn policy_input_dim(&self) -> usize {
        match self.scenario.observation.mode {
            ObservationMode::Partial => 3,
            ObservationMode::Full => self.observation_size(),
        }
    }

    pub fn observation(&self) -> Observation {
        let w = self.world();
        let norm = self.scenario.observation.normalize;
        let v_scale = if norm { 1.0 / w.idm().v0 } else { 1.0 };
        let length = w.length();
        let d_scale = if norm { 1.0 / length } else { 1.0 };
        match self.scenario.observation.mode {
            ObservationMode::Partial => {
                let gaps = w.gaps();
                Observation::Partial(
                    w.external_indices()
                        .iter()
                        .map(|&i| {
                            let v = w.vehicles[i].velocity;
                            let (gap, v_lead) = gaps[i];
                            LocalObs {
                                v: v * v_scale,
                                dv: (v_lead - v) * v_scale,
                                gap: gap * d_scale,
                            }
                        })
                        .collect(),
                )
            }
            ObservationMode::Full => Observation::Full(FullObs {
                positions: w.vehicles.iter().map(|v| v.s * d_scale).collect(),
                velocities: w.vehicles.iter().map(|v| v.velocity * v_scale).collect(),
                lanes: (w.network.num_lanes() > 1).then(|| w.vehicles.iter().map(|v| v.lane as f64).collect()),
                agents: w.external_indices().to_vec(),
                length: length * d_scale,
            }),
        }
    }

    /// Accelerations realised by the automated vehicles in the last step.
    pub fn av_accelerations(&self) -> Vec<f64> {
        let acc = self.world().last_accelerations();
        self.automated.iter().map(|&i| acc[i]).collect()
    }

    pub fn step(&mut self, actions: &[f64]) -> Result<Transition, SimError> {
        if self.done() {
            return Err(ConfigError::invalid("episode already finished; call reset").into());
        }
        let report = self.world_mut().step(actions)?;
        let velocities: Vec<f64> = self.world().vehicles.iter().map(|v| v.velocity).collect();
        let r = reward(&velocities, &self.av_accelerations(), report.collided, &self.scenario.reward);
        Ok(Transition {
            observation: self.observation(),
            reward: r,
            done: self.done(),
            collided: report.collided,
            overridden: report.overridden,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::uniform_flow_velocity;
    use crate::policy::PolicyArch;
    use crate::scenario::{AvConfig, AvControl, ObservationConfig, Placement};

    fn learned_ring(length: f64) -> ScenarioConfig {
        let mut s = ScenarioConfig::ring("t", length, 22);
        s.avs = AvConfig {
            count: 1,
            placement: Placement::Contiguous,
            control: AvControl::Learned {
                policy: PolicyArch::mlp_3x3(),
                lane_actions: false,
            },
            lane: 0,
        };
        s
    }

    #[test]
    fn reward_examples() {
        let cfg = RewardConfig::default();
        let v = vec![4.82; 22];
        assert!((reward(&v, &[0.0], false, &cfg) - 4.82).abs() < 1e-12);
        assert!((reward(&v, &[1.0], false, &cfg) - 3.82).abs() < 1e-12);
        let off = RewardConfig {
            w_accel: 0.0,
            ..cfg
        };
        assert_eq!(reward(&v, &[3.0], false, &off), v.iter().sum::<f64>() / 22.0);
        assert_eq!(reward(&[0.0; 5], &[0.0], false, &cfg), 0.0);
        assert!((reward(&v, &[0.0], true, &cfg) - (4.82 - 100.0)).abs() < 1e-12);
    }

    #[test]
    fn reward_is_label_invariant() {
        let cfg = RewardConfig::default();
        let v = [1.0, 2.5, 7.0, 3.25];
        let mut w = v;
        w.reverse();
        assert_eq!(reward(&v, &[0.3, -0.2], false, &cfg), reward(&w, &[-0.2, 0.3], false, &cfg));
    }

    #[test]
    fn returns() {
        assert_eq!(episode_return(&[2.0; 300], 1.0), 600.0);
        let g: f64 = 0.999;
        let expect = 2.0 * (1.0 - g.powi(300)) / (1.0 - g);
        assert!((episode_return(&[2.0; 300], g) - expect).abs() < 1e-9);
    }

    #[test]
    fn reset_places_fleet_and_reports_shapes() {
        let mut env = Env::new(learned_ring(230.0)).unwrap();
        let obs = env.reset(0, LengthChoice::Nominal).unwrap();
        let w = env.world();
        for (k, v) in w.vehicles.iter().enumerate() {
            assert!((v.s - k as f64 * 230.0 / 22.0).abs() < 1e-9);
            assert_eq!(v.velocity, 0.0);
        }
        assert_eq!(env.observation_size(), 3);
        assert_eq!(env.action_size(), 1);
        let Observation::Partial(o) = obs else { panic!() };
        assert!((o[0].gap - (230.0 / 22.0 - 5.0)).abs() < 1e-9);
    }

    #[test]
    fn train_reset_draws_from_range_deterministically() {
        let mut s = learned_ring(260.0);
        s.network = crate::scenario::NetworkConfig::Ring {
            length: 260.0,
            lanes: 1,
            train_range: Some([220.0, 270.0]),
            test_range: None,
        };
        let mut env = Env::new(s).unwrap();
        for seed in 0..20 {
            env.reset(seed, LengthChoice::Train).unwrap();
            let l = env.world().length();
            assert!((220.0..270.0).contains(&l));
            let first = env.world().vehicles.clone();
            env.reset(seed, LengthChoice::Train).unwrap();
            assert_eq!(first, env.world().vehicles);
        }
    }

    #[test]
    fn observation_shape_independent_of_length() {
        let mut env = Env::new(learned_ring(260.0)).unwrap();
        for l in [210.0, 260.0, 290.0] {
            let obs = env.reset(1, LengthChoice::Fixed(l)).unwrap();
            assert_eq!(obs.flat().len(), 3);
            for _ in 0..50 {
                let t = env.step(&[0.0]).unwrap();
                assert_eq!(t.observation.flat().len(), 3);
            }
        }
    }

    #[test]
    fn uniform_flow_zero_action_reward_is_v_star() {
        let mut s = learned_ring(260.0);
        s.idm = s.idm.noiseless();
        s.sim.warmup = 0.0;
        let eq = uniform_flow_velocity(260.0, 22, 5.0, &s.idm).unwrap();
        let mut env = Env::new(s).unwrap();
        env.reset(0, LengthChoice::Nominal).unwrap();
        for v in env.world_mut().vehicles.iter_mut() {
            v.velocity = eq.v_star;
        }
        let t = env.step(&[0.0]).unwrap();
        assert!((t.reward - eq.v_star).abs() < 1e-9, "{}", t.reward);
    }

    #[test]
    fn full_observation_layout() {
        let mut s = learned_ring(230.0);
        s.observation = ObservationConfig {
            mode: ObservationMode::Full,
            normalize: true,
        };
        let mut env = Env::new(s).unwrap();
        let obs = env.reset(0, LengthChoice::Nominal).unwrap();
        assert_eq!(env.observation_size(), 44);
        assert_eq!(obs.flat().len(), 44);
        let Observation::Full(f) = obs else { panic!() };
        let mut ego = Vec::new();
        f.ego_features(0, &mut ego);
        assert_eq!(ego.len(), 44);
        assert!((ego[2] - 1.0 / 22.0).abs() < 1e-12);
    }

    #[test]
    fn step_after_done_is_an_error() {
        let mut s = learned_ring(230.0);
        s.sim.warmup = 0.0;
        s.sim.horizon = 0.3;
        let mut env = Env::new(s).unwrap();
        env.reset(0, LengthChoice::Nominal).unwrap();
        for _ in 0..3 {
            env.step(&[0.0]).unwrap();
        }
        assert!(env.done());
        assert!(env.step(&[0.0]).is_err());
    }
}
