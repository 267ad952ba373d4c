//! Full-episode rollouts: the warmup/activation protocol, trajectory logs and
//! summary metrics.

use std::io::{self, Write};

use sha2::{Digest, Sha256};

use crate::engine::ControlTag;
use crate::env::{episode_return, Env, Observation};
use crate::error::{PolicyError, SimError};
use crate::output::fmt_float;
use crate::policy::PolicyRunner;
use crate::scenario::{LengthChoice, ScenarioConfig};

/// Source of AV actions for externally driven vehicles.
pub trait AvPolicy {
    fn reset(&mut self, agents: usize);
    /// Writes the actions for every AV, concatenated, into `out`.
    fn act(&mut self, obs: &Observation, out: &mut Vec<f64>) -> Result<(), PolicyError>;
}

impl AvPolicy for PolicyRunner {
    fn reset(&mut self, agents: usize) {
        PolicyRunner::reset(self, agents)
    }

    fn act(&mut self, obs: &Observation, out: &mut Vec<f64>) -> Result<(), PolicyError> {
        PolicyRunner::act(self, obs, out)
    }
}

/// Zero action for every AV (coasting, no lane-change requests).
#[derive(Debug, Clone, Copy)]
pub struct ZeroPolicy {
    pub per_agent: usize,
}

impl AvPolicy for ZeroPolicy {
    fn reset(&mut self, _agents: usize) {}

    fn act(&mut self, obs: &Observation, out: &mut Vec<f64>) -> Result<(), PolicyError> {
        out.clear();
        out.resize(obs.agents() * self.per_agent, 0.0);
        Ok(())
    }
}

/// Adapts a closure `(observation, out)`.
pub struct FnPolicy<F>(pub F);

impl<F> AvPolicy for FnPolicy<F>
where
    F: FnMut(&Observation, &mut Vec<f64>),
{
    fn reset(&mut self, _agents: usize) {}

    fn act(&mut self, obs: &Observation, out: &mut Vec<f64>) -> Result<(), PolicyError> {
        (self.0)(obs, out);
        Ok(())
    }
}

/// Scalar results of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub length: f64,
    pub steps: usize,
    pub warmup_steps: usize,
    pub collided: bool,
    /// Mean over all vehicle samples in the final averaging window.
    pub mean_velocity_final: f64,
    /// Standard deviation over the same samples.
    pub std_velocity_final: f64,
    pub min_velocity: f64,
    pub min_velocity_final: f64,
    /// Per-step rewards, warmup included.
    pub rewards: Vec<f64>,
}

impl EpisodeSummary {
    /// Rewards of the post-warmup steps.
    pub fn controlled_rewards(&self) -> &[f64] {
        &self.rewards[self.warmup_steps.min(self.rewards.len())..]
    }

    pub fn episode_return(&self, gamma: f64) -> f64 {
        episode_return(self.controlled_rewards(), gamma)
    }
}

/// Per-step trajectory of every vehicle. Row `k` holds the state after
/// step `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub scenario: String,
    pub seed: u64,
    pub dt: f64,
    pub num_vehicles: usize,
    pub tags: Vec<ControlTag>,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub accelerations: Vec<f64>,
    pub lanes: Vec<usize>,
    pub overridden: Vec<bool>,
    pub summary: EpisodeSummary,
}

pub const EPISODE_CSV_HEADER: &str = "step,time,vehicle_id,lane,position,velocity,acceleration,tag";

impl EpisodeLog {
    pub fn steps(&self) -> usize {
        self.positions.len() / self.num_vehicles.max(1)
    }

    pub fn rows(&self) -> usize {
        self.positions.len()
    }

    /// Writes the engine CSV schema; `preamble` lines are emitted first as
    /// `#` comments.
    pub fn write_csv<W: Write>(&self, w: &mut W, preamble: &[String]) -> io::Result<()> {
        for line in preamble {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "{EPISODE_CSV_HEADER}")?;
        let n = self.num_vehicles;
        for k in 0..self.steps() {
            let step = k + 1;
            let time = fmt_float(step as f64 * self.dt);
            for i in 0..n {
                let r = k * n + i;
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    step,
                    time,
                    i,
                    self.lanes[r],
                    fmt_float(self.positions[r]),
                    fmt_float(self.velocities[r]),
                    fmt_float(self.accelerations[r]),
                    self.tags[i].as_str()
                )?;
            }
        }
        Ok(())
    }

    /// SHA-256 of the CSV body (no preamble).
    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, &[]).expect("writing to memory");
        hex::encode(Sha256::digest(&buf))
    }
}

/// Accumulates the summary while stepping.
struct Tracker {
    window_start: usize,
    window: Vec<f64>,
    min_all: f64,
    min_final: f64,
}

impl Tracker {
    fn new(total_steps: usize, window_steps: usize) -> Self {
        Self {
            window_start: total_steps.saturating_sub(window_steps),
            window: Vec::new(),
            min_all: f64::INFINITY,
            min_final: f64::INFINITY,
        }
    }

    fn observe(&mut self, step: usize, velocities: impl Iterator<Item = f64>) {
        for v in velocities {
            self.min_all = self.min_all.min(v);
            if step >= self.window_start {
                self.min_final = self.min_final.min(v);
                self.window.push(v);
            }
        }
    }
}

/// Length of the final averaging window, s.
pub const FINAL_WINDOW: f64 = 100.0;

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn simulate(
    scenario: &ScenarioConfig,
    length: LengthChoice,
    seed: u64,
    policy: Option<&mut dyn AvPolicy>,
    max_steps: Option<usize>,
    mut log: Option<&mut EpisodeLog>,
) -> Result<EpisodeSummary, SimError> {
    let mut env = Env::new(scenario.clone())?;
    let mut obs = env.reset(seed, length)?;
    let agents = env.world().external_indices().len();
    let per_agent = env.world().action_dim_per_vehicle();
    let mut zero = ZeroPolicy { per_agent };
    let policy: &mut dyn AvPolicy = match policy {
        Some(p) => p,
        None if agents == 0 => &mut zero,
        None => {
            return Err(PolicyError::Format(format!(
                "scenario `{}` has learned AVs but no policy was given",
                scenario.name
            ))
            .into())
        }
    };
    policy.reset(agents);

    let sim = *env.world().sim();
    let total = max_steps.unwrap_or(sim.total_steps()).min(sim.total_steps());
    let window_steps = (FINAL_WINDOW / sim.dt).round() as usize;
    let mut tracker = Tracker::new(total, window_steps);
    let mut rewards = Vec::with_capacity(total);
    let mut actions = Vec::with_capacity(env.action_size());
    let mut collided = false;
    let mut steps = 0;
    while steps < total {
        policy.act(&obs, &mut actions)?;
        let t = env.step(&actions)?;
        steps += 1;
        let w = env.world();
        tracker.observe(steps - 1, w.vehicles.iter().map(|v| v.velocity));
        rewards.push(t.reward);
        if let Some(log) = log.as_deref_mut() {
            let acc = w.last_accelerations();
            for (i, v) in w.vehicles.iter().enumerate() {
                log.positions.push(v.s);
                log.velocities.push(v.velocity);
                log.accelerations.push(acc[i]);
                log.lanes.push(v.lane);
            }
            log.overridden.push(t.overridden);
        }
        obs = t.observation;
        if t.collided {
            collided = true;
            break;
        }
    }
    let (mean, std) = mean_std(&tracker.window);
    Ok(EpisodeSummary {
        seed,
        length: env.world().length(),
        steps,
        warmup_steps: sim.warmup_steps(),
        collided,
        mean_velocity_final: mean,
        std_velocity_final: std,
        min_velocity: tracker.min_all,
        min_velocity_final: tracker.min_final,
        rewards,
    })
}

/// Runs an episode without recording the trajectory.
pub fn rollout(
    scenario: &ScenarioConfig,
    length: LengthChoice,
    seed: u64,
    policy: Option<&mut dyn AvPolicy>,
) -> Result<EpisodeSummary, SimError> {
    simulate(scenario, length, seed, policy, None, None)
}

/// Runs an episode (or its first `max_steps` steps) and records every
/// vehicle at every step. A collision ends the log early.
pub fn run_episode(
    scenario: &ScenarioConfig,
    length: LengthChoice,
    seed: u64,
    policy: Option<&mut dyn AvPolicy>,
    max_steps: Option<usize>,
) -> Result<EpisodeLog, SimError> {
    let probe = scenario.build_world(scenario.draw_length(length, seed), seed)?;
    let mut log = EpisodeLog {
        scenario: scenario.name.clone(),
        seed,
        dt: scenario.sim.dt,
        num_vehicles: probe.vehicles.len(),
        tags: probe.vehicles.iter().map(|v| v.tag).collect(),
        positions: Vec::new(),
        velocities: Vec::new(),
        accelerations: Vec::new(),
        lanes: Vec::new(),
        overridden: Vec::new(),
        summary: EpisodeSummary {
            seed,
            length: 0.0,
            steps: 0,
            warmup_steps: 0,
            collided: false,
            mean_velocity_final: f64::NAN,
            std_velocity_final: f64::NAN,
            min_velocity: f64::NAN,
            min_velocity_final: f64::NAN,
            rewards: Vec::new(),
        },
    };
    log.summary = simulate(scenario, length, seed, policy, max_steps, Some(&mut log))?;
    Ok(log)
}
