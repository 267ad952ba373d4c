//! Rollout-based policy scoring shared by training and evaluation.

use rayon::prelude::*;

use super::{Featurizer, PolicyRunner, PolicySpec};
use crate::episode::{mean_std, rollout, EpisodeSummary};
use crate::error::{ConfigError, SimError};
use crate::scenario::{AvControl, LengthChoice, ObservationMode, ScenarioConfig};

/// Network shape implied by a scenario with learned AVs.
pub fn policy_spec_for(scenario: &ScenarioConfig) -> Result<PolicySpec, ConfigError> {
    let AvControl::Learned { policy, lane_actions } = &scenario.avs.control else {
        return Err(ConfigError::invalid(format!(
            "scenario `{}` has no learned AVs",
            scenario.name
        )));
    };
    if scenario.avs.count == 0 {
        return Err(ConfigError::invalid(format!("scenario `{}` has no AVs", scenario.name)));
    }
    let output = if *lane_actions { 2 } else { 1 };
    let (input, featurizer) = match scenario.observation.mode {
        ObservationMode::Partial => (3, Featurizer::Partial),
        ObservationMode::Full => {
            let per_vehicle = if scenario.network.lanes() > 1 { 3 } else { 2 };
            (
                scenario.num_vehicles * per_vehicle,
                Featurizer::EgoFull {
                    vehicles: scenario.num_vehicles,
                    per_vehicle,
                },
            )
        }
    };
    Ok(PolicySpec::new(policy.clone(), input, output, featurizer))
}

/// Runs one episode with an optional learned policy.
pub fn run_with_params(
    scenario: &ScenarioConfig,
    policy: Option<(&PolicySpec, &[f64])>,
    length: LengthChoice,
    seed: u64,
) -> Result<EpisodeSummary, SimError> {
    match policy {
        Some((spec, params)) if scenario.has_learned_avs() => {
            let mut runner = PolicyRunner::new(spec.clone(), params.to_vec())?;
            rollout(scenario, length, seed, Some(&mut runner))
        }
        _ => rollout(scenario, length, seed, None),
    }
}

/// CEM fitness: mean undiscounted (or discounted) post-warmup return over
/// the given seeds, with track lengths drawn from the training range.
pub struct PolicyObjective {
    pub scenario: ScenarioConfig,
    pub spec: PolicySpec,
    pub gamma: f64,
}

impl super::cem::Objective for PolicyObjective {
    fn fitness(&self, params: &[f64], seeds: &[u64]) -> f64 {
        let mut total = 0.0;
        for &seed in seeds {
            match run_with_params(&self.scenario, Some((&self.spec, params)), LengthChoice::Train, seed) {
                Ok(s) => total += s.episode_return(self.gamma),
                Err(_) => return f64::NAN,
            }
        }
        total / seeds.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalStats {
    pub length: LengthChoice,
    pub mean_return: f64,
    /// Mean over episodes of the final-window fleet velocity.
    pub mean_velocity: f64,
    /// Sample std of that quantity across episodes.
    pub std_velocity: f64,
    pub collisions: usize,
    pub episodes: Vec<EpisodeSummary>,
}

/// Deterministic rollouts on `seeds` at one length choice. Collided
/// episodes stay in the averages with their penalised returns.
pub fn evaluate_policy(
    scenario: &ScenarioConfig,
    policy: Option<(&PolicySpec, &[f64])>,
    length: LengthChoice,
    seeds: &[u64],
) -> Result<EvalStats, SimError> {
    if seeds.is_empty() {
        return Err(ConfigError::invalid("evaluation needs at least one seed").into());
    }
    let episodes: Vec<EpisodeSummary> = seeds
        .par_iter()
        .map(|&seed| run_with_params(scenario, policy, length, seed))
        .collect::<Result<_, _>>()?;
    let velocities: Vec<f64> = episodes.iter().map(|e| e.mean_velocity_final).collect();
    let (mean_velocity, _) = mean_std(&velocities);
    let k = velocities.len() as f64;
    let std_velocity = if velocities.len() > 1 {
        (velocities.iter().map(|v| (v - mean_velocity).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(EvalStats {
        length,
        mean_return: episodes.iter().map(|e| e.episode_return(1.0)).sum::<f64>() / k,
        mean_velocity,
        std_velocity,
        collisions: episodes.iter().filter(|e| e.collided).count(),
        episodes,
    })
}
