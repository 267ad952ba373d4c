//! Cross-entropy method over a flat parameter vector.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemConfig {
    pub population: usize,
    pub elite_fraction: f64,
    pub iterations: usize,
    pub init_std: f64,
    pub std_floor: f64,
    /// Weight of the elite spread in the std update; the rest keeps the
    /// previous std, which slows the collapse of the search distribution.
    pub std_smoothing: f64,
    /// Episodes (distinct seeds) per candidate evaluation.
    pub episodes_per_candidate: usize,
    /// Episodes used to score the elite mean each iteration.
    pub validation_episodes: usize,
    /// Discount used for the fitness return.
    pub gamma: f64,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            population: 64,
            elite_fraction: 0.125,
            iterations: 150,
            init_std: 0.5,
            std_floor: 0.02,
            std_smoothing: 0.5,
            episodes_per_candidate: 2,
            validation_episodes: 4,
            gamma: 1.0,
        }
    }
}

impl CemConfig {
    pub fn elite_count(&self) -> usize {
        (self.population as f64 * self.elite_fraction).round() as usize
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.population < 8 {
            return Err(ConfigError::invalid("cem population must be >= 8"));
        }
        if self.elite_count() < 2 || self.elite_count() > self.population {
            return Err(ConfigError::invalid("cem elite count must be in [2, population]"));
        }
        if self.iterations == 0 || self.episodes_per_candidate == 0 {
            return Err(ConfigError::invalid("cem iterations and episodes must be >= 1"));
        }
        if !(self.init_std > 0.0) || !(self.std_floor >= 0.0) {
            return Err(ConfigError::invalid("cem std values must be positive"));
        }
        if !(self.std_smoothing > 0.0 && self.std_smoothing <= 1.0) {
            return Err(ConfigError::invalid("std_smoothing must be in (0, 1]"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(ConfigError::invalid("gamma must be in (0, 1]"));
        }
        Ok(())
    }
}

/// Scores a parameter vector on a set of episode seeds; higher is better.
pub trait Objective: Sync {
    fn fitness(&self, params: &[f64], seeds: &[u64]) -> f64;
}

impl<F> Objective for F
where
    F: Fn(&[f64], &[u64]) -> f64 + Sync,
{
    fn fitness(&self, params: &[f64], seeds: &[u64]) -> f64 {
        self(params, seeds)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    /// Mean over the finite candidate fitnesses.
    pub fitness_mean: f64,
    pub fitness_best: f64,
    /// Mean of the sampling std used this iteration.
    pub param_std_mean: f64,
    /// Validation score of the refitted mean.
    pub mean_fitness: f64,
    pub discarded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CemResult {
    /// The refitted mean with the best validation score seen.
    pub best_params: Vec<f64>,
    pub best_fitness: f64,
    pub final_mean: Vec<f64>,
    pub history: Vec<IterationStats>,
    /// Elite indices of the last iteration, best first.
    pub last_elites: Vec<usize>,
}

pub fn validation_seeds(seed: u64, cfg: &CemConfig) -> Vec<u64> {
    (0..cfg.validation_episodes as u64)
        .map(|k| rng::derive_indexed(seed, "cem-validation", k))
        .collect()
}

/// Runs CEM from `init_mean`. Every candidate of an iteration is scored on
/// the same episode seeds; candidates are drawn sequentially before the
/// (parallel) evaluation, so results do not depend on thread count.
pub fn train_cem<O: Objective>(
    objective: &O,
    init_mean: Vec<f64>,
    cfg: &CemConfig,
    seed: u64,
    mut on_iteration: impl FnMut(&IterationStats),
) -> Result<CemResult, ConfigError> {
    cfg.validate()?;
    let dim = init_mean.len();
    let mut mean = init_mean;
    let mut std = vec![cfg.init_std; dim];
    let mut sampler = ChaCha8Rng::seed_from_u64(rng::derive_seed(seed, "cem-sample"));
    let val_seeds = validation_seeds(seed, cfg);
    let elites = cfg.elite_count();
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut best_params = mean.clone();
    let mut best_fitness = f64::NEG_INFINITY;
    let mut last_elites = Vec::new();

    for it in 0..cfg.iterations {
        let seeds: Vec<u64> = (0..cfg.episodes_per_candidate as u64)
            .map(|e| rng::derive_indexed(seed, "cem-episodes", it as u64 * cfg.episodes_per_candidate as u64 + e))
            .collect();
        let population: Vec<Vec<f64>> = (0..cfg.population)
            .map(|_| {
                (0..dim)
                    .map(|j| {
                        let z: f64 = StandardNormal.sample(&mut sampler);
                        mean[j] + std[j] * z
                    })
                    .collect()
            })
            .collect();
        let scores: Vec<f64> = population.par_iter().map(|p| objective.fitness(p, &seeds)).collect();

        let mut ranked: Vec<usize> = (0..cfg.population).filter(|&k| scores[k].is_finite()).collect();
        let discarded = cfg.population - ranked.len();
        // stable sort keeps the lower index first on ties
        ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        let param_std_mean = std.iter().sum::<f64>() / dim.max(1) as f64;
        if ranked.len() >= 2 {
            let elite = &ranked[..elites.min(ranked.len())];
            let k = elite.len() as f64;
            for j in 0..dim {
                let m = elite.iter().map(|&e| population[e][j]).sum::<f64>() / k;
                let var = elite.iter().map(|&e| (population[e][j] - m).powi(2)).sum::<f64>() / k;
                mean[j] = m;
                let blended = cfg.std_smoothing * var.sqrt() + (1.0 - cfg.std_smoothing) * std[j];
                std[j] = blended.max(cfg.std_floor);
            }
            last_elites = elite.to_vec();
        }
        let finite: Vec<f64> = ranked.iter().map(|&k| scores[k]).collect();
        let mean_fitness = if val_seeds.is_empty() {
            objective.fitness(&mean, &seeds)
        } else {
            objective.fitness(&mean, &val_seeds)
        };
        if mean_fitness > best_fitness {
            best_fitness = mean_fitness;
            best_params.clone_from(&mean);
        }
        let stats = IterationStats {
            iteration: it,
            fitness_mean: if finite.is_empty() {
                f64::NAN
            } else {
                finite.iter().sum::<f64>() / finite.len() as f64
            },
            fitness_best: finite.first().copied().unwrap_or(f64::NAN),
            param_std_mean,
            mean_fitness,
            discarded,
        };
        on_iteration(&stats);
        history.push(stats);
    }
    Ok(CemResult {
        best_params,
        best_fitness,
        final_mean: mean,
        history,
        last_elites,
    })
}
