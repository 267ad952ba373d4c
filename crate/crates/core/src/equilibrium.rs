//! Uniform-flow equilibrium and the stop-and-go lower bound.

use rayon::prelude::*;

use crate::dynamics::{idm_acceleration, IdmParams, KinematicInput};
use crate::engine::SimConfig;
use crate::episode::{mean_std, rollout};
use crate::error::{AnalysisError, ConfigError};
use crate::scenario::{LengthChoice, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumPoint {
    /// Vehicles per meter.
    pub density: f64,
    pub h_star: f64,
    pub v_star: f64,
}

/// Velocity at which IDM holds a constant headway `h`.
pub fn equilibrium_velocity(h: f64, p: &IdmParams) -> Result<f64, ConfigError> {
    if !(h > 0.0) {
        return Err(ConfigError::infeasible(format!("equilibrium headway {h} m is not positive")));
    }
    if h <= p.min_gap {
        return Ok(0.0);
    }
    let residual = |v: f64| {
        idm_acceleration(KinematicInput::new(h, 0.0, v), p)
            .map_err(|e| ConfigError::invalid(e.to_string()))
    };
    // residual(0) > 0 > residual(v0) and it is strictly decreasing in v
    let (mut lo, mut hi) = (0.0, p.v0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if residual(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let v = 0.5 * (lo + hi);
    debug_assert!(residual(v)?.abs() < 1e-10);
    Ok(v)
}

pub fn uniform_flow_velocity(
    track_length: f64,
    n_vehicles: usize,
    vehicle_length: f64,
    p: &IdmParams,
) -> Result<EquilibriumPoint, ConfigError> {
    if n_vehicles == 0 {
        return Err(ConfigError::invalid("at least one vehicle is required"));
    }
    let h = track_length / n_vehicles as f64 - vehicle_length;
    Ok(EquilibriumPoint {
        density: n_vehicles as f64 / track_length,
        h_star: h,
        v_star: equilibrium_velocity(h, p)?,
    })
}

pub fn density_velocity_curve(
    densities: &[f64],
    vehicle_length: f64,
    p: &IdmParams,
) -> Result<Vec<EquilibriumPoint>, ConfigError> {
    densities
        .iter()
        .map(|&rho| {
            if !(rho > 0.0) {
                return Err(ConfigError::invalid("densities must be positive"));
            }
            let h = 1.0 / rho - vehicle_length;
            Ok(EquilibriumPoint {
                density: rho,
                h_star: h,
                v_star: equilibrium_velocity(h, p)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundConfig {
    pub idm: IdmParams,
    pub sim: SimConfig,
    pub vehicle_length: f64,
    /// Below this final-window velocity std the waves count as absent.
    pub wave_std_threshold: f64,
    pub require_waves: bool,
}

impl Default for LowerBoundConfig {
    fn default() -> Self {
        Self {
            idm: IdmParams::default(),
            sim: SimConfig {
                warmup: 300.0,
                horizon: 300.0,
                ..SimConfig::default()
            },
            vehicle_length: 5.0,
            wave_std_threshold: 0.5,
            require_waves: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowerBound {
    pub mean: f64,
    /// Sample standard deviation across seeds.
    pub std: f64,
    pub per_seed: Vec<f64>,
    /// Smallest final-window fleet velocity std over the seeds.
    pub min_wave_std: f64,
}

pub const MIN_LOWER_BOUND_SEEDS: usize = 3;

/// Average fleet velocity of the human-only ring once stop-and-go waves
/// have settled, over several noise realisations.
pub fn stop_and_go_average_velocity(
    track_length: f64,
    n_vehicles: usize,
    seeds: &[u64],
    cfg: &LowerBoundConfig,
) -> Result<LowerBound, AnalysisError> {
    if seeds.len() < MIN_LOWER_BOUND_SEEDS {
        return Err(AnalysisError::TooFewSeeds {
            needed: MIN_LOWER_BOUND_SEEDS,
            got: seeds.len(),
        });
    }
    let mut scenario = ScenarioConfig::ring("stop-and-go", track_length, n_vehicles);
    scenario.vehicle_length = cfg.vehicle_length;
    scenario.idm = cfg.idm;
    scenario.sim = cfg.sim;
    scenario.validate()?;
    let runs: Vec<_> = seeds
        .par_iter()
        .map(|&seed| rollout(&scenario, LengthChoice::Nominal, seed, None))
        .collect::<Result<_, _>>()?;
    let per_seed: Vec<f64> = runs.iter().map(|r| r.mean_velocity_final).collect();
    let min_wave_std = runs.iter().map(|r| r.std_velocity_final).fold(f64::INFINITY, f64::min);
    if cfg.require_waves && min_wave_std < cfg.wave_std_threshold {
        return Err(AnalysisError::NoWaveFormation { std: min_wave_std });
    }
    let (mean, _) = mean_std(&per_seed);
    let k = per_seed.len() as f64;
    let var = per_seed.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (k - 1.0);
    Ok(LowerBound {
        mean,
        std: var.sqrt(),
        per_seed,
        min_wave_std,
    })
}
