//! Experiment configuration files and their digest.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::recipes;
use crate::error::ConfigError;
use crate::policy::cem::CemConfig;
use crate::scenario::ScenarioConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepController {
    FollowerStopper,
    PiSaturation,
}

impl SweepController {
    pub fn column(&self) -> &'static str {
        match self {
            SweepController::FollowerStopper => "follower_stopper",
            SweepController::PiSaturation => "pi_saturation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    /// Densities (veh/m); when empty, `count` points evenly spaced over
    /// `[min_density, max_density]`.
    pub densities: Vec<f64>,
    pub min_density: f64,
    pub max_density: f64,
    pub count: usize,
    pub seeds: usize,
    pub controllers: Vec<SweepController>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            densities: Vec::new(),
            min_density: 22.0 / 290.0,
            max_density: 22.0 / 210.0,
            count: 9,
            seeds: 10,
            controllers: Vec::new(),
        }
    }
}

impl SweepOptions {
    pub fn resolved_densities(&self) -> Vec<f64> {
        if !self.densities.is_empty() {
            return self.densities.clone();
        }
        if self.count == 1 {
            return vec![self.min_density];
        }
        (0..self.count)
            .map(|k| self.min_density + (self.max_density - self.min_density) * k as f64 / (self.count - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub cem: CemConfig,
    /// Episodes per length in the post-training evaluation block.
    pub eval_seeds: usize,
    /// Lengths of the evaluation block; defaults to a 10 m grid over the
    /// training range (or the nominal length).
    pub eval_lengths: Vec<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            cem: CemConfig::default(),
            eval_seeds: 10,
            eval_lengths: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Defaults to 210, 220, ..., 290 m on rings, the nominal length
    /// otherwise.
    pub lengths: Vec<f64>,
    pub seeds: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            lengths: Vec::new(),
            seeds: 10,
        }
    }
}

/// Fully resolved configuration; its digest stamps every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub seed: u64,
    pub sweep: SweepOptions,
    pub train: TrainOptions,
    pub eval: EvalOptions,
}

/// What a `--config` file may contain. Every field is optional; a
/// `recipe` supplies the scenario unless `scenario` is given in full.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub recipe: Option<String>,
    pub scenario: Option<ScenarioConfig>,
    pub seed: Option<u64>,
    pub sweep: Option<SweepOptions>,
    pub train: Option<TrainOptions>,
    pub eval: Option<EvalOptions>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::invalid(format!("config file: {e}")))
    }
}

impl ExperimentConfig {
    /// Combines a config file with command-line overrides (`recipe` and
    /// `seed` win over the file).
    pub fn resolve(file: ConfigFile, recipe: Option<&str>, seed: Option<u64>) -> Result<Self, ConfigError> {
        let scenario = match (recipe.or(file.recipe.as_deref()), file.scenario) {
            (_, Some(s)) if recipe.is_none() => s,
            (Some(name), _) => {
                recipes::find(name)
                    .ok_or_else(|| {
                        ConfigError::invalid(format!(
                            "unknown recipe `{name}` (known: {})",
                            recipes::names().join(", ")
                        ))
                    })?
                    .scenario
            }
            (None, Some(s)) => s,
            (None, None) => return Err(ConfigError::invalid("no scenario: pass --scenario or --config")),
        };
        let cfg = ExperimentConfig {
            scenario,
            seed: seed.or(file.seed).unwrap_or(0),
            sweep: file.sweep.unwrap_or_default(),
            train: file.train.unwrap_or_default(),
            eval: file.eval.unwrap_or_default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_recipe(name: &str, seed: u64) -> Result<Self, ConfigError> {
        Self::resolve(ConfigFile::default(), Some(name), Some(seed))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scenario.validate()?;
        self.train.cem.validate()?;
        if self.sweep.seeds == 0 || self.eval.seeds == 0 || self.train.eval_seeds == 0 {
            return Err(ConfigError::invalid("seed counts must be >= 1"));
        }
        if self.sweep.count == 0 && self.sweep.densities.is_empty() {
            return Err(ConfigError::invalid("sweep needs densities or count >= 1"));
        }
        for &d in self.sweep.resolved_densities().iter() {
            if !(d > 0.0) {
                return Err(ConfigError::invalid("sweep densities must be positive"));
            }
        }
        for &l in self.eval.lengths.iter().chain(&self.train.eval_lengths) {
            if !(l > 0.0) {
                return Err(ConfigError::invalid("evaluation lengths must be positive"));
            }
        }
        Ok(())
    }

    /// Canonical JSON of the resolved configuration.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// The `# ...` provenance line written at the top of every CSV.
    pub fn stamp(&self) -> String {
        format!("mixflow {} config={} seed={}", crate::VERSION, self.digest(), self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolve_precedence() {
        let file = ConfigFile::parse(r#"{"recipe": "ring-260-fs", "seed": 4}"#).unwrap();
        let cfg = ExperimentConfig::resolve(file.clone(), None, None).unwrap();
        assert_eq!(cfg.scenario.name, "ring-260-fs");
        assert_eq!(cfg.seed, 4);
        let cfg = ExperimentConfig::resolve(file, Some("sugiyama-230"), Some(9)).unwrap();
        assert_eq!(cfg.scenario.name, "sugiyama-230");
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn round_trip_and_digest() {
        let cfg = ExperimentConfig::from_recipe("ring-260-mlp", 3).unwrap();
        let text = cfg.canonical_json();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
        let other = ExperimentConfig::from_recipe("ring-260-mlp", 4).unwrap();
        assert_ne!(other.digest(), cfg.digest());
        assert_eq!(cfg.digest().len(), 64);
    }

    #[test]
    fn errors() {
        assert!(ConfigFile::parse(r#"{"recipe": "sugiyama-230", "bogus": 1}"#).is_err());
        assert!(ConfigFile::parse("not json").is_err());
        assert!(ExperimentConfig::resolve(ConfigFile::default(), None, None).is_err());
        assert!(ExperimentConfig::from_recipe("nope", 0).is_err());
        let file = ConfigFile::parse(r#"{"recipe": "sugiyama-230", "eval": {"seeds": 0}}"#).unwrap();
        assert!(ExperimentConfig::resolve(file, None, None).is_err());
        let file = ConfigFile::parse(r#"{"recipe": "sugiyama-230", "train": {"cem": {"iterations": 2}}}"#).unwrap();
        let cfg = ExperimentConfig::resolve(file, None, None).unwrap();
        assert_eq!(cfg.train.cem.iterations, 2);
        assert_eq!(cfg.train.cem.population, 64);
    }

    #[test]
    fn full_scenario_in_file() {
        let mut base = ExperimentConfig::from_recipe("sugiyama-230", 0).unwrap();
        base.scenario.num_vehicles = 20;
        let file = ConfigFile {
            scenario: Some(base.scenario.clone()),
            ..ConfigFile::default()
        };
        let text = serde_json::to_string(&file).unwrap();
        let cfg = ExperimentConfig::resolve(ConfigFile::parse(&text).unwrap(), None, None).unwrap();
        assert_eq!(cfg.scenario.num_vehicles, 20);
    }

    #[test]
    fn default_sweep_grid() {
        let d = SweepOptions::default().resolved_densities();
        assert_eq!(d.len(), 9);
        assert!((d[0] - 22.0 / 290.0).abs() < 1e-15);
        assert!((d[8] - 22.0 / 210.0).abs() < 1e-15);
    }
}
