use thiserror::Error;

use crate::dynamics::KinematicInput;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("headway must be positive, got {0}")]
    NonPositiveHeadway(f64),
    #[error("non-finite acceleration for input {input:?}; check model parameters")]
    NonFinite { input: KinematicInput },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("infeasible configuration: {0}")]
    Infeasible(String),
}

impl ConfigError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        ConfigError::Invalid(msg.into())
    }

    pub fn infeasible(msg: impl Into<String>) -> Self {
        ConfigError::Infeasible(msg.into())
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("action is not finite: {0}")]
    NonFiniteAction(f64),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("malformed parameter file: {0}")]
    Format(String),
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("stop-and-go waves did not form (final-window velocity std {std:.4} m/s)")]
    NoWaveFormation { std: f64 },
    #[error("need at least {needed} seeds, got {got}")]
    TooFewSeeds { needed: usize, got: usize },
}
