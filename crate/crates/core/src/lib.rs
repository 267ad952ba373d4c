//! Deterministic ring-road traffic simulation and mixed-autonomy control.
//!
//! Layers, bottom up: longitudinal [`dynamics`], route geometry in
//! [`network`], the synchronous [`engine`], model-based [`control`] laws,
//! [`equilibrium`] bounds, the episodic [`env`] with its [`episode`]
//! runner, learned [`policy`] networks with a CEM trainer, and the named
//! [`experiment`] recipes behind the command line.

pub mod control;
pub mod dynamics;
pub mod engine;
pub mod env;
pub mod episode;
pub mod equilibrium;
pub mod error;
pub mod experiment;
pub mod network;
pub mod output;
pub mod policy;
pub mod rng;
pub mod scenario;

pub use engine::{ControlTag, Controller, SimConfig, VehicleState, World};
pub use error::{AnalysisError, ConfigError, DynamicsError, PolicyError, SimError};
pub use scenario::ScenarioConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
