//! Simulation, training and deployment emulation for a wheel loader that
//! must approach a target point, stop near it and raise its lift.

pub mod checkpoint;
pub mod config;
pub mod distribution;
pub mod emulator;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod oracle;
pub mod plot;
pub mod policy;
pub mod ppo;
pub mod registry;
pub mod rng;
pub mod trace;
pub mod train;
pub mod vehicle;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use env::{Action, ApproachEnv, EnvConfig, Observation, Outcome};
pub use error::{Error, Result};
pub use eval::{evaluate, EvalReport};
pub use policy::{ActorCritic, Policy};
pub use trace::EpisodeTrace;
pub use train::Trainer;
pub use vehicle::{BrakeModel, VehicleParams, VehicleState};
