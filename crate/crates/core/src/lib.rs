//! Safe automatic train operation with a post-posed shield, a safe-action
//! searching tree and off-policy actor-critic learners.
//!
//! The crate is organised bottom-up:
//!
//! * [`dynamics`] simulates the train and computes the step reward.
//! * [`shield`] certifies commands and builds the safe command set.
//! * [`search_tree`] picks a replacement command by shielded look-ahead.
//! * [`drl`] holds the networks, buffers, noise and the DDPG/SAC learners.
//! * [`trainer`] runs training, execution and the experiment protocols.
//! * [`config`] loads and validates scenario files.

pub mod config;
pub mod dynamics;
pub mod drl;
pub mod error;
pub mod search_tree;
pub mod shield;
pub mod trainer;

pub use dynamics::{
    ControlCommand, Environment, OperationState, RewardWeights, StepOutcome, TrackSection, TrainModel,
    WorkingCondition,
};
pub use error::{Error, Result};
pub use search_tree::{SearchConfig, SearchNode};
pub use shield::{SafetySpec, Shield, ShieldVerdict};
pub use config::ScenarioConfig;
pub use drl::{AgentConfig, Algorithm, Learner};
pub use trainer::{Checkpoint, EpisodeMetrics, RunConfig, Scenario, Variant};
