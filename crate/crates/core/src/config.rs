//! Scenario files.
//!
//! A scenario is a TOML document with the blocks `train`, `track`,
//! `safety`, `agent`, `search`, `run` and `reward`. Every block is optional
//! and falls back to its defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::drl::AgentConfig;
use crate::dynamics::{Environment, RewardWeights, TrackSection, TrainModel};
use crate::error::{Error, Result};
use crate::search_tree::SearchConfig;
use crate::shield::{SafetySpec, Shield};
use crate::trainer::{RunConfig, Scenario};

/// The desk-scale default scenario shipped with the crate.
pub const BUNDLED_SCENARIO: &str = include_str!("../scenarios/default.toml");

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub train: TrainModel,
    pub track: TrackSection,
    pub safety: SafetySpec,
    pub agent: AgentConfig,
    pub search: SearchConfig,
    pub run: RunConfig,
    pub reward: RewardWeights,
}

impl ScenarioConfig {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_SCENARIO).expect("bundled scenario parses")
    }

    /// Parses without validating.
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads, parses and validates a scenario file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg = Self::parse(&std::fs::read_to_string(path)?)?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Every violated invariant, each prefixed with its field path.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.train.validate("train");
        errs.extend(self.track.validate(&self.train, "track"));
        errs.extend(self.safety.validate(&self.track, self.train.max_decel, "safety"));
        errs.extend(self.agent.validate("agent"));
        errs.extend(self.search.validate("search"));
        errs.extend(self.run.validate("run"));
        let w = &self.reward;
        for (name, v) in [
            ("traction", w.traction),
            ("regen", w.regen),
            ("terminal_time", w.terminal_time),
            ("step_time", w.step_time),
            ("comfort_penalty", w.comfort_penalty),
            ("comfort_threshold", w.comfort_threshold),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("reward.{name}: must be >= 0 (got {v})"));
            }
        }
        errs
    }

    pub fn check(&self) -> Result<()> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs))
        }
    }

    /// Validates and assembles the runtime pieces.
    pub fn build(&self) -> Result<Scenario> {
        self.check()?;
        let mut env = Environment::new(self.train.clone(), self.track.clone(), self.reward.clone());
        if let Some(b) = self.run.step_budget {
            env = env.with_step_budget(b);
        }
        let shield = Shield::new(self.safety.clone(), &env);
        Ok(Scenario {
            env,
            shield,
            search: self.search.clone(),
            agent: self.agent.clone(),
            run: self.run.clone(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_is_valid() {
        let cfg = ScenarioConfig::bundled();
        assert_eq!(cfg.validate(), Vec::<String>::new());
        assert_eq!(cfg.track, TrackSection::default());
        cfg.build().unwrap();
    }

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = ScenarioConfig::default();
        assert!(cfg.validate().is_empty());
        assert_eq!(ScenarioConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ScenarioConfig::parse("[train]\nmas = 3.0\n").is_err());
        assert!(ScenarioConfig::parse("[trian]\n").is_err());
    }

    #[test]
    fn steep_grade_reported() {
        let text = r#"
            [track]
            length = 1000.0
            scheduled_time = 80.0
            limit_segments = [{ start = 0.0, end = 1000.0, limit = 80.0 }]
            grade_segments = [{ start = 0.0, end = 1000.0, accel = 2.0 }]
        "#;
        let errs = ScenarioConfig::parse(text).unwrap().validate();
        assert!(errs.iter().any(|e| e.starts_with("track.grade_segments")), "{errs:?}");
    }

    #[test]
    fn overlap_and_many_errors_reported_together() {
        let text = r#"
            [track]
            length = 1000.0
            scheduled_time = 80.0
            limit_segments = [{ start = 0.0, end = 600.0, limit = 80.0 }, { start = 500.0, end = 1000.0, limit = 60.0 }]
            grade_segments = []
            [agent]
            gamma = 1.5
        "#;
        let errs = ScenarioConfig::parse(text).unwrap().validate();
        assert!(errs.iter().any(|e| e.starts_with("track.limit_segments")), "{errs:?}");
        assert!(errs.iter().any(|e| e.starts_with("agent.gamma")), "{errs:?}");
    }
}
