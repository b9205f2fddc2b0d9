//! Post-posed safety shield.
//!
//! The shield sits between the learner and the train. A command is
//! certified when the simulated step respects the speed band and the
//! regime-transition rule, and the successor state stays inside the
//! winning region, approximated here by recoverability: from the successor,
//! full braking (after a mandatory coasting step when the reversal rule
//! applies) never exceeds a downstream limit, and the minimum-speed floor
//! can still be held.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    ControlCommand, Environment, OperationState, TrackSection, WorkingCondition, KMH_PER_MPS,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetySpec {
    /// Mid-section speed floor, km/h.
    pub min_speed: f64,
    /// When set the floor is strict (`vel > min_speed`).
    pub strict_floor: bool,
    /// Forbid traction to braking (and back) without coasting in between.
    pub forbid_direct_reversal: bool,
    /// Distance before the section end (m) where the floor is suspended.
    /// `None` means the braking distance from the schedule speed plus 50 m.
    pub terminal_zone: Option<f64>,
    /// Number of evenly spaced candidate commands in `[-1, 1]`.
    pub action_grid: usize,
}

impl Default for SafetySpec {
    fn default() -> Self {
        Self {
            min_speed: 0.0,
            strict_floor: true,
            forbid_direct_reversal: true,
            terminal_zone: None,
            action_grid: 21,
        }
    }
}

impl SafetySpec {
    pub fn validate(&self, track: &TrackSection, max_decel: f64, path: &str) -> Vec<String> {
        let mut issues = Vec::new();
        if !(self.min_speed >= 0.0) {
            issues.push(format!("{path}.min_speed: must be >= 0 (got {})", self.min_speed));
        }
        if let Some(z) = self.terminal_zone {
            if !(z >= 0.0) {
                issues.push(format!("{path}.terminal_zone: must be >= 0 (got {z})"));
            }
        }
        let zone = self.terminal_zone_for(track, max_decel);
        if zone >= track.length {
            issues.push(format!(
                "{path}.terminal_zone: {zone} m must be shorter than the section ({} m)",
                track.length
            ));
        }
        if self.action_grid < 2 {
            issues.push(format!("{path}.action_grid: must be >= 2 (got {})", self.action_grid));
        }
        if self.min_speed >= track.limit_segments.iter().map(|s| s.limit).fold(f64::INFINITY, f64::min) {
            issues.push(format!("{path}.min_speed: must be below every speed limit"));
        }
        issues
    }

    pub fn terminal_zone_for(&self, track: &TrackSection, max_decel: f64) -> f64 {
        self.terminal_zone.unwrap_or_else(|| {
            let v = track.average_speed();
            v * v / (2.0 * max_decel) + 50.0
        })
    }
}

/// Observer output for a state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    BelowMin,
    InBand,
    OverLimit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    Overspeed,
    Underspeed,
    Reversal,
    Unrecoverable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShieldVerdict {
    pub violated_rule: Option<Violation>,
}

impl ShieldVerdict {
    pub const SAFE: Self = Self { violated_rule: None };

    fn violated(v: Violation) -> Self {
        Self { violated_rule: Some(v) }
    }

    pub fn safe(&self) -> bool {
        self.violated_rule.is_none()
    }
}

/// A shield bound to one environment.
#[derive(Clone, Debug)]
pub struct Shield {
    pub spec: SafetySpec,
    terminal_zone: f64,
    tail_cap: usize,
}

impl Shield {
    pub fn new(spec: SafetySpec, env: &Environment) -> Self {
        let terminal_zone = spec.terminal_zone_for(&env.track, env.model.max_decel);
        // Enough steps to stop from well above the highest limit.
        let vmax = env.track.max_limit() * 1.5;
        let decel = env.model.braking_envelope(vmax);
        let tail_cap = (vmax / KMH_PER_MPS / (decel * env.track.dt)).ceil() as usize + 8;
        Self { spec, terminal_zone, tail_cap }
    }

    pub fn terminal_zone(&self) -> f64 {
        self.terminal_zone
    }

    fn floor_applies(&self, env: &Environment, loc: f64) -> bool {
        loc < env.track.length - self.terminal_zone
    }

    fn above_floor(&self, vel: f64) -> bool {
        if self.spec.strict_floor {
            vel > self.spec.min_speed
        } else {
            vel >= self.spec.min_speed
        }
    }

    pub fn label(&self, env: &Environment, state: &OperationState) -> Label {
        let limit = env.track.limit_at(state.loc);
        if state.vel > limit + crate::dynamics::SPEED_EPS {
            Label::OverLimit
        } else if self.floor_applies(env, state.loc) && !self.above_floor(state.vel) {
            Label::BelowMin
        } else {
            Label::InBand
        }
    }

    pub fn is_reversal(&self, last: WorkingCondition, cmd: ControlCommand) -> bool {
        self.spec.forbid_direct_reversal
            && matches!(
                (last, cmd.condition()),
                (WorkingCondition::Traction, WorkingCondition::Braking)
                    | (WorkingCondition::Braking, WorkingCondition::Traction)
            )
    }

    pub fn is_safe(&self, env: &Environment, state: &OperationState, cmd: ControlCommand) -> ShieldVerdict {
        if self.is_reversal(state.last_condition, cmd) {
            return ShieldVerdict::violated(Violation::Reversal);
        }
        let out = env.step(state, cmd);
        if out.overspeed {
            return ShieldVerdict::violated(Violation::Overspeed);
        }
        if out.arrived {
            return ShieldVerdict::SAFE;
        }
        let next = out.next_state;
        if self.floor_applies(env, next.loc) && !self.above_floor(next.vel) {
            return ShieldVerdict::violated(Violation::Underspeed);
        }
        if !self.floor_recoverable(env, &next) || !self.braking_recoverable(env, &next) {
            return ShieldVerdict::violated(Violation::Unrecoverable);
        }
        ShieldVerdict::SAFE
    }

    /// After braking the next step can at best coast; that coast must keep
    /// the floor, after which traction is available again.
    fn floor_recoverable(&self, env: &Environment, s: &OperationState) -> bool {
        if !self.spec.forbid_direct_reversal || s.last_condition != WorkingCondition::Braking {
            return true;
        }
        let out = env.step(s, ControlCommand::COAST);
        out.arrived || !self.floor_applies(env, out.next_state.loc) || self.above_floor(out.next_state.vel)
    }

    /// Full-braking tail from `s` never exceeds a limit.
    pub fn braking_recoverable(&self, env: &Environment, s: &OperationState) -> bool {
        let mut s = *s;
        if self.is_reversal(s.last_condition, ControlCommand::FULL_BRAKE) {
            let out = env.step(&s, ControlCommand::COAST);
            if out.overspeed {
                return false;
            }
            if out.arrived {
                return true;
            }
            s = out.next_state;
        }
        for _ in 0..self.tail_cap {
            if s.vel <= 0.0 {
                return true;
            }
            let out = env.step(&s, ControlCommand::FULL_BRAKE);
            if out.overspeed {
                return false;
            }
            if out.arrived {
                return true;
            }
            s = out.next_state;
        }
        s.vel <= 0.0
    }

    /// Certified subset of the candidate grid, ascending by command.
    pub fn safe_action_set(&self, env: &Environment, state: &OperationState) -> Result<Vec<ControlCommand>> {
        let set: Vec<_> = command_grid(self.spec.action_grid)
            .into_iter()
            .filter(|c| self.is_safe(env, state, *c).safe())
            .collect();
        if set.is_empty() {
            Err(Error::Unrecoverable { loc: state.loc, vel: state.vel, step: state.step })
        } else {
            Ok(set)
        }
    }

    /// Passes `proposed` through when certified, otherwise asks `chooser`
    /// to pick from the safe set. Returns the command and whether the
    /// shield intervened.
    pub fn filter<F>(
        &self,
        env: &Environment,
        state: &OperationState,
        proposed: ControlCommand,
        chooser: F,
    ) -> Result<(ControlCommand, bool)>
    where
        F: FnOnce(&[ControlCommand]) -> ControlCommand,
    {
        if self.is_safe(env, state, proposed).safe() {
            return Ok((proposed, false));
        }
        let set = self.safe_action_set(env, state)?;
        Ok((chooser(&set), true))
    }
}

/// `n` evenly spaced commands from -1 to 1 inclusive.
pub fn command_grid(n: usize) -> Vec<ControlCommand> {
    assert!(n >= 2, "command grid needs at least two points");
    let last = (n - 1) as f64;
    (0..n)
        .map(|i| ControlCommand::clipped(-1.0 + 2.0 * i as f64 / last))
        .collect()
}

/// Safe command closest to `target`; ties go to the smaller command.
pub fn nearest_safe(target: ControlCommand) -> impl Fn(&[ControlCommand]) -> ControlCommand {
    move |set: &[ControlCommand]| {
        let mut best = set[0];
        for &c in &set[1..] {
            if (c.value() - target.value()).abs() < (best.value() - target.value()).abs() {
                best = c;
            }
        }
        best
    }
}
