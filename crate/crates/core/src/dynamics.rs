//! Longitudinal train dynamics and the per-step reward.
//!
//! Speeds are carried in km/h (the unit of speed limits and of the Davis
//! coefficients), positions in metres, accelerations in m/s². One call to
//! [`Environment::step`] advances the train by a fixed `dt` with a
//! semi-implicit Euler update: the speed is updated first, then the
//! displacement uses the mean of the old and new speed. Within a step the
//! speed is therefore linear in time, which makes `v²` linear in position;
//! [`TrackSection::traversal_overspeed`] relies on that to check limits at
//! every traversed position exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KMH_PER_MPS: f64 = 3.6;
const JOULES_PER_KWH: f64 = 3.6e6;
/// Upper bound accepted for `max_accel` / `max_decel`.
pub const ACCEL_CAP: f64 = 3.0;
/// Slack used when comparing speeds against limits.
pub const SPEED_EPS: f64 = 1e-9;

/// Rolling stock parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainModel {
    /// Train mass in tonnes.
    pub mass: f64,
    /// Davis constant term, N/t.
    pub davis_r1: f64,
    /// Davis linear term, N/t per km/h.
    pub davis_r2: f64,
    /// Davis quadratic term, N/t per (km/h)².
    pub davis_r3: f64,
    pub max_accel: f64,
    /// Positive magnitude of the largest service deceleration.
    pub max_decel: f64,
    /// Speed (km/h) above which traction runs at constant power.
    pub base_speed_traction: f64,
    /// Speed (km/h) above which braking runs at constant power.
    pub base_speed_braking: f64,
    pub regen_efficiency: f64,
}

impl Default for TrainModel {
    fn default() -> Self {
        Self {
            mass: 337.8,
            davis_r1: 8.4,
            davis_r2: 0.1071,
            davis_r3: 0.00472,
            max_accel: 1.2,
            max_decel: 1.2,
            base_speed_traction: 40.0,
            base_speed_braking: 50.0,
            regen_efficiency: 0.3,
        }
    }
}

impl TrainModel {
    /// Running resistance as a deceleration (m/s²) at `vel` km/h.
    pub fn davis_resistance_accel(&self, vel: f64) -> Result<f64> {
        if !(vel >= 0.0) {
            return Err(Error::Domain(format!("negative velocity {vel} km/h")));
        }
        Ok(self.resistance_unchecked(vel))
    }

    fn resistance_unchecked(&self, vel: f64) -> f64 {
        // N per tonne against 1000 kg per tonne.
        (self.davis_r1 + self.davis_r2 * vel + self.davis_r3 * vel * vel) / 1000.0
    }

    /// Largest traction acceleration the motors can deliver at `vel`.
    pub fn traction_envelope(&self, vel: f64) -> f64 {
        envelope(self.max_accel, self.base_speed_traction, vel)
    }

    /// Largest braking deceleration (positive) available at `vel`.
    pub fn braking_envelope(&self, vel: f64) -> f64 {
        envelope(self.max_decel, self.base_speed_braking, vel)
    }

    /// Acceleration produced by the motors for `cmd` at `vel` km/h.
    pub fn motor_accel(&self, cmd: ControlCommand, vel: f64) -> f64 {
        let c = cmd.value();
        if c > 0.0 {
            self.traction_envelope(vel) * c
        } else if c < 0.0 {
            self.braking_envelope(vel) * c
        } else {
            0.0
        }
    }

    pub fn validate(&self, path: &str) -> Vec<String> {
        let mut issues = Vec::new();
        if !(self.mass > 0.0) {
            issues.push(format!("{path}.mass: must be > 0 (got {})", self.mass));
        }
        for (name, v) in [
            ("davis_r1", self.davis_r1),
            ("davis_r2", self.davis_r2),
            ("davis_r3", self.davis_r3),
        ] {
            if !(v >= 0.0) {
                issues.push(format!("{path}.{name}: must be >= 0 (got {v})"));
            }
        }
        for (name, v) in [("max_accel", self.max_accel), ("max_decel", self.max_decel)] {
            if !(v > 0.0 && v <= ACCEL_CAP) {
                issues.push(format!("{path}.{name}: must be in (0, {ACCEL_CAP}] (got {v})"));
            }
        }
        for (name, v) in [
            ("base_speed_traction", self.base_speed_traction),
            ("base_speed_braking", self.base_speed_braking),
        ] {
            if !(v > 0.0) {
                issues.push(format!("{path}.{name}: must be > 0 (got {v})"));
            }
        }
        if !(0.0..=1.0).contains(&self.regen_efficiency) {
            issues.push(format!(
                "{path}.regen_efficiency: must be in [0, 1] (got {})",
                self.regen_efficiency
            ));
        }
        issues
    }
}

/// Constant force below `base`, constant power above.
fn envelope(peak: f64, base: f64, vel: f64) -> f64 {
    if vel <= base {
        peak
    } else {
        peak * base / vel
    }
}

/// Normalized traction/braking command in `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ControlCommand(f64);

impl ControlCommand {
    pub const FULL_BRAKE: Self = Self(-1.0);
    pub const COAST: Self = Self(0.0);
    pub const FULL_TRACTION: Self = Self(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value.abs() <= 1.0 {
            Ok(Self(value))
        } else {
            Err(Error::Domain(format!("command {value} outside [-1, 1]")))
        }
    }

    /// Clips into `[-1, 1]`; NaN maps to coasting.
    pub fn clipped(value: f64) -> Self {
        if value.is_nan() {
            Self(0.0)
        } else {
            Self(value.clamp(-1.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn condition(self) -> WorkingCondition {
        if self.0 > 0.0 {
            WorkingCondition::Traction
        } else if self.0 < 0.0 {
            WorkingCondition::Braking
        } else {
            WorkingCondition::Coasting
        }
    }
}

impl TryFrom<f64> for ControlCommand {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ControlCommand> for f64 {
    fn from(c: ControlCommand) -> f64 {
        c.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkingCondition {
    Traction,
    Coasting,
    Braking,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitSegment {
    pub start: f64,
    pub end: f64,
    /// km/h
    pub limit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradeSegment {
    pub start: f64,
    pub end: f64,
    /// Signed gravity component along the track in m/s²; negative uphill.
    pub accel: f64,
}

trait Span {
    fn span(&self) -> (f64, f64);
}

impl Span for LimitSegment {
    fn span(&self) -> (f64, f64) {
        (self.start, self.end)
    }
}

impl Span for GradeSegment {
    fn span(&self) -> (f64, f64) {
        (self.start, self.end)
    }
}

/// Half-open `[start, end)` lookup with the final segment closed.
fn locate<S: Span>(segments: &[S], loc: f64) -> Option<usize> {
    let last = segments.len().checked_sub(1)?;
    segments.iter().enumerate().position(|(i, s)| {
        let (a, b) = s.span();
        loc >= a && (loc < b || (i == last && loc <= b))
    })
}

fn check_tiling<S: Span>(segments: &[S], length: f64, path: &str) -> Vec<String> {
    let mut issues = Vec::new();
    if segments.is_empty() {
        issues.push(format!("{path}: at least one segment is required"));
        return issues;
    }
    let mut cursor = 0.0;
    for (i, s) in segments.iter().enumerate() {
        let (a, b) = s.span();
        if !(b > a) {
            issues.push(format!("{path}[{i}]: end {b} must exceed start {a}"));
        }
        if (a - cursor).abs() > 1e-9 {
            let what = if a < cursor { "overlaps" } else { "leaves a gap after" };
            issues.push(format!(
                "{path}[{i}].start: segment starting at {a} {what} the previous end {cursor}"
            ));
        }
        cursor = b;
    }
    if (cursor - length).abs() > 1e-9 {
        issues.push(format!(
            "{path}: segments end at {cursor} but the section length is {length}"
        ));
    }
    issues
}

/// A station-to-station section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackSection {
    pub length: f64,
    pub limit_segments: Vec<LimitSegment>,
    pub grade_segments: Vec<GradeSegment>,
    pub scheduled_time: f64,
    #[serde(default = "default_margin")]
    pub schedule_margin: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

fn default_margin() -> f64 {
    30.0
}

fn default_dt() -> f64 {
    1.0
}

impl Default for TrackSection {
    /// 1500 m flat section, limits 80/60/80 km/h, 110 s run time.
    fn default() -> Self {
        let seg = |start: f64, end: f64, limit: f64| LimitSegment { start, end, limit };
        Self {
            length: 1500.0,
            limit_segments: vec![
                seg(0.0, 500.0, 80.0),
                seg(500.0, 1000.0, 60.0),
                seg(1000.0, 1500.0, 80.0),
            ],
            grade_segments: vec![GradeSegment { start: 0.0, end: 1500.0, accel: 0.0 }],
            scheduled_time: 110.0,
            schedule_margin: default_margin(),
            dt: default_dt(),
        }
    }
}

impl TrackSection {
    /// Flat section with a single speed limit.
    pub fn uniform(length: f64, limit: f64, scheduled_time: f64) -> Self {
        Self {
            length,
            limit_segments: vec![LimitSegment { start: 0.0, end: length, limit }],
            grade_segments: vec![GradeSegment { start: 0.0, end: length, accel: 0.0 }],
            scheduled_time,
            schedule_margin: default_margin(),
            dt: default_dt(),
        }
    }

    fn check_loc(&self, loc: f64) -> Result<()> {
        if loc >= 0.0 && loc <= self.length {
            Ok(())
        } else {
            Err(Error::Domain(format!("location {loc} outside [0, {}]", self.length)))
        }
    }

    /// Signed gravity acceleration at `loc`.
    pub fn grade_accel(&self, loc: f64) -> Result<f64> {
        self.check_loc(loc)?;
        locate(&self.grade_segments, loc)
            .map(|i| self.grade_segments[i].accel)
            .ok_or_else(|| Error::Domain(format!("no grade segment covers {loc}")))
    }

    /// Speed limit (km/h) at `loc`.
    pub fn speed_limit(&self, loc: f64) -> Result<f64> {
        self.check_loc(loc)?;
        locate(&self.limit_segments, loc)
            .map(|i| self.limit_segments[i].limit)
            .ok_or_else(|| Error::Domain(format!("no limit segment covers {loc}")))
    }

    /// Lookups for in-range states; positions are clamped into the section.
    pub(crate) fn limit_at(&self, loc: f64) -> f64 {
        let loc = loc.clamp(0.0, self.length);
        locate(&self.limit_segments, loc).map_or(f64::INFINITY, |i| self.limit_segments[i].limit)
    }

    pub(crate) fn grade_at(&self, loc: f64) -> f64 {
        let loc = loc.clamp(0.0, self.length);
        locate(&self.grade_segments, loc).map_or(0.0, |i| self.grade_segments[i].accel)
    }

    /// Highest posted limit on the section (km/h).
    pub fn max_limit(&self) -> f64 {
        self.limit_segments.iter().map(|s| s.limit).fold(0.0, f64::max)
    }

    /// Schedule-implied average speed in m/s.
    pub fn average_speed(&self) -> f64 {
        self.length / self.scheduled_time
    }

    /// Whether a step from `(loc0, v0)` to `(loc1, v1)` exceeds a limit at
    /// any traversed position. `loc1` is the unclamped end position; speeds
    /// are km/h. Limit boundaries are inclusive.
    pub fn traversal_overspeed(&self, loc0: f64, v0: f64, loc1: f64, v1: f64) -> bool {
        let dist = loc1 - loc0;
        let speed_at = |p: f64| -> f64 {
            if dist <= 0.0 {
                return v0;
            }
            let frac = ((p - loc0) / dist).clamp(0.0, 1.0);
            (v0 * v0 + (v1 * v1 - v0 * v0) * frac).max(0.0).sqrt()
        };
        let hi = loc1.min(self.length);
        for seg in &self.limit_segments {
            if seg.end < loc0 || seg.start > hi {
                continue;
            }
            let a = loc0.max(seg.start);
            let b = hi.min(seg.end);
            if speed_at(a) > seg.limit + SPEED_EPS || speed_at(b) > seg.limit + SPEED_EPS {
                return true;
            }
        }
        false
    }

    /// Structural invariants plus the gentle-grade condition: for every
    /// position and every speed up to the local limit, resistance minus
    /// gravity must lie in `[0, max traction acceleration]`.
    pub fn validate(&self, model: &TrainModel, path: &str) -> Vec<String> {
        let mut issues = Vec::new();
        if !(self.length > 0.0) {
            issues.push(format!("{path}.length: must be > 0 (got {})", self.length));
        }
        if !(self.scheduled_time > 0.0) {
            issues.push(format!(
                "{path}.scheduled_time: must be > 0 (got {})",
                self.scheduled_time
            ));
        }
        if !(self.schedule_margin >= 0.0) {
            issues.push(format!("{path}.schedule_margin: must be >= 0"));
        }
        if !(self.dt > 0.0) {
            issues.push(format!("{path}.dt: must be > 0 (got {})", self.dt));
        }
        issues.extend(check_tiling(&self.limit_segments, self.length, &format!("{path}.limit_segments")));
        issues.extend(check_tiling(&self.grade_segments, self.length, &format!("{path}.grade_segments")));
        for (i, s) in self.limit_segments.iter().enumerate() {
            if !(s.limit > 0.0) {
                issues.push(format!("{path}.limit_segments[{i}].limit: must be > 0 (got {})", s.limit));
            }
        }
        for (i, g) in self.grade_segments.iter().enumerate() {
            if let Some(msg) = self.grade_violation(model, g) {
                issues.push(format!("{path}.grade_segments[{i}].accel: {msg}"));
            }
        }
        issues
    }

    fn grade_violation(&self, model: &TrainModel, g: &GradeSegment) -> Option<String> {
        let top = self
            .limit_segments
            .iter()
            .filter(|l| l.start < g.end && l.end > g.start)
            .map(|l| l.limit)
            .fold(0.0, f64::max);
        let mut speeds: Vec<f64> = (0..).map(f64::from).take_while(|v| *v < top).collect();
        speeds.push(top);
        for v in speeds {
            let net = model.resistance_unchecked(v) - g.accel;
            let motor = model.traction_envelope(v);
            if net < 0.0 {
                return Some(format!(
                    "grade {} m/s² out-accelerates running resistance at {v} km/h (steep downhill)",
                    g.accel
                ));
            }
            if net > motor {
                return Some(format!(
                    "resistance minus grade {net:.4} m/s² exceeds traction capability {motor:.4} m/s² at {v} km/h (steep uphill)"
                ));
            }
        }
        None
    }
}

/// Train state: position, speed, elapsed time and the previous regime.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperationState {
    /// m
    pub loc: f64,
    /// km/h
    pub vel: f64,
    /// s
    pub time: f64,
    /// Number of steps taken in the episode.
    pub step: usize,
    pub last_condition: WorkingCondition,
    /// Acceleration applied over the previous step, m/s².
    pub accel: f64,
}

impl OperationState {
    pub fn at_rest() -> Self {
        Self {
            loc: 0.0,
            vel: 0.0,
            time: 0.0,
            step: 0,
            last_condition: WorkingCondition::Coasting,
            accel: 0.0,
        }
    }
}

/// Reward weights and comfort threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub traction: f64,
    pub regen: f64,
    /// Terminal schedule-deviation weight.
    pub terminal_time: f64,
    /// Per-step average-speed deviation weight.
    pub step_time: f64,
    pub comfort_penalty: f64,
    /// Jerk threshold, m/s³.
    pub comfort_threshold: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            traction: 3.0,
            regen: 3.0,
            terminal_time: 15.0,
            step_time: 25.0,
            comfort_penalty: 10.0,
            comfort_threshold: 3.0,
        }
    }
}

/// The raw quantities one step feeds into the reward.
#[derive(Clone, Copy, Debug)]
pub struct RewardInputs {
    pub cmd: ControlCommand,
    /// kWh, >= 0
    pub energy_traction: f64,
    /// kWh, <= 0
    pub energy_regen: f64,
    /// Mean speed over the step, m/s.
    pub step_mean_speed: f64,
    /// Schedule-implied average speed, m/s.
    pub average_speed: f64,
    pub terminal: bool,
    pub total_time: f64,
    pub scheduled_time: f64,
    pub prev_accel: f64,
    pub accel: f64,
    pub dt: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub energy: f64,
    pub time: f64,
    pub comfort: f64,
}

impl RewardTerms {
    pub fn reward(&self) -> f64 {
        -self.energy - self.time - self.comfort
    }
}

pub fn reward_terms(w: &RewardWeights, x: &RewardInputs) -> RewardTerms {
    let energy = if x.cmd.value() > 0.0 {
        w.traction * x.energy_traction
    } else {
        w.regen * x.energy_regen
    };
    let time = if x.terminal {
        w.terminal_time * (x.total_time - x.scheduled_time).abs()
    } else {
        w.step_time * (x.step_mean_speed - x.average_speed).abs()
    };
    let jerk = (x.accel - x.prev_accel).abs() / x.dt;
    let comfort = if jerk > w.comfort_threshold { w.comfort_penalty } else { 0.0 };
    RewardTerms { energy, time, comfort }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_state: OperationState,
    pub reward: f64,
    pub terms: RewardTerms,
    /// kWh
    pub energy_traction: f64,
    /// kWh, stored negative
    pub energy_regen: f64,
    /// Effective acceleration over the step, m/s².
    pub accel_applied: f64,
    pub done: bool,
    pub arrived: bool,
    /// A speed limit was exceeded somewhere along the traversed stretch.
    pub overspeed: bool,
}

/// Train, track, reward weights and the per-episode step budget.
#[derive(Clone, Debug)]
pub struct Environment {
    pub model: TrainModel,
    pub track: TrackSection,
    pub weights: RewardWeights,
    pub step_budget: usize,
}

impl Environment {
    /// Budget defaults to three times the scheduled number of steps.
    pub fn new(model: TrainModel, track: TrackSection, weights: RewardWeights) -> Self {
        let step_budget = default_step_budget(&track);
        Self { model, track, weights, step_budget }
    }

    pub fn with_step_budget(mut self, budget: usize) -> Self {
        self.step_budget = budget;
        self
    }

    pub fn reset(&self) -> OperationState {
        OperationState::at_rest()
    }

    pub fn step(&self, state: &OperationState, cmd: ControlCommand) -> StepOutcome {
        let model = &self.model;
        let track = &self.track;
        let dt = track.dt;

        let a_motor = model.motor_accel(cmd, state.vel);
        let a_res = model.resistance_unchecked(state.vel.max(0.0));
        let grade = track.grade_at(state.loc);
        let accel = (a_motor - a_res + grade).clamp(-model.max_decel, model.max_accel);

        let v0 = state.vel / KMH_PER_MPS;
        let v1 = (v0 + accel * dt).max(0.0);
        let mean_speed = 0.5 * (v0 + v1);
        let dist = mean_speed * dt;
        let raw_loc = state.loc + dist;
        let arrived = raw_loc >= track.length;
        let next_step = state.step + 1;
        let done = arrived || next_step >= self.step_budget;

        let work_kwh = model.mass * 1000.0 * a_motor.abs() * dist / JOULES_PER_KWH;
        let (energy_traction, energy_regen) = match cmd.condition() {
            WorkingCondition::Traction => (work_kwh, 0.0),
            WorkingCondition::Braking => (0.0, -model.regen_efficiency * work_kwh),
            WorkingCondition::Coasting => (0.0, 0.0),
        };

        let accel_applied = (v1 - v0) / dt;
        let time = state.time + dt;
        let terms = reward_terms(
            &self.weights,
            &RewardInputs {
                cmd,
                energy_traction,
                energy_regen,
                step_mean_speed: mean_speed,
                average_speed: track.average_speed(),
                terminal: done,
                total_time: time,
                scheduled_time: track.scheduled_time,
                prev_accel: state.accel,
                accel: accel_applied,
                dt,
            },
        );

        let v1_kmh = v1 * KMH_PER_MPS;
        let overspeed = track.traversal_overspeed(state.loc, state.vel, raw_loc, v1_kmh);
        let next_state = OperationState {
            loc: raw_loc.min(track.length),
            vel: v1_kmh,
            time,
            step: next_step,
            last_condition: cmd.condition(),
            accel: accel_applied,
        };
        StepOutcome {
            next_state,
            reward: terms.reward(),
            terms,
            energy_traction,
            energy_regen,
            accel_applied,
            done,
            arrived,
            overspeed,
        }
    }
}

pub fn default_step_budget(track: &TrackSection) -> usize {
    (3.0 * track.scheduled_time / track.dt).ceil() as usize
}
