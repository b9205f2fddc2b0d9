//! Learners, buffers and exploration.
//!
//! Observations are `(loc/length, vel/max_limit, time/T_sch, regime)` where
//! `regime` is the previous working condition as -1, 0 or 1. Commands are
//! scalars in `[-1, 1]`.

pub mod buffer;
pub mod ddpg;
pub mod losses;
pub mod mlp;
pub mod noise;
pub mod sac;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlCommand, Environment, OperationState, WorkingCondition};
use crate::error::{Error, Result};
use crate::search_tree::PolicySampler;

pub use buffer::{EliteBuffer, ReplayBuffer, Trajectory, Transition};
pub use ddpg::Ddpg;
pub use mlp::{soft_update, Adam, Mlp, OutputActivation};
pub use noise::{NoiseConfig, NoiseKind, NoiseProcess};
pub use sac::Sac;

pub const OBS_DIM: usize = 4;
pub type Obs = [f64; OBS_DIM];
/// Critic input: observation followed by the command.
pub type StateAction = [f64; OBS_DIM + 1];

/// Maps simulator states to network inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observer {
    length: f64,
    max_limit: f64,
    scheduled_time: f64,
}

impl Observer {
    pub fn new(env: &Environment) -> Self {
        Self {
            length: env.track.length,
            max_limit: env.track.max_limit(),
            scheduled_time: env.track.scheduled_time,
        }
    }

    pub fn observe(&self, s: &OperationState) -> Obs {
        let regime = match s.last_condition {
            WorkingCondition::Traction => 1.0,
            WorkingCondition::Coasting => 0.0,
            WorkingCondition::Braking => -1.0,
        };
        [s.loc / self.length, s.vel / self.max_limit, s.time / self.scheduled_time, regime]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Ddpg,
    Sac,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub hidden_layers: Vec<usize>,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub soft_tau: f64,
    pub sac_value_lr: f64,
    pub sac_softq_lr: f64,
    pub entropy_alpha: f64,
    /// Defaults to five times `actor_lr`.
    pub additional_actor_lr: Option<f64>,
    /// Defaults to `hidden_layers`.
    pub additional_hidden_layers: Option<Vec<usize>>,
    pub minibatch: usize,
    pub elite_minibatch: usize,
    pub elite_capacity: usize,
    pub convergence_eps: f64,
    pub replay_capacity: usize,
    /// Transitions collected before the first update.
    pub warmup: usize,
    /// Gradient steps per update cycle.
    pub updates_per_cycle: usize,
    /// Imitation steps per episode end.
    pub additional_updates: usize,
    /// Multiplier applied to rewards before they enter the replay buffer.
    pub reward_scale: f64,
    pub noise: NoiseConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![256; 4],
            gamma: 0.99,
            actor_lr: 1e-5,
            critic_lr: 1e-3,
            soft_tau: 1e-2,
            sac_value_lr: 1e-3,
            sac_softq_lr: 3e-5,
            entropy_alpha: 0.2,
            additional_actor_lr: None,
            additional_hidden_layers: None,
            minibatch: 256,
            elite_minibatch: 10,
            elite_capacity: 20,
            convergence_eps: 1e-3,
            replay_capacity: 100_000,
            warmup: 256,
            updates_per_cycle: 1,
            additional_updates: 1,
            reward_scale: 1.0,
            noise: NoiseConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn layer_sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut v = Vec::with_capacity(self.hidden_layers.len() + 2);
        v.push(input);
        v.extend_from_slice(&self.hidden_layers);
        v.push(output);
        v
    }

    pub fn additional_lr(&self) -> f64 {
        self.additional_actor_lr.unwrap_or(5.0 * self.actor_lr)
    }

    pub fn additional_sizes(&self) -> Vec<usize> {
        let hidden = self.additional_hidden_layers.as_ref().unwrap_or(&self.hidden_layers);
        let mut v = vec![OBS_DIM];
        v.extend_from_slice(hidden);
        v.push(1);
        v
    }

    pub fn validate(&self, path: &str) -> Vec<String> {
        let mut errs = Vec::new();
        let rates = [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("sac_value_lr", self.sac_value_lr),
            ("sac_softq_lr", self.sac_softq_lr),
            ("additional_actor_lr", self.additional_lr()),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{path}.{name}: learning rate must be > 0, got {v}"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            errs.push(format!("{path}.gamma: must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.soft_tau > 0.0 && self.soft_tau <= 1.0) {
            errs.push(format!("{path}.soft_tau: must lie in (0, 1], got {}", self.soft_tau));
        }
        if !(self.entropy_alpha >= 0.0 && self.entropy_alpha.is_finite()) {
            errs.push(format!("{path}.entropy_alpha: must be >= 0, got {}", self.entropy_alpha));
        }
        if !(self.convergence_eps > 0.0) {
            errs.push(format!("{path}.convergence_eps: must be > 0, got {}", self.convergence_eps));
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            errs.push(format!("{path}.reward_scale: must be > 0, got {}", self.reward_scale));
        }
        if self.hidden_layers.iter().any(|&h| h == 0) {
            errs.push(format!("{path}.hidden_layers: widths must be positive"));
        }
        if let Some(h) = &self.additional_hidden_layers {
            if h.iter().any(|&w| w == 0) {
                errs.push(format!("{path}.additional_hidden_layers: widths must be positive"));
            }
        }
        for (name, v) in [
            ("minibatch", self.minibatch),
            ("elite_minibatch", self.elite_minibatch),
            ("replay_capacity", self.replay_capacity),
        ] {
            if v == 0 {
                errs.push(format!("{path}.{name}: must be >= 1"));
            }
        }
        if self.elite_capacity < self.elite_minibatch {
            errs.push(format!(
                "{path}.elite_capacity: must be at least elite_minibatch ({}), got {}",
                self.elite_minibatch, self.elite_capacity
            ));
        }
        let n = &self.noise;
        if !(n.ou_theta >= 0.0 && n.ou_theta <= 1.0) {
            errs.push(format!("{path}.noise.ou_theta: must lie in [0, 1], got {}", n.ou_theta));
        }
        for (name, v) in [("ou_sigma", n.ou_sigma), ("gaussian_scale", n.gaussian_scale)] {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("{path}.noise.{name}: must be >= 0, got {v}"));
            }
        }
        if !(n.anneal_fraction >= 0.0 && n.anneal_fraction.is_finite()) {
            errs.push(format!("{path}.noise.anneal_fraction: must be >= 0, got {}", n.anneal_fraction));
        }
        errs
    }
}

/// How a policy network's output maps to a command.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// One tanh output.
    Deterministic,
    /// Mean and log-std of a tanh-squashed Gaussian.
    Gaussian,
}

/// Greedy command of a policy network.
pub fn act(policy: &Mlp, head: Head, obs: &Obs) -> Result<ControlCommand> {
    let out = policy.forward(obs);
    let a = match head {
        Head::Deterministic => out[0],
        Head::Gaussian => out[0].tanh(),
    };
    if !a.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(ControlCommand::clipped(a))
}

/// `clip(act + noise)` for a deterministic head.
pub fn act_with_noise(policy: &Mlp, obs: &Obs, noise: &mut NoiseProcess) -> Result<ControlCommand> {
    let a = act(policy, Head::Deterministic, obs)?.value();
    Ok(ControlCommand::clipped(a + noise.sample()))
}

/// `r + gamma (1 - d) q_next`.
pub fn critic_target(r: f64, gamma: f64, done: bool, q_next: f64) -> f64 {
    if done {
        r
    } else {
        r + gamma * q_next
    }
}

/// Policy network used as the expansion sampler of the searching tree.
///
/// Samples follow the behaviour the agent would actually show: a
/// deterministic head adds the exploration process forecast from its
/// current state, a Gaussian head samples with its standard deviation
/// scaled by the noise amplitude. Without noise every sample is the greedy
/// command.
pub struct TreePolicy<'a> {
    pub net: &'a Mlp,
    pub head: Head,
    pub observer: Observer,
    pub noise: Option<&'a NoiseProcess>,
    /// Step of the state whose proposal drew the latest noise sample.
    pub origin_step: usize,
}

impl PolicySampler for TreePolicy<'_> {
    fn sample(&self, state: &OperationState, rng: &mut dyn RngCore) -> ControlCommand {
        let out = self.net.forward(&self.observer.observe(state));
        let Some(noise) = self.noise else {
            return act_output(&out, self.head);
        };
        let z: f64 = rng.sample(StandardNormal);
        let a = match self.head {
            Head::Deterministic => out[0] + noise.forecast(state.step.saturating_sub(self.origin_step), z),
            Head::Gaussian => {
                let log_std = out[1].clamp(losses::LOG_STD_MIN, losses::LOG_STD_MAX);
                (out[0] + noise.amplitude * log_std.exp() * z).tanh()
            }
        };
        ControlCommand::clipped(a)
    }
}

fn act_output(out: &[f64], head: Head) -> ControlCommand {
    match head {
        Head::Deterministic => ControlCommand::clipped(out[0]),
        Head::Gaussian => ControlCommand::clipped(out[0].tanh()),
    }
}

/// Either learner behind one interface.
#[derive(Clone, Debug)]
pub enum Learner {
    Ddpg(Ddpg),
    Sac(Sac),
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(alg: Algorithm, cfg: &AgentConfig, rng: &mut R) -> Self {
        match alg {
            Algorithm::Ddpg => Learner::Ddpg(Ddpg::new(cfg, rng)),
            Algorithm::Sac => Learner::Sac(Sac::new(cfg, rng.gen())),
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        match self {
            Learner::Ddpg(_) => Algorithm::Ddpg,
            Learner::Sac(_) => Algorithm::Sac,
        }
    }

    pub fn policy(&self) -> &Mlp {
        match self {
            Learner::Ddpg(d) => &d.actor,
            Learner::Sac(s) => &s.policy,
        }
    }

    pub fn head(&self) -> Head {
        match self {
            Learner::Ddpg(_) => Head::Deterministic,
            Learner::Sac(_) => Head::Gaussian,
        }
    }

    pub fn act(&self, obs: &Obs) -> Result<ControlCommand> {
        act(self.policy(), self.head(), obs)
    }

    /// Exploratory command. DDPG adds process noise; SAC samples its own
    /// policy with the standard deviation scaled by the noise amplitude.
    pub fn explore(&self, obs: &Obs, noise: &mut NoiseProcess, rng: &mut dyn RngCore) -> Result<ControlCommand> {
        match self {
            Learner::Ddpg(d) => act_with_noise(&d.actor, obs, noise),
            Learner::Sac(s) => {
                let z: f64 = rng.sample(StandardNormal);
                let out = s.policy.forward(obs);
                let log_std = out[1].clamp(losses::LOG_STD_MIN, losses::LOG_STD_MAX);
                let u = out[0] + noise.amplitude * log_std.exp() * z;
                if !u.is_finite() {
                    return Err(Error::NonFinite);
                }
                Ok(ControlCommand::clipped(u.tanh()))
            }
        }
    }

    pub fn tree_policy<'a>(&'a self, observer: Observer, noise: &'a NoiseProcess, origin_step: usize) -> TreePolicy<'a> {
        TreePolicy { net: self.policy(), head: self.head(), observer, noise: Some(noise), origin_step }
    }

    /// One gradient step on every network plus target soft updates.
    pub fn update(&mut self, batch: &[&Transition]) {
        match self {
            Learner::Ddpg(d) => {
                d.update(batch);
            }
            Learner::Sac(s) => {
                s.update(batch);
            }
        }
    }
}

/// Imitation network regressed onto elite trajectories.
#[derive(Clone, Debug)]
pub struct AdditionalActor {
    pub net: Mlp,
    opt: Adam,
}

impl AdditionalActor {
    pub fn new<R: Rng + ?Sized>(cfg: &AgentConfig, rng: &mut R) -> Self {
        Self::from_net(Mlp::new(&cfg.additional_sizes(), OutputActivation::Tanh, Some(3e-3), rng), cfg.additional_lr())
    }

    pub fn from_net(net: Mlp, lr: f64) -> Self {
        let opt = Adam::new(lr, net.num_params());
        Self { net, opt }
    }

    pub fn act(&self, obs: &Obs) -> Result<ControlCommand> {
        act(&self.net, Head::Deterministic, obs)
    }
}

/// One gradient step of mean squared action error over every step of the
/// sampled trajectories. `None` when there is nothing to learn from.
pub fn update_additional_actor(sample: &[&Trajectory], actor: &mut AdditionalActor) -> Option<f64> {
    let pairs: Vec<(Obs, f64)> = sample
        .iter()
        .flat_map(|t| t.states.iter().copied().zip(t.actions.iter().copied()))
        .collect();
    if pairs.is_empty() {
        return None;
    }
    let (loss, grads) = losses::regression_loss(&actor.net, &pairs);
    actor.opt.step(actor.net.params_mut(), &grads);
    Some(loss)
}

/// Mean squared action error of `net` on one trajectory.
pub fn imitation_error(net: &Mlp, traj: &Trajectory) -> f64 {
    if traj.is_empty() {
        return 0.0;
    }
    let sum: f64 = traj
        .states
        .iter()
        .zip(&traj.actions)
        .map(|(s, a)| (net.forward(s)[0] - a).powi(2))
        .sum();
    sum / traj.len() as f64
}

/// True iff every stored trajectory is imitated with error strictly below `eps`.
pub fn additional_actor_converged(elite: &EliteBuffer, net: &Mlp, eps: f64) -> bool {
    !elite.is_empty() && elite.trajectories().iter().all(|t| imitation_error(net, t) < eps)
}

pub(crate) fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
