use rand::Rng;

use super::buffer::Transition;
use super::losses::{actor_loss, regression_loss, state_action};
use super::mlp::{soft_update, Adam, Mlp, OutputActivation};
use super::{critic_target, AgentConfig, Obs, StateAction, OBS_DIM};

/// Deterministic actor-critic with target networks.
#[derive(Clone, Debug)]
pub struct Ddpg {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    gamma: f64,
    tau: f64,
}

impl Ddpg {
    pub fn new<R: Rng + ?Sized>(cfg: &AgentConfig, rng: &mut R) -> Self {
        let actor_sizes = cfg.layer_sizes(OBS_DIM, 1);
        let critic_sizes = cfg.layer_sizes(OBS_DIM + 1, 1);
        let actor = Mlp::new(&actor_sizes, OutputActivation::Tanh, Some(3e-3), rng);
        let critic = Mlp::new(&critic_sizes, OutputActivation::Identity, Some(3e-3), rng);
        Self {
            actor_opt: Adam::new(cfg.actor_lr, actor.num_params()),
            critic_opt: Adam::new(cfg.critic_lr, critic.num_params()),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            gamma: cfg.gamma,
            tau: cfg.soft_tau,
        }
    }

    pub fn act(&self, obs: &Obs) -> f64 {
        self.actor.forward(obs)[0]
    }

    /// `r + gamma (1 - d) Q'(s', mu'(s'))`
    pub fn target(&self, t: &Transition) -> f64 {
        let a = self.actor_target.forward(&t.next_obs)[0];
        let q = self.critic_target.forward(&state_action(&t.next_obs, a))[0];
        critic_target(t.reward, self.gamma, t.done, q)
    }

    /// One gradient step on the critic; returns the pre-step loss.
    pub fn update_critic(&mut self, batch: &[&Transition]) -> f64 {
        let samples: Vec<(StateAction, f64)> =
            batch.iter().map(|t| (state_action(&t.obs, t.action), self.target(t))).collect();
        let (loss, grads) = regression_loss(&self.critic, &samples);
        self.critic_opt.step(self.critic.params_mut(), &grads);
        loss
    }

    /// One ascent step on `mean Q(s, mu(s))`; returns that mean before the step.
    pub fn update_actor(&mut self, batch: &[&Transition]) -> f64 {
        let states: Vec<Obs> = batch.iter().map(|t| t.obs).collect();
        let (loss, grads) = actor_loss(&self.actor, &self.critic, &states);
        self.actor_opt.step(self.actor.params_mut(), &grads);
        -loss
    }

    pub fn soft_update_targets(&mut self) {
        soft_update(&mut self.actor_target, &self.actor, self.tau).expect("same shapes");
        soft_update(&mut self.critic_target, &self.critic, self.tau).expect("same shapes");
    }

    pub fn update(&mut self, batch: &[&Transition]) -> (f64, f64) {
        let c = self.update_critic(batch);
        let a = self.update_actor(batch);
        self.soft_update_targets();
        (c, a)
    }
}
