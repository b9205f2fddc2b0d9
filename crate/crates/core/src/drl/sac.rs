use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::buffer::Transition;
use super::losses::{regression_loss, sac_policy_loss, squashed_sample, state_action};
use super::mlp::{soft_update, Adam, Mlp, OutputActivation};
use super::{critic_target, seeded, AgentConfig, Obs, StateAction, OBS_DIM};

/// Soft actor-critic with a state-value network and its target.
#[derive(Clone, Debug)]
pub struct Sac {
    /// Outputs `(mean, log_std)` of the pre-tanh Gaussian.
    pub policy: Mlp,
    pub q: Mlp,
    pub value: Mlp,
    pub value_target: Mlp,
    policy_opt: Adam,
    q_opt: Adam,
    value_opt: Adam,
    pub alpha: f64,
    gamma: f64,
    tau: f64,
    rng: ChaCha8Rng,
}

/// Pre-step losses of one update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SacLosses {
    pub q: f64,
    pub value: f64,
    pub policy: f64,
}

impl Sac {
    pub fn new(cfg: &AgentConfig, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let policy = Mlp::new(&cfg.layer_sizes(OBS_DIM, 2), OutputActivation::Identity, Some(3e-3), &mut rng);
        let q = Mlp::new(&cfg.layer_sizes(OBS_DIM + 1, 1), OutputActivation::Identity, Some(3e-3), &mut rng);
        let value = Mlp::new(&cfg.layer_sizes(OBS_DIM, 1), OutputActivation::Identity, Some(3e-3), &mut rng);
        Self {
            policy_opt: Adam::new(cfg.actor_lr, policy.num_params()),
            q_opt: Adam::new(cfg.sac_softq_lr, q.num_params()),
            value_opt: Adam::new(cfg.sac_value_lr, value.num_params()),
            value_target: value.clone(),
            policy,
            q,
            value,
            alpha: cfg.entropy_alpha,
            gamma: cfg.gamma,
            tau: cfg.soft_tau,
            rng,
        }
    }

    fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.rng.sample(StandardNormal)).collect()
    }

    pub fn update(&mut self, batch: &[&Transition]) -> SacLosses {
        let states: Vec<Obs> = batch.iter().map(|t| t.obs).collect();

        // soft Q towards r + gamma (1 - d) V'(s')
        let q_samples: Vec<(StateAction, f64)> = batch
            .iter()
            .map(|t| {
                let v_next = self.value_target.forward(&t.next_obs)[0];
                (state_action(&t.obs, t.action), critic_target(t.reward, self.gamma, t.done, v_next))
            })
            .collect();
        let (q_loss, q_grads) = regression_loss(&self.q, &q_samples);

        // V towards E[Q(s, a~) - alpha log pi(a~|s)] with fresh actions
        let eps = self.normals(states.len());
        let v_samples: Vec<(Obs, f64)> = states
            .iter()
            .zip(&eps)
            .map(|(s, &e)| {
                let smp = squashed_sample(&self.policy.forward(s), e);
                let q = self.q.forward(&state_action(s, smp.action))[0];
                (*s, q - self.alpha * smp.log_prob)
            })
            .collect();
        let (v_loss, v_grads) = regression_loss(&self.value, &v_samples);

        let eps = self.normals(states.len());
        let (p_loss, p_grads) = sac_policy_loss(&self.policy, &self.q, &states, &eps, self.alpha);

        self.q_opt.step(self.q.params_mut(), &q_grads);
        self.value_opt.step(self.value.params_mut(), &v_grads);
        self.policy_opt.step(self.policy.params_mut(), &p_grads);
        soft_update(&mut self.value_target, &self.value, self.tau).expect("same shapes");
        SacLosses { q: q_loss, value: v_loss, policy: p_loss }
    }
}

#[cfg(test)]
mod tests {
    use super::super::losses::gaussian_log_prob;
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn alpha_zero_policy_loss_is_negative_mean_q() {
        let cfg = AgentConfig { hidden_layers: vec![6], ..AgentConfig::default() };
        let sac = Sac::new(&cfg, 5);
        let states = [[0.1, 0.2, 0.3, 1.0], [0.7, 0.1, 0.9, 0.0]];
        let eps = [0.3, -1.1];
        let (loss, _) = sac_policy_loss(&sac.policy, &sac.q, &states, &eps, 0.0);
        let mean_q: f64 = states
            .iter()
            .zip(eps)
            .map(|(s, e)| {
                let a = squashed_sample(&sac.policy.forward(s), e).action;
                sac.q.forward(&state_action(s, a))[0]
            })
            .sum::<f64>()
            / 2.0;
        assert!((loss + mean_q).abs() < 1e-15);
    }

    #[test]
    fn gaussian_entropy_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for log_std in [-1.0, 0.0, 0.7] {
            let n = 200_000;
            let h: f64 =
                (0..n).map(|_| -gaussian_log_prob(rng.sample::<f64, _>(StandardNormal), log_std)).sum::<f64>() / n as f64;
            let closed = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + log_std;
            assert!((h - closed).abs() < 5e-3, "{h} vs {closed}");
        }
    }

    #[test]
    fn losses_stay_finite_on_random_data() {
        let cfg = AgentConfig { hidden_layers: vec![16, 16], ..AgentConfig::default() };
        let mut sac = Sac::new(&cfg, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<Transition> = (0..64)
            .map(|_| Transition {
                obs: [rng.gen(), rng.gen(), rng.gen(), 0.0],
                action: rng.gen_range(-1.0..1.0),
                reward: rng.gen_range(-5.0..0.0),
                next_obs: [rng.gen(), rng.gen(), rng.gen(), 0.0],
                done: rng.gen_bool(0.1),
            })
            .collect();
        for _ in 0..100 {
            let batch: Vec<&Transition> = data.iter().take(32).collect();
            let l = sac.update(&batch);
            assert!(l.q.is_finite() && l.value.is_finite() && l.policy.is_finite());
        }
        assert!(sac.policy.params().iter().all(|p| p.is_finite()));
    }

    #[test]
    fn alpha_zero_policy_climbs_fixed_bowl() {
        // Q fitted to -(a - 0.5)^2, then the entropy-free policy ascends it.
        let cfg = AgentConfig {
            hidden_layers: vec![32, 32],
            actor_lr: 3e-3,
            entropy_alpha: 0.0,
            ..AgentConfig::default()
        };
        let mut sac = Sac::new(&cfg, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s: Obs = [0.5, 0.5, 0.5, 0.0];
        let mut q_opt = Adam::new(3e-3, sac.q.num_params());
        for _ in 0..3000 {
            let samples: Vec<(StateAction, f64)> = (0..32)
                .map(|_| {
                    let a: f64 = rng.gen_range(-1.0..1.0);
                    (state_action(&s, a), -(a - 0.5) * (a - 0.5))
                })
                .collect();
            let (_, g) = regression_loss(&sac.q, &samples);
            q_opt.step(sac.q.params_mut(), &g);
        }
        let mut p_opt = Adam::new(3e-3, sac.policy.num_params());
        for _ in 0..1500 {
            let eps: Vec<f64> = (0..16).map(|_| rng.sample(StandardNormal)).collect();
            let states = vec![s; 16];
            let (_, g) = sac_policy_loss(&sac.policy, &sac.q, &states, &eps, 0.0);
            p_opt.step(sac.policy.params_mut(), &g);
        }
        let out = sac.policy.forward(&s);
        assert!((out[0].tanh() - 0.5).abs() < 0.1, "mean action {}", out[0].tanh());
    }
}
