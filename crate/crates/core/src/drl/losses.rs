//! Loss functions with analytic parameter gradients.
//!
//! Each function returns `(loss, dloss/dparams)` for one network and leaves
//! every other network untouched, so updates and finite-difference checks
//! share the same code path.

use super::mlp::Mlp;
use super::{Obs, StateAction, OBS_DIM};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Mean squared error of `net(input)[0]` against fixed targets.
pub fn regression_loss<I: AsRef<[f64]>>(net: &Mlp, samples: &[(I, f64)]) -> (f64, Vec<f64>) {
    let mut grads = vec![0.0; net.num_params()];
    if samples.is_empty() {
        return (0.0, grads);
    }
    let n = samples.len() as f64;
    let mut loss = 0.0;
    for (x, y) in samples {
        let tape = net.forward_tape(x.as_ref());
        let e = tape.output()[0] - y;
        loss += e * e;
        net.backward(&tape, &[2.0 * e / n], &mut grads);
    }
    (loss / n, grads)
}

pub fn state_action(s: &Obs, a: f64) -> StateAction {
    let mut x = [0.0; OBS_DIM + 1];
    x[..OBS_DIM].copy_from_slice(s);
    x[OBS_DIM] = a;
    x
}

/// Deterministic policy loss `-mean Q(s, mu(s))`, gradient w.r.t. the actor.
pub fn actor_loss(actor: &Mlp, critic: &Mlp, states: &[Obs]) -> (f64, Vec<f64>) {
    let mut grads = vec![0.0; actor.num_params()];
    if states.is_empty() {
        return (0.0, grads);
    }
    let n = states.len() as f64;
    let mut total_q = 0.0;
    for s in states {
        let at = actor.forward_tape(s);
        let a = at.output()[0];
        let qt = critic.forward_tape(&state_action(s, a));
        total_q += qt.output()[0];
        let dq_da = critic.input_gradient(&qt, &[1.0])[OBS_DIM];
        actor.backward(&at, &[-dq_da / n], &mut grads);
    }
    (-total_q / n, grads)
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Log-density of a Gaussian sample `mean + exp(log_std) * eps`.
pub fn gaussian_log_prob(eps: f64, log_std: f64) -> f64 {
    -0.5 * eps * eps - log_std - HALF_LN_2PI
}

/// `ln(1 - tanh(u)^2)` without cancellation.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

/// A reparameterised draw from a tanh-squashed Gaussian head.
#[derive(Clone, Copy, Debug)]
pub struct SquashedSample {
    pub mean: f64,
    pub log_std: f64,
    pub pre_tanh: f64,
    pub action: f64,
    pub log_prob: f64,
    log_std_active: bool,
}

pub fn squashed_sample(head: &[f64], eps: f64) -> SquashedSample {
    let mean = head[0];
    let raw = head[1];
    let log_std = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
    let u = mean + log_std.exp() * eps;
    let action = u.tanh();
    let log_prob = gaussian_log_prob(eps, log_std) - log_one_minus_tanh_sq(u);
    SquashedSample {
        mean,
        log_std,
        pre_tanh: u,
        action,
        log_prob,
        log_std_active: raw > LOG_STD_MIN && raw < LOG_STD_MAX,
    }
}

/// Entropy-regularised policy loss `mean(alpha * log pi(a|s) - Q(s, a))`
/// with `a` reparameterised through the fixed standard-normal draws `eps`.
pub fn sac_policy_loss(policy: &Mlp, q: &Mlp, states: &[Obs], eps: &[f64], alpha: f64) -> (f64, Vec<f64>) {
    assert_eq!(states.len(), eps.len());
    let mut grads = vec![0.0; policy.num_params()];
    if states.is_empty() {
        return (0.0, grads);
    }
    let n = states.len() as f64;
    let mut loss = 0.0;
    for (s, &e) in states.iter().zip(eps) {
        let pt = policy.forward_tape(s);
        let smp = squashed_sample(pt.output(), e);
        let qt = q.forward_tape(&state_action(s, smp.action));
        loss += alpha * smp.log_prob - qt.output()[0];
        let dq_da = q.input_gradient(&qt, &[1.0])[OBS_DIM];
        let std = smp.log_std.exp();
        let t = smp.pre_tanh.tanh();
        let da_du = 1.0 - smp.action * smp.action;
        let d_mean = alpha * 2.0 * t - dq_da * da_du;
        let d_log_std = if smp.log_std_active {
            alpha * (-1.0 + 2.0 * t * std * e) - dq_da * da_du * std * e
        } else {
            0.0
        };
        policy.backward(&pt, &[d_mean / n, d_log_std / n], &mut grads);
    }
    (loss / n, grads)
}
