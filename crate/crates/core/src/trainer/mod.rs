//! Training and execution loops plus the experiment protocols.
//!
//! Every step runs the same pipeline: the policy proposes a command, the
//! shield certifies it, and an unsafe proposal is replaced by the searching
//! tree (SSA variants), by the nearest safe command (Shield variants) or
//! passed through untouched (plain variants).

pub mod checkpoint;
pub mod stats;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::drl::{
    additional_actor_converged, update_additional_actor, AdditionalActor, AgentConfig, Algorithm, EliteBuffer, Head,
    Learner, Mlp, NoiseProcess, Observer, ReplayBuffer, Trajectory, Transition, TreePolicy,
};
use crate::dynamics::{ControlCommand, Environment, OperationState};
use crate::error::{Error, Result};
use crate::search_tree::{search_safe_action, PolicySampler, SearchConfig};
use crate::shield::{nearest_safe, Shield};

pub use checkpoint::Checkpoint;

/// The six agents compared in the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    SsaDdpg,
    SsaSac,
    ShieldDdpg,
    ShieldSac,
    PlainDdpg,
    PlainSac,
}

/// How an unsafe proposal is handled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Correction {
    Search,
    NearestSafe,
    None,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::SsaDdpg,
        Variant::SsaSac,
        Variant::ShieldDdpg,
        Variant::ShieldSac,
        Variant::PlainDdpg,
        Variant::PlainSac,
    ];

    pub fn algorithm(self) -> Algorithm {
        match self {
            Variant::SsaDdpg | Variant::ShieldDdpg | Variant::PlainDdpg => Algorithm::Ddpg,
            _ => Algorithm::Sac,
        }
    }

    pub fn correction(self) -> Correction {
        match self {
            Variant::SsaDdpg | Variant::SsaSac => Correction::Search,
            Variant::ShieldDdpg | Variant::ShieldSac => Correction::NearestSafe,
            Variant::PlainDdpg | Variant::PlainSac => Correction::None,
        }
    }

    /// SSA variants keep the elite buffer and the additional actor.
    pub fn uses_additional(self) -> bool {
        self.correction() == Correction::Search
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::SsaDdpg => "ssa-ddpg",
            Variant::SsaSac => "ssa-sac",
            Variant::ShieldDdpg => "shield-ddpg",
            Variant::ShieldSac => "shield-sac",
            Variant::PlainDdpg => "plain-ddpg",
            Variant::PlainSac => "plain-sac",
        }
    }

    /// The same learner with shield-only correction.
    pub fn shield_counterpart(self) -> Variant {
        match self.algorithm() {
            Algorithm::Ddpg => Variant::ShieldDdpg,
            Algorithm::Sac => Variant::ShieldSac,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s || v.name().replace('-', "_") == s)
            .ok_or_else(|| Error::Domain(format!("unknown agent `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Training episodes `J`; when absent DDPG runs 400 and SAC 500.
    pub episodes: Option<usize>,
    pub seeds: Vec<u64>,
    pub agent: Variant,
    /// Steps per episode; when absent three times the scheduled steps.
    pub step_budget: Option<usize>,
    pub execution_episodes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            episodes: None,
            seeds: vec![0, 1, 2],
            agent: Variant::SsaDdpg,
            step_budget: None,
            execution_episodes: 10,
        }
    }
}

impl RunConfig {
    pub fn episodes_for(&self, variant: Variant) -> usize {
        self.episodes.unwrap_or(match variant.algorithm() {
            Algorithm::Ddpg => 400,
            Algorithm::Sac => 500,
        })
    }

    pub fn validate(&self, path: &str) -> Vec<String> {
        let mut errs = Vec::new();
        if self.episodes == Some(0) {
            errs.push(format!("{path}.episodes: must be >= 1"));
        }
        if self.step_budget == Some(0) {
            errs.push(format!("{path}.step_budget: must be >= 1"));
        }
        if self.seeds.is_empty() {
            errs.push(format!("{path}.seeds: at least one seed is required"));
        }
        if self.execution_episodes == 0 {
            errs.push(format!("{path}.execution_episodes: must be >= 1"));
        }
        errs
    }
}

/// Everything a run needs, already validated.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub env: Environment,
    pub shield: Shield,
    pub search: SearchConfig,
    pub agent: AgentConfig,
    pub run: RunConfig,
}

impl Scenario {
    pub fn observer(&self) -> Observer {
        Observer::new(&self.env)
    }

    pub fn t_up(&self) -> usize {
        self.search.update_frequency
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub total_reward: f64,
    pub protect_times: usize,
    pub overspeed_steps: usize,
    /// kWh
    pub traction_energy: f64,
    /// kWh, negative when recovered.
    pub regen_energy: f64,
    /// s
    pub run_time: f64,
    /// `run_time - T_sch`, s.
    pub schedule_deviation: f64,
    pub arrived: bool,
    pub steps: usize,
    /// Mean wall time of action selection per step, s.
    pub select_time: f64,
    /// Interventions resolved by the all-pruned fallback.
    pub fallbacks: usize,
}

impl EpisodeMetrics {
    pub fn energy(&self) -> f64 {
        self.traction_energy + self.regen_energy
    }
}

/// Per-step record of an executed episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub loc: f64,
    /// km/h, after the step.
    pub vel: f64,
    pub proposed: f64,
    pub cmd: f64,
    pub accel: f64,
    pub intervened: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub metrics: EpisodeMetrics,
    pub trace: Vec<TraceStep>,
}

impl Rollout {
    pub fn speeds(&self) -> Vec<f64> {
        self.trace.iter().map(|t| t.vel).collect()
    }

    pub fn actions(&self) -> Vec<f64> {
        self.trace.iter().map(|t| t.cmd).collect()
    }

    pub fn accels(&self) -> Vec<f64> {
        self.trace.iter().map(|t| t.accel).collect()
    }
}

/// Outcome of one correction decision.
#[derive(Clone, Copy, Debug)]
struct Selection {
    cmd: ControlCommand,
    intervened: bool,
    fallback: bool,
}

fn correct(
    scn: &Scenario,
    correction: Correction,
    state: &OperationState,
    proposed: ControlCommand,
    sampler: &dyn PolicySampler,
    rng: &mut dyn RngCore,
) -> Result<Selection> {
    let pass = Selection { cmd: proposed, intervened: false, fallback: false };
    match correction {
        Correction::None => Ok(pass),
        Correction::NearestSafe => {
            let (cmd, intervened) = scn.shield.filter(&scn.env, state, proposed, nearest_safe(proposed))?;
            Ok(Selection { cmd, intervened, fallback: false })
        }
        Correction::Search => {
            if scn.shield.is_safe(&scn.env, state, proposed).safe() {
                return Ok(pass);
            }
            let set = scn.shield.safe_action_set(&scn.env, state)?;
            let r = search_safe_action(&scn.env, &scn.shield, sampler, state, &set, &scn.search, rng);
            Ok(Selection { cmd: r.cmd, intervened: true, fallback: r.fallback })
        }
    }
}

/// Running totals for one episode.
struct Tally {
    m: EpisodeMetrics,
    select_total: f64,
}

impl Tally {
    fn new(episode: usize) -> Self {
        Self { m: EpisodeMetrics { episode, ..Default::default() }, select_total: 0.0 }
    }

    fn record(&mut self, sel: &Selection, out: &crate::dynamics::StepOutcome, select_secs: f64) {
        let m = &mut self.m;
        m.total_reward += out.reward;
        m.protect_times += sel.intervened as usize;
        m.fallbacks += sel.fallback as usize;
        m.overspeed_steps += out.overspeed as usize;
        m.traction_energy += out.energy_traction;
        m.regen_energy += out.energy_regen;
        m.steps += 1;
        m.run_time = out.next_state.time;
        m.arrived = out.arrived;
        self.select_total += select_secs;
    }

    fn finish(mut self, scheduled_time: f64) -> EpisodeMetrics {
        self.m.schedule_deviation = self.m.run_time - scheduled_time;
        self.m.select_time = if self.m.steps > 0 { self.select_total / self.m.steps as f64 } else { 0.0 };
        self.m
    }
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9)) ^ stream
}

/// Learner state after training one seed.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub variant: Variant,
    pub seed: u64,
    pub learner: Learner,
    pub additional: Option<AdditionalActor>,
    pub elite: EliteBuffer,
    pub metrics: Vec<EpisodeMetrics>,
    /// Transitions pushed to the replay buffer over the whole run.
    pub transitions: usize,
}

impl TrainOutput {
    pub fn converged(&self, eps: f64) -> bool {
        self.additional.as_ref().is_some_and(|a| additional_actor_converged(&self.elite, &a.net, eps))
    }

    pub fn checkpoint(&self, eps: f64) -> Checkpoint {
        Checkpoint {
            variant: self.variant,
            seed: self.seed,
            episodes: self.metrics.len(),
            head: self.learner.head(),
            policy: self.learner.policy().clone(),
            additional: self.additional.as_ref().map(|a| a.net.clone()),
            additional_converged: self.converged(eps),
        }
    }
}

/// Off-policy training of one seed.
///
/// Each episode resets the environment and the noise process. Transitions
/// store the executed (corrected) command. Network updates run whenever the
/// in-episode step count reaches a multiple of `t_up`; the additional actor
/// is regressed onto elite trajectories at every episode end.
pub fn train(scn: &Scenario, variant: Variant, episodes: usize, seed: u64) -> Result<TrainOutput> {
    train_with(scn, variant, episodes, seed, |_| {})
}

/// [`train`] with a callback after each episode.
pub fn train_with<F>(scn: &Scenario, variant: Variant, episodes: usize, seed: u64, mut on_episode: F) -> Result<TrainOutput>
where
    F: FnMut(&EpisodeMetrics),
{
    let cfg = &scn.agent;
    let env = match scn.run.step_budget {
        Some(b) => scn.env.clone().with_step_budget(b),
        None => scn.env.clone(),
    };
    let scn = &Scenario { env, ..scn.clone() };
    let observer = scn.observer();
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let mut learner = Learner::new(variant.algorithm(), cfg, &mut init_rng);
    let mut additional = variant.uses_additional().then(|| AdditionalActor::new(cfg, &mut init_rng));
    let mut noise = NoiseProcess::new(cfg.noise.clone(), derive_seed(seed, 2));
    let mut act_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
    let mut tree_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 4));
    let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 5));
    let mut replay = ReplayBuffer::new(cfg.replay_capacity);
    let mut elite = EliteBuffer::new(cfg.elite_capacity);
    let mut metrics = Vec::with_capacity(episodes);
    let mut transitions = 0usize;
    let t_up = scn.t_up();

    for ep in 0..episodes {
        noise.reset();
        noise.amplitude = cfg.noise.amplitude(ep, episodes);
        let mut state = scn.env.reset();
        let mut tally = Tally::new(ep);
        let mut traj = Trajectory::default();
        loop {
            let obs = observer.observe(&state);
            let t0 = Instant::now();
            let proposed = learner.explore(&obs, &mut noise, &mut act_rng)?;
            let sampler = learner.tree_policy(observer, &noise, state.step);
            let sel = correct(scn, variant.correction(), &state, proposed, &sampler, &mut tree_rng)?;
            let secs = t0.elapsed().as_secs_f64();
            let out = scn.env.step(&state, sel.cmd);
            tally.record(&sel, &out, secs);
            let next_obs = observer.observe(&out.next_state);
            replay.push(Transition {
                obs,
                action: sel.cmd.value(),
                reward: out.reward * cfg.reward_scale,
                next_obs,
                done: out.arrived,
            });
            transitions += 1;
            traj.push(obs, sel.cmd.value(), out.reward);
            state = out.next_state;
            if state.step % t_up == 0 && replay.len() >= cfg.warmup.max(1) {
                for _ in 0..cfg.updates_per_cycle {
                    let batch = replay.sample(cfg.minibatch, &mut batch_rng);
                    learner.update(&batch);
                }
            }
            if out.done {
                break;
            }
        }
        let m = tally.finish(scn.env.track.scheduled_time);
        if let Some(add) = additional.as_mut() {
            if m.arrived {
                elite.insert(traj);
            }
            for _ in 0..cfg.additional_updates {
                let sample = elite.sample(cfg.elite_minibatch, &mut batch_rng);
                if update_additional_actor(&sample, add).is_none() {
                    break;
                }
            }
        }
        on_episode(&m);
        metrics.push(m);
    }
    Ok(TrainOutput { variant, seed, learner, additional, elite, metrics, transitions })
}

/// Random command perturbation used by the robustness protocol.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Disturbance {
    /// Probability of perturbing a step.
    pub probability: f64,
    /// Half-width of the uniform perturbation.
    pub magnitude: f64,
}

/// A greedy policy for execution.
#[derive(Clone, Copy, Debug)]
pub struct ExecPolicy<'a> {
    pub net: &'a Mlp,
    pub head: Head,
}

impl<'a> ExecPolicy<'a> {
    /// The additional actor when requested and present, else the main policy.
    pub fn from_checkpoint(ck: &'a Checkpoint, use_additional: bool) -> Self {
        match (&ck.additional, use_additional) {
            (Some(net), true) => Self { net, head: Head::Deterministic },
            _ => Self { net: &ck.policy, head: ck.head },
        }
    }
}

/// Source of proposals for [`rollout`].
enum Proposer<'a> {
    Policy(ExecPolicy<'a>),
    Constant(ControlCommand),
}

fn rollout(
    scn: &Scenario,
    correction: Correction,
    proposer: &Proposer<'_>,
    episode: usize,
    disturbance: Option<Disturbance>,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout> {
    let observer = scn.observer();
    let constant;
    let tree_policy;
    let sampler: &dyn PolicySampler = match proposer {
        Proposer::Policy(p) => {
            tree_policy = TreePolicy { net: p.net, head: p.head, observer, noise: None, origin_step: 0 };
            &tree_policy
        }
        Proposer::Constant(c) => {
            let c = *c;
            constant = move |_: &OperationState, _: &mut dyn RngCore| c;
            &constant
        }
    };
    let mut state = scn.env.reset();
    let mut tally = Tally::new(episode);
    let mut trace = Vec::new();
    let mut dist_rng = ChaCha8Rng::seed_from_u64(rng.gen());
    loop {
        let t0 = Instant::now();
        let mut proposed = match proposer {
            Proposer::Policy(p) => crate::drl::act(p.net, p.head, &observer.observe(&state))?,
            Proposer::Constant(c) => *c,
        };
        if let Some(d) = disturbance {
            if dist_rng.gen_bool(d.probability.clamp(0.0, 1.0)) {
                let delta = if d.magnitude > 0.0 { dist_rng.gen_range(-d.magnitude..=d.magnitude) } else { 0.0 };
                proposed = ControlCommand::clipped(proposed.value() + delta);
            }
        }
        let sel = correct(scn, correction, &state, proposed, sampler, rng)?;
        let secs = t0.elapsed().as_secs_f64();
        let out = scn.env.step(&state, sel.cmd);
        tally.record(&sel, &out, secs);
        trace.push(TraceStep {
            loc: out.next_state.loc,
            vel: out.next_state.vel,
            proposed: proposed.value(),
            cmd: sel.cmd.value(),
            accel: out.accel_applied,
            intervened: sel.intervened,
        });
        state = out.next_state;
        if out.done {
            break;
        }
    }
    Ok(Rollout { metrics: tally.finish(scn.env.track.scheduled_time), trace })
}

/// Greedy, noise-free episodes with the shield active according to the
/// checkpoint's variant.
pub fn execute(scn: &Scenario, ck: &Checkpoint, use_additional: bool, episodes: usize, seed: u64) -> Result<Vec<Rollout>> {
    execute_policy(scn, ExecPolicy::from_checkpoint(ck, use_additional), ck.variant.correction(), episodes, seed, None)
}

pub fn execute_policy(
    scn: &Scenario,
    policy: ExecPolicy<'_>,
    correction: Correction,
    episodes: usize,
    seed: u64,
    disturbance: Option<Disturbance>,
) -> Result<Vec<Rollout>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 6));
    (0..episodes)
        .map(|ep| rollout(scn, correction, &Proposer::Policy(policy), ep, disturbance, &mut rng))
        .collect()
}

/// Feeds a constant command through the shield and searching tree.
pub fn noise_test(scn: &Scenario, cmd: ControlCommand, episodes: usize, seed: u64) -> Result<Vec<Rollout>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 7));
    (0..episodes)
        .map(|ep| rollout(scn, Correction::Search, &Proposer::Constant(cmd), ep, None, &mut rng))
        .collect()
}

/// PCC of the undisturbed and disturbed speed, command and acceleration
/// sequences. `None` entries mark degenerate (constant) sequences.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PccTriple {
    pub speed: Option<f64>,
    pub action: Option<f64>,
    pub accel: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RobustnessResult {
    pub baseline: Rollout,
    pub disturbed: Rollout,
    pub pcc: PccTriple,
}

/// One disturbed execution compared against the undisturbed one.
pub fn robustness_run(
    scn: &Scenario,
    ck: &Checkpoint,
    use_additional: bool,
    disturbance: Disturbance,
    seed: u64,
) -> Result<RobustnessResult> {
    let policy = ExecPolicy::from_checkpoint(ck, use_additional);
    let corr = ck.variant.correction();
    let baseline = execute_policy(scn, policy, corr, 1, seed, None)?.remove(0);
    let disturbed = execute_policy(scn, policy, corr, 1, seed, Some(disturbance))?.remove(0);
    let pcc = PccTriple {
        speed: stats::pcc_truncated(&baseline.speeds(), &disturbed.speeds()),
        action: stats::pcc_truncated(&baseline.actions(), &disturbed.actions()),
        accel: stats::pcc_truncated(&baseline.accels(), &disturbed.accels()),
    };
    Ok(RobustnessResult { baseline, disturbed, pcc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{RewardWeights, TrackSection, TrainModel};
    use crate::shield::SafetySpec;

    fn scenario() -> Scenario {
        let env = Environment::new(TrainModel::default(), TrackSection::default(), RewardWeights::default());
        let shield = Shield::new(SafetySpec::default(), &env);
        let agent = AgentConfig { hidden_layers: vec![16, 16], minibatch: 16, warmup: 16, ..AgentConfig::default() };
        Scenario { env, shield, search: SearchConfig::default(), agent, run: RunConfig::default() }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("ssa".parse::<Variant>().is_err());
        assert_eq!(RunConfig::default().episodes_for(Variant::SsaDdpg), 400);
        assert_eq!(RunConfig::default().episodes_for(Variant::ShieldSac), 500);
    }

    #[test]
    fn step_budget_bounds_transitions() {
        let mut scn = scenario();
        scn.run.step_budget = Some(10);
        let out = train(&scn, Variant::SsaDdpg, 1, 3).unwrap();
        assert!(out.transitions <= 10);
        assert_eq!(out.metrics.len(), 1);
        assert!(!out.metrics[0].arrived);
    }

    #[test]
    fn shielded_training_never_overspeeds_and_is_deterministic() {
        let scn = scenario();
        for v in [Variant::SsaDdpg, Variant::ShieldSac] {
            let a = train(&scn, v, 3, 11).unwrap();
            let b = train(&scn, v, 3, 11).unwrap();
            assert!(a.metrics.iter().all(|m| m.overspeed_steps == 0));
            let strip = |ms: &[EpisodeMetrics]| {
                ms.iter().map(|m| (m.total_reward, m.protect_times, m.steps)).collect::<Vec<_>>()
            };
            assert_eq!(strip(&a.metrics), strip(&b.metrics));
        }
    }

    #[test]
    fn noise_test_patterns() {
        let scn = scenario();
        let up = noise_test(&scn, ControlCommand::FULL_TRACTION, 1, 0).unwrap();
        assert!(up[0].metrics.arrived);
        assert!(up[0].metrics.protect_times > 10);
        assert_eq!(up[0].metrics.overspeed_steps, 0);
        let down = noise_test(&scn, ControlCommand::FULL_BRAKE, 1, 0).unwrap();
        assert!(!down[0].metrics.arrived);
        let coast = noise_test(&scn, ControlCommand::COAST, 1, 0).unwrap();
        assert!(!coast[0].metrics.arrived);
    }

    #[test]
    fn zero_disturbance_reproduces_execution() {
        let scn = scenario();
        let out = train(&scn, Variant::SsaDdpg, 2, 5).unwrap();
        let ck = out.checkpoint(1e-2);
        let r = robustness_run(&scn, &ck, false, Disturbance { probability: 0.0, magnitude: 0.3 }, 1).unwrap();
        assert_eq!(r.baseline.trace, r.disturbed.trace);
    }
}
