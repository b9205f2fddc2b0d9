//! Safe-action searching tree.
//!
//! When the shield rejects a proposal, every command of the safe set is
//! rolled out one step to form a root. Each node is then expanded with
//! `expansion_width` commands sampled from the current policy; only samples
//! the shield certifies become children. Expansion stops at the next policy
//! update step, so the tree depth adapts to the remaining steps before the
//! policy changes. Branches that never reach that step are pruned, returns
//! are backed up with a discounted mean over children, and the root with the
//! highest backed-up return wins.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlCommand, Environment, OperationState};
use crate::shield::Shield;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub expansion_width: usize,
    /// Policy update cadence in environment steps (`t_up`).
    pub update_frequency: usize,
    pub backup_discount: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { expansion_width: 5, update_frequency: 5, backup_discount: 0.9 }
    }
}

impl SearchConfig {
    pub fn validate(&self, path: &str) -> Vec<String> {
        let mut issues = Vec::new();
        if self.expansion_width < 1 {
            issues.push(format!("{path}.expansion_width: must be >= 1"));
        }
        if self.update_frequency < 1 {
            issues.push(format!("{path}.update_frequency: must be >= 1"));
        }
        if !(self.backup_discount > 0.0 && self.backup_discount <= 1.0) {
            issues.push(format!(
                "{path}.backup_discount: must be in (0, 1] (got {})",
                self.backup_discount
            ));
        }
        issues
    }
}

/// Source of expansion commands.
pub trait PolicySampler: Sync {
    fn sample(&self, state: &OperationState, rng: &mut dyn RngCore) -> ControlCommand;
}

impl<F> PolicySampler for F
where
    F: Fn(&OperationState, &mut dyn RngCore) -> ControlCommand + Sync,
{
    fn sample(&self, state: &OperationState, rng: &mut dyn RngCore) -> ControlCommand {
        self(state, rng)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchNode {
    pub state: OperationState,
    pub incoming_cmd: ControlCommand,
    /// Reward of the step that produced this node.
    pub rollout_reward: f64,
    pub children: Vec<SearchNode>,
    pub backed_return: f64,
    /// Absolute step index of `state` within the episode.
    pub depth_step: usize,
    /// The step ended the episode; such nodes are kept as leaves.
    pub terminal: bool,
}

impl SearchNode {
    pub fn leaf(state: OperationState, incoming_cmd: ControlCommand, rollout_reward: f64) -> Self {
        Self {
            depth_step: state.step,
            state,
            incoming_cmd,
            rollout_reward,
            children: Vec::new(),
            backed_return: rollout_reward,
            terminal: false,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn count(&self) -> usize {
        1 + self.children.iter().map(SearchNode::count).sum::<usize>()
    }

    /// Number of edges on the longest root-to-leaf path, plus one.
    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(SearchNode::depth).max().unwrap_or(0)
    }

    pub fn leaves(&self) -> Vec<&SearchNode> {
        if self.is_leaf() {
            vec![self]
        } else {
            self.children.iter().flat_map(SearchNode::leaves).collect()
        }
    }
}

struct Expander<'a, P: ?Sized> {
    env: &'a Environment,
    shield: &'a Shield,
    policy: &'a P,
    cfg: &'a SearchConfig,
}

impl<P: PolicySampler + ?Sized> Expander<'_, P> {
    fn node(&self, from: &OperationState, cmd: ControlCommand) -> SearchNode {
        let out = self.env.step(from, cmd);
        let mut node = SearchNode::leaf(out.next_state, cmd, out.reward);
        node.terminal = out.done;
        node
    }

    fn expand(&self, node: &mut SearchNode, rng: &mut dyn RngCore) {
        if node.terminal || node.depth_step % self.cfg.update_frequency == 0 {
            return;
        }
        for _ in 0..self.cfg.expansion_width {
            let cmd = self.policy.sample(&node.state, rng);
            if !self.shield.is_safe(self.env, &node.state, cmd).safe() {
                continue;
            }
            // Identical samples would produce identical subtrees.
            if node.children.iter().any(|c| c.incoming_cmd == cmd) {
                continue;
            }
            let mut child = self.node(&node.state, cmd);
            self.expand(&mut child, rng);
            node.children.push(child);
        }
    }
}

/// Expands one root per safe command from `state` (unpruned).
pub fn build_tree<P: PolicySampler + ?Sized>(
    env: &Environment,
    shield: &Shield,
    policy: &P,
    state: &OperationState,
    safe_set: &[ControlCommand],
    cfg: &SearchConfig,
    rng: &mut dyn RngCore,
) -> Vec<SearchNode> {
    let ex = Expander { env, shield, policy, cfg };
    safe_set
        .iter()
        .map(|&cmd| {
            let mut root = ex.node(state, cmd);
            ex.expand(&mut root, rng);
            root
        })
        .collect()
}

/// Drops every branch that does not reach an update step (or the end of
/// the episode).
pub fn prune(nodes: Vec<SearchNode>, update_frequency: usize) -> Vec<SearchNode> {
    nodes.into_iter().filter_map(|n| prune_node(n, update_frequency)).collect()
}

fn prune_node(mut node: SearchNode, t_up: usize) -> Option<SearchNode> {
    if node.is_leaf() {
        return (node.terminal || node.depth_step % t_up == 0).then_some(node);
    }
    node.children = prune(std::mem::take(&mut node.children), t_up);
    (!node.children.is_empty()).then_some(node)
}

/// Leaves keep their rollout reward; branch nodes add the discounted mean
/// of their children's returns.
pub fn backup(nodes: &mut [SearchNode], discount: f64) {
    for node in nodes {
        backup_node(node, discount);
    }
}

fn backup_node(node: &mut SearchNode, discount: f64) -> f64 {
    if node.is_leaf() {
        node.backed_return = node.rollout_reward;
    } else {
        let n = node.children.len() as f64;
        let sum: f64 = node.children.iter_mut().map(|c| backup_node(c, discount)).sum();
        node.backed_return = node.rollout_reward + discount * sum / n;
    }
    node.backed_return
}

/// Greedy choice over roots; ties go to the smaller (more braking) command.
pub fn select_safe_action(roots: &[SearchNode]) -> Option<ControlCommand> {
    let mut best: Option<&SearchNode> = None;
    for r in roots {
        best = match best {
            None => Some(r),
            Some(b)
                if r.backed_return > b.backed_return
                    || (r.backed_return == b.backed_return && r.incoming_cmd < b.incoming_cmd) =>
            {
                Some(r)
            }
            keep => keep,
        };
    }
    best.map(|n| n.incoming_cmd)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchResult {
    pub cmd: ControlCommand,
    /// Every root was pruned and the most braking safe command was used.
    pub fallback: bool,
    pub nodes: usize,
}

/// Build, prune, back up and select in one go.
pub fn search_safe_action<P: PolicySampler + ?Sized>(
    env: &Environment,
    shield: &Shield,
    policy: &P,
    state: &OperationState,
    safe_set: &[ControlCommand],
    cfg: &SearchConfig,
    rng: &mut dyn RngCore,
) -> SearchResult {
    let roots = build_tree(env, shield, policy, state, safe_set, cfg, rng);
    let nodes = roots.iter().map(SearchNode::count).sum();
    let mut roots = prune(roots, cfg.update_frequency);
    backup(&mut roots, cfg.backup_discount);
    match select_safe_action(&roots) {
        Some(cmd) => SearchResult { cmd, fallback: false, nodes },
        None => SearchResult {
            cmd: safe_set
                .iter()
                .copied()
                .fold(ControlCommand::FULL_TRACTION, |a, b| if b < a { b } else { a }),
            fallback: true,
            nodes,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{RewardWeights, TrackSection, TrainModel, WorkingCondition};
    use crate::shield::SafetySpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Environment, Shield) {
        let env = Environment::new(TrainModel::default(), TrackSection::default(), RewardWeights::default());
        let shield = Shield::new(SafetySpec::default(), &env);
        (env, shield)
    }

    fn node(r: f64, step: usize, cmd: f64, children: Vec<SearchNode>) -> SearchNode {
        let state = OperationState { step, ..OperationState::at_rest() };
        SearchNode { children, ..SearchNode::leaf(state, ControlCommand::clipped(cmd), r) }
    }

    fn uniform_policy(_: &OperationState, rng: &mut dyn RngCore) -> ControlCommand {
        let u = rng.next_u32() as f64 / u32::MAX as f64;
        ControlCommand::clipped(2.0 * u - 1.0)
    }

    #[test]
    fn backup_examples() {
        let mut leaf = vec![node(2.5, 5, 0.0, vec![])];
        backup(&mut leaf, 0.9);
        assert_eq!(leaf[0].backed_return, 2.5);

        let mut t = vec![node(1.0, 3, 0.0, vec![node(2.0, 5, 0.0, vec![]), node(4.0, 5, 0.1, vec![])])];
        backup(&mut t, 0.9);
        assert!((t[0].backed_return - 3.7).abs() < 1e-12);

        let mut chain = vec![node(1.0, 3, 0.0, vec![node(1.0, 4, 0.0, vec![node(1.0, 5, 0.0, vec![])])])];
        backup(&mut chain, 0.9);
        assert!((chain[0].backed_return - 2.71).abs() < 1e-12);
    }

    #[test]
    fn prune_examples() {
        let full = vec![node(0.0, 4, 0.0, vec![node(0.0, 5, 0.0, vec![]), node(0.0, 5, 0.5, vec![])])];
        assert_eq!(prune(full.clone(), 5), full);

        // second root stops at step 3, short of the update step
        let mixed = vec![
            node(0.0, 4, 0.0, vec![node(0.0, 5, 0.0, vec![])]),
            node(0.0, 2, 0.2, vec![node(0.0, 3, 0.0, vec![])]),
        ];
        let p = prune(mixed, 5);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].incoming_cmd.value(), 0.0);

        let dead = vec![node(0.0, 2, 0.0, vec![node(0.0, 3, 0.0, vec![])]), node(0.0, 4, 0.0, vec![])];
        assert!(prune(dead, 5).is_empty());
    }

    #[test]
    fn selection() {
        let mut roots = vec![node(3.7, 5, -0.2, vec![]), node(2.1, 5, 0.4, vec![])];
        backup(&mut roots, 0.9);
        assert_eq!(select_safe_action(&roots).unwrap().value(), -0.2);
        let tie = vec![node(1.0, 5, 0.3, vec![]), node(1.0, 5, -0.3, vec![])];
        assert_eq!(select_safe_action(&tie).unwrap().value(), -0.3);
        assert_eq!(select_safe_action(&tie[..1]).unwrap().value(), 0.3);
        assert!(select_safe_action(&[]).is_none());
    }

    #[test]
    fn update_step_gives_depth_one() {
        let (env, shield) = setup();
        // state at step 4: roots land on step 5 which is an update step
        let s = OperationState { loc: 100.0, vel: 79.0, step: 4, ..OperationState::at_rest() };
        let set = shield.safe_action_set(&env, &s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let roots = build_tree(&env, &shield, &uniform_policy, &s, &set, &SearchConfig::default(), &mut rng);
        assert_eq!(roots.len(), set.len());
        assert!(roots.iter().all(SearchNode::is_leaf));
    }

    #[test]
    fn width_one_is_a_path() {
        let (env, shield) = setup();
        let s = OperationState { loc: 100.0, vel: 40.0, step: 0, ..OperationState::at_rest() };
        let set = shield.safe_action_set(&env, &s).unwrap();
        let cfg = SearchConfig { expansion_width: 1, ..SearchConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for root in build_tree(&env, &shield, &uniform_policy, &s, &set, &cfg, &mut rng) {
            let mut n = &root;
            let mut len = 1;
            while let Some(c) = n.children.first() {
                assert_eq!(n.children.len(), 1);
                n = c;
                len += 1;
            }
            assert!(len <= cfg.update_frequency);
        }
    }

    #[test]
    fn adversarial_policy_triggers_fallback() {
        let (env, shield) = setup();
        // From rest only traction is certified; braking right after
        // traction is a reversal, so every expansion sample is rejected.
        let brake = |_: &OperationState, _: &mut dyn RngCore| ControlCommand::FULL_BRAKE;
        let s = OperationState::at_rest();
        let set = shield.safe_action_set(&env, &s).unwrap();
        assert!(set.iter().all(|c| c.condition() == WorkingCondition::Traction));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = SearchConfig::default();
        let roots = build_tree(&env, &shield, &brake, &s, &set, &cfg, &mut rng);
        assert!(prune(roots, cfg.update_frequency).is_empty());
        let res = search_safe_action(&env, &shield, &brake, &s, &set, &cfg, &mut rng);
        assert!(res.fallback);
        assert_eq!(res.cmd, set[0]);
    }

    #[test]
    fn pruned_leaves_sit_on_update_steps() {
        let (env, shield) = setup();
        let cfg = SearchConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for start in 0..cfg.update_frequency {
            let s = OperationState { loc: 300.0, vel: 75.0, step: start, ..OperationState::at_rest() };
            let set = shield.safe_action_set(&env, &s).unwrap();
            let roots = prune(build_tree(&env, &shield, &uniform_policy, &s, &set, &cfg, &mut rng), 5);
            for r in &roots {
                assert!(r.depth() <= cfg.update_frequency);
                for leaf in r.leaves() {
                    assert!(leaf.terminal || leaf.depth_step % 5 == 0);
                }
            }
        }
    }

    #[test]
    fn seeded_search_is_deterministic() {
        let (env, shield) = setup();
        let s = OperationState { loc: 300.0, vel: 75.0, step: 1, ..OperationState::at_rest() };
        let set = shield.safe_action_set(&env, &s).unwrap();
        let cfg = SearchConfig::default();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            search_safe_action(&env, &shield, &uniform_policy, &s, &set, &cfg, &mut rng)
        };
        assert_eq!(run(5), run(5));
    }
}
