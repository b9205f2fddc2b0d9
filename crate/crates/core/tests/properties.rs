use proptest::prelude::*;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trainguard_core::config::ScenarioConfig;
use trainguard_core::search_tree::{self, SearchNode};
use trainguard_core::shield::{self, Label};
use trainguard_core::trainer::{self, stats};
use trainguard_core::{
    Checkpoint, ControlCommand, Environment, OperationState, RewardWeights, SafetySpec, SearchConfig, Shield,
    TrackSection, TrainModel, Variant, WorkingCondition,
};

fn default_env() -> (Environment, Shield) {
    let env = Environment::new(TrainModel::default(), TrackSection::default(), RewardWeights::default());
    let shield = Shield::new(SafetySpec::default(), &env);
    (env, shield)
}

fn condition(i: u8) -> WorkingCondition {
    match i % 3 {
        0 => WorkingCondition::Traction,
        1 => WorkingCondition::Coasting,
        _ => WorkingCondition::Braking,
    }
}

fn state(loc: f64, vel: f64, last: u8) -> OperationState {
    OperationState { loc, vel, last_condition: condition(last), ..OperationState::at_rest() }
}

/// Walks the environment with random proposals filtered by the shield.
fn shielded_walk(env: &Environment, shield: &Shield, seed: u64, steps: usize) -> Vec<OperationState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = env.reset();
    let mut seen = vec![s];
    for _ in 0..steps {
        let proposed = ControlCommand::clipped(rng.gen_range(-1.0..=1.0));
        let (cmd, _) = shield.filter(env, &s, proposed, shield::nearest_safe(proposed)).expect("safe set nonempty");
        let out = env.step(&s, cmd);
        assert!(!out.overspeed, "overspeed after certified {cmd:?} from {s:?}");
        if out.done {
            break;
        }
        s = out.next_state;
        seen.push(s);
    }
    seen
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clipping_lands_in_range(v in -10.0f64..10.0) {
        let c = ControlCommand::clipped(v).value();
        prop_assert!((-1.0..=1.0).contains(&c));
        if v.abs() <= 1.0 {
            prop_assert_eq!(c, v);
            prop_assert!(ControlCommand::new(v).is_ok());
        } else {
            prop_assert_eq!(c, v.signum());
            prop_assert!(ControlCommand::new(v).is_err());
        }
    }

    #[test]
    fn label_matches_limit(loc in 0.0f64..1500.0, vel in 0.0f64..120.0) {
        let (env, shield) = default_env();
        let s = state(loc, vel, 1);
        let limit = env.track.speed_limit(loc).unwrap();
        prop_assert_eq!(shield.label(&env, &s) == Label::OverLimit, vel > limit);
    }

    #[test]
    fn safe_set_is_sorted_and_certified(loc in 0.0f64..1400.0, vel in 0.0f64..80.0, last in 0u8..3) {
        let (env, shield) = default_env();
        let s = state(loc, vel, last);
        if let Ok(set) = shield.safe_action_set(&env, &s) {
            prop_assert!(set.windows(2).all(|w| w[0] < w[1]));
            for c in &set {
                prop_assert!(shield.is_safe(&env, &s, *c).safe());
            }
        }
    }

    #[test]
    fn filter_passes_safe_proposals_bitwise(loc in 0.0f64..1400.0, vel in 0.0f64..80.0, last in 0u8..3, p in -1.0f64..=1.0) {
        let (env, shield) = default_env();
        let s = state(loc, vel, last);
        let proposed = ControlCommand::clipped(p);
        if shield.is_safe(&env, &s, proposed).safe() {
            let (cmd, intervened) = shield.filter(&env, &s, proposed, |_| ControlCommand::FULL_BRAKE).unwrap();
            prop_assert!(!intervened);
            prop_assert_eq!(cmd.value().to_bits(), proposed.value().to_bits());
        }
    }

    #[test]
    fn shielded_walks_never_overspeed_and_stay_recoverable(seed in any::<u64>()) {
        let (env, shield) = default_env();
        for s in shielded_walk(&env, &shield, seed, 400) {
            prop_assert!(shield.safe_action_set(&env, &s).is_ok());
        }
    }

    #[test]
    fn braking_membership_is_monotone_on_flat_track(loc in 0.0f64..900.0, vel in 0.0f64..70.0, last in 0u8..3) {
        let env = Environment::new(TrainModel::default(), TrackSection::uniform(1000.0, 70.0, 80.0), RewardWeights::default());
        let spec = SafetySpec { strict_floor: false, ..SafetySpec::default() };
        let shield = Shield::new(spec, &env);
        let s = state(loc, vel, last);
        let grid = shield::command_grid(21);
        for (i, c) in grid.iter().enumerate() {
            if !shield.is_safe(&env, &s, *c).safe() {
                continue;
            }
            for lower in &grid[..i] {
                if shield.is_reversal(s.last_condition, *lower) {
                    continue;
                }
                prop_assert!(shield.is_safe(&env, &s, *lower).safe(), "{c:?} safe but {lower:?} not at {s:?}");
            }
        }
    }

    #[test]
    fn pruned_trees_keep_the_depth_law_and_safety(seed in any::<u64>(), width in 1usize..4, t_up in 1usize..5, at in 0usize..60) {
        let (env, shield) = default_env();
        let walk = shielded_walk(&env, &shield, seed, at);
        let s = *walk.last().unwrap();
        let set = shield.safe_action_set(&env, &s).unwrap();
        let cfg = SearchConfig { expansion_width: width, update_frequency: t_up, ..SearchConfig::default() };
        let sampler = |_: &OperationState, rng: &mut dyn RngCore| ControlCommand::clipped(rng.gen_range(-1.0..=1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let roots = search_tree::build_tree(&env, &shield, &sampler, &s, &set, &cfg, &mut rng);

        fn check(env: &Environment, shield: &Shield, parent: &SearchNode) -> bool {
            parent.children.iter().all(|c| shield.is_safe(env, &parent.state, c.incoming_cmd).safe() && check(env, shield, c))
        }
        for r in &roots {
            prop_assert!(shield.is_safe(&env, &s, r.incoming_cmd).safe());
            prop_assert!(check(&env, &shield, r));
        }
        for r in search_tree::prune(roots, t_up) {
            prop_assert!(r.depth() <= t_up);
            for leaf in r.leaves() {
                prop_assert!(leaf.terminal || leaf.depth_step % t_up == 0);
            }
        }
    }

    #[test]
    fn moving_average_is_window_mean(xs in prop::collection::vec(-100.0f64..100.0, 1..60), window in 1usize..12) {
        let ma = stats::moving_average(&xs, window);
        for (i, m) in ma.iter().enumerate() {
            let lo = (i + 1).saturating_sub(window);
            let want = xs[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64;
            prop_assert!((m - want).abs() < 1e-9);
        }
    }

    #[test]
    fn pcc_is_symmetric_and_affine_invariant(
        xs in prop::collection::vec(-10.0f64..10.0, 3..40),
        a in 0.1f64..5.0,
        b in -5.0f64..5.0,
    ) {
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x * x + i as f64).collect();
        if let (Some(r), Some(r2)) = (stats::pcc(&xs, &ys), stats::pcc(&ys, &xs)) {
            prop_assert!((r - r2).abs() < 1e-12);
            let scaled: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            prop_assert!((stats::pcc(&scaled, &ys).unwrap() - r).abs() < 1e-9);
        }
    }
}

fn bundled() -> trainguard_core::Scenario {
    ScenarioConfig::bundled().build().unwrap()
}

#[test]
fn bundled_scenario_round_trips_through_toml() {
    let cfg = ScenarioConfig::bundled();
    assert!(cfg.validate().is_empty());
    let again = ScenarioConfig::parse(&cfg.to_toml()).unwrap();
    assert_eq!(cfg, again);
}

#[test]
fn protect_times_counts_intervened_steps() {
    let scn = bundled();
    let out = trainer::train(&scn, Variant::ShieldDdpg, 3, 5).unwrap();
    let ck = out.checkpoint(1e-2);
    for r in trainer::execute(&scn, &ck, false, 3, 1).unwrap() {
        assert_eq!(r.metrics.protect_times, r.trace.iter().filter(|t| t.intervened).count());
        assert_eq!(r.metrics.overspeed_steps, 0);
    }
    for r in trainer::noise_test(&scn, ControlCommand::FULL_TRACTION, 1, 0).unwrap() {
        assert_eq!(r.metrics.protect_times, r.trace.iter().filter(|t| t.intervened).count());
        assert!(r.metrics.protect_times > 0);
    }
}

#[test]
fn execution_is_deterministic_and_checkpoints_round_trip() {
    let scn = bundled();
    let out = trainer::train(&scn, Variant::SsaSac, 3, 2).unwrap();
    let ck = out.checkpoint(1e-2);
    let path = std::env::temp_dir().join(format!("trainguard-ck-{}.json", std::process::id()));
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    std::fs::remove_file(&path).ok();
    assert_eq!(ck, loaded);
    let a = trainer::execute(&scn, &ck, true, 2, 9).unwrap();
    let b = trainer::execute(&scn, &loaded, true, 2, 9).unwrap();
    for (mut x, mut y) in a.into_iter().zip(b) {
        // wall-clock timing is the only nondeterministic field
        x.metrics.select_time = 0.0;
        y.metrics.select_time = 0.0;
        assert_eq!(x, y);
    }
}

#[test]
fn training_is_reproducible_per_seed() {
    let scn = bundled();
    let a = trainer::train(&scn, Variant::SsaDdpg, 2, 11).unwrap();
    let b = trainer::train(&scn, Variant::SsaDdpg, 2, 11).unwrap();
    assert_eq!(a.metrics.iter().map(|m| m.total_reward).collect::<Vec<_>>(), b.metrics.iter().map(|m| m.total_reward).collect::<Vec<_>>());
}
