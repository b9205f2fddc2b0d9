use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trainguard_core::search_tree::search_safe_action;
use trainguard_core::{ControlCommand, OperationState, ScenarioConfig, WorkingCondition};

fn tree(c: &mut Criterion) {
    let scn = ScenarioConfig::bundled().build().unwrap();
    // just after an update step, so the tree reaches its full depth
    let s = OperationState { loc: 420.0, vel: 55.0, time: 41.0, step: 41, last_condition: WorkingCondition::Traction, accel: 0.2 };
    let set = scn.shield.safe_action_set(&scn.env, &s).unwrap();
    let policy = |_: &OperationState, rng: &mut dyn RngCore| ControlCommand::clipped(rng.gen_range(-1.0..1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    c.bench_function("search_safe_action_full_depth", |b| {
        b.iter(|| search_safe_action(&scn.env, &scn.shield, &policy, black_box(&s), &set, &scn.search, &mut rng))
    });
}

criterion_group!(benches, tree);
criterion_main!(benches);
