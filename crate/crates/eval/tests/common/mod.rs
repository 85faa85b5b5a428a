#![allow(dead_code)]

use cab_core::{AgentState, Context, Frame, Instance, MotionHistory, NeighborSet, SemanticMap, Trajectory};
use cab_synthworld::{generate_split, DatasetConfig, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn synth(n: usize, seed: u64) -> Vec<Instance> {
    let cfg = DatasetConfig { n_train: n, n_val: 0, n_test: 0, seed, ..DatasetConfig::default() };
    generate_split(&cfg, Split::Train).unwrap()
}

pub fn random_state(rng: &mut impl Rng) -> AgentState {
    let heading = rng.random_range(-3.0..3.0);
    let v = rng.random_range(0.0..10.0);
    let a = rng.random_range(-2.0..2.0);
    let (s, c) = f64::sin_cos(heading);
    AgentState {
        position: [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)],
        velocity: [v * c, v * s],
        acceleration: [a * c, a * s],
        heading,
        yaw_rate: rng.random_range(-0.8..0.8),
    }
}

/// A world-frame instance with only a current state and a future.
pub fn bare_instance(id: u64, s0: AgentState, future: Vec<[f64; 2]>, dt: f64) -> Instance {
    Instance {
        id,
        episode_id: 0,
        agent_id: 0,
        t0: 0,
        history: MotionHistory { states: vec![s0], dt },
        context: Context { map: SemanticMap::agent_centered(4, 4, 1.0), neighbors: NeighborSet::empty() },
        future: Trajectory::new(future, dt),
        frame: Frame::World,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
