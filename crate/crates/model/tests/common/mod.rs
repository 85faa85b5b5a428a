#![allow(dead_code)]

use cab_core::{AgentState, Context, Frame, Instance, MotionHistory, NeighborSet, Pose2, SemanticMap, Trajectory};
use cab_model::ModelConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_state(rng: &mut ChaCha8Rng, spread: f64) -> AgentState {
    let mut r = |s: f64| rng.random_range(-s..s);
    AgentState {
        position: [r(spread), r(spread)],
        velocity: [r(5.0), r(5.0)],
        acceleration: [r(1.0), r(1.0)],
        heading: r(3.0),
        yaw_rate: r(0.5),
    }
}

/// Agent-frame instance with a moving history, random raster and 0–3 neighbors.
pub fn random_instance(cfg: &ModelConfig, id: u64, rng: &mut ChaCha8Rng) -> Instance {
    let speed = rng.random_range(1.0..6.0);
    let states = (0..=cfg.history_steps)
        .map(|k| {
            let back = (cfg.history_steps - k) as f64 * cfg.dt;
            AgentState {
                position: [-speed * back, if k == cfg.history_steps { 0.0 } else { rng.random_range(-0.1..0.1) }],
                velocity: [speed, 0.0],
                acceleration: [rng.random_range(-0.5..0.5), 0.0],
                heading: 0.0,
                yaw_rate: rng.random_range(-0.1..0.1),
            }
        })
        .collect();
    let mut map = SemanticMap::agent_centered(cfg.map_size, cfg.map_size, 1.0);
    for v in map.data.iter_mut() {
        *v = u8::from(rng.random_bool(0.4));
    }
    let n_nb = rng.random_range(0..4);
    let neighbors = (0..n_nb).map(|_| random_state(rng, 15.0)).collect();
    let turn = rng.random_range(-0.2..0.2);
    let points = (1..=cfg.horizon_steps)
        .map(|k| {
            let t = k as f64 * cfg.dt;
            [speed * t, turn * t * t + rng.random_range(-0.2..0.2)]
        })
        .collect();
    Instance {
        id,
        episode_id: id / 4,
        agent_id: 0,
        t0: (id % 4) as u32,
        history: MotionHistory { states, dt: cfg.dt },
        context: Context { map, neighbors: NeighborSet { neighbors } },
        future: Trajectory::new(points, cfg.dt),
        frame: Frame::Agent(Pose2::default()),
    }
}

pub fn random_batch(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n as u64).map(|i| random_instance(cfg, i, &mut rng)).collect()
}

pub fn refs(v: &[Instance]) -> Vec<&Instance> {
    v.iter().collect()
}

/// Scales every parameter so tiny models are far from their symmetric
/// zero-bias initialization.
pub fn jitter(ps: &mut cab_autodiff::ParameterSet, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, p) in ps.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
}
