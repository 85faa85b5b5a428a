use cab_autodiff::Tensor;
use cab_core::{to_agent_frame, AgentState, Instance};

use crate::config::ModelConfig;
use crate::error::ModelError;

/// Per-state input features: scaled position, velocity, acceleration,
/// heading as sine/cosine, and yaw rate.
pub const STATE_FEATURES: usize = 9;

pub fn state_features(s: &AgentState) -> [f64; STATE_FEATURES] {
    let (sin, cos) = s.heading.sin_cos();
    [
        s.position[0] / 10.0,
        s.position[1] / 10.0,
        s.velocity[0] / 5.0,
        s.velocity[1] / 5.0,
        s.acceleration[0] / 2.0,
        s.acceleration[1] / 2.0,
        sin,
        cos,
        s.yaw_rate,
    ]
}

/// Kinematic starting point of the decoder rollout, one entry per row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InitialStates {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub heading: Vec<f64>,
    /// Signed speed along the heading.
    pub speed: Vec<f64>,
}

impl InitialStates {
    pub fn push(&mut self, s: &AgentState) {
        let (sin, cos) = s.heading.sin_cos();
        self.x.push(s.position[0]);
        self.y.push(s.position[1]);
        self.heading.push(s.heading);
        self.speed.push(s.velocity[0] * cos + s.velocity[1] * sin);
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn gather(&self, rows: &[usize]) -> Self {
        let pick = |v: &[f64]| rows.iter().map(|&r| v[r]).collect();
        Self { x: pick(&self.x), y: pick(&self.y), heading: pick(&self.heading), speed: pick(&self.speed) }
    }
}

/// Instances converted to agent-frame tensors.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<u64>,
    /// One `[N, STATE_FEATURES]` tensor per history step, oldest first.
    pub history: Vec<Tensor>,
    /// `[N, C, S, S]`.
    pub map: Tensor,
    /// `[M, STATE_FEATURES]` for all neighbors of all instances.
    pub neighbors: Tensor,
    /// `[N, M]` mean-pooling weights; all-zero rows for empty sets.
    pub pool: Tensor,
    /// `[N, T, 2]`, present when every instance carries a full future.
    pub future: Option<Tensor>,
    pub initial: InitialStates,
    horizon: usize,
    short_future: Option<(u64, usize)>,
}

impl Batch {
    pub fn new(insts: &[&Instance], cfg: &ModelConfig) -> Result<Self, ModelError> {
        if insts.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let n = insts.len();
        let steps = cfg.history_steps + 1;
        let s = cfg.map_size;
        let plane = cfg.map_channels * s * s;
        let mut history = vec![Vec::with_capacity(n * STATE_FEATURES); steps];
        let mut map = Vec::with_capacity(n * plane);
        let mut neighbors = Vec::new();
        let mut owners = Vec::new();
        let mut future = Vec::with_capacity(n * cfg.horizon_steps * 2);
        let mut short_future = None;
        let mut initial = InitialStates::default();
        let mut ids = Vec::with_capacity(n);
        for (row, raw) in insts.iter().enumerate() {
            let inst = to_agent_frame(raw)?;
            if inst.history.len() != steps {
                return Err(ModelError::HistoryLength { id: inst.id, got: inst.history.len(), expected: steps });
            }
            let m = &inst.context.map;
            if (m.n_layers(), m.h, m.w) != (cfg.map_channels, s, s) {
                return Err(ModelError::MapShape {
                    id: inst.id,
                    got: (m.n_layers(), m.h, m.w),
                    expected: (cfg.map_channels, s, s),
                });
            }
            for (t, st) in inst.history.states.iter().enumerate() {
                history[t].extend_from_slice(&state_features(st));
            }
            map.extend(m.data.iter().map(|&v| f64::from(v)));
            for nb in &inst.context.neighbors.neighbors {
                neighbors.extend_from_slice(&state_features(nb));
                owners.push(row);
            }
            if inst.future.len() == cfg.horizon_steps {
                for p in &inst.future.points {
                    future.extend_from_slice(p);
                }
            } else if short_future.is_none() {
                short_future = Some((inst.id, inst.future.len()));
            }
            initial.push(inst.current());
            ids.push(inst.id);
        }
        let m = owners.len();
        let mut counts = vec![0usize; n];
        owners.iter().for_each(|&o| counts[o] += 1);
        let mut pool = vec![0.0; n * m];
        for (j, &o) in owners.iter().enumerate() {
            pool[o * m + j] = 1.0 / counts[o] as f64;
        }
        let t = |shape: Vec<usize>, data: Vec<f64>| Tensor::new(shape, data).expect("sizes computed above");
        Ok(Self {
            ids,
            history: history.into_iter().map(|h| t(vec![n, STATE_FEATURES], h)).collect(),
            map: t(vec![n, cfg.map_channels, s, s], map),
            neighbors: t(vec![m, STATE_FEATURES], neighbors),
            pool: t(vec![n, m], pool),
            future: short_future.is_none().then(|| t(vec![n, cfg.horizon_steps, 2], future)),
            initial,
            horizon: cfg.horizon_steps,
            short_future,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn require_future(&self) -> Result<&Tensor, ModelError> {
        match (&self.future, self.short_future) {
            (Some(f), _) => Ok(f),
            (None, Some((id, got))) => Err(ModelError::FutureLength { id, got, expected: self.horizon }),
            (None, None) => unreachable!("future is absent only when some instance is short"),
        }
    }
}
