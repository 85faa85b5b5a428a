//! Kinematic forecasters, the per-instance physics oracle and Kalman-filter
//! hardness.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2x4, Matrix4, Vector2, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use cab_core::kinematics::ctra_displacement;
use cab_core::{AgentState, Forecaster, Instance, MotionHistory, Trajectory};

use crate::error::EvalError;
use crate::metrics::{ade, fde};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhysicsKind {
    ConstVelYaw,
    ConstAccelYaw,
    ConstSpeedYawrate,
    ConstAccelYawrate,
}

impl PhysicsKind {
    pub const ALL: [PhysicsKind; 4] =
        [Self::ConstVelYaw, Self::ConstAccelYaw, Self::ConstSpeedYawrate, Self::ConstAccelYawrate];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::ConstVelYaw => "const_vel_yaw",
            Self::ConstAccelYaw => "const_accel_yaw",
            Self::ConstSpeedYawrate => "const_speed_yawrate",
            Self::ConstAccelYawrate => "const_accel_yawrate",
        }
    }

    fn uses_accel(&self) -> bool {
        matches!(self, Self::ConstAccelYaw | Self::ConstAccelYawrate)
    }

    fn uses_yaw_rate(&self) -> bool {
        matches!(self, Self::ConstSpeedYawrate | Self::ConstAccelYawrate)
    }
}

impl fmt::Display for PhysicsKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PhysicsKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown physics kind {s:?}"))
    }
}

/// Closed-form rollout from `s0` sampled at `k·dt`, `k = 1..=steps`. Speed is
/// the velocity projected on the heading, so a reversing agent keeps
/// reversing.
pub fn physics_predict(kind: PhysicsKind, s0: &AgentState, steps: usize, dt: f64) -> Trajectory {
    let (sin, cos) = s0.heading.sin_cos();
    let v = s0.velocity[0] * cos + s0.velocity[1] * sin;
    let a = if kind.uses_accel() { s0.longitudinal_accel() } else { 0.0 };
    let w = if kind.uses_yaw_rate() { s0.yaw_rate } else { 0.0 };
    let points = (1..=steps)
        .map(|k| {
            let d = ctra_displacement(s0.heading, v, a, w, k as f64 * dt);
            [s0.position[0] + d[0], s0.position[1] + d[1]]
        })
        .collect();
    Trajectory::new(points, dt)
}

/// The physics rollout with the lowest ADE against `gt`; ties go to the
/// earlier kind.
pub fn physics_oracle(s0: &AgentState, gt: &Trajectory) -> Result<(PhysicsKind, Trajectory), EvalError> {
    let mut best: Option<(f64, PhysicsKind, Trajectory)> = None;
    for kind in PhysicsKind::ALL {
        let pred = physics_predict(kind, s0, gt.len(), gt.dt);
        let e = ade(&pred, gt, gt.len())?;
        if best.as_ref().is_none_or(|b| e < b.0) {
            best = Some((e, kind, pred));
        }
    }
    let (_, kind, traj) = best.expect("four kinds");
    Ok((kind, traj))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhysicsForecaster {
    pub kind: PhysicsKind,
}

impl Forecaster for PhysicsForecaster {
    fn name(&self) -> &str {
        self.kind.as_str()
    }

    fn predict_ml(&self, inst: &Instance) -> Trajectory {
        physics_predict(self.kind, inst.history.current(), inst.future.len(), inst.history.dt)
    }
}

/// Per-instance best physics model; reads the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PhysicsOracle;

impl Forecaster for PhysicsOracle {
    fn name(&self) -> &str {
        "physics_oracle"
    }

    fn predict_ml(&self, inst: &Instance) -> Trajectory {
        physics_oracle(inst.history.current(), &inst.future).expect("rollout matches future length").1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KalmanConfig {
    /// Continuous white-acceleration spectral density, m²/s³.
    pub q: f64,
    /// Position observation variance, m².
    pub r: f64,
    /// Initial covariance scale.
    pub p0: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self { q: 0.5, r: 0.1, p0: 10.0 }
    }
}

impl KalmanConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.q > 0.0 && self.r > 0.0 && self.p0 > 0.0 {
            Ok(())
        } else {
            Err(EvalError::Config(format!("Kalman q, r and p0 must be positive, got {self:?}")))
        }
    }
}

/// Constant-velocity filter over `(x, y, vx, vy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CvKalman {
    pub x: Vector4<f64>,
    pub p: Matrix4<f64>,
    f: Matrix4<f64>,
    q: Matrix4<f64>,
    r: f64,
}

impl CvKalman {
    /// Starts at `first` moving with `velocity`, covariance `p0·I`.
    pub fn new(first: [f64; 2], velocity: [f64; 2], dt: f64, cfg: &KalmanConfig) -> Self {
        let f = Matrix4::new(1.0, 0.0, dt, 0.0, 0.0, 1.0, 0.0, dt, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let (a, b, c) = (dt.powi(3) / 3.0, dt.powi(2) / 2.0, dt);
        let q = cfg.q * Matrix4::new(a, 0.0, b, 0.0, 0.0, a, 0.0, b, b, 0.0, c, 0.0, 0.0, b, 0.0, c);
        Self { x: Vector4::new(first[0], first[1], velocity[0], velocity[1]), p: Matrix4::identity() * cfg.p0, f, q, r: cfg.r }
    }

    pub fn predict(&mut self) {
        self.x = self.f * self.x;
        self.p = self.f * self.p * self.f.transpose() + self.q;
    }

    /// Joseph-form position update.
    pub fn update(&mut self, z: [f64; 2]) {
        let h = Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0);
        let s = h * self.p * h.transpose() + nalgebra::Matrix2::identity() * self.r;
        let s_inv = s.try_inverse().expect("innovation covariance is positive definite");
        let k = self.p * h.transpose() * s_inv;
        self.x += k * (Vector2::new(z[0], z[1]) - h * self.x);
        let i_kh = Matrix4::identity() - k * h;
        self.p = i_kh * self.p * i_kh.transpose() + k * k.transpose() * self.r;
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x[0], self.x[1]]
    }
}

/// Filters the observed positions, then predicts open loop over the
/// horizon. The initial velocity is the difference of the first two
/// observations.
pub fn kalman_forecast(history: &MotionHistory, steps: usize, cfg: &KalmanConfig) -> Trajectory {
    let dt = history.dt;
    let p = |i: usize| history.states[i].position;
    let v0 = if history.len() > 1 { [(p(1)[0] - p(0)[0]) / dt, (p(1)[1] - p(0)[1]) / dt] } else { [0.0; 2] };
    let mut kf = CvKalman::new(p(0), v0, dt, cfg);
    for s in &history.states[1..] {
        kf.predict();
        kf.update(s.position);
    }
    let points = (0..steps)
        .map(|_| {
            kf.predict();
            kf.position()
        })
        .collect();
    Trajectory::new(points, dt)
}

/// FDE of the Kalman forecast against the ground truth.
pub fn kalman_hardness(history: &MotionHistory, gt: &Trajectory, cfg: &KalmanConfig) -> Result<f64, EvalError> {
    fde(&kalman_forecast(history, gt.len(), cfg), gt, gt.len())
}

pub fn hardness_scores(insts: &[Instance], cfg: &KalmanConfig) -> Result<Vec<f64>, EvalError> {
    cfg.validate()?;
    insts.par_iter().map(|i| kalman_hardness(&i.history, &i.future, cfg)).collect()
}

/// Top-`p`% index sets, hardest first, ties by ascending id; the set for
/// `p` holds `ceil(p·n/100)` indices.
pub fn rank_hardness(ids: &[u64], scores: &[f64], pcts: &[f64]) -> Result<Vec<Vec<usize>>, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::Empty("hardness ranking"));
    }
    if ids.len() != scores.len() {
        return Err(EvalError::Length { what: "ids vs scores", got: ids.len(), expected: scores.len() });
    }
    if let Some(p) = pcts.iter().find(|p| !(**p > 0.0 && **p <= 100.0)) {
        return Err(EvalError::Config(format!("percentile {p} outside (0, 100]")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(ids[a].cmp(&ids[b])));
    let n = scores.len() as f64;
    Ok(pcts
        .iter()
        .map(|p| {
            let k = (p * n / 100.0).ceil() as usize;
            order[..k.min(order.len())].to_vec()
        })
        .collect())
}
