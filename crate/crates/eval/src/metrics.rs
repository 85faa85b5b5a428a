//! Displacement, off-road and rolling temporal-consistency metrics.

use std::collections::BTreeMap;

use cab_core::{Frame, Instance, Point2, SemanticMap, Trajectory};

use crate::error::EvalError;

fn dist(a: Point2, b: Point2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check(pred: &Trajectory, gt: &Trajectory, horizon: usize) -> Result<(), EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::Length { what: "prediction vs ground truth", got: pred.len(), expected: gt.len() });
    }
    if horizon == 0 || horizon > gt.len() {
        return Err(EvalError::Length { what: "horizon", got: horizon, expected: gt.len() });
    }
    Ok(())
}

/// Mean point distance over the first `horizon` steps.
pub fn ade(pred: &Trajectory, gt: &Trajectory, horizon: usize) -> Result<f64, EvalError> {
    check(pred, gt, horizon)?;
    let s: f64 = pred.points[..horizon].iter().zip(&gt.points[..horizon]).map(|(a, b)| dist(*a, *b)).sum();
    Ok(s / horizon as f64)
}

/// Distance at step `horizon`.
pub fn fde(pred: &Trajectory, gt: &Trajectory, horizon: usize) -> Result<f64, EvalError> {
    check(pred, gt, horizon)?;
    Ok(dist(pred.points[horizon - 1], gt.points[horizon - 1]))
}

/// Mean ADE and FDE of `samples` at `horizon`.
pub fn mean_displacement(samples: &[Trajectory], gt: &Trajectory, horizon: usize) -> Result<(f64, f64), EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Empty("sample set"));
    }
    let (mut a, mut f) = (0.0, 0.0);
    for s in samples {
        a += ade(s, gt, horizon)?;
        f += fde(s, gt, horizon)?;
    }
    let n = samples.len() as f64;
    Ok((a / n, f / n))
}

/// ADE-f and FDE-f over `n` draws from `sampler(n, seed)`.
pub fn displacement_full(
    sampler: impl FnOnce(usize, u64) -> Vec<Trajectory>,
    gt: &Trajectory,
    horizon: usize,
    n: usize,
    seed: u64,
) -> Result<(f64, f64), EvalError> {
    if n < 1 {
        return Err(EvalError::Config("at least one sample is required".into()));
    }
    mean_displacement(&sampler(n, seed), gt, horizon)
}

/// Whether any point falls in a non-driveable cell or off the raster.
pub fn leaves_road(traj: &Trajectory, map: &SemanticMap) -> bool {
    traj.points.iter().any(|&p| !map.is_driveable(p))
}

/// Fraction of trajectories that leave the driveable area.
pub fn offroad_rate(trajs: &[Trajectory], map: &SemanticMap) -> f64 {
    if trajs.is_empty() {
        return 0.0;
    }
    trajs.iter().filter(|t| leaves_road(t, map)).count() as f64 / trajs.len() as f64
}

/// Every prediction made for one ground-truth point, by lead time.
#[derive(Debug, Clone, PartialEq)]
pub struct RollingPredictions {
    pub episode_id: u64,
    pub agent_id: u32,
    /// Timestep of the ground-truth point.
    pub t: u32,
    pub gt: Point2,
    /// `(lead steps, predicted point)`, ascending lead.
    pub preds: Vec<(usize, Point2)>,
    pub horizon: usize,
    pub dt: f64,
}

impl RollingPredictions {
    pub fn is_complete(&self) -> bool {
        self.preds.len() == self.horizon
    }

    pub fn points(&self) -> Vec<Point2> {
        self.preds.iter().map(|p| p.1).collect()
    }
}

/// Population standard deviation of the distances to the barycentre; `None`
/// with fewer than two points.
pub fn dispersion(points: &[Point2]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let sum = points.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
    let c = [sum[0] / n, sum[1] / n];
    let d: Vec<f64> = points.iter().map(|&p| dist(p, c)).collect();
    let mean = d.iter().sum::<f64>() / n;
    Some((d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt())
}

/// Longest lead time, in seconds, up to which every prediction lies within
/// `tau` of the truth. `None` unless all `horizon` lead times are present.
pub fn convergence_to_range(rp: &RollingPredictions, tau: f64) -> Option<f64> {
    if !rp.is_complete() || rp.preds.iter().enumerate().any(|(i, p)| p.0 != i + 1) {
        return None;
    }
    let within = rp.preds.iter().take_while(|(_, p)| dist(*p, rp.gt) <= tau).count();
    Some(within as f64 * rp.dt)
}

/// Maps a point from the instance frame to the world frame.
fn to_world(inst: &Instance, p: Point2) -> Point2 {
    match inst.frame {
        Frame::Agent(pose) => pose.point_to_world(p),
        Frame::World => p,
    }
}

/// Regroups most-likely predictions by the world-frame point they target,
/// keyed by `(episode, agent, timestep)`.
pub fn build_rolling(insts: &[Instance], preds: &[Trajectory]) -> Result<Vec<RollingPredictions>, EvalError> {
    if insts.len() != preds.len() {
        return Err(EvalError::Length { what: "predictions vs instances", got: preds.len(), expected: insts.len() });
    }
    let mut groups: BTreeMap<(u64, u32, u32), RollingPredictions> = BTreeMap::new();
    for (inst, pred) in insts.iter().zip(preds) {
        let horizon = inst.future.len();
        if pred.len() != horizon {
            return Err(EvalError::Length { what: "prediction", got: pred.len(), expected: horizon });
        }
        for k in 1..=horizon {
            let t = inst.t0 + k as u32;
            let entry = groups.entry((inst.episode_id, inst.agent_id, t)).or_insert_with(|| RollingPredictions {
                episode_id: inst.episode_id,
                agent_id: inst.agent_id,
                t,
                gt: to_world(inst, inst.future.points[k - 1]),
                preds: Vec::new(),
                horizon,
                dt: inst.future.dt,
            });
            entry.preds.push((k, to_world(inst, pred.points[k - 1])));
        }
    }
    let mut out: Vec<RollingPredictions> = groups.into_values().collect();
    for rp in &mut out {
        rp.preds.sort_by_key(|p| p.0);
    }
    Ok(out)
}

/// Mean dispersion over points with at least two predictions.
pub fn mean_dispersion(rolling: &[RollingPredictions]) -> Option<f64> {
    mean(rolling.iter().filter_map(|rp| dispersion(&rp.points())))
}

/// Mean convergence time over points with a full set of lead times.
pub fn mean_convergence(rolling: &[RollingPredictions], tau: f64) -> Option<f64> {
    mean(rolling.iter().filter_map(|rp| convergence_to_range(rp, tau)))
}

pub fn mean(it: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in it {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Mean of `values` within each index set; `None` for an empty set.
pub fn stratified_mean(values: &[f64], strata: &[Vec<usize>]) -> Vec<Option<f64>> {
    strata.iter().map(|idx| mean(idx.iter().map(|&i| values[i]))).collect()
}
