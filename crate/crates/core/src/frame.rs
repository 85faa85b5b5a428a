//! Rigid transforms between the world frame and the agent-centric frame.

use crate::error::CoreError;
use crate::kinematics::wrap_angle;
use crate::state::{AgentState, Instance};
use crate::Point2;

/// A planar pose: position plus heading.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.heading.is_finite()
    }

    pub fn rotate_to_local(&self, v: Point2) -> Point2 {
        let (s, c) = self.heading.sin_cos();
        [c * v[0] + s * v[1], -s * v[0] + c * v[1]]
    }

    pub fn rotate_to_world(&self, v: Point2) -> Point2 {
        let (s, c) = self.heading.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    }

    /// World point expressed in this pose's local frame.
    pub fn point_to_local(&self, p: Point2) -> Point2 {
        self.rotate_to_local([p[0] - self.x, p[1] - self.y])
    }

    pub fn point_to_world(&self, p: Point2) -> Point2 {
        let q = self.rotate_to_world(p);
        [q[0] + self.x, q[1] + self.y]
    }

    pub fn state_to_local(&self, s: &AgentState) -> AgentState {
        AgentState {
            position: self.point_to_local(s.position),
            velocity: self.rotate_to_local(s.velocity),
            acceleration: self.rotate_to_local(s.acceleration),
            heading: wrap_angle(s.heading - self.heading),
            yaw_rate: s.yaw_rate,
        }
    }

    pub fn state_to_world(&self, s: &AgentState) -> AgentState {
        AgentState {
            position: self.point_to_world(s.position),
            velocity: self.rotate_to_world(s.velocity),
            acceleration: self.rotate_to_world(s.acceleration),
            heading: wrap_angle(s.heading + self.heading),
            yaw_rate: s.yaw_rate,
        }
    }
}

/// Which coordinate frame an instance's geometry lives in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Frame {
    World,
    /// Agent-centric; holds the agent's world pose at `t0`, i.e. the
    /// transform back to the world frame.
    Agent(Pose2),
}

fn transform(inst: &Instance, to_local: bool, pose: Pose2) -> Instance {
    let st = |s: &AgentState| {
        if to_local {
            pose.state_to_local(s)
        } else {
            pose.state_to_world(s)
        }
    };
    let pt = |p: Point2| {
        if to_local {
            pose.point_to_local(p)
        } else {
            pose.point_to_world(p)
        }
    };
    let mut out = inst.clone();
    out.history.states = inst.history.states.iter().map(st).collect();
    out.future.points = inst.future.points.iter().map(|&p| pt(p)).collect();
    out.context.neighbors.neighbors = inst.context.neighbors.neighbors.iter().map(st).collect();
    out.context.map.origin = pt(inst.context.map.origin);
    out.context.map.rotation = if to_local {
        wrap_angle(inst.context.map.rotation - pose.heading)
    } else {
        wrap_angle(inst.context.map.rotation + pose.heading)
    };
    out.frame = if to_local { Frame::Agent(pose) } else { Frame::World };
    out
}

/// Re-expresses a world-frame instance so the agent sits at the origin with
/// heading along +x at `t0`. Instances already in the agent frame are
/// returned unchanged.
pub fn to_agent_frame(inst: &Instance) -> Result<Instance, CoreError> {
    if let Frame::Agent(_) = inst.frame {
        return Ok(inst.clone());
    }
    let cur = inst.history.states.last().ok_or(CoreError::EmptyHistory)?;
    let pose = Pose2::new(cur.position[0], cur.position[1], cur.heading);
    if !pose.is_finite() {
        return Err(CoreError::NonFinitePose { x: pose.x, y: pose.y, heading: pose.heading });
    }
    Ok(transform(inst, true, pose))
}

/// Inverse of [`to_agent_frame`].
pub fn to_world_frame(inst: &Instance) -> Result<Instance, CoreError> {
    match inst.frame {
        Frame::Agent(pose) => Ok(transform(inst, false, pose)),
        Frame::World => Err(CoreError::NotAgentFrame),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::SemanticMap;
    use crate::state::{Context, MotionHistory, NeighborSet, Trajectory};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn state(x: f64, y: f64, h: f64) -> AgentState {
        AgentState {
            position: [x, y],
            velocity: [2.0 * h.cos(), 2.0 * h.sin()],
            acceleration: [0.1, -0.2],
            heading: h,
            yaw_rate: 0.05,
        }
    }

    fn instance(x: f64, y: f64, h: f64) -> Instance {
        let states = (0..5)
            .map(|k| state(x - (4 - k) as f64 * h.cos(), y - (4 - k) as f64 * h.sin(), h))
            .collect();
        let mut map = SemanticMap::agent_centered(4, 4, 1.0);
        map.origin = [x - 2.0, y - 2.0];
        map.set(0, 1, 2, 1);
        Instance {
            id: 7,
            episode_id: 1,
            agent_id: 0,
            t0: 4,
            history: MotionHistory { states, dt: 0.5 },
            context: Context {
                map,
                neighbors: NeighborSet { neighbors: vec![state(x + 5.0, y - 1.0, 0.3)] },
            },
            future: Trajectory::new((1..=3).map(|k| [x + k as f64, y + 0.5 * k as f64]).collect(), 0.5),
            frame: Frame::World,
        }
    }

    #[test]
    fn identity_pose_leaves_geometry_untouched() {
        let inst = instance(0.0, 0.0, 0.0);
        let local = to_agent_frame(&inst).unwrap();
        assert_eq!(local.history, inst.history);
        assert_eq!(local.future, inst.future);
        assert_eq!(local.context, inst.context);
        assert_eq!(local.frame, Frame::Agent(Pose2::default()));
    }

    #[test]
    fn hand_rotation_case() {
        let pose = Pose2::new(3.0, 4.0, FRAC_PI_2);
        let p = pose.point_to_local([3.0, 5.0]);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1].abs() < 1e-12);

        let mut inst = instance(3.0, 4.0, FRAC_PI_2);
        inst.future.points[0] = [3.0, 5.0];
        let local = to_agent_frame(&inst).unwrap();
        let q = local.future.points[0];
        assert!((q[0] - 1.0).abs() < 1e-12 && q[1].abs() < 1e-12);
        let cur = local.current();
        assert!(cur.position[0].abs() < 1e-12 && cur.position[1].abs() < 1e-12);
        assert!(cur.heading.abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite_pose() {
        let mut inst = instance(1.0, 1.0, 0.2);
        inst.history.states[4].heading = f64::NAN;
        assert!(matches!(to_agent_frame(&inst), Err(CoreError::NonFinitePose { .. })));
    }

    #[test]
    fn idempotent_on_agent_frame() {
        let local = to_agent_frame(&instance(2.0, -1.0, 1.0)).unwrap();
        assert_eq!(to_agent_frame(&local).unwrap(), local);
    }

    proptest! {
        #[test]
        fn round_trip_and_distance_preservation(
            x in -100.0f64..100.0, y in -100.0f64..100.0, h in -3.14f64..3.14,
        ) {
            let inst = instance(x, y, h);
            let local = to_agent_frame(&inst).unwrap();
            let back = to_world_frame(&local).unwrap();
            for (a, b) in inst.future.points.iter().zip(&back.future.points) {
                prop_assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
            }
            for (a, b) in inst.history.states.iter().zip(&back.history.states) {
                for (u, v) in a.to_array().iter().zip(b.to_array().iter()) {
                    prop_assert!((u - v).abs() < 1e-9);
                }
            }
            let o1 = inst.context.map.origin;
            let o2 = back.context.map.origin;
            prop_assert!((o1[0] - o2[0]).abs() < 1e-9 && (o1[1] - o2[1]).abs() < 1e-9);

            let pts_w: Vec<Point2> = inst.future.points.iter().copied()
                .chain(inst.history.states.iter().map(|s| s.position)).collect();
            let pts_l: Vec<Point2> = local.future.points.iter().copied()
                .chain(local.history.states.iter().map(|s| s.position)).collect();
            for i in 0..pts_w.len() {
                for j in 0..pts_w.len() {
                    let dw = (pts_w[i][0] - pts_w[j][0]).hypot(pts_w[i][1] - pts_w[j][1]);
                    let dl = (pts_l[i][0] - pts_l[j][0]).hypot(pts_l[i][1] - pts_l[j][1]);
                    prop_assert!((dw - dl).abs() < 1e-9);
                }
            }
            // map cells keep pointing at the same world location
            let c = inst.context.map.cell_center(1, 2);
            prop_assert_eq!(local.context.map.cell_of(pose_local(&local, c)), Some((1, 2)));
        }
    }

    fn pose_local(inst: &Instance, p: Point2) -> Point2 {
        match inst.frame {
            Frame::Agent(pose) => pose.point_to_local(p),
            Frame::World => p,
        }
    }
}
