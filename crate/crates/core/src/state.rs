use crate::frame::Frame;
use crate::map::SemanticMap;
use crate::Point2;

/// Kinematic state of one agent at one timestep.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgentState {
    pub position: Point2,
    pub velocity: Point2,
    pub acceleration: Point2,
    /// Radians, wrapped to (-π, π].
    pub heading: f64,
    pub yaw_rate: f64,
}

impl AgentState {
    pub const DIM: usize = 8;

    /// `[x, y, vx, vy, ax, ay, heading, yaw_rate]`
    pub fn to_array(&self) -> [f64; 8] {
        [
            self.position[0],
            self.position[1],
            self.velocity[0],
            self.velocity[1],
            self.acceleration[0],
            self.acceleration[1],
            self.heading,
            self.yaw_rate,
        ]
    }

    pub fn from_array(v: [f64; 8]) -> Self {
        Self {
            position: [v[0], v[1]],
            velocity: [v[2], v[3]],
            acceleration: [v[4], v[5]],
            heading: v[6],
            yaw_rate: v[7],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }

    /// Acceleration projected on the heading direction.
    pub fn longitudinal_accel(&self) -> f64 {
        let (s, c) = self.heading.sin_cos();
        self.acceleration[0] * c + self.acceleration[1] * s
    }
}

/// `H + 1` states, oldest first; the last entry is the current state.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionHistory {
    pub states: Vec<AgentState>,
    pub dt: f64,
}

impl MotionHistory {
    pub fn current(&self) -> &AgentState {
        self.states.last().expect("motion history is never empty")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<Point2>,
    pub dt: f64,
}

impl Trajectory {
    pub fn new(points: Vec<Point2>, dt: f64) -> Self {
        Self { points, dt }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last(&self) -> Option<&Point2> {
        self.points.last()
    }
}

/// Neighbouring agents, expressed in the same frame as the target agent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborSet {
    pub neighbors: Vec<AgentState>,
}

impl NeighborSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub map: SemanticMap,
    pub neighbors: NeighborSet,
}

/// One prediction problem: a given agent at a given timestep of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: u64,
    pub episode_id: u64,
    pub agent_id: u32,
    pub t0: u32,
    pub history: MotionHistory,
    pub context: Context,
    pub future: Trajectory,
    pub frame: Frame,
}

impl Instance {
    pub fn dt(&self) -> f64 {
        self.history.dt
    }

    pub fn current(&self) -> &AgentState {
        self.history.current()
    }
}
