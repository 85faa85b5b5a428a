//! Shared domain types for the forecasting workspace: agent states, motion
//! histories, trajectories, semantic rasters, instances and the frame
//! transforms between world and agent-centric coordinates.

pub mod error;
pub mod forecast;
pub mod frame;
pub mod kinematics;
pub mod map;
pub mod state;
pub mod validate;

pub use error::CoreError;
pub use forecast::Forecaster;
pub use frame::{to_agent_frame, Frame, Pose2};
pub use map::{SemanticMap, LAYER_NAMES};
pub use state::{AgentState, Context, Instance, MotionHistory, NeighborSet, Trajectory};
pub use validate::{validate_instance, Protocol, Violation};

pub type Point2 = [f64; 2];
