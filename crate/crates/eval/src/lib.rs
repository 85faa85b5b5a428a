//! Baselines, metrics and attribution for trajectory forecasters.

pub mod attribution;
pub mod baselines;
pub mod error;
pub mod metrics;
pub mod report;

pub use attribution::{shapley_batch, shapley_values, Coalition, Player, ShapleyResult};
pub use baselines::{
    kalman_hardness, physics_oracle, physics_predict, rank_hardness, KalmanConfig, PhysicsForecaster, PhysicsKind,
    PhysicsOracle,
};
pub use error::EvalError;
pub use metrics::{ade, build_rolling, convergence_to_range, dispersion, fde, offroad_rate, RollingPredictions};
pub use report::{evaluate, EvalConfig, MetricReport, MetricRow, ShapleyRow};
