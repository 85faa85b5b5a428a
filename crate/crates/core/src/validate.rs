use std::fmt;

use serde::{Deserialize, Serialize};

use crate::kinematics::wrap_angle;
use crate::map::LAYER_NAMES;
use crate::state::Instance;

/// Temporal and raster geometry every instance of a dataset shares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Protocol {
    /// Number of past steps `H`; histories hold `H + 1` states.
    pub history_steps: usize,
    /// Prediction horizon `T` in steps.
    pub horizon_steps: usize,
    pub dt: f64,
    pub map_h: usize,
    pub map_w: usize,
    pub resolution: f64,
}

impl Default for Protocol {
    fn default() -> Self {
        Self { history_steps: 4, horizon_steps: 12, dt: 0.5, map_h: 64, map_w: 64, resolution: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    HistoryLength,
    FutureLength,
    DtMismatch,
    NonFiniteHistory,
    NonFiniteFuture,
    NonFiniteNeighbor,
    HeadingNotWrapped,
    NonBinaryMap,
    MapDimensions,
    MapLayers,
}

impl ViolationKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::HistoryLength => "history length",
            Self::FutureLength => "future length",
            Self::DtMismatch => "dt mismatch",
            Self::NonFiniteHistory => "non-finite history",
            Self::NonFiniteFuture => "non-finite future",
            Self::NonFiniteNeighbor => "non-finite neighbor",
            Self::HeadingNotWrapped => "heading not wrapped",
            Self::NonBinaryMap => "non-binary map",
            Self::MapDimensions => "map dimensions",
            Self::MapLayers => "map layers",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.label(), self.detail)
    }
}

/// Collects every invariant violation of `inst` under `proto`.
pub fn validate_instance(inst: &Instance, proto: &Protocol) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let mut push = |kind, detail: String| out.push(Violation { kind, detail });

    let h = &inst.history;
    if h.states.len() != proto.history_steps + 1 {
        push(
            ViolationKind::HistoryLength,
            format!("got {}, expected {}", h.states.len(), proto.history_steps + 1),
        );
    }
    if inst.future.points.len() != proto.horizon_steps {
        push(
            ViolationKind::FutureLength,
            format!("got {}, expected {}", inst.future.points.len(), proto.horizon_steps),
        );
    }
    let dt_ok = |dt: f64| dt > 0.0 && (dt - proto.dt).abs() <= 1e-9;
    if !dt_ok(h.dt) || !dt_ok(inst.future.dt) {
        push(
            ViolationKind::DtMismatch,
            format!("history {}, future {}, expected {}", h.dt, inst.future.dt, proto.dt),
        );
    }
    if let Some(k) = h.states.iter().position(|s| !s.is_finite()) {
        push(ViolationKind::NonFiniteHistory, format!("state {k}"));
    }
    if let Some(k) = h.states.iter().position(|s| s.heading.is_finite() && wrap_angle(s.heading) != s.heading) {
        push(ViolationKind::HeadingNotWrapped, format!("state {k}"));
    }
    if let Some(k) = inst.future.points.iter().position(|p| !(p[0].is_finite() && p[1].is_finite())) {
        push(ViolationKind::NonFiniteFuture, format!("point {k}"));
    }
    if let Some(k) = inst.context.neighbors.neighbors.iter().position(|s| !s.is_finite()) {
        push(ViolationKind::NonFiniteNeighbor, format!("neighbor {k}"));
    }

    let m = &inst.context.map;
    if m.layer_names.len() != LAYER_NAMES.len()
        || m.layer_names.iter().zip(LAYER_NAMES).any(|(a, b)| a != b)
    {
        push(ViolationKind::MapLayers, format!("{:?}", m.layer_names));
    }
    if m.h != proto.map_h
        || m.w != proto.map_w
        || (m.resolution - proto.resolution).abs() > 1e-12
        || m.data.len() != m.layer_names.len() * m.h * m.w
    {
        push(
            ViolationKind::MapDimensions,
            format!(
                "{}x{} @ {} m ({} cells), expected {}x{} @ {} m",
                m.h, m.w, m.resolution, m.data.len(), proto.map_h, proto.map_w, proto.resolution
            ),
        );
    }
    if let Some(k) = m.data.iter().position(|&v| v > 1) {
        push(ViolationKind::NonBinaryMap, format!("cell {k} = {}", m.data[k]));
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}
