//! Procedural road layouts.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{PathBuilder, Polygon, Polyline};
use cab_core::Point2;

pub const LANE_WIDTH: f64 = 3.5;
pub const WALKWAY_WIDTH: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Straight,
    CurveLeft,
    CurveRight,
    TIntersection,
    LeadVehicleStop,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] =
        [Self::Straight, Self::CurveLeft, Self::CurveRight, Self::TIntersection, Self::LeadVehicleStop];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Straight => "straight",
            Self::CurveLeft => "curve_left",
            Self::CurveRight => "curve_right",
            Self::TIntersection => "t_intersection",
            Self::LeadVehicleStop => "lead_vehicle_stop",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown scenario kind {s:?}"))
    }
}

/// Static layout. The ego enters along `routes[..]`, all of which share
/// their first point; at a junction the route is picked per episode.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub kind: ScenarioKind,
    pub routes: Vec<Polyline>,
    /// Arc length along the routes where they first diverge from a straight
    /// approach: curve entry or turn start. Equal to the route length for
    /// straight roads.
    pub event_s: f64,
    pub driveable: Vec<Polygon>,
    pub crosswalks: Vec<Polygon>,
    pub walkways: Vec<Polygon>,
}

impl World {
    /// A world with no geometry at all.
    pub fn empty(kind: ScenarioKind) -> Self {
        Self { kind, routes: Vec::new(), event_s: 0.0, driveable: Vec::new(), crosswalks: Vec::new(), walkways: Vec::new() }
    }

    pub fn is_driveable(&self, p: Point2) -> bool {
        self.driveable.iter().any(|poly| poly.contains(p))
    }

    /// Applies a rigid transform to every geometric element.
    pub fn transformed(&self, f: impl Fn(Point2) -> Point2 + Copy) -> Self {
        let polys = |v: &[Polygon]| v.iter().map(|p| p.transformed(f)).collect();
        Self {
            kind: self.kind,
            routes: self.routes.iter().map(|r| Polyline::new(r.points.iter().map(|&p| f(p)).collect())).collect(),
            event_s: self.event_s,
            driveable: polys(&self.driveable),
            crosswalks: polys(&self.crosswalks),
            walkways: polys(&self.walkways),
        }
    }
}

fn lane_and_walkways(route: &Polyline, w: &mut World) {
    let h = LANE_WIDTH / 2.0;
    w.driveable.push(route.band(-h, h));
    w.walkways.push(route.band(h, h + WALKWAY_WIDTH));
    w.walkways.push(route.band(-h - WALKWAY_WIDTH, -h));
}

fn crosswalk_at(route: &Polyline, s: f64) -> Polygon {
    let (p, d) = route.at(s);
    let n = [-d[1], d[0]];
    let (hw, hl) = (LANE_WIDTH / 2.0 + WALKWAY_WIDTH, 2.0);
    let corner = |a: f64, b: f64| [p[0] + a * d[0] + b * n[0], p[1] + a * d[1] + b * n[1]];
    Polygon::new(vec![corner(-hl, -hw), corner(hl, -hw), corner(hl, hw), corner(-hl, hw)])
}

/// Deterministic layout for `(kind, seed)`. Mirrored curve kinds drawn from
/// the same seed share every parameter except the turn direction.
pub fn generate_world(kind: ScenarioKind, seed: u64) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let approach = 80.0;
    let start = [-approach, 0.0];
    let mut w = World::empty(kind);
    match kind {
        ScenarioKind::Straight | ScenarioKind::LeadVehicleStop => {
            let route = PathBuilder::new(start, 0.0).straight(approach + 120.0).build();
            lane_and_walkways(&route, &mut w);
            if rng.random_bool(0.5) {
                let s = rng.random_range(40.0..160.0);
                w.crosswalks.push(crosswalk_at(&route, s));
            }
            w.event_s = route.length();
            w.routes.push(route);
        }
        ScenarioKind::CurveLeft | ScenarioKind::CurveRight => {
            let radius = rng.random_range(8.0..25.0);
            let sweep = rng.random_range(FRAC_PI_2 * 0.75..FRAC_PI_2 * 1.25);
            let sign = if kind == ScenarioKind::CurveLeft { 1.0 } else { -1.0 };
            let route = PathBuilder::new(start, 0.0).straight(approach).arc(radius, sign * sweep).straight(60.0).build();
            lane_and_walkways(&route, &mut w);
            w.event_s = approach;
            w.routes.push(route);
        }
        ScenarioKind::TIntersection => {
            let stem = approach;
            let arms = [rng.random_range(20.0..40.0), rng.random_range(20.0..40.0)];
            let radius = rng.random_range(6.0..10.0);
            let h = LANE_WIDTH / 2.0;
            // The stem meets the bar whose centreline is x = radius.
            let left = PathBuilder::new(start, 0.0).straight(stem).arc(radius, FRAC_PI_2).straight(arms[0]).build();
            let right = PathBuilder::new(start, 0.0).straight(stem).arc(radius, -FRAC_PI_2).straight(arms[1]).build();
            w.driveable.push(Polygon::rect(-stem, -h, radius - h, h));
            w.driveable.push(Polygon::rect(radius - h, -radius - arms[1], radius + h, radius + arms[0]));
            w.driveable.push(left.band(-h, h));
            w.driveable.push(right.band(-h, h));
            w.walkways.push(Polygon::rect(-stem, h, radius - h - WALKWAY_WIDTH * 2.0, h + WALKWAY_WIDTH));
            w.walkways.push(Polygon::rect(-stem, -h - WALKWAY_WIDTH, radius - h - WALKWAY_WIDTH * 2.0, -h));
            w.walkways.push(Polygon::rect(radius + h, -radius - arms[1], radius + h + WALKWAY_WIDTH, radius + arms[0]));
            if rng.random_bool(0.5) {
                w.crosswalks.push(Polygon::rect(-radius - 4.0, -h - WALKWAY_WIDTH, -radius - 1.0, h + WALKWAY_WIDTH));
            }
            w.event_s = stem;
            w.routes.push(left);
            w.routes.push(right);
        }
    }
    w
}
