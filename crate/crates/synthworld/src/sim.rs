//! Closed-loop driving simulation along a world's routes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use cab_core::kinematics::{ctra_displacement, wrap_angle};
use cab_core::AgentState;

use crate::geometry::{dist, Polyline};
use crate::world::{ScenarioKind, World};

pub const VEHICLE_LENGTH: f64 = 4.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    /// Integration sub-steps per recorded step.
    pub substeps: usize,
    /// Recorded states per episode, at most.
    pub steps: usize,
    /// Steps before the earliest scenario event.
    pub lead_in_steps: usize,
    /// Spread of event times, in steps after the lead-in.
    pub event_spread_steps: usize,
    pub speed_range: [f64; 2],
    /// Standard deviation of the cruise speed target, resampled per step.
    pub speed_noise: f64,
    pub lateral_accel: f64,
    pub comfort_decel: f64,
    pub brake_range: [f64; 2],
    /// Bumper-to-bumper stopping gap behind a stopped lead vehicle.
    pub gap_range: [f64; 2],
    pub moving_lead_prob: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.5,
            substeps: 10,
            steps: 30,
            lead_in_steps: 5,
            event_spread_steps: 10,
            speed_range: [3.5, 5.0],
            speed_noise: 0.2,
            lateral_accel: 2.0,
            comfort_decel: 1.5,
            brake_range: [1.5, 3.0],
            gap_range: [2.5, 5.5],
            moving_lead_prob: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Ego,
    MovingLead,
    StoppedLead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub agent_id: u32,
    pub role: Role,
    pub states: Vec<AgentState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub kind: ScenarioKind,
    pub dt: f64,
    /// Ego first.
    pub agents: Vec<AgentTrack>,
    pub route: usize,
    pub tags: Vec<String>,
}

impl Episode {
    pub fn ego(&self) -> &AgentTrack {
        &self.agents[0]
    }

    pub fn len(&self) -> usize {
        self.ego().states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Toggles for building paired counterfactual episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeOptions {
    pub stopped_lead: bool,
}

impl EpisodeOptions {
    pub fn for_kind(kind: ScenarioKind) -> Self {
        Self { stopped_lead: kind == ScenarioKind::LeadVehicleStop }
    }
}

pub fn simulate_episode(world: &World, seed: u64, cfg: &SimConfig) -> Episode {
    simulate_episode_with(world, seed, cfg, EpisodeOptions::for_kind(world.kind))
}

/// Curvature-limited speed at each route vertex.
fn speed_limits(route: &Polyline, lateral_accel: f64) -> Vec<f64> {
    let mut lim = vec![f64::INFINITY; route.points.len()];
    for (i, turn) in route.turning().iter().enumerate() {
        let seg = 0.5 * (route.s[i + 2] - route.s[i]);
        let kappa = turn.abs() / seg.max(1e-9);
        if kappa > 1e-6 {
            lim[i + 1] = (lateral_accel / kappa).sqrt();
        }
    }
    lim
}

/// Highest speed at `s` from which every upcoming limit can be met at the
/// comfort deceleration.
fn preview_speed(route: &Polyline, limits: &[f64], s: f64, decel: f64) -> f64 {
    let mut v = f64::INFINITY;
    for (i, &lim) in limits.iter().enumerate() {
        let ds = route.s[i] - s;
        if lim.is_finite() && ds > -1.0 && ds < 40.0 {
            v = v.min((lim * lim + 2.0 * decel * ds.max(0.0)).sqrt());
        }
    }
    v
}

fn record(x: [f64; 2], heading: f64, v: f64, a: f64, omega: f64) -> AgentState {
    let (s, c) = heading.sin_cos();
    AgentState {
        position: x,
        velocity: [v * c, v * s],
        acceleration: [a * c - v * omega * s, a * s + v * omega * c],
        heading: wrap_angle(heading),
        yaw_rate: omega,
    }
}

fn on_route(route: &Polyline, s: f64, v: f64) -> AgentState {
    let (p, d) = route.at(s);
    record(p, d[1].atan2(d[0]), v, 0.0, 0.0)
}

/// Simulates the ego and any lead vehicle. Every random draw happens in a
/// fixed order regardless of scenario and options, so worlds generated from
/// one seed yield episodes with identical speed noise and timing.
pub fn simulate_episode_with(world: &World, seed: u64, cfg: &SimConfig, opts: EpisodeOptions) -> Episode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v_ref = rng.random_range(cfg.speed_range[0]..cfg.speed_range[1]);
    let event_steps = cfg.lead_in_steps as f64 + rng.random_range(0.0..cfg.event_spread_steps.max(1) as f64);
    let t_event = event_steps * cfg.dt;
    let route_pick = rng.random_range(0..world.routes.len().max(1));
    let brake = rng.random_range(cfg.brake_range[0]..cfg.brake_range[1]);
    let gap = rng.random_range(cfg.gap_range[0]..cfg.gap_range[1]);
    let moving_lead = rng.random_bool(cfg.moving_lead_prob);
    let lead_speed = v_ref + rng.random_range(0.0..1.0);
    let lead_offset = rng.random_range(8.0..18.0);
    let noise = Normal::new(0.0, cfg.speed_noise.max(0.0)).expect("finite noise");
    let noise: Vec<f64> = (0..cfg.steps).map(|_| if cfg.speed_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 }).collect();

    let route = &world.routes[route_pick];
    let limits = speed_limits(route, cfg.lateral_accel);
    let straight = matches!(world.kind, ScenarioKind::Straight | ScenarioKind::LeadVehicleStop);
    let s0 = if straight { 20.0 } else { world.event_s - v_ref * t_event };
    let stop_s = s0 + v_ref * t_event + v_ref * v_ref / (2.0 * brake);
    let lead_s = stop_s + VEHICLE_LENGTH + gap;

    let mut tags = Vec::new();
    let mut agents = vec![AgentTrack { agent_id: 0, role: Role::Ego, states: Vec::new() }];
    let lead = if opts.stopped_lead {
        tags.push("stopped_lead".to_string());
        Some((Role::StoppedLead, lead_s, 0.0))
    } else if world.kind == ScenarioKind::Straight && moving_lead {
        tags.push("moving_lead".to_string());
        Some((Role::MovingLead, s0 + lead_offset + VEHICLE_LENGTH, lead_speed))
    } else {
        None
    };
    if let Some((role, _, _)) = lead {
        agents.push(AgentTrack { agent_id: 1, role, states: Vec::new() });
    }
    if world.kind == ScenarioKind::TIntersection {
        tags.push(if route_pick == 0 { "turn_left" } else { "turn_right" }.to_string());
    }

    let h = cfg.dt / cfg.substeps as f64;
    let (p0, d0) = route.at(s0);
    let mut pos = p0;
    let mut heading = d0[1].atan2(d0[0]);
    let mut v = v_ref;
    let mut hint = 0usize;
    let mut braking = false;
    let mut stopped = false;
    'outer: for k in 0..cfg.steps {
        for sub in 0..cfg.substeps {
            let (s, idx) = route.project(pos, hint, 20.0);
            hint = idx;
            if s > route.length() - 2.0 {
                break 'outer;
            }
            let lookahead = (1.0 * v).max(3.0);
            let (target, _) = route.at(s + lookahead);
            let alpha = wrap_angle((target[1] - pos[1]).atan2(target[0] - pos[0]) - heading);
            let l = dist(target, pos).max(1e-6);
            let omega = (v * 2.0 * alpha.sin() / l).clamp(-1.5, 1.5);

            let mut a;
            if opts.stopped_lead && !stopped {
                let remaining = stop_s - s;
                if !braking && remaining <= v * v / (2.0 * brake) {
                    braking = true;
                }
                if braking {
                    a = (-v * v / (2.0 * remaining.max(0.05))).clamp(-8.0, 0.0);
                } else {
                    a = (2.0 * (v_ref + noise[k] - v)).clamp(-3.0, 2.0);
                }
            } else if stopped {
                a = 0.0;
            } else {
                let target_v = (v_ref + noise[k]).min(preview_speed(route, &limits, s, cfg.comfort_decel));
                a = (2.0 * (target_v - v)).clamp(-3.0, 2.0);
            }
            if v + a * h <= 0.0 {
                a = -v / h;
            }
            let omega = if stopped { 0.0 } else { omega };

            if sub == 0 {
                agents[0].states.push(record(pos, heading, v, a, omega));
                if let Some((_, ls, lv)) = lead {
                    let t = k as f64 * cfg.dt;
                    agents[1].states.push(on_route(route, ls + lv * t, lv));
                }
            }
            let d = ctra_displacement(heading, v, a, omega, h);
            pos = [pos[0] + d[0], pos[1] + d[1]];
            heading += omega * h;
            v = (v + a * h).max(0.0);
            if braking && v < 1e-3 {
                v = 0.0;
                stopped = true;
            }
        }
    }
    if braking {
        tags.push("brake".to_string());
    }
    let n = agents[0].states.len();
    for a in agents.iter_mut() {
        a.states.truncate(n);
    }
    Episode { kind: world.kind, dt: cfg.dt, agents, route: route_pick, tags }
}
