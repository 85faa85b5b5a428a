//! Exact Shapley attribution over the motion-state, map and neighbor inputs.

use cab_core::{AgentState, Forecaster, Instance, NeighborSet, Trajectory};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Player {
    State,
    Map,
    Neighbors,
}

impl Player {
    pub const ALL: [Player; 3] = [Player::State, Player::Map, Player::Neighbors];

    fn bit(self) -> u8 {
        1 << self as u8
    }
}

/// Subset of the three players, as a bit mask in [`Player::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coalition(pub u8);

impl Coalition {
    pub const EMPTY: Coalition = Coalition(0);
    pub const FULL: Coalition = Coalition(0b111);

    pub fn all() -> impl Iterator<Item = Coalition> {
        (0..8).map(Coalition)
    }

    pub fn contains(self, p: Player) -> bool {
        self.0 & p.bit() != 0
    }

    pub fn with(self, p: Player) -> Coalition {
        Coalition(self.0 | p.bit())
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapleyResult {
    /// In [`Player::ALL`] order.
    pub phi: [f64; 3],
    pub v_full: f64,
    pub v_empty: f64,
}

/// Replaces every player outside `s` by its baseline: an all-zero raster,
/// no neighbors, or a stationary history frozen at the current pose.
pub fn mask_instance(inst: &Instance, s: Coalition) -> Instance {
    let mut out = inst.clone();
    if !s.contains(Player::Map) {
        out.context.map.data.fill(0);
    }
    if !s.contains(Player::Neighbors) {
        out.context.neighbors = NeighborSet::empty();
    }
    if !s.contains(Player::State) {
        let cur = *inst.history.current();
        let frozen = AgentState { position: cur.position, heading: cur.heading, ..AgentState::default() };
        out.history.states.iter_mut().for_each(|st| *st = frozen);
    }
    out
}

fn final_distance(inst: &Instance, pred: &Trajectory) -> f64 {
    let o = inst.history.current().position;
    pred.points.last().map_or(0.0, |p| (p[0] - o[0]).hypot(p[1] - o[1]))
}

/// Distance from the current position to the final most-likely point with
/// only the players in `s` present.
pub fn coalition_value(f: &dyn Forecaster, inst: &Instance, s: Coalition) -> f64 {
    final_distance(inst, &f.predict_ml(&mask_instance(inst, s)))
}

/// Values of all eight coalitions, indexed by mask, for each instance.
pub fn coalition_values_batch(f: &dyn Forecaster, insts: &[Instance]) -> Vec<[f64; 8]> {
    let mut out = vec![[0.0; 8]; insts.len()];
    for s in Coalition::all() {
        let masked: Vec<Instance> = insts.iter().map(|i| mask_instance(i, s)).collect();
        let refs: Vec<&Instance> = masked.iter().collect();
        for (k, pred) in f.predict_ml_batch(&refs).iter().enumerate() {
            out[k][s.0 as usize] = final_distance(&insts[k], pred);
        }
    }
    out
}

fn factorial(n: usize) -> f64 {
    (1..=n).product::<usize>() as f64
}

/// Weighted-subset formula.
pub fn shapley_from_values(v: &[f64; 8]) -> ShapleyResult {
    let n = Player::ALL.len();
    let mut phi = [0.0; 3];
    for (i, &p) in Player::ALL.iter().enumerate() {
        for s in Coalition::all().filter(|s| !s.contains(p)) {
            let w = factorial(s.len()) * factorial(n - s.len() - 1) / factorial(n);
            phi[i] += w * (v[s.with(p).0 as usize] - v[s.0 as usize]);
        }
    }
    ShapleyResult { phi, v_full: v[7], v_empty: v[0] }
}

/// Average marginal contribution over all orderings of the players.
pub fn shapley_by_permutation(v: &[f64; 8]) -> ShapleyResult {
    const ORDERS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut phi = [0.0; 3];
    for order in ORDERS {
        let mut s = Coalition::EMPTY;
        for i in order {
            let next = s.with(Player::ALL[i]);
            phi[i] += v[next.0 as usize] - v[s.0 as usize];
            s = next;
        }
    }
    ShapleyResult { phi: phi.map(|x| x / ORDERS.len() as f64), v_full: v[7], v_empty: v[0] }
}

pub fn shapley_values(f: &dyn Forecaster, inst: &Instance) -> ShapleyResult {
    let mut v = [0.0; 8];
    for s in Coalition::all() {
        v[s.0 as usize] = coalition_value(f, inst, s);
    }
    shapley_from_values(&v)
}

pub fn shapley_batch(f: &dyn Forecaster, insts: &[Instance]) -> Vec<ShapleyResult> {
    coalition_values_batch(f, insts).iter().map(shapley_from_values).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coalition_masks() {
        let s = Coalition::EMPTY.with(Player::Map);
        assert!(s.contains(Player::Map) && !s.contains(Player::State));
        assert_eq!(Coalition::FULL.len(), 3);
        assert_eq!(Coalition::all().count(), 8);
    }
}
