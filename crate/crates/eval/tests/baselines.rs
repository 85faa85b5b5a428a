mod common;

use cab_core::{AgentState, MotionHistory, Trajectory};
use cab_eval::baselines::{hardness_scores, kalman_forecast};
use cab_eval::{ade, kalman_hardness, physics_oracle, physics_predict, rank_hardness, KalmanConfig, PhysicsKind};
use common::{random_state, rng};
use proptest::prelude::*;
use rand::Rng;

fn straight(v: f64, a: f64) -> AgentState {
    AgentState { velocity: [v, 0.0], acceleration: [a, 0.0], ..AgentState::default() }
}

#[test]
fn constant_velocity_hand_case() {
    let t = physics_predict(PhysicsKind::ConstVelYaw, &straight(2.0, 0.0), 3, 0.5);
    assert_eq!(t.points, vec![[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]);
}

#[test]
fn constant_acceleration_hand_case() {
    let t = physics_predict(PhysicsKind::ConstAccelYaw, &straight(0.0, 1.0), 3, 0.5);
    for (p, want) in t.points.iter().zip([0.125, 0.5, 1.125]) {
        assert!((p[0] - want).abs() < 1e-12 && p[1].abs() < 1e-12);
    }
}

#[test]
fn quarter_arc_lands_at_two_two() {
    let s = AgentState { velocity: [std::f64::consts::PI, 0.0], yaw_rate: std::f64::consts::FRAC_PI_2, ..Default::default() };
    for kind in [PhysicsKind::ConstSpeedYawrate, PhysicsKind::ConstAccelYawrate] {
        let p = physics_predict(kind, &s, 2, 0.5).points[1];
        assert!((p[0] - 2.0).abs() < 1e-9 && (p[1] - 2.0).abs() < 1e-9, "{kind}: {p:?}");
    }
}

/// Textbook closed forms, written out independently of the library.
fn reference(kind: PhysicsKind, s: &AgentState, t: f64) -> [f64; 2] {
    let th = s.heading;
    let v = s.speed();
    let a = match kind {
        PhysicsKind::ConstAccelYaw | PhysicsKind::ConstAccelYawrate => s.longitudinal_accel(),
        _ => 0.0,
    };
    let w = match kind {
        PhysicsKind::ConstSpeedYawrate | PhysicsKind::ConstAccelYawrate => s.yaw_rate,
        _ => 0.0,
    };
    let [x, y] = s.position;
    if w == 0.0 {
        let d = v * t + 0.5 * a * t * t;
        return [x + d * th.cos(), y + d * th.sin()];
    }
    let th1 = th + w * t;
    let v1 = v + a * t;
    [
        x + v1 / w * th1.sin() + a / (w * w) * th1.cos() - v / w * th.sin() - a / (w * w) * th.cos(),
        y - v1 / w * th1.cos() + a / (w * w) * th1.sin() + v / w * th.cos() - a / (w * w) * th.sin(),
    ]
}

#[test]
fn rollouts_match_closed_forms() {
    let mut r = rng(1);
    for _ in 0..1000 {
        let mut s = random_state(&mut r);
        if s.yaw_rate.abs() < 0.05 {
            s.yaw_rate = 0.05_f64.copysign(s.yaw_rate);
        }
        for kind in PhysicsKind::ALL {
            let traj = physics_predict(kind, &s, 12, 0.5);
            for (k, p) in traj.points.iter().enumerate() {
                let q = reference(kind, &s, (k + 1) as f64 * 0.5);
                assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9, "{kind} step {k}: {p:?} vs {q:?}");
            }
        }
    }
}

#[test]
fn zero_yaw_rate_reduces_to_straight_line() {
    let mut r = rng(2);
    for _ in 0..100 {
        let mut s = random_state(&mut r);
        s.yaw_rate = 0.0;
        let a = physics_predict(PhysicsKind::ConstAccelYaw, &s, 12, 0.5);
        let b = physics_predict(PhysicsKind::ConstAccelYawrate, &s, 12, 0.5);
        for (p, q) in a.points.iter().zip(&b.points) {
            assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
        }
    }
}

#[test]
fn rollouts_keep_their_defining_quantities() {
    let mut r = rng(3);
    for _ in 0..200 {
        let mut s = random_state(&mut r);
        if s.yaw_rate.abs() < 0.05 {
            s.yaw_rate = 0.05;
        }
        let dt = 0.5;
        let cv = physics_predict(PhysicsKind::ConstVelYaw, &s, 12, dt);
        let mut prev = s.position;
        for p in &cv.points {
            let step = (p[0] - prev[0]).hypot(p[1] - prev[1]);
            assert!((step / dt - s.speed()).abs() < 1e-9);
            assert!(((p[1] - prev[1]).atan2(p[0] - prev[0]) - s.heading).sin().abs() < 1e-9);
            prev = *p;
        }
        // A constant-speed turn stays on the circle of radius v/ω.
        let ctrv = physics_predict(PhysicsKind::ConstSpeedYawrate, &s, 12, dt);
        let rad = s.speed() / s.yaw_rate;
        let c = [s.position[0] - rad * s.heading.sin(), s.position[1] + rad * s.heading.cos()];
        for p in &ctrv.points {
            assert!(((p[0] - c[0]).hypot(p[1] - c[1]) - rad.abs()).abs() < 1e-9);
        }
    }
}

fn brute_ade(a: &Trajectory, b: &Trajectory) -> f64 {
    let mut s = 0.0;
    for i in 0..a.points.len() {
        s += ((a.points[i][0] - b.points[i][0]).powi(2) + (a.points[i][1] - b.points[i][1]).powi(2)).sqrt();
    }
    s / a.points.len() as f64
}

#[test]
fn oracle_is_the_brute_force_minimum() {
    let mut r = rng(4);
    for _ in 0..1000 {
        let s = random_state(&mut r);
        let gt = Trajectory::new((0..12).map(|_| [r.random_range(-30.0..30.0), r.random_range(-30.0..30.0)]).collect(), 0.5);
        let (kind, traj) = physics_oracle(&s, &gt).unwrap();
        let best = ade(&traj, &gt, 12).unwrap();
        let mut want = (f64::INFINITY, PhysicsKind::ConstVelYaw);
        for k in PhysicsKind::ALL {
            let e = brute_ade(&physics_predict(k, &s, 12, 0.5), &gt);
            assert!(best <= e + 1e-12);
            if e < want.0 {
                want = (e, k);
            }
        }
        assert_eq!(kind, want.1);
    }
}

#[test]
fn oracle_recovers_constant_velocity_truth_and_breaks_ties_in_order() {
    let s = straight(3.0, 0.0);
    let gt = physics_predict(PhysicsKind::ConstVelYaw, &s, 12, 0.5);
    let (kind, traj) = physics_oracle(&s, &gt).unwrap();
    // with zero acceleration and yaw rate all four kinds tie
    assert_eq!(kind, PhysicsKind::ConstVelYaw);
    assert_eq!(ade(&traj, &gt, 12).unwrap(), 0.0);
}

fn history(points: &[[f64; 2]], dt: f64) -> MotionHistory {
    MotionHistory {
        states: points.iter().map(|&p| AgentState { position: p, ..AgentState::default() }).collect(),
        dt,
    }
}

#[test]
fn kalman_tracks_noiseless_constant_velocity() {
    let dt = 0.5;
    let v = [4.0, -1.0];
    let pts: Vec<[f64; 2]> = (0..17).map(|k| [k as f64 * dt * v[0], k as f64 * dt * v[1]]).collect();
    let h = history(&pts[..5], dt);
    let gt = Trajectory::new(pts[5..].to_vec(), dt);
    let cfg = KalmanConfig { r: 1e-9, ..KalmanConfig::default() };
    let e = kalman_hardness(&h, &gt, &cfg).unwrap();
    assert!(e < 1e-3, "{e}");
}

#[test]
fn braking_scores_harder_than_its_constant_velocity_twin() {
    let dt = 0.5;
    let v = 5.0;
    let past: Vec<[f64; 2]> = (0..5).map(|k| [k as f64 * dt * v, 0.0]).collect();
    let x0 = past[4][0];
    let cruise = Trajectory::new((1..=12).map(|k| [x0 + k as f64 * dt * v, 0.0]).collect(), dt);
    let brake = Trajectory::new(
        (1..=12)
            .map(|k| {
                let t = (k as f64 * dt).min(v / 2.0);
                [x0 + v * t - t * t, 0.0]
            })
            .collect(),
        dt,
    );
    let cfg = KalmanConfig::default();
    let h = history(&past, dt);
    let (easy, hard) = (kalman_hardness(&h, &cruise, &cfg).unwrap(), kalman_hardness(&h, &brake, &cfg).unwrap());
    assert!(hard > easy && easy >= 0.0, "{hard} vs {easy}");
    assert_eq!(kalman_forecast(&h, 12, &cfg).len(), 12);
}

#[test]
fn invalid_kalman_config_is_rejected() {
    let insts = common::synth(5, 0);
    assert!(hardness_scores(&insts, &KalmanConfig { q: 0.0, ..Default::default() }).is_err());
    assert!(hardness_scores(&insts, &KalmanConfig::default()).unwrap().iter().all(|&h| h >= 0.0));
}

#[test]
fn hand_ranking_of_ten_instances() {
    let ids: Vec<u64> = (0..10).collect();
    let scores = [0.3, 2.0, 0.1, 5.0, 0.7, 2.0, 0.0, 1.1, 0.9, 0.2];
    let sets = rank_hardness(&ids, &scores, &[20.0, 100.0]).unwrap();
    assert_eq!(sets[0], vec![3, 1]);
    assert_eq!(sets[1], vec![3, 1, 5, 7, 8, 4, 0, 9, 2, 6]);
    // one percent of ten rounds up to one instance
    assert_eq!(rank_hardness(&ids, &scores, &[1.0]).unwrap()[0], vec![3]);
}

#[test]
fn ties_break_by_id_not_position() {
    let sets = rank_hardness(&[9, 4, 7], &[1.0, 1.0, 1.0], &[100.0]).unwrap();
    assert_eq!(sets[0], vec![1, 2, 0]);
}

#[test]
fn empty_or_bad_rankings_are_rejected() {
    assert!(rank_hardness(&[], &[], &[10.0]).is_err());
    assert!(rank_hardness(&[0], &[1.0], &[0.0]).is_err());
    assert!(rank_hardness(&[0, 1], &[1.0], &[10.0]).is_err());
}

proptest! {
    #[test]
    fn strata_are_nested(scores in prop::collection::vec(0.0f64..10.0, 1..300)) {
        let ids: Vec<u64> = (0..scores.len() as u64).collect();
        let sets = rank_hardness(&ids, &scores, &[1.0, 2.0, 3.0, 10.0, 100.0]).unwrap();
        for w in sets.windows(2) {
            prop_assert!(w[0].len() <= w[1].len());
            prop_assert_eq!(&w[1][..w[0].len()], &w[0][..]);
        }
        prop_assert_eq!(sets[4].len(), scores.len());
        for w in sets[4].windows(2) {
            prop_assert!(scores[w[0]] >= scores[w[1]]);
        }
    }
}
