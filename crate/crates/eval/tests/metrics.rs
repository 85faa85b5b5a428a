mod common;

use cab_core::{Frame, Pose2, SemanticMap, Trajectory};
use cab_eval::metrics::{displacement_full, mean_convergence, mean_dispersion, stratified_mean};
use cab_eval::{ade, build_rolling, convergence_to_range, dispersion, fde, offroad_rate, RollingPredictions};
use common::{bare_instance, rng};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn traj(points: &[[f64; 2]]) -> Trajectory {
    Trajectory::new(points.to_vec(), 0.5)
}

#[test]
fn displacement_hand_cases() {
    let gt = traj(&[[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]);
    assert_eq!(ade(&gt, &gt, 3).unwrap(), 0.0);
    let off = traj(&[[1.0, 0.7], [2.0, 0.7], [3.0, 0.7]]);
    assert!((ade(&off, &gt, 3).unwrap() - 0.7).abs() < 1e-15);
    assert!((fde(&off, &gt, 2).unwrap() - 0.7).abs() < 1e-15);
    assert!(ade(&traj(&[[0.0, 0.0]]), &gt, 1).is_err());
    assert!(fde(&gt, &gt, 4).is_err());
    assert!(ade(&gt, &gt, 0).is_err());
}

#[test]
fn displacement_matches_point_loop() {
    let mut r = rng(5);
    for _ in 0..500 {
        let n = r.random_range(1..20);
        let p: Vec<[f64; 2]> = (0..n).map(|_| [r.random_range(-9.0..9.0), r.random_range(-9.0..9.0)]).collect();
        let q: Vec<[f64; 2]> = (0..n).map(|_| [r.random_range(-9.0..9.0), r.random_range(-9.0..9.0)]).collect();
        let h = r.random_range(1..=n);
        let mut s = 0.0;
        let mut maxd: f64 = 0.0;
        for i in 0..h {
            let d = ((p[i][0] - q[i][0]).powi(2) + (p[i][1] - q[i][1]).powi(2)).sqrt();
            s += d;
            maxd = maxd.max(d);
        }
        let a = ade(&traj(&p), &traj(&q), h).unwrap();
        let last = ((p[h - 1][0] - q[h - 1][0]).powi(2) + (p[h - 1][1] - q[h - 1][1]).powi(2)).sqrt();
        assert!((a - s / h as f64).abs() < 1e-12);
        assert!((fde(&traj(&p), &traj(&q), h).unwrap() - last).abs() < 1e-12);
        assert!(a <= maxd + 1e-12);
    }
}

#[test]
fn full_distribution_metric_converges_to_rayleigh_mean() {
    let sigma = 1.5;
    let gt = traj(&[[3.0, -2.0]]);
    let sampler = |n: usize, seed: u64| {
        let mut r = rng(seed);
        let nd = Normal::new(0.0, sigma).unwrap();
        (0..n).map(|_| traj(&[[3.0 + nd.sample(&mut r), -2.0 + nd.sample(&mut r)]])).collect::<Vec<_>>()
    };
    let (a, f) = displacement_full(sampler, &gt, 1, 2000, 0).unwrap();
    let want = sigma * (std::f64::consts::PI / 2.0).sqrt();
    assert!((a - want).abs() / want < 0.02, "{a} vs {want}");
    assert_eq!(a, f);
    assert_eq!(displacement_full(sampler, &gt, 1, 2000, 0).unwrap(), (a, f));
    assert!(displacement_full(sampler, &gt, 1, 0, 0).is_err());
}

#[test]
fn point_mass_distribution_equals_most_likely_metrics() {
    let gt = traj(&[[1.0, 0.0], [2.0, 1.0]]);
    let ml = traj(&[[1.5, 0.0], [2.0, 3.0]]);
    let (a, f) = displacement_full(|n, _| vec![ml.clone(); n], &gt, 2, 2000, 9).unwrap();
    assert!((a - ade(&ml, &gt, 2).unwrap()).abs() < 1e-12);
    assert!((f - fde(&ml, &gt, 2).unwrap()).abs() < 1e-12);
}

fn road_map() -> SemanticMap {
    // origin (-2, -2), 1 m cells; row 2 (y in [0, 1)) is driveable
    let mut m = SemanticMap::agent_centered(4, 4, 1.0);
    for c in 0..4 {
        m.set(0, 2, c, 1);
    }
    m
}

#[test]
fn offroad_hand_cases() {
    let m = road_map();
    let on = traj(&[[-1.5, 0.5], [0.0, 0.0], [1.9, 0.99]]);
    let off = traj(&[[0.0, 0.5], [0.0, 1.0]]);
    assert_eq!(offroad_rate(&[on.clone()], &m), 0.0);
    assert_eq!(offroad_rate(&[on.clone(), off.clone()], &m), 0.5);
    assert_eq!(offroad_rate(&[off.clone(), on.clone()], &m), 0.5);
    // y = 1.0 is floor-assigned to row 3, off the road; y = 0.0 to row 2
    assert_eq!(offroad_rate(&[traj(&[[0.0, 1.0]])], &m), 1.0);
    assert_eq!(offroad_rate(&[traj(&[[0.0, 0.0]])], &m), 0.0);
    // leaving the raster counts as off-road
    assert_eq!(offroad_rate(&[traj(&[[2.0, 0.5]])], &m), 1.0);
}

/// Direct transcription: barycentre, distances, population deviation.
fn brute_dispersion(p: &[[f64; 2]]) -> f64 {
    let n = p.len() as f64;
    let mut sx = 0.0;
    let mut sy = 0.0;
    for q in p {
        sx += q[0];
        sy += q[1];
    }
    let (cx, cy) = (sx / n, sy / n);
    let mut d = Vec::new();
    for q in p {
        d.push((q[0] - cx).hypot(q[1] - cy));
    }
    let mut mu = 0.0;
    for x in &d {
        mu += x;
    }
    mu /= n;
    let mut var = 0.0;
    for x in &d {
        var += (x - mu) * (x - mu);
    }
    (var / n).sqrt()
}

/// Direct transcription of the max-set definition.
fn brute_convergence(dists: &[f64], tau: f64, dt: f64) -> f64 {
    let mut best = 0;
    for tp in 1..=dists.len() {
        if (1..=tp).all(|t| dists[t - 1] <= tau) {
            best = tp;
        }
    }
    best as f64 * dt
}

fn rolling_from(dists: &[f64], dt: f64) -> RollingPredictions {
    RollingPredictions {
        episode_id: 0,
        agent_id: 0,
        t: 0,
        gt: [0.0, 0.0],
        preds: dists.iter().enumerate().map(|(i, &d)| (i + 1, [d, 0.0])).collect(),
        horizon: dists.len(),
        dt,
    }
}

#[test]
fn dispersion_hand_cases() {
    assert_eq!(dispersion(&[[1.0, 1.0]; 5]), Some(0.0));
    assert_eq!(dispersion(&[[0.0, 0.0], [2.0, 0.0]]), Some(0.0));
    let d = dispersion(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).unwrap();
    assert!((d - 2f64.sqrt() / 3.0).abs() < 1e-15);
    assert_eq!(dispersion(&[[0.0, 0.0]]), None);
}

#[test]
fn convergence_hand_cases() {
    assert_eq!(convergence_to_range(&rolling_from(&[0.1, 0.3, 0.1], 0.5), 0.2), Some(0.5));
    assert_eq!(convergence_to_range(&rolling_from(&[0.1; 12], 0.5), 0.2), Some(6.0));
    assert_eq!(convergence_to_range(&rolling_from(&[0.3, 0.1], 0.5), 0.2), Some(0.0));
    let mut partial = rolling_from(&[0.1, 0.1, 0.1], 0.5);
    partial.horizon = 4;
    assert_eq!(convergence_to_range(&partial, 0.2), None);
}

#[test]
fn new_metrics_match_brute_force_on_random_sets() {
    let mut r = rng(6);
    for _ in 0..1000 {
        let n = r.random_range(2..=12);
        let pts: Vec<[f64; 2]> = (0..n).map(|_| [r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)]).collect();
        assert_eq!(dispersion(&pts).unwrap(), brute_dispersion(&pts));
        let dists: Vec<f64> = (0..12).map(|_| r.random_range(0.0..3.0)).collect();
        let tau = r.random_range(0.0..3.0);
        assert_eq!(convergence_to_range(&rolling_from(&dists, 0.5), tau).unwrap(), brute_convergence(&dists, tau, 0.5));
    }
}

proptest! {
    #[test]
    fn convergence_is_monotone_in_tau(d in prop::collection::vec(0.0f64..2.0, 12), t1 in 0.0f64..2.0, t2 in 0.0f64..2.0) {
        let rp = rolling_from(&d, 0.5);
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        prop_assert!(convergence_to_range(&rp, lo).unwrap() <= convergence_to_range(&rp, hi).unwrap());
    }

    #[test]
    fn offroad_ignores_order(ps in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..10)) {
        let m = road_map();
        let ts: Vec<Trajectory> = ps.iter().map(|&(x, y)| traj(&[[x, y]])).collect();
        let mut rev = ts.clone();
        rev.reverse();
        prop_assert_eq!(offroad_rate(&ts, &m), offroad_rate(&rev, &m));
    }
}

/// Instances of one episode at the given `t0`s, each in its own agent
/// frame, with the world-frame track x = t, y = 0.1·t².
fn episode(t0s: &[u32], horizon: usize) -> Vec<cab_core::Instance> {
    let world = |t: u32| [t as f64, 0.1 * (t as f64).powi(2)];
    t0s.iter()
        .map(|&t0| {
            let o = world(t0);
            let pose = Pose2::new(o[0], o[1], 0.3 * t0 as f64);
            let fut = (1..=horizon as u32).map(|k| pose.point_to_local(world(t0 + k))).collect();
            let mut inst = bare_instance(t0 as u64, Default::default(), fut, 0.5);
            inst.episode_id = 7;
            inst.t0 = t0;
            inst.frame = Frame::Agent(pose);
            inst
        })
        .collect()
}

#[test]
fn rolling_regroup_matches_double_loop() {
    let insts = episode(&[4, 5, 6, 7, 8, 10], 3);
    // prediction = truth shifted by (lead, instance id) in the local frame
    let preds: Vec<Trajectory> = insts
        .iter()
        .map(|i| {
            let pts = i.future.points.iter().enumerate().map(|(k, p)| [p[0] + (k + 1) as f64, p[1] + i.id as f64]).collect();
            Trajectory::new(pts, 0.5)
        })
        .collect();
    let rolling = build_rolling(&insts, &preds).unwrap();

    let mut want: Vec<(u32, usize, [f64; 2], [f64; 2])> = Vec::new();
    for (inst, pred) in insts.iter().zip(&preds) {
        let Frame::Agent(pose) = inst.frame else { unreachable!() };
        for k in 1..=3 {
            want.push((inst.t0 + k as u32, k, pose.point_to_world(pred.points[k - 1]), pose.point_to_world(inst.future.points[k - 1])));
        }
    }
    let total: usize = rolling.iter().map(|rp| rp.preds.len()).sum();
    assert_eq!(total, want.len());
    for (t, k, p, g) in want {
        let rp = rolling.iter().find(|rp| rp.t == t).unwrap();
        let (_, q) = rp.preds.iter().find(|x| x.0 == k).unwrap();
        assert!((q[0] - p[0]).abs() < 1e-12 && (q[1] - p[1]).abs() < 1e-12);
        assert!((rp.gt[0] - g[0]).abs() < 1e-9 && (rp.gt[1] - g[1]).abs() < 1e-9);
    }
    // the missing t0 = 9 leaves t = 10, 11 partial
    let complete: Vec<u32> = rolling.iter().filter(|rp| rp.is_complete()).map(|rp| rp.t).collect();
    assert_eq!(complete, vec![7, 8, 9]);
    let partial = rolling.iter().find(|rp| rp.t == 12).unwrap();
    assert_eq!(partial.preds.iter().map(|x| x.0).collect::<Vec<_>>(), vec![2]);
    assert!(mean_dispersion(&rolling).is_some());
    assert!(mean_convergence(&rolling, 100.0) == Some(1.5));
}

#[test]
fn stratified_means_hand_case() {
    let fde = [1.0, 4.0, 2.0, 8.0];
    let strata = vec![vec![3], vec![3, 1], vec![0, 1, 2, 3], vec![]];
    assert_eq!(stratified_mean(&fde, &strata), vec![Some(8.0), Some(6.0), Some(3.75), None]);
    let parts = stratified_mean(&fde, &[vec![3, 1], vec![0, 2]]);
    let (a, b) = (parts[0].unwrap(), parts[1].unwrap());
    assert!(a.min(b) <= 3.75 && 3.75 <= a.max(b));
}
