use cab_core::{validate_instance, Frame};
use cab_synthworld::dataset::{episode_instances, from_json_line, round9, split_episode, to_json_line};
use cab_synthworld::geometry::dist;
use cab_synthworld::{
    build_dataset, generate_probes, generate_split, read_jsonl, read_probes, Certificate, DatasetConfig, ScenarioKind,
    ScenarioMix, Split,
};
use proptest::prelude::*;

fn small() -> DatasetConfig {
    DatasetConfig { n_train: 60, n_val: 20, n_test: 20, n_probe_pairs: 6, seed: 11, ..DatasetConfig::default() }
}

#[test]
fn episode_of_length_h_plus_t_plus_k_yields_k_windows() {
    let cfg = small();
    for i in 0..20 {
        let (world, ep) = split_episode(&cfg, Split::Train, i);
        let insts = episode_instances(&world, &ep, &cfg, i);
        assert_eq!(insts.len(), ep.len() - cfg.history_steps - cfg.horizon_steps);
        for (j, inst) in insts.iter().enumerate() {
            assert_eq!(inst.t0 as usize, cfg.history_steps + j);
        }
    }
}

#[test]
fn every_scenario_kind_produces_valid_instances() {
    for kind in ScenarioKind::ALL {
        let cfg = DatasetConfig { n_train: 40, mix: ScenarioMix::only(kind), ..small() };
        let insts = generate_split(&cfg, Split::Train).unwrap();
        assert_eq!(insts.len(), 40);
        for inst in &insts {
            validate_instance(inst, &cfg.protocol()).unwrap();
            let cur = inst.history.current();
            assert!(cur.position == [0.0, 0.0] && cur.heading == 0.0);
            assert!(inst.context.neighbors.neighbors.iter().all(|n| dist(n.position, [0.0, 0.0]) <= 20.0));
            assert!(matches!(inst.frame, Frame::Agent(_)));
        }
    }
}

#[test]
fn ids_are_dense_and_splits_differ() {
    let cfg = small();
    let train = generate_split(&cfg, Split::Train).unwrap();
    let val = generate_split(&cfg, Split::Val).unwrap();
    assert!(train.iter().enumerate().all(|(i, x)| x.id == i as u64));
    assert_ne!(train[0].future, val[0].future);
}

#[test]
fn invalid_mix_is_rejected() {
    let cfg = DatasetConfig { mix: ScenarioMix { straight: 0.5, ..ScenarioMix::default() }, ..small() };
    assert!(generate_split(&cfg, Split::Train).is_err());
    let cfg = DatasetConfig { sim: cab_synthworld::SimConfig { steps: 10, ..Default::default() }, ..small() };
    assert!(generate_split(&cfg, Split::Train).is_err());
}

#[test]
fn jsonl_round_trips_at_nine_significant_digits() {
    let insts = generate_split(&small(), Split::Val).unwrap();
    for inst in &insts {
        let line = to_json_line(inst).unwrap();
        let back = from_json_line(&line).unwrap();
        assert_eq!(to_json_line(&back).unwrap(), line);
        assert_eq!(back.context.map, inst.context.map);
        for (a, b) in back.future.points.iter().zip(&inst.future.points) {
            assert!(dist(*a, *b) <= 1e-8 * (1.0 + b[0].abs() + b[1].abs()));
        }
    }
    let v: serde_json::Value = serde_json::from_str(&to_json_line(&insts[0]).unwrap()).unwrap();
    for key in ["id", "episode_id", "agent_id", "t0", "dt", "history", "future", "neighbors", "map", "pose"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    assert_eq!(v["map"]["data"].as_array().unwrap().len(), 3);
}

#[test]
fn dataset_build_is_byte_identical_across_runs() {
    let cfg = small();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let fa = build_dataset(&cfg, a.path()).unwrap();
    build_dataset(&cfg, b.path()).unwrap();
    for name in ["train.jsonl", "val.jsonl", "test.jsonl", "probes.jsonl", "certificate.json", "dataset.json"] {
        let (x, y) = (std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        assert!(!x.is_empty() && x == y, "{name}");
    }
    assert_eq!(read_jsonl(&fa.splits[0].1).unwrap().len(), cfg.n_train);
    assert_eq!(read_probes(&fa.probes).unwrap().len(), cfg.n_probe_pairs);
}

#[test]
fn probe_pairs_share_history_and_certify_a_gap() {
    let cfg = small();
    let pairs = generate_probes(&cfg).unwrap();
    assert_eq!(pairs.len(), cfg.n_probe_pairs);
    for p in &pairs {
        assert_eq!(p.a.history, p.b.history);
        assert_eq!(p.a.t0, p.b.t0);
        let (ea, eb) = (p.a.future.last().unwrap(), p.b.future.last().unwrap());
        assert!((p.fde_lower_bound() - dist(*ea, *eb) / 2.0).abs() < 1e-12);
        assert!(p.fde_lower_bound() > 0.0);
        match p.kind {
            ScenarioKind::CurveLeft => assert_ne!(p.a.context.map, p.b.context.map),
            _ => assert_ne!(p.a.context.neighbors, p.b.context.neighbors),
        }
    }
    assert!(pairs.iter().any(|p| p.kind == ScenarioKind::CurveLeft));
    assert!(pairs.iter().any(|p| p.kind == ScenarioKind::LeadVehicleStop));
    let cert = Certificate::from_pairs(&pairs);
    assert!(cert.mean_fde_lower_bound >= cert.min_fde_lower_bound && cert.min_fde_lower_bound > 0.0);
}

proptest! {
    #[test]
    fn rounding_is_idempotent_and_close(v in -1e6f64..1e6) {
        let r = round9(v);
        prop_assert_eq!(round9(r), r);
        prop_assert!((r - v).abs() <= 1e-8 * v.abs());
    }
}
