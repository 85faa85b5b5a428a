mod common;

use cab_autodiff::{grad_check, GradCheck, Graph, Tensor};
use cab_model::debias::make_null_context;
use cab_model::encoders::{encode_batch, encode_context, encode_map, encode_motion, encode_neighbors, encode_null_context};
use cab_model::{Batch, CvaeModel, ModelConfig};
use common::{jitter, random_batch, refs};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model() -> CvaeModel {
    let mut m = CvaeModel::new(ModelConfig::tiny(), 7);
    jitter(&mut m.params, 8);
    m
}

fn eval(model: &CvaeModel, f: impl for<'g> FnOnce(&'g Graph<'g>) -> cab_autodiff::Var<'g>) -> Tensor {
    let g = Graph::with_params(&model.params);
    let v = f(&g);
    g.forward(v).unwrap()
}

#[test]
fn motion_encoding_is_deterministic_with_expected_width() {
    let m = model();
    let insts = random_batch(&m.config, 3, 1);
    let batch = Batch::new(&refs(&insts), &m.config).unwrap();
    let a = eval(&m, |g| encode_motion(g, &m.config, &batch.history));
    let b = eval(&m, |g| encode_motion(g, &m.config, &batch.history));
    assert_eq!(a, b);
    assert_eq!(a.shape(), &[3, m.config.d_x]);
}

#[test]
fn motion_encoder_gradient_matches_finite_differences() {
    let m = model();
    let insts = random_batch(&m.config, 2, 2);
    let batch = Batch::new(&refs(&insts), &m.config).unwrap();
    let report = grad_check(
        &m.params,
        |g| encode_motion(g, &m.config, &batch.history).sin().sum(),
        GradCheck::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn map_encoding_has_expected_width_and_sees_single_cells() {
    let m = model();
    let cfg = &m.config;
    let zero = Tensor::zeros(&[1, cfg.map_channels, cfg.map_size, cfg.map_size]);
    let out = eval(&m, |g| encode_map(g, cfg, &zero));
    assert_eq!(out.shape(), &[1, cfg.d_m]);
    assert!(out.is_finite());
    let mut poked = zero.clone();
    poked.data_mut()[3 * cfg.map_size + 4] = 1.0;
    let out2 = eval(&m, |g| encode_map(g, cfg, &poked));
    assert_ne!(out, out2);
}

#[test]
fn neighbor_pooling_is_order_and_duplication_invariant() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let nbs: Vec<_> = (0..4).map(|_| common::random_state(&mut rng, 10.0)).collect();
    let feats = |list: &[cab_core::AgentState]| {
        let mut d = Vec::new();
        for s in list {
            d.extend_from_slice(&cab_model::batch::state_features(s));
        }
        let k = list.len();
        (Tensor::new(vec![k, 9], d).unwrap(), Tensor::full(&[1, k], 1.0 / k as f64))
    };
    let enc = |list: &[cab_core::AgentState]| {
        let (f, p) = feats(list);
        eval(&m, |g| encode_neighbors(g, &f, &p))
    };
    let base = enc(&nbs);
    let permuted = enc(&[nbs[2], nbs[0], nbs[3], nbs[1]]);
    let doubled = enc(&[nbs.clone(), nbs.clone()].concat());
    for ((a, b), c) in base.data().iter().zip(permuted.data()).zip(doubled.data()) {
        assert!((a - b).abs() < 1e-12);
        assert!((a - c).abs() < 1e-12);
    }
}

#[test]
fn empty_neighbors_encode_the_zero_pool() {
    let m = model();
    let empty = eval(&m, |g| encode_neighbors(g, &Tensor::zeros(&[0, 9]), &Tensor::zeros(&[1, 0])));
    let bias = m.params.get("nbr.out.b").unwrap().value.clone();
    assert_eq!(empty.data(), bias.data());
}

#[test]
fn context_is_map_then_neighbors_and_null_context_matches_blind_vector() {
    let m = model();
    let cfg = &m.config;
    let mut insts = random_batch(cfg, 3, 3);
    let batch = Batch::new(&refs(&insts), cfg).unwrap();
    let c = eval(&m, |g| encode_context(g, cfg, &batch));
    let map = eval(&m, |g| encode_map(g, cfg, &batch.map));
    assert_eq!(c.shape(), &[3, cfg.d_c()]);
    for i in 0..3 {
        assert_eq!(&c.data()[i * cfg.d_c()..i * cfg.d_c() + cfg.d_m], &map.data()[i * cfg.d_m..(i + 1) * cfg.d_m]);
    }

    for inst in insts.iter_mut() {
        inst.context = make_null_context(cfg, 1.0);
    }
    assert_eq!(make_null_context(cfg, 1.0), make_null_context(cfg, 1.0));
    let blind_batch = Batch::new(&refs(&insts), cfg).unwrap();
    let c_null = eval(&m, |g| encode_context(g, cfg, &blind_batch));
    let blind = eval(&m, |g| encode_null_context(g, cfg));
    for i in 0..3 {
        assert_eq!(&c_null.data()[i * cfg.d_c()..(i + 1) * cfg.d_c()], blind.data());
    }
    let enc_blind = eval(&m, |g| encode_batch(g, cfg, &batch).blind);
    assert_eq!(&enc_blind.data()[..cfg.d_c()], blind.data());
}

#[test]
fn batch_rejects_wrong_history_and_map_sizes() {
    let cfg = ModelConfig::tiny();
    let mut insts = random_batch(&cfg, 1, 4);
    insts[0].history.states.pop();
    assert!(Batch::new(&refs(&insts), &cfg).is_err());
    let mut insts = random_batch(&cfg, 1, 4);
    insts[0].context.map = cab_core::SemanticMap::agent_centered(5, 5, 1.0);
    assert!(Batch::new(&refs(&insts), &cfg).is_err());
}
