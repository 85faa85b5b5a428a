mod common;

use cab_autodiff::{grad_check, GradCheck, Graph};
use cab_model::config::{DebiasConfig, LossConfig, Method, ModelConfig};
use cab_model::debias::training_objective_pinned;
use cab_model::{training_objective, Batch, CvaeModel};
use common::{jitter, random_batch, refs};

fn tiny_model(seed: u64) -> CvaeModel {
    let mut m = CvaeModel::new(ModelConfig::tiny(), seed);
    jitter(&mut m.params, seed + 100);
    m
}

fn check_method(method: Method, seed: u64) {
    let model = tiny_model(seed);
    let insts = random_batch(&model.config, 2, seed);
    let batch = Batch::new(&refs(&insts), &model.config).unwrap();
    let loss = LossConfig { kl_warmup_steps: 0, ..LossConfig::default() };
    let debias = DebiasConfig::with_method(method);
    let cfg = &model.config;
    // the finite-difference oracle holds stop-gradient inputs at their base values
    let pinned = {
        let g = Graph::with_params(&model.params);
        training_objective(&g, cfg, &loss, &debias, &batch, 0).unwrap().detached()
    };
    let report = grad_check(
        &model.params,
        |g| training_objective_pinned(g, cfg, &loss, &debias, &batch, 0, pinned.as_ref()).unwrap().total,
        GradCheck { eps: 1e-4, coords_per_param: Some(6), seed, five_point: true },
    )
    .unwrap();
    println!("{method:?}: {report:?}");
    assert!(report.max_rel_error < 1e-4, "{method:?}: {report:?}");
}

#[test]
fn cvae_loss_gradient_matches_finite_differences() {
    check_method(Method::None, 1);
}

#[test]
fn cab_loss_gradient_matches_finite_differences() {
    check_method(Method::Cab, 2);
}

#[test]
fn reweight_loss_gradient_matches_finite_differences() {
    check_method(Method::Reweight, 3);
}

#[test]
fn rubiz_loss_gradient_matches_finite_differences() {
    check_method(Method::Rubiz, 4);
}
