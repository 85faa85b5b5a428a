mod common;

use cab_autodiff::{Adam, AdamConfig, Graph, Tensor};
use cab_core::{Forecaster, Frame, Pose2};
use cab_model::cvae::{
    all_pairs, categorical, decode, gmm_log_likelihood, kl_categorical, loss_cvae, mode_log_likelihoods,
    mutual_information, prior_logits, run_branch,
};
use cab_model::encoders::encode_batch;
use cab_model::{training_objective, Batch, CvaeModel, DebiasConfig, LossConfig, ModelConfig};
use common::{jitter, random_batch, refs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(seed: u64) -> CvaeModel {
    let mut m = CvaeModel::new(ModelConfig::tiny(), seed);
    jitter(&mut m.params, seed + 1);
    m
}

#[test]
fn prior_is_normalized_and_deterministic() {
    let m = tiny(1);
    let insts = random_batch(&m.config, 4, 1);
    let d1 = m.predict_distribution(&refs(&insts)).unwrap();
    let d2 = m.predict_distribution(&refs(&insts)).unwrap();
    assert_eq!(d1, d2);
    for d in &d1 {
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(d.means.len(), m.config.num_modes);
        assert_eq!(d.means[0].len(), m.config.horizon_steps);
    }
}

#[test]
fn argmax_is_invariant_to_logit_shift_and_scale() {
    let logits = [0.3, 1.7, -0.2, 1.7];
    let p = categorical::softmax(&logits);
    let shifted: Vec<f64> = logits.iter().map(|l| l + 5.0).collect();
    let scaled: Vec<f64> = logits.iter().map(|l| l * 3.0).collect();
    assert_eq!(categorical::argmax(&p), 1);
    assert_eq!(categorical::argmax(&categorical::softmax(&shifted)), 1);
    assert_eq!(categorical::argmax(&categorical::softmax(&scaled)), 1);
}

#[test]
fn decoded_modes_are_positive_definite_and_depend_on_the_latent() {
    let m = tiny(2);
    let insts = random_batch(&m.config, 2, 2);
    for d in m.predict_distribution(&refs(&insts)).unwrap() {
        for covs in &d.covs {
            for c in covs {
                assert!(c[0] > 0.0 && c[0] * c[2] - c[1] * c[1] > 0.0);
            }
        }
        assert_ne!(d.means[0], d.means[1]);
    }
}

#[test]
fn most_likely_equals_argmax_mode_means() {
    let m = tiny(3);
    let insts = random_batch(&m.config, 5, 3);
    let dists = m.predict_distribution(&refs(&insts)).unwrap();
    let ml = m.predict_ml_batch(&refs(&insts));
    for (d, t) in dists.iter().zip(&ml) {
        let want = &d.means[d.most_likely_mode()];
        for (a, b) in t.points.iter().zip(want) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_control_decoder_extrapolates_constant_velocity() {
    let mut m = tiny(4);
    for name in ["dec.out.w", "dec.out.b"] {
        m.params.get_mut(name).unwrap().value.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let insts = random_batch(&m.config, 2, 4);
    let ml = m.predict_ml_batch(&refs(&insts));
    for (inst, t) in insts.iter().zip(&ml) {
        let v = inst.current().velocity[0];
        for (k, p) in t.points.iter().enumerate() {
            let want = inst.current().position[0] + v * m.config.dt * (k + 1) as f64;
            assert!((p[0] - want).abs() < 1e-9);
        }
    }
}

#[test]
fn world_frame_instances_get_world_frame_predictions() {
    let m = tiny(5);
    let insts = random_batch(&m.config, 1, 5);
    let agent = m.predict_ml(&insts[0]);
    let pose = Pose2::new(10.0, -4.0, 0.7);
    let mut world = insts[0].clone();
    world.history.states = world.history.states.iter().map(|s| pose.state_to_world(s)).collect();
    world.context.neighbors.neighbors = world.context.neighbors.neighbors.iter().map(|s| pose.state_to_world(s)).collect();
    world.future.points = world.future.points.iter().map(|p| pose.point_to_world(*p)).collect();
    world.context.map.origin = pose.point_to_world(world.context.map.origin);
    world.context.map.rotation = pose.heading;
    world.frame = Frame::World;
    let pred = m.predict_ml(&world);
    for (a, w) in agent.points.iter().zip(&pred.points) {
        let back = pose.point_to_world(*a);
        assert!((back[0] - w[0]).abs() < 1e-9 && (back[1] - w[1]).abs() < 1e-9);
    }
}

fn brute_force_mixture(weights: &[f64], means: &[Vec<[f64; 2]>], covs: &[Vec<[f64; 3]>], y: &[[f64; 2]]) -> f64 {
    let mut total = 0.0;
    for z in 0..weights.len() {
        let mut dens = 1.0;
        for t in 0..y.len() {
            let c = covs[z][t];
            let det = c[0] * c[2] - c[1] * c[1];
            let (dx, dy) = (y[t][0] - means[z][t][0], y[t][1] - means[z][t][1]);
            let maha = (c[2] * dx * dx - 2.0 * c[1] * dx * dy + c[0] * dy * dy) / det;
            dens *= (-0.5 * maha).exp() / (2.0 * std::f64::consts::PI * det.sqrt());
        }
        total += weights[z] * dens;
    }
    total.ln()
}

/// Evaluates the mixture log-likelihood through the graph for explicit
/// weights and Gaussians.
fn graph_mixture(weights: &[f64], means: &[Vec<[f64; 2]>], covs: &[Vec<[f64; 3]>], y: &[[f64; 2]]) -> f64 {
    let (z, t) = (weights.len(), y.len());
    let g = Graph::new();
    let mut diff = Vec::new();
    let mut cov = Vec::new();
    for k in 0..z {
        for s in 0..t {
            diff.extend_from_slice(&[y[s][0] - means[k][s][0], y[s][1] - means[k][s][1]]);
            cov.extend_from_slice(&covs[k][s]);
        }
    }
    let lp = g
        .gaussian2_log_density(
            g.constant(Tensor::new(vec![z * t, 2], diff).unwrap()),
            g.constant(Tensor::new(vec![z * t, 3], cov).unwrap()),
        )
        .reshape(&[1, z, t])
        .sum_axis(2);
    let lw = g.constant(Tensor::new(vec![1, z], weights.iter().map(|w| w.ln()).collect()).unwrap());
    g.forward(gmm_log_likelihood(lw, lp)).unwrap().item()
}

#[test]
fn mixture_log_likelihood_examples() {
    let v = graph_mixture(&[1.0], &[vec![[1.0, 2.0]]], &[vec![[1.0, 0.0, 1.0]]], &[[1.0, 2.0]]);
    assert!((v - (-1.837877066409345)).abs() < 1e-12);
    let means = vec![vec![[0.5, -0.2], [1.0, 0.3]]; 2];
    let covs = vec![vec![[0.7, 0.1, 0.4], [1.1, -0.2, 0.6]]; 2];
    let y = [[0.2, 0.1], [1.4, 0.0]];
    let two = graph_mixture(&[0.3, 0.7], &means, &covs, &y);
    let one = graph_mixture(&[1.0], &means[..1], &covs[..1], &y);
    assert!((two - one).abs() < 1e-12);
}

#[test]
fn mixture_log_likelihood_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let w0: f64 = rng.random_range(0.05..0.95);
        let weights = [w0, 1.0 - w0];
        let mut means = Vec::new();
        let mut covs = Vec::new();
        for _ in 0..2 {
            let mut m = Vec::new();
            let mut c = Vec::new();
            for _ in 0..3 {
                m.push([rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
                let (s1, s2, r): (f64, f64, f64) =
                    (rng.random_range(0.4..2.0), rng.random_range(0.4..2.0), rng.random_range(-0.8..0.8));
                c.push([s1 * s1, r * s1 * s2, s2 * s2]);
            }
            means.push(m);
            covs.push(c);
        }
        let y: Vec<[f64; 2]> = (0..3).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let a = graph_mixture(&weights, &means, &covs, &y);
        let b = brute_force_mixture(&weights, &means, &covs, &y);
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

fn graph_kl(p: &[f64], q: &[f64]) -> f64 {
    let g = Graph::new();
    let lp = g.constant(Tensor::new(vec![1, p.len()], p.iter().map(|v| v.ln()).collect()).unwrap());
    let lq = g.constant(Tensor::new(vec![1, q.len()], q.iter().map(|v| v.ln()).collect()).unwrap());
    g.forward(kl_categorical(lp, lq)).unwrap().item()
}

#[test]
fn categorical_kl_closed_form_and_monte_carlo() {
    let hand = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
    assert!((graph_kl(&[0.5, 0.5], &[0.25, 0.75]) - 0.143841).abs() < 1e-6);
    assert!((categorical::kl(&[0.5, 0.5], &[0.25, 0.75]).unwrap() - hand).abs() < 1e-15);
    assert_eq!(graph_kl(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5]), 0.0);
    assert_eq!(categorical::kl(&[0.0, 1.0], &[0.5, 0.5]), Some(2f64.ln()));
    assert_eq!(categorical::kl(&[0.5, 0.5], &[1.0, 0.0]), None);

    let p = [0.1, 0.6, 0.3];
    let q = [0.3, 0.3, 0.4];
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 100_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let u: f64 = rng.random();
        let i = if u < p[0] { 0 } else if u < p[0] + p[1] { 1 } else { 2 };
        acc += (p[i] / q[i]).ln();
    }
    assert!((acc / n as f64 - graph_kl(&p, &q)).abs() < 1e-2);
}

#[test]
fn categorical_kl_is_nonnegative_on_random_simplex_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let mut draw = || {
            let v: Vec<f64> = (0..5).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let (p, q) = (draw(), draw());
        assert!(graph_kl(&p, &q) >= -1e-12);
        assert!(graph_kl(&p, &p).abs() < 1e-12);
    }
}

fn graph_mi(batch: &[Vec<f64>]) -> f64 {
    let g = Graph::new();
    let k = batch[0].len();
    let data = batch.iter().flat_map(|p| p.iter().map(|v| v.ln())).collect();
    g.forward(mutual_information(g.constant(Tensor::new(vec![batch.len(), k], data).unwrap()))).unwrap().item()
}

#[test]
fn mutual_information_examples() {
    let same = vec![vec![0.1, 0.2, 0.7]; 4];
    assert!(graph_mi(&same).abs() < 1e-12);
    let onehots: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    assert!((categorical::mutual_information(&onehots) - 4f64.ln()).abs() < 1e-12);
    let near: Vec<Vec<f64>> = onehots
        .iter()
        .map(|p| categorical::softmax(&p.iter().map(|v| 40.0 * v).collect::<Vec<_>>()))
        .collect();
    assert!((graph_mi(&near) - 4f64.ln()).abs() < 1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let batch: Vec<Vec<f64>> =
            (0..6).map(|_| categorical::softmax(&(0..4).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>())).collect();
        let mi = graph_mi(&batch);
        assert!((-1e-12..=4f64.ln() + 1e-12).contains(&mi));
    }
}

#[test]
fn degenerate_loss_config_is_pure_negative_log_likelihood() {
    let m = tiny(6);
    let insts = random_batch(&m.config, 3, 6);
    let batch = Batch::new(&refs(&insts), &m.config).unwrap();
    let cfg = LossConfig { alpha: 0.0, beta_mi: 0.0, kl_warmup_steps: 0 };
    let g = Graph::with_params(&m.params);
    let enc = encode_batch(&g, &m.config, &batch);
    let br = run_branch(&g, &m.config, enc.x, enc.context, &batch.initial, batch.future.as_ref().unwrap());
    let terms = loss_cvae(&br, br.log_prior, &cfg, 0.0);
    let nll = -gmm_log_likelihood(br.log_posterior, br.mode_ll);
    assert_eq!(terms.loss.item(), nll.mean().item());
}

#[test]
fn plain_method_objective_equals_cvae_loss() {
    let m = tiny(7);
    let insts = random_batch(&m.config, 3, 7);
    let batch = Batch::new(&refs(&insts), &m.config).unwrap();
    let loss = LossConfig::default();
    let g = Graph::with_params(&m.params);
    let obj = training_objective(&g, &m.config, &loss, &DebiasConfig::default(), &batch, 3).unwrap();
    let enc = encode_batch(&g, &m.config, &batch);
    let br = run_branch(&g, &m.config, enc.x, enc.context, &batch.initial, batch.future.as_ref().unwrap());
    let direct = loss_cvae(&br, br.log_prior, &loss, loss.alpha_at(3));
    assert_eq!(obj.total.item(), direct.loss.item());
}

#[test]
fn mode_likelihoods_use_every_decoded_mode() {
    let m = tiny(8);
    let insts = random_batch(&m.config, 2, 8);
    let batch = Batch::new(&refs(&insts), &m.config).unwrap();
    let g = Graph::with_params(&m.params);
    let enc = encode_batch(&g, &m.config, &batch);
    let modes = decode(&g, &m.config, enc.x, enc.context, &batch.initial, &all_pairs(2, m.config.num_modes));
    let ll = mode_log_likelihoods(&g, &modes, batch.future.as_ref().unwrap(), m.config.num_modes);
    assert_eq!(ll.shape(), vec![2, m.config.num_modes]);
    assert_eq!(prior_logits(&g, enc.x, enc.context).shape(), vec![2, m.config.num_modes]);
}

#[test]
fn training_reduces_loss_on_a_small_overfit_set() {
    let mut m = tiny(9);
    let insts = random_batch(&m.config, 16, 9);
    let batch = Batch::new(&refs(&insts), &m.config).unwrap();
    let loss = LossConfig { kl_warmup_steps: 0, ..LossConfig::default() };
    let debias = DebiasConfig::default();
    let mut opt = Adam::new(AdamConfig { lr: 3e-3, ..AdamConfig::default() });
    let mut first = None;
    let mut last = 0.0;
    for step in 0..200 {
        let grads = {
            let g = Graph::with_params(&m.params);
            let obj = training_objective(&g, &m.config, &loss, &debias, &batch, step).unwrap();
            last = obj.total.item();
            first.get_or_insert(last);
            g.backward(obj.total).unwrap().param_grads(&m.params)
        };
        opt.step(&mut m.params, &grads);
    }
    let first = first.unwrap();
    assert!(last < first - 0.5 * first.abs().max(1.0), "loss {first} -> {last}");
}

#[test]
fn sampling_follows_prior_and_is_seeded() {
    let m = tiny(10);
    let insts = random_batch(&m.config, 1, 10);
    let dist = m.predict_distribution(&refs(&insts)).unwrap().remove(0);
    let a = m.sample(&insts[0], 50, 3).unwrap();
    let b = m.sample(&insts[0], 50, 3).unwrap();
    assert_eq!(a, b);

    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut counts = vec![0usize; dist.probs.len()];
    let mut probe = dist.clone();
    // collapse covariances so each sample identifies its mode exactly
    for covs in probe.covs.iter_mut() {
        covs.iter_mut().for_each(|c| *c = [1e-30, 0.0, 1e-30]);
    }
    for s in probe.sample(n, &mut rng) {
        let k = probe.means.iter().position(|m| (m[0][0] - s.points[0][0]).abs() < 1e-9).unwrap();
        counts[k] += 1;
    }
    for (c, p) in counts.iter().zip(&dist.probs) {
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((*c as f64 - n as f64 * p).abs() <= 3.0 * sd + 1.0, "{c} vs {p}");
    }

    let mut onehot = probe.clone();
    onehot.probs = vec![0.0; onehot.probs.len()];
    onehot.probs[2] = 1.0;
    for s in onehot.sample(200, &mut rng) {
        assert!((s.points[0][0] - onehot.means[2][0][0]).abs() < 1e-9);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let m = tiny(11).with_name("probe");
    let dir = std::env::temp_dir().join(format!("cab-model-ck-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("m.json");
    m.save(&path).unwrap();
    let back = CvaeModel::load(&path).unwrap();
    assert_eq!(back, m);
    let insts = random_batch(&m.config, 4, 11);
    assert_eq!(m.predict_distribution(&refs(&insts)).unwrap(), back.predict_distribution(&refs(&insts)).unwrap());
    std::fs::remove_dir_all(&dir).ok();
}
